#include "p2pfl/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "p2pfl/config_io.hpp"
#include "p2pfl/errors.hpp"
#include "p2pfl/presets.hpp"

#ifndef P2PFL_VERSION
#define P2PFL_VERSION "0.0.0"
#endif

namespace p2pfl {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kSummarySchema = 1;

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

std::string strategy_label(const std::set<ActionKind>& kinds) {
    std::string out;
    for (ActionKind k : kinds) out += (out.empty() ? "" : "+") + std::string(to_string(k));
    return out;
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    body(out);
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

ordered_json optional_json(const std::optional<std::size_t>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

void report_error(const std::exception& e, int code) {
    ordered_json err;
    err["exit_code"] = code;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
}

} // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NotFoundError*>(&e)) return kExitNotFound;
    if (dynamic_cast<const SchemaError*>(&e)) return kExitSchema;
    if (dynamic_cast<const ConfigError*>(&e)) return kExitInvariant;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    return kExitSimulation;
}

std::optional<std::size_t> network_convergence_round(const MetricsLog& log, const ConvergenceConfig& convergence) {
    return detect_convergence(log.mean_accuracy, convergence.window, convergence.epsilon);
}

void write_run_outputs(const ScenarioConfig& config, const MetricsLog& log, const fs::path& out_dir,
                       const std::string& started_at, const std::string& finished_at) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

    const std::string hash = config_hash(config);

    write_file(out_dir / "metrics.csv", [&](std::ostream& out) { write_metrics_csv(log, out); });
    write_file(out_dir / "config.yaml", [&](std::ostream& out) { out << serialize_config(config); });

    ordered_json summary;
    summary["schema"] = kSummarySchema;
    summary["name"] = config.name;
    summary["seed"] = config.seed;
    summary["config_hash"] = hash;
    summary["clients"] = config.clients;
    summary["rounds"] = config.rounds;
    summary["regime"] = std::string(to_string(config.partition.regime));
    summary["strategy"] = strategy_label(config.decision.allowed);
    summary["rounds_executed"] = log.rounds_executed;
    summary["final_best_accuracy"] = log.final_mean_best_accuracy();
    summary["final_accuracy"] = log.mean_accuracy.empty() ? 0.0 : log.mean_accuracy.back();
    summary["total_bytes"] = log.total_bytes;
    summary["dropped_actions"] = log.dropped_actions;
    summary["convergence_round"] = optional_json(network_convergence_round(log, config.convergence));
    ordered_json per_client = ordered_json::object();
    for (const auto& [id, r] : log.convergence_round) per_client[std::to_string(id)] = optional_json(r);
    summary["client_convergence_rounds"] = per_client;
    summary["mean_accuracy"] = log.mean_accuracy;
    summary["mean_best_accuracy"] = log.mean_best_accuracy;
    write_file(out_dir / "summary.json", [&](std::ostream& out) { out << summary.dump(2) << "\n"; });

    ordered_json manifest;
    manifest["config_hash"] = hash;
    manifest["seed"] = config.seed;
    manifest["started_at"] = started_at;
    manifest["finished_at"] = finished_at;
    manifest["artifacts"] = {{"metrics", "metrics.csv"},
                             {"summary", "summary.json"},
                             {"config", "config.yaml"},
                             {"manifest", "manifest.json"}};
    manifest["tool_version"] = P2PFL_VERSION;
    write_file(out_dir / "manifest.json", [&](std::ostream& out) { out << manifest.dump(2) << "\n"; });
}

MetricsLog run_to_directory(const ScenarioConfig& config, const fs::path& out_dir, std::size_t threads) {
    // Fail on an unwritable destination before spending time simulating.
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const std::string started = utc_now();
    MetricsLog log = run_simulation(config, threads);
    write_run_outputs(config, log, out_dir, started, utc_now());
    return log;
}

Comparison compare_runs(const std::vector<fs::path>& dirs) {
    if (dirs.empty()) throw SchemaError("compare needs at least one run directory");
    Comparison c;
    std::optional<std::pair<std::size_t, std::size_t>> shape;
    for (const auto& dir : dirs) {
        const fs::path file = dir / "summary.json";
        std::ifstream in(file);
        if (!in) throw SchemaError(file.string() + ": missing run summary");
        ordered_json j;
        try {
            j = ordered_json::parse(in);
            if (j.at("schema").get<int>() != kSummarySchema) {
                throw SchemaError(file.string() + ": unsupported summary schema");
            }
            CompareRow row;
            row.run = dir.string();
            row.strategy = j.at("strategy").get<std::string>();
            row.final_best_accuracy = j.at("final_best_accuracy").get<double>();
            row.total_bytes = j.at("total_bytes").get<std::uint64_t>();
            const auto& conv = j.at("convergence_round");
            if (!conv.is_null()) row.convergence_round = conv.get<std::size_t>();
            const std::pair<std::size_t, std::size_t> this_shape{j.at("clients").get<std::size_t>(),
                                                                 j.at("rounds").get<std::size_t>()};
            if (shape && *shape != this_shape) {
                throw SchemaError(file.string() + ": client or round count differs from the other runs");
            }
            shape = this_shape;
            c.rows.push_back(std::move(row));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(file.string() + ": malformed run summary (" + e.what() + ")");
        }
    }
    const auto [lo, hi] = std::minmax_element(c.rows.begin(), c.rows.end(), [](const auto& a, const auto& b) {
        return a.final_best_accuracy < b.final_best_accuracy;
    });
    c.spread = hi->final_best_accuracy - lo->final_best_accuracy;
    return c;
}

void print_comparison_text(const Comparison& c, std::ostream& out) {
    std::size_t run_width = 3;
    std::size_t strategy_width = 8;
    for (const auto& r : c.rows) {
        run_width = std::max(run_width, r.run.size());
        strategy_width = std::max(strategy_width, r.strategy.size());
    }
    out << std::left << std::setw(static_cast<int>(run_width)) << "run" << "  " << std::setw(static_cast<int>(strategy_width))
        << "strategy" << "  " << std::right << std::setw(19) << "final_best_accuracy" << "  " << std::setw(12)
        << "total_bytes" << "  " << std::setw(17) << "convergence_round" << "\n";
    for (const auto& r : c.rows) {
        out << std::left << std::setw(static_cast<int>(run_width)) << r.run << "  "
            << std::setw(static_cast<int>(strategy_width)) << r.strategy << "  " << std::right << std::setw(19)
            << std::fixed << std::setprecision(4) << r.final_best_accuracy << "  " << std::setw(12) << r.total_bytes
            << "  " << std::setw(17) << (r.convergence_round ? std::to_string(*r.convergence_round) : "-") << "\n";
    }
    out << "spread " << std::fixed << std::setprecision(4) << c.spread << "\n";
}

void print_comparison_json(const Comparison& c, std::ostream& out) {
    ordered_json j;
    j["columns"] = kCompareColumns;
    j["runs"] = ordered_json::array();
    for (const auto& r : c.rows) {
        ordered_json row;
        row["run"] = r.run;
        row["strategy"] = r.strategy;
        row["final_best_accuracy"] = r.final_best_accuracy;
        row["total_bytes"] = r.total_bytes;
        row["convergence_round"] = optional_json(r.convergence_round);
        j["runs"].push_back(row);
    }
    j["spread"] = c.spread;
    out << j.dump(2) << "\n";
}

namespace {

std::vector<std::string> expand_preset_names(const std::vector<std::string>& requested) {
    const auto all = preset_names();
    const auto rows = preset_rows();
    std::vector<std::string> out;
    for (const auto& name : requested) {
        if (name == "all") {
            out.insert(out.end(), all.begin(), all.end());
        } else if (name.ends_with(".*")) {
            const std::string row = name.substr(0, name.size() - 2);
            if (std::find(rows.begin(), rows.end(), row) == rows.end()) make_preset(name);  // throws NotFoundError
            for (const auto& s : preset_strategies()) out.push_back(row + "." + s);
        } else {
            make_preset(name);  // validates the name
            out.push_back(name);
        }
    }
    return out;
}

ScenarioConfig with_overrides(const ScenarioConfig& config, const ParseOptions& options,
                              std::vector<std::string>& warnings) {
    if (options.overrides.empty()) return config;
    auto result = parse_config_string(serialize_config(config), options);
    warnings.insert(warnings.end(), result.warnings.begin(), result.warnings.end());
    return result.config;
}

int run_presets(const std::vector<std::string>& names, const fs::path& out, std::size_t jobs,
                const std::optional<std::uint64_t>& seed, const ParseOptions& options) {
    std::vector<std::pair<std::string, fs::path>> work;
    for (const auto& n : names) work.emplace_back(n, names.size() == 1 ? out : out / n);

    auto run_one = [&](const std::string& name, const fs::path& dir) -> int {
        try {
            std::vector<std::string> warnings;
            ScenarioConfig config = with_overrides(make_preset(name), options, warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
            if (seed) config.seed = *seed;
            const auto log = run_to_directory(config, dir, 1);
            std::cout << name << ": final_best_accuracy " << std::fixed << std::setprecision(4)
                      << log.final_mean_best_accuracy() << " -> " << dir.string() << "\n";
            return kExitOk;
        } catch (const std::exception& e) {
            const int code = exit_code_for(e);
            report_error(e, code);
            return code;
        }
    };

    if (jobs <= 1 || work.size() <= 1) {
        int worst = kExitOk;
        for (const auto& [name, dir] : work) worst = std::max(worst, run_one(name, dir));
        return worst;
    }

    // Independent runs in child processes, at most `jobs` at a time.
    std::cout.flush();
    int worst = kExitOk;
    std::size_t next = 0, running = 0;
    auto reap = [&] {
        int status = 0;
        if (::wait(&status) > 0) {
            --running;
            const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitSimulation;
            worst = std::max(worst, code);
        }
    };
    while (next < work.size() || running > 0) {
        if (next < work.size() && running < jobs) {
            const pid_t pid = ::fork();
            if (pid < 0) throw IoError("fork failed");
            if (pid == 0) {
                const int code = run_one(work[next].first, work[next].second);
                std::cout.flush();
                std::_Exit(code);
            }
            ++next;
            ++running;
        } else {
            reap();
        }
    }
    return worst;
}

} // namespace

int cli_main(int argc, char** argv, char** envp) {
    CLI::App app{"Peer-to-peer federated learning simulator"};
    app.set_version_flag("--version", std::string("p2pfl ") + P2PFL_VERSION);
    app.require_subcommand(1);

    bool strict = false;
    app.add_flag("--strict", strict, "Reject unknown config keys instead of warning");

    std::string config_path;
    fs::path out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    auto* run = app.add_subcommand("run", "Run a scenario from a config file");
    run->add_option("--config", config_path, "YAML scenario file")->required();
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--jobs", jobs, "Worker threads for per-client phases")->check(CLI::PositiveNumber);

    std::vector<std::string> preset_list;
    fs::path preset_out;
    std::size_t preset_jobs = 1;
    std::optional<std::uint64_t> preset_seed;
    bool list_presets = false;
    auto* preset = app.add_subcommand("preset", "Run named preset scenarios");
    preset->add_option("names", preset_list, "Preset names, 'row.*' or 'all'");
    preset->add_option("--out", preset_out, "Output directory");
    preset->add_option("--jobs", preset_jobs, "Parallel processes for multiple presets")->check(CLI::PositiveNumber);
    preset->add_option("--seed", preset_seed, "Override the preset seed");
    preset->add_flag("--list", list_presets, "Print preset names and exit");

    std::vector<fs::path> compare_dirs;
    std::string format = "text";
    auto* compare = app.add_subcommand("compare", "Compare finished runs");
    compare->add_option("dirs", compare_dirs, "Run output directories")->required();
    compare->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    ParseOptions options;
    options.strict = strict;
    options.overrides = env_overrides(envp);

    try {
        if (*run) {
            auto parsed = parse_config_file(config_path, options);
            for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
            if (seed) parsed.config.seed = *seed;
            const auto log = run_to_directory(parsed.config, out_dir, jobs);
            std::cout << parsed.config.name << ": final_best_accuracy " << std::fixed << std::setprecision(4)
                      << log.final_mean_best_accuracy() << " -> " << out_dir.string() << "\n";
            return kExitOk;
        }
        if (*preset) {
            if (list_presets) {
                for (const auto& n : preset_names()) std::cout << n << "\n";
                return kExitOk;
            }
            if (preset_list.empty() || preset_out.empty()) {
                std::cerr << "preset: NAME and --out are required\n";
                return kExitUsage;
            }
            return run_presets(expand_preset_names(preset_list), preset_out, preset_jobs, preset_seed, options);
        }
        if (*compare) {
            const auto c = compare_runs(compare_dirs);
            if (format == "json") print_comparison_json(c, std::cout);
            else print_comparison_text(c, std::cout);
            return kExitOk;
        }
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        report_error(e, code);
        return code;
    }
    return kExitUsage;
}

} // namespace p2pfl
