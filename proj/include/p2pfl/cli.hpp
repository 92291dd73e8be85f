#pragma once

// Command-line front end: run a config, run presets, compare runs.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "p2pfl/simulator.hpp"

namespace p2pfl {

enum ExitCode : int {
    kExitOk = 0,
    kExitSimulation = 1,
    kExitNotFound = 2,     ///< missing config file, unknown preset
    kExitSchema = 3,       ///< malformed config, unknown key (strict), incompatible compare inputs
    kExitInvariant = 4,    ///< config value out of range
    kExitIo = 5,           ///< output directory or file not writable
    kExitUsage = 6,        ///< bad command line
};

/// Maps a library exception to its exit code.
int exit_code_for(const std::exception& e);

/// Network-level convergence round: detect_convergence over the per-round
/// mean accuracy.
std::optional<std::size_t> network_convergence_round(const MetricsLog& log, const ConvergenceConfig& convergence);

/// Writes metrics.csv, summary.json, manifest.json and config.yaml into
/// `out_dir` (created if needed). Throws IoError on write failure.
void write_run_outputs(const ScenarioConfig& config, const MetricsLog& log, const std::filesystem::path& out_dir,
                       const std::string& started_at, const std::string& finished_at);

/// Runs `config` and writes its outputs.
MetricsLog run_to_directory(const ScenarioConfig& config, const std::filesystem::path& out_dir, std::size_t threads);

struct CompareRow {
    std::string run;
    std::string strategy;  ///< allowed kinds, '+'-joined
    double final_best_accuracy = 0.0;
    std::uint64_t total_bytes = 0;
    std::optional<std::size_t> convergence_round;
};

struct Comparison {
    std::vector<CompareRow> rows;
    double spread = 0.0;  ///< max - min final_best_accuracy
};

/// Column names of the comparison table, in order.
inline const std::vector<std::string> kCompareColumns{"run", "strategy", "final_best_accuracy", "total_bytes",
                                                      "convergence_round"};

/// Reads summary.json from each directory. Throws SchemaError when a summary
/// is missing or malformed or runs disagree on clients/rounds.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);

void print_comparison_text(const Comparison& c, std::ostream& out);
void print_comparison_json(const Comparison& c, std::ostream& out);

/// Entry point of the p2pfl executable.
int cli_main(int argc, char** argv, char** envp);

} // namespace p2pfl
