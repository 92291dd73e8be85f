#include "p2pfl/config_io.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "p2pfl/errors.hpp"

namespace p2pfl {

namespace {

template <typename E>
using EnumTable = std::span<const std::pair<E, const char*>>;

constexpr std::array<std::pair<PartitionRegime, const char*>, 4> kRegimes{{
    {PartitionRegime::Iid, "iid"},
    {PartitionRegime::Pathological, "pathological"},
    {PartitionRegime::QuantitySkew, "quantity_skew"},
    {PartitionRegime::Covariate, "covariate"},
}};
constexpr std::array<std::pair<TopologyKind, const char*>, 3> kTopologies{{
    {TopologyKind::ErdosRenyi, "erdos_renyi"},
    {TopologyKind::Ring, "ring"},
    {TopologyKind::Complete, "complete"},
}};
constexpr std::array<std::pair<InitKind, const char*>, 2> kInits{{
    {InitKind::Zeros, "zeros"},
    {InitKind::SeededUniform, "uniform"},
}};
constexpr std::array<std::pair<PriorityFormula, const char*>, 2> kPriorities{{
    {PriorityFormula::Ratio, "ratio"},
    {PriorityFormula::Linear, "linear"},
}};
constexpr std::array<std::pair<TrustBranch, const char*>, 2> kTrustBranches{{
    {TrustBranch::TrustedRaw, "trusted_raw"},
    {TrustBranch::TrustedSynthetic, "trusted_synthetic"},
}};

// Lists every field once; readers and writers share this walk so the key set
// cannot drift between parsing and serialization.
template <typename V>
void visit_config(ScenarioConfig& c, V& v) {
    v("name", c.name);
    v("seed", c.seed);
    v("clients", c.clients);
    v("rounds", c.rounds);
    v("k_degree", c.k_degree);

    v("dataset.classes", c.dataset.class_count);
    v("dataset.dim", c.dataset.dim);
    v("dataset.samples_per_class", c.dataset.samples_per_class);
    v("dataset.separation", c.dataset.separation);
    v("dataset.csv_path", c.dataset.csv_path);
    v("dataset.test_fraction", c.dataset.test_fraction);
    v("dataset.pretrain_fraction", c.dataset.pretrain_fraction);

    v.enumeration("partition.regime", c.partition.regime, EnumTable<PartitionRegime>(kRegimes));
    v("partition.labels_per_client", c.partition.labels_per_client);
    v("partition.ratios", c.partition.ratios);
    v("partition.data_fraction", c.partition.data_fraction);
    v("partition.covariate.rotation_strength", c.partition.covariate.rotation_strength);
    v("partition.covariate.scale_min", c.partition.covariate.scale_min);
    v("partition.covariate.scale_max", c.partition.covariate.scale_max);
    v("partition.covariate.noise_sigma", c.partition.covariate.noise_sigma);
    v("partition.covariate.per_class", c.partition.covariate.per_class);

    v.enumeration("topology.model", c.topology.model, EnumTable<TopologyKind>(kTopologies));
    v("topology.p", c.topology.p);
    v("topology.ring_k", c.topology.ring_k);
    v("topology.trust_fraction", c.topology.trust_fraction);

    v("churn.p_leave", c.churn.p_leave);
    v("churn.p_join", c.churn.p_join);
    v("churn.join_degree", c.churn.join_degree);
    v("churn.p_rewire", c.churn.p_rewire);
    v("churn.p_rejoin", c.churn.p_rejoin);

    v("resources.power_min", c.resources.power_min);
    v("resources.power_max", c.resources.power_max);
    v("resources.mem_min", c.resources.mem_min);
    v("resources.mem_max", c.resources.mem_max);
    v("resources.bandwidth_min", c.resources.bandwidth_min);
    v("resources.bandwidth_max", c.resources.bandwidth_max);

    v("size_model.bytes_per_sample", c.size_model.bytes_per_sample);
    v("size_model.bytes_per_param", c.size_model.bytes_per_param);
    v("size_model.model_compression", c.size_model.model_compression);
    v("size_model.alpha", c.size_model.alpha);

    v("model.hidden_dim", c.model.hidden_dim);
    v.enumeration("model.init", c.model.init, EnumTable<InitKind>(kInits));
    v("model.init_scale", c.model.init_scale);
    v("model.frozen_fraction", c.model.frozen_fraction);

    v("train.epochs", c.train.epochs);
    v("train.batch_size", c.train.batch_size);
    v("train.learning_rate", c.train.learning_rate);
    v("train.l2", c.train.l2);
    v("train.pretrain_epochs", c.train.pretrain_epochs);
    v("train.variance_floor", c.train.variance_floor);
    v("train.received_weight", c.train.received_weight);
    v("train.retain_received", c.train.retain_received);
    v("train.generator_uses_received", c.train.generator_uses_received);

    v("decision.window", c.decision.window);
    v("decision.score_weights", c.decision.score_weights);
    v.enumeration("decision.priority", c.decision.priority, EnumTable<PriorityFormula>(kPriorities));
    v("decision.priority_lambda", c.decision.priority_lambda);
    v("decision.greedy_skip", c.decision.greedy_skip);
    v.enumeration("decision.trust_branch", c.decision.trust_branch, EnumTable<TrustBranch>(kTrustBranches));
    v("decision.share_fraction", c.decision.share_fraction);
    v("decision.adaptive_rewards", c.decision.adaptive_rewards);
    v("decision.reward_decay", c.decision.reward_decay);
    v("decision.bfs_literal_depth", c.decision.bfs_literal_depth);
    v("decision.allowed", c.decision.allowed);

    v("convergence.window", c.convergence.window);
    v("convergence.epsilon", c.convergence.epsilon);
    v("convergence.early_stop", c.convergence.early_stop);
}

std::vector<std::string> split_path(std::string_view key) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        out.emplace_back(key.substr(start, dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return out;
}

std::string format_double(double x) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc{}) throw InternalError("cannot format number");
    return std::string(buf.data(), end);
}

// ---- reading ---------------------------------------------------------------

class Reader {
public:
    explicit Reader(YAML::Node root) : root_(std::move(root)) {}

    template <typename T>
    void operator()(const std::string& key, T& value) {
        known_.insert(key);
        auto node = find(key);
        if (!node) return;
        read(key, *node, value);
    }

    template <typename E>
    void enumeration(const std::string& key, E& value, EnumTable<E> table) {
        known_.insert(key);
        auto node = find(key);
        if (!node) return;
        const std::string s = scalar(key, *node);
        for (const auto& [e, name] : table) {
            if (s == name) {
                value = e;
                return;
            }
        }
        std::string valid;
        for (const auto& [e, name] : table) valid += std::string(valid.empty() ? "" : ", ") + name;
        throw SchemaError(key + ": unknown value '" + s + "' (expected one of " + valid + ")");
    }

    /// Keys present in the document but not in the schema.
    std::vector<std::string> unknown_keys() const {
        std::set<std::string> sections;
        for (const auto& k : known_) {
            for (auto dot = k.find('.'); dot != std::string::npos; dot = k.find('.', dot + 1)) {
                sections.insert(k.substr(0, dot));
            }
        }
        std::vector<std::string> out;
        collect(root_, "", sections, out);
        return out;
    }

private:
    std::optional<YAML::Node> find(const std::string& key) const {
        YAML::Node node;
        node.reset(root_);
        std::string path;
        for (const auto& part : split_path(key)) {
            if (!node.IsMap()) throw SchemaError((path.empty() ? std::string("<root>") : path) + ": expected a mapping");
            path += (path.empty() ? "" : ".") + part;
            const YAML::Node& current = node;
            YAML::Node child = current[part];
            if (!child.IsDefined() || child.IsNull()) return std::nullopt;
            node.reset(child);
        }
        return node;
    }

    void collect(const YAML::Node& node, const std::string& prefix, const std::set<std::string>& sections,
                 std::vector<std::string>& out) const {
        for (const auto& kv : node) {
            const std::string key = prefix + kv.first.as<std::string>();
            if (known_.contains(key)) continue;
            if (sections.contains(key) && kv.second.IsMap()) {
                collect(kv.second, key + ".", sections, out);
            } else if (!sections.contains(key)) {
                out.push_back(key);
            }
        }
    }

    static std::string scalar(const std::string& key, const YAML::Node& node) {
        if (!node.IsScalar()) throw SchemaError(key + ": expected a scalar");
        return node.Scalar();
    }

    template <typename T>
    static T number(const std::string& key, const YAML::Node& node, const char* what) {
        const std::string s = scalar(key, node);
        T value{};
        const char* first = s.data();
        const char* last = s.data() + s.size();
        if (!s.empty() && s.front() == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc{} || ptr != last || first == last) {
            throw SchemaError(key + ": expected " + what + ", got '" + s + "'");
        }
        return value;
    }

    static void read(const std::string& key, const YAML::Node& node, std::string& out) { out = scalar(key, node); }
    static void read(const std::string& key, const YAML::Node& node, std::size_t& out) {
        out = number<std::size_t>(key, node, "a non-negative integer");
    }
    static void read(const std::string& key, const YAML::Node& node, double& out) {
        out = number<double>(key, node, "a number");
    }
    static void read(const std::string& key, const YAML::Node& node, bool& out) {
        const std::string s = scalar(key, node);
        if (s == "true") out = true;
        else if (s == "false") out = false;
        else throw SchemaError(key + ": expected true or false, got '" + s + "'");
    }
    static void read(const std::string& key, const YAML::Node& node, std::vector<double>& out) {
        if (!node.IsSequence()) throw SchemaError(key + ": expected a list of numbers");
        out.clear();
        for (std::size_t i = 0; i < node.size(); ++i) {
            out.push_back(number<double>(key + "[" + std::to_string(i) + "]", node[i], "a number"));
        }
    }
    static void read(const std::string& key, const YAML::Node& node, std::array<double, 4>& out) {
        if (!node.IsSequence() || node.size() != out.size()) {
            throw SchemaError(key + ": expected a list of 4 numbers");
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = number<double>(key + "[" + std::to_string(i) + "]", node[i], "a number");
        }
    }
    static void read(const std::string& key, const YAML::Node& node, std::set<ActionKind>& out) {
        if (!node.IsSequence()) throw SchemaError(key + ": expected a list of action kinds");
        out.clear();
        for (std::size_t i = 0; i < node.size(); ++i) {
            const std::string s = scalar(key, node[i]);
            try {
                out.insert(parse_action_kind(s));
            } catch (const ConfigError&) {
                throw SchemaError(key + ": unknown action kind '" + s +
                                  "' (expected model, partial_model, raw or synthetic)");
            }
        }
    }

    YAML::Node root_;
    std::set<std::string> known_;
};

void set_path(YAML::Node node, const std::vector<std::string>& parts, std::size_t i, const YAML::Node& value) {
    if (i + 1 == parts.size()) {
        node[parts[i]] = value;
        return;
    }
    if (!node[parts[i]].IsMap()) node[parts[i]] = YAML::Node(YAML::NodeType::Map);
    set_path(node[parts[i]], parts, i + 1, value);
}

// ---- writing ---------------------------------------------------------------

class Writer {
public:
    template <typename T>
    void operator()(const std::string& key, T& value) {
        put(key, encode(value));
    }

    template <typename E>
    void enumeration(const std::string& key, E& value, EnumTable<E> table) {
        for (const auto& [e, name] : table) {
            if (e == value) {
                put(key, YAML::Node(std::string(name)));
                return;
            }
        }
        throw InternalError(key + ": value missing from name table");
    }

    YAML::Node root{YAML::NodeType::Map};

private:
    void put(const std::string& key, const YAML::Node& value) { set_path(root, split_path(key), 0, value); }

    static YAML::Node encode(const std::string& s) { return YAML::Node(s); }
    static YAML::Node encode(std::size_t x) { return YAML::Node(std::to_string(x)); }
    static YAML::Node encode(double x) { return YAML::Node(format_double(x)); }
    static YAML::Node encode(bool b) { return YAML::Node(std::string(b ? "true" : "false")); }
    template <typename Range>
    static YAML::Node encode_list(const Range& items) {
        YAML::Node seq(YAML::NodeType::Sequence);
        for (double x : items) seq.push_back(format_double(x));
        seq.SetStyle(YAML::EmitterStyle::Flow);
        return seq;
    }
    static YAML::Node encode(const std::vector<double>& v) { return encode_list(v); }
    static YAML::Node encode(const std::array<double, 4>& v) { return encode_list(v); }
    static YAML::Node encode(const std::set<ActionKind>& kinds) {
        YAML::Node seq(YAML::NodeType::Sequence);
        for (ActionKind k : kinds) seq.push_back(std::string(to_string(k)));
        seq.SetStyle(YAML::EmitterStyle::Flow);
        return seq;
    }
};

struct KeyCollector {
    std::vector<std::string> keys;
    template <typename T>
    void operator()(const std::string& key, T&) { keys.push_back(key); }
    template <typename E>
    void enumeration(const std::string& key, E&, EnumTable<E>) { keys.push_back(key); }
};

} // namespace

ParseResult parse_config_string(std::string_view text, const ParseOptions& options) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(text));
    } catch (const YAML::Exception& e) {
        throw SchemaError(std::string("malformed YAML: ") + e.what());
    }
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw SchemaError("<root>: expected a mapping");

    for (const auto& [key, value] : options.overrides) {
        YAML::Node parsed;
        try {
            parsed = YAML::Load(value);
        } catch (const YAML::Exception& e) {
            throw SchemaError(key + ": malformed override value '" + value + "'");
        }
        set_path(root, split_path(key), 0, parsed);
    }

    ParseResult result;
    Reader reader(root);
    try {
        visit_config(result.config, reader);
    } catch (const YAML::Exception& e) {
        throw SchemaError(std::string("malformed config: ") + e.what());
    }
    for (const auto& key : reader.unknown_keys()) {
        if (options.strict) throw SchemaError(key + ": unknown key");
        result.warnings.push_back(key + ": unknown key ignored");
    }
    result.config.validate();
    return result;
}

ParseResult parse_config_file(const std::filesystem::path& path, const ParseOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("config file not found: " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_string(text.str(), options);
}

std::string serialize_config(const ScenarioConfig& config) {
    ScenarioConfig copy = config;
    Writer writer;
    visit_config(copy, writer);
    YAML::Emitter out;
    out << writer.root;
    return std::string(out.c_str()) + "\n";
}

std::string config_hash(const ScenarioConfig& config) {
    const std::string text = serialize_config(config);
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(text.data(), text.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw InternalError("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex += kHex[digest[i] >> 4];
        hex += kHex[digest[i] & 0xf];
    }
    return hex;
}

std::vector<std::pair<std::string, std::string>> env_overrides(char** environ_block) {
    static constexpr std::string_view kPrefix = "P2PFL_";
    std::vector<std::pair<std::string, std::string>> out;
    if (environ_block == nullptr) return out;
    for (char** e = environ_block; *e != nullptr; ++e) {
        const std::string_view entry(*e);
        if (!entry.starts_with(kPrefix)) continue;
        const auto eq = entry.find('=');
        if (eq == std::string_view::npos) continue;
        std::string name(entry.substr(kPrefix.size(), eq - kPrefix.size()));
        std::string key;
        for (std::size_t i = 0; i < name.size(); ++i) {
            if (name.compare(i, 2, "__") == 0) {
                key += '.';
                ++i;
            } else {
                key += static_cast<char>(std::tolower(static_cast<unsigned char>(name[i])));
            }
        }
        out.emplace_back(key, std::string(entry.substr(eq + 1)));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> config_keys() {
    KeyCollector collector;
    ScenarioConfig c;
    visit_config(c, collector);
    return collector.keys;
}

} // namespace p2pfl
