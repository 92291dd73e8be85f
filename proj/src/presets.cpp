#include "p2pfl/presets.hpp"

#include <algorithm>

#include "p2pfl/errors.hpp"

namespace p2pfl {

namespace {

ScenarioConfig base_scenario() {
    ScenarioConfig c;
    c.seed = 42;
    c.clients = 10;
    c.rounds = 30;
    c.k_degree = 1;

    c.dataset.class_count = 10;
    c.dataset.dim = 32;
    c.dataset.samples_per_class = 250;
    c.dataset.separation = 3.0;
    c.dataset.test_fraction = 0.2;
    c.dataset.pretrain_fraction = 0.1;

    c.topology.model = TopologyKind::Complete;
    c.topology.trust_fraction = 0.7;

    // Pretrained hidden layer shared by every client and kept frozen; only
    // the output layer is fine-tuned and exchanged by partial sharing.
    c.model.hidden_dim = 32;
    c.model.init = InitKind::SeededUniform;
    c.model.init_scale = 0.3;
    const auto d = static_cast<double>(c.dataset.dim);
    const auto h = static_cast<double>(c.model.hidden_dim);
    const auto classes = static_cast<double>(c.dataset.class_count);
    const double params = h * d + h + classes * h + classes;
    c.model.frozen_fraction = (h * d + 0.5) / params;

    c.train.epochs = 3;

    c.convergence.early_stop = false;
    return c;
}

void apply_row(ScenarioConfig& c, std::string_view row) {
    if (row == "iid") {
        c.partition.regime = PartitionRegime::Iid;
    } else if (row == "pathological") {
        c.partition.regime = PartitionRegime::Pathological;
        c.partition.labels_per_client = 2;
    } else if (row == "nonpathological") {
        c.partition.regime = PartitionRegime::Covariate;
    } else if (row == "quantity_skew") {
        c.partition.regime = PartitionRegime::QuantitySkew;
        c.partition.ratios = {0.25, 0.2, 0.15, 0.1, 0.08, 0.07, 0.05, 0.04, 0.03, 0.03};
    } else if (row == "tiny_shards") {
        c.partition.regime = PartitionRegime::QuantitySkew;
        c.partition.ratios = {0.16, 0.14, 0.12, 0.11, 0.1, 0.09, 0.08, 0.07, 0.07, 0.06};
        c.partition.data_fraction = 0.1;
    } else {
        throw NotFoundError(std::string(row));
    }
}

std::string valid_names() {
    std::string out;
    for (const auto& n : preset_names()) out += (out.empty() ? "" : ", ") + n;
    return out;
}

} // namespace

std::vector<std::string> preset_rows() {
    return {"iid", "pathological", "nonpathological", "quantity_skew", "tiny_shards"};
}

std::vector<std::string> preset_strategies() { return {"s1", "s2", "s3", "s4", "adaptive"}; }

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& row : preset_rows()) {
        for (const auto& s : preset_strategies()) out.push_back(row + "." + s);
    }
    return out;
}

std::set<ActionKind> strategy_kinds(std::string_view strategy) {
    if (strategy == "s1") return {ActionKind::ShareRawData};
    if (strategy == "s2") return {ActionKind::ShareSyntheticData};
    if (strategy == "s3") return {ActionKind::ShareModel};
    if (strategy == "s4") return {ActionKind::SharePartialModel};
    if (strategy == "adaptive") return {std::begin(kAllActionKinds), std::end(kAllActionKinds)};
    throw NotFoundError("unknown strategy '" + std::string(strategy) + "'");
}

ScenarioConfig make_preset(std::string_view name) {
    const auto dot = name.find('.');
    const std::string_view row = name.substr(0, dot);
    const std::string_view strategy = dot == std::string_view::npos ? "adaptive" : name.substr(dot + 1);

    const auto rows = preset_rows();
    const auto strategies = preset_strategies();
    if (std::find(rows.begin(), rows.end(), row) == rows.end() ||
        std::find(strategies.begin(), strategies.end(), strategy) == strategies.end()) {
        throw NotFoundError("unknown preset '" + std::string(name) + "'; valid presets: " + valid_names());
    }

    ScenarioConfig c = base_scenario();
    apply_row(c, row);
    c.decision.allowed = strategy_kinds(strategy);
    c.name = std::string(row) + "." + std::string(strategy);
    return c;
}

} // namespace p2pfl
