#pragma once

// Round-driven orchestration: churn, local training, evaluation, decision,
// action execution and metric recording.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "p2pfl/cost_model.hpp"
#include "p2pfl/decision_engine.hpp"
#include "p2pfl/learner.hpp"
#include "p2pfl/network_graph.hpp"
#include "p2pfl/partitioner.hpp"

namespace p2pfl {

enum class PartitionRegime { Iid, Pathological, QuantitySkew, Covariate };

std::string_view to_string(PartitionRegime regime);
PartitionRegime parse_partition_regime(std::string_view name);

struct DatasetConfig {
    std::size_t class_count = 10;
    std::size_t dim = 32;
    std::size_t samples_per_class = 250;
    double separation = 3.0;
    std::string csv_path;          ///< when set, replaces the generated mixture
    double test_fraction = 0.2;    ///< held out globally before partitioning
    double pretrain_fraction = 0.0;  ///< of the remaining pool, for backbone pretraining

    bool operator==(const DatasetConfig&) const = default;
};

struct CovariateConfig {
    double rotation_strength = 0.3;
    double scale_min = 0.8;
    double scale_max = 1.2;
    double noise_sigma = 0.1;
    bool per_class = false;  ///< concept drift

    bool operator==(const CovariateConfig&) const = default;
};

struct PartitionConfig {
    PartitionRegime regime = PartitionRegime::Iid;
    std::size_t labels_per_client = 2;
    std::vector<double> ratios;  ///< quantity skew; empty means equal
    double data_fraction = 1.0;  ///< share of the training pool handed out
    CovariateConfig covariate;

    bool operator==(const PartitionConfig&) const = default;
};

enum class TopologyKind { ErdosRenyi, Ring, Complete };

struct TopologyConfig {
    TopologyKind model = TopologyKind::ErdosRenyi;
    double p = 0.3;
    std::size_t ring_k = 1;
    double trust_fraction = 0.5;

    bool operator==(const TopologyConfig&) const = default;
};

struct ResourceConfig {
    double power_min = 0.5, power_max = 1.0;
    double mem_min = 0.5, mem_max = 1.0;
    double bandwidth_min = 2.0e5, bandwidth_max = 4.0e5;

    bool operator==(const ResourceConfig&) const = default;
};

struct ModelConfig {
    std::size_t hidden_dim = 0;
    InitKind init = InitKind::Zeros;
    double init_scale = 0.1;
    double frozen_fraction = 0.0;

    bool operator==(const ModelConfig&) const = default;
};

struct TrainingConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 0.1;
    double l2 = 1e-4;
    std::size_t pretrain_epochs = 20;
    double variance_floor = 1e-3;
    double received_weight = 1.0;  ///< per-sample loss weight of received data
    bool retain_received = true;
    /// Refit the synthetic-data generator each round on local plus received
    /// samples rather than only the local shard.
    bool generator_uses_received = true;

    bool operator==(const TrainingConfig&) const = default;
};

struct ConvergenceConfig {
    std::size_t window = 3;
    double epsilon = 0.01;
    bool early_stop = true;

    bool operator==(const ConvergenceConfig&) const = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::uint64_t seed = 42;
    std::size_t clients = 10;
    std::size_t rounds = 30;
    std::size_t k_degree = 1;
    DatasetConfig dataset;
    PartitionConfig partition;
    TopologyConfig topology;
    ChurnConfig churn;
    ResourceConfig resources;
    SizeModel size_model;
    ModelConfig model;
    TrainingConfig train;
    DecisionConfig decision;
    ConvergenceConfig convergence;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    bool operator==(const ScenarioConfig&) const = default;
};

struct ClientState {
    ClientId id = 0;
    Shard shard;
    LabeledData local;  ///< shard rows as this device sees them
    Model model;
    double accuracy = 0.0;
    double best_accuracy = 0.0;
    DeviceResources resources;
    std::size_t k_degree = 1;
    std::optional<Generator> generator;
    LabeledData received;
    ActionHistory history;
    RewardLedger rewards;
    std::vector<double> accuracy_series;

    [[nodiscard]] std::size_t training_size() const { return local.size() + received.size(); }
};

struct ActionRecord {
    ActionKind kind = ActionKind::ShareModel;
    ClientId peer = 0;
    std::uint64_t cost = 0;
    std::uint64_t payload = 0;
    std::optional<double> realized_reward;
};

struct ClientRoundRecord {
    std::size_t round = 0;
    ClientId client = 0;
    double accuracy = 0.0;
    double best_accuracy = 0.0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
    double bandwidth = 0.0;
    std::vector<ActionRecord> actions;  ///< actions this client received
};

struct MetricsLog {
    std::vector<ClientRoundRecord> rows;
    std::map<ClientId, std::optional<std::size_t>> convergence_round;
    std::vector<double> mean_accuracy;       ///< per round, over live clients
    std::vector<double> mean_best_accuracy;  ///< per round, over live clients
    std::uint64_t total_bytes = 0;
    std::size_t rounds_executed = 0;
    std::size_t dropped_actions = 0;  ///< selected but refused by the sender's budget

    [[nodiscard]] double final_mean_best_accuracy() const {
        return mean_best_accuracy.empty() ? 0.0 : mean_best_accuracy.back();
    }
};

/// Earliest r with max - min of series[r, r + window) <= epsilon.
std::optional<std::size_t> detect_convergence(std::span<const double> series, std::size_t window, double epsilon);

class Simulation {
public:
    explicit Simulation(const ScenarioConfig& config);

    /// Runs one round; returns false once the configured round count is
    /// exhausted or every live client has converged.
    bool run_round();
    void run();

    [[nodiscard]] const MetricsLog& log() const { return log_; }
    [[nodiscard]] const NetworkGraph& graph() const { return graph_; }
    [[nodiscard]] const std::map<ClientId, ClientState>& clients() const { return clients_; }
    [[nodiscard]] const std::map<ClientId, ClientState>& dormant() const { return dormant_; }
    [[nodiscard]] const LabeledData& test_set() const { return test_; }
    [[nodiscard]] const Model& initial_model() const { return initial_model_; }
    [[nodiscard]] const Dataset& dataset() const { return dataset_; }
    [[nodiscard]] std::size_t round() const { return round_; }
    [[nodiscard]] bool finished() const { return finished_; }

    /// Per-client training configuration for a given round.
    [[nodiscard]] TrainConfig train_config(ClientId id, std::size_t round) const;

    /// Worker threads for the per-client phases; results do not depend on it.
    void set_threads(std::size_t threads) { threads_ = threads == 0 ? 1 : threads; }

private:
    ClientState make_client(ClientId id, Shard shard);
    ClientSummary summarize(const ClientState& c) const;
    void churn_phase();
    void train_and_evaluate_phase();
    std::map<ClientId, std::vector<Action>> decision_phase();
    void execute_phase(const std::map<ClientId, std::vector<Action>>& selected);
    void record_phase();
    bool all_converged() const;

    ScenarioConfig config_;
    DecisionEngine engine_;
    Dataset dataset_;
    LabeledData test_;
    Model initial_model_;
    NetworkGraph graph_;
    std::map<ClientId, ClientState> clients_;
    std::map<ClientId, ClientState> dormant_;
    MetricsLog log_;
    std::size_t round_ = 0;
    bool finished_ = false;
    std::size_t threads_ = 1;

    // Scratch for the round in progress.
    std::map<ClientId, std::uint64_t> sent_, received_bytes_;
    std::map<ClientId, std::vector<ActionRecord>> executed_;  // by receiving client
    std::map<ClientId, std::size_t> last_row_;
};

/// Builds and runs a whole scenario.
MetricsLog run_simulation(const ScenarioConfig& config, std::size_t threads = 1);

/// Column order of metrics.csv.
inline constexpr const char* kMetricsCsvHeader =
    "round,client_id,accuracy,best_accuracy,bytes_sent,bytes_received,action_kind,action_peer,action_cost,"
    "realized_reward";

/// One row per (round, live client); multiple actions are ';'-joined in the
/// action columns, an unknown realised reward is left empty.
void write_metrics_csv(const MetricsLog& log, std::ostream& out);

} // namespace p2pfl
