#pragma once

// Per-client pre-communication step: discover peers up to k hops, rank the
// exchange actions each peer offers, then greedily accept actions under the
// client's bandwidth budget.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "p2pfl/cost_model.hpp"
#include "p2pfl/network_graph.hpp"

namespace p2pfl {

/// A knowledge transfer from `src` (the peer) to `dst` (the deciding client).
struct Action {
    ActionKind kind = ActionKind::ShareModel;
    ClientId src = 0;
    ClientId dst = 0;
    PayloadDescriptor payload;
    std::uint64_t cost = 0;  ///< bytes
    double reward = 0.0;

    bool operator==(const Action&) const = default;
};

/// What a client publishes about itself to peers that reach it by BFS.
struct ClientSummary {
    ClientId id = 0;
    double accuracy = 0.0;
    std::size_t shard_size = 0;
    std::vector<std::size_t> label_histogram;
    DeviceResources resources;
    std::set<ClientId> trusted_peers;
    std::size_t param_count = 0;
    std::size_t unfrozen_param_count = 0;
    bool has_generator = false;
    std::size_t k_degree = 1;
};

/// Recent (round, kind, peer) entries of one client, limited to a window of
/// W rounds.
class ActionHistory {
public:
    struct Entry {
        std::size_t round;
        ActionKind kind;
        ClientId peer;
        bool operator==(const Entry&) const = default;
    };

    explicit ActionHistory(std::size_t window = 3) : window_(window) {}

    /// Entries must arrive in non-decreasing round order.
    void record(std::size_t round, ActionKind kind, ClientId peer);
    /// Drops entries older than the window as seen from `current_round`.
    void prune(std::size_t current_round);
    /// True if a model-sharing entry falls in [current_round - W, current_round).
    [[nodiscard]] bool recent_model_share(std::size_t current_round) const;

    [[nodiscard]] std::size_t window() const { return window_; }
    [[nodiscard]] const std::deque<Entry>& entries() const { return entries_; }

private:
    std::size_t window_;
    std::deque<Entry> entries_;
};

/// Realised accuracy deltas per (action kind, peer), oldest first.
class RewardLedger {
public:
    void record(ActionKind kind, ClientId peer, double delta) { observed_[{kind, peer}].push_back(delta); }
    [[nodiscard]] std::span<const double> observations(ActionKind kind, ClientId peer) const;

private:
    std::map<std::pair<ActionKind, ClientId>, std::vector<double>> observed_;
};

enum class PriorityFormula { Ratio, Linear };
enum class TrustBranch { TrustedRaw, TrustedSynthetic };

struct DecisionConfig {
    std::size_t window = 3;
    /// Weights of accuracy gap, size ratio, label divergence, peer capacity.
    std::array<double, 4> score_weights{0.25, 0.25, 0.25, 0.25};
    PriorityFormula priority = PriorityFormula::Ratio;
    double priority_lambda = 1.0;
    bool greedy_skip = false;
    TrustBranch trust_branch = TrustBranch::TrustedRaw;
    double share_fraction = 0.1;
    bool adaptive_rewards = true;
    double reward_decay = 0.5;
    bool bfs_literal_depth = false;
    /// Kinds ranking may emit. Model sharing is emitted as SharePartialModel
    /// only when that is allowed and ShareModel is not.
    std::set<ActionKind> allowed{std::begin(kAllActionKinds), std::end(kAllActionKinds)};
    SizeModel size_model;

    void validate() const;
    bool operator==(const DecisionConfig&) const = default;
};

/// w1 * max(0, peer.acc - client.acc) + w2 * |peer| / (|peer| + |client|)
///   + w3 * TV(label histograms) + w4 * compute_capacity(peer), clamped to [0,1].
double score_context(const ClientSummary& client, const ClientSummary& peer,
                     const std::array<double, 4>& weights = {0.25, 0.25, 0.25, 0.25});

/// Exponential moving average of `observed` (first observation seeds it);
/// `static_reward` when nothing has been observed.
double estimate_reward(double static_reward, std::span<const double> observed, double decay = 0.5);

/// Number of samples a data action moves out of a shard of `shard_size`.
std::size_t shared_sample_count(std::size_t shard_size, double share_fraction);

/// Candidate actions offered by each peer, ordered by peer id then model
/// before data. Only kinds in config.allowed are returned.
std::vector<Action> ranking(const ClientSummary& client, std::span<const ClientSummary> peers,
                            const ActionHistory& history, std::size_t current_round, const DecisionConfig& config,
                            const RewardLedger* rewards = nullptr);

/// reward / (1 + comm_cost) for Ratio, reward - lambda * comm_cost for Linear.
double action_priority(const Action& action, double bandwidth, const DecisionConfig& config);

/// Total order used for selection: priority descending, then peer id, then
/// kind.
std::vector<Action> priority_order(std::span<const Action> scored, double bandwidth, const DecisionConfig& config);

/// Greedy selection. In default mode the first action that does not fit
/// ends selection; with greedy_skip it is skipped and scanning continues.
std::vector<Action> select_actions(double bandwidth, std::span<const Action> scored, const DecisionConfig& config);

/// Peers of `client` sorted by id, found by BFS to client.k_degree (the
/// client itself is excluded).
std::vector<ClientId> discover_peers(const NetworkGraph& graph, const ClientSummary& client,
                                     const DecisionConfig& config);

/// discover_peers -> ranking -> select_actions.
std::vector<Action> pre_communication(const ClientSummary& client, const NetworkGraph& graph,
                                      const std::map<ClientId, ClientSummary>& directory, const ActionHistory& history,
                                      std::size_t current_round, const DecisionConfig& config,
                                      const RewardLedger* rewards = nullptr);

/// Decision engine restricted to a set of action kinds, used for the
/// single-strategy ablations.
class DecisionEngine {
public:
    explicit DecisionEngine(DecisionConfig config);

    [[nodiscard]] const DecisionConfig& config() const { return config_; }

    [[nodiscard]] std::vector<Action> pre_communication(const ClientSummary& client, const NetworkGraph& graph,
                                                        const std::map<ClientId, ClientSummary>& directory,
                                                        const ActionHistory& history, std::size_t current_round,
                                                        const RewardLedger* rewards = nullptr) const {
        return p2pfl::pre_communication(client, graph, directory, history, current_round, config_, rewards);
    }

private:
    DecisionConfig config_;
};

/// Restricts `config` to `allowed` kinds. Throws ConfigError on an empty set.
DecisionEngine strategy_filter(DecisionConfig config, const std::set<ActionKind>& allowed);

} // namespace p2pfl
