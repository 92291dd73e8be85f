#include "p2pfl/decision_engine.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "p2pfl/errors.hpp"

namespace p2pfl {

void ActionHistory::record(std::size_t round, ActionKind kind, ClientId peer) {
    if (!entries_.empty() && entries_.back().round > round) {
        throw InternalError("action history entries must be appended in round order");
    }
    entries_.push_back({round, kind, peer});
}

void ActionHistory::prune(std::size_t current_round) {
    while (!entries_.empty() && current_round > entries_.front().round + window_) entries_.pop_front();
}

bool ActionHistory::recent_model_share(std::size_t current_round) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) {
        return is_model_action(e.kind) && e.round < current_round && current_round - e.round <= window_;
    });
}

std::span<const double> RewardLedger::observations(ActionKind kind, ClientId peer) const {
    auto it = observed_.find({kind, peer});
    if (it == observed_.end()) return {};
    return it->second;
}

void DecisionConfig::validate() const {
    if (window < 1) throw ConfigError("decision.window must be >= 1");
    for (double w : score_weights) {
        if (!(w >= 0.0)) throw ConfigError("decision.score_weights must be >= 0");
    }
    if (!(share_fraction > 0.0 && share_fraction <= 1.0)) throw ConfigError("decision.share_fraction must be in (0,1]");
    if (!(reward_decay >= 0.0 && reward_decay < 1.0)) throw ConfigError("decision.reward_decay must be in [0,1)");
    if (!(priority_lambda >= 0.0)) throw ConfigError("decision.priority_lambda must be >= 0");
    if (allowed.empty()) throw ConfigError("decision.allowed must not be empty");
    size_model.validate();
}

namespace {

double total_variation(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double na = 0.0, nb = 0.0;
    for (auto v : a) na += static_cast<double>(v);
    for (auto v : b) nb += static_cast<double>(v);
    if (na == 0.0 || nb == 0.0) return na == nb ? 0.0 : 1.0;
    const std::size_t n = std::max(a.size(), b.size());
    double tv = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double pa = c < a.size() ? static_cast<double>(a[c]) / na : 0.0;
        const double pb = c < b.size() ? static_cast<double>(b[c]) / nb : 0.0;
        tv += std::abs(pa - pb);
    }
    return 0.5 * tv;
}

std::optional<ActionKind> model_kind(const std::set<ActionKind>& allowed) {
    if (allowed.contains(ActionKind::ShareModel)) return ActionKind::ShareModel;
    if (allowed.contains(ActionKind::SharePartialModel)) return ActionKind::SharePartialModel;
    return std::nullopt;
}

} // namespace

double score_context(const ClientSummary& client, const ClientSummary& peer, const std::array<double, 4>& weights) {
    const double acc_gap = std::max(0.0, peer.accuracy - client.accuracy);
    const double total = static_cast<double>(peer.shard_size + client.shard_size);
    const double size_ratio = total > 0.0 ? static_cast<double>(peer.shard_size) / total : 0.0;
    const double divergence = total_variation(client.label_histogram, peer.label_histogram);
    const double capacity = compute_capacity(peer.resources);
    const double s = weights[0] * acc_gap + weights[1] * size_ratio + weights[2] * divergence + weights[3] * capacity;
    return std::clamp(s, 0.0, 1.0);
}

double estimate_reward(double static_reward, std::span<const double> observed, double decay) {
    if (observed.empty()) return static_reward;
    double ema = observed.front();
    for (std::size_t i = 1; i < observed.size(); ++i) ema = decay * ema + (1.0 - decay) * observed[i];
    return ema;
}

std::size_t shared_sample_count(std::size_t shard_size, double share_fraction) {
    if (shard_size == 0) return 0;
    const auto n = static_cast<std::size_t>(std::llround(share_fraction * static_cast<double>(shard_size)));
    return std::clamp<std::size_t>(n, 1, shard_size);
}

std::vector<Action> ranking(const ClientSummary& client, std::span<const ClientSummary> peers,
                            const ActionHistory& history, std::size_t current_round, const DecisionConfig& config,
                            const RewardLedger* rewards) {
    std::vector<const ClientSummary*> ordered;
    for (const auto& p : peers) {
        if (p.id != client.id) ordered.push_back(&p);
    }
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });

    const auto share_kind = model_kind(config.allowed);
    const bool cooling_down = history.recent_model_share(current_round);

    auto refine = [&](ActionKind kind, ClientId peer, double static_reward) {
        if (!config.adaptive_rewards || rewards == nullptr) return static_reward;
        return std::max(0.0, estimate_reward(static_reward, rewards->observations(kind, peer), config.reward_decay));
    };

    std::vector<Action> out;
    for (const ClientSummary* peer : ordered) {
        if (share_kind && !cooling_down && peer->accuracy > client.accuracy) {
            const std::size_t count =
                *share_kind == ActionKind::SharePartialModel ? peer->unfrozen_param_count : peer->param_count;
            Action a{*share_kind, peer->id, client.id, {count}, 0, 0.0};
            a.cost = packet_size(a.kind, a.payload, config.size_model);
            a.reward = refine(a.kind, peer->id, 0.5 * (client.accuracy + peer->accuracy));
            out.push_back(a);
        }

        const bool trusted = peer->trusted_peers.contains(client.id);
        const bool raw = config.trust_branch == TrustBranch::TrustedRaw ? trusted : !trusted;
        const ActionKind data_kind = raw ? ActionKind::ShareRawData : ActionKind::ShareSyntheticData;
        if (!config.allowed.contains(data_kind)) continue;
        if (data_kind == ActionKind::ShareSyntheticData && !peer->has_generator) continue;
        const std::size_t samples = shared_sample_count(peer->shard_size, config.share_fraction);
        if (samples == 0) continue;

        Action a{data_kind, peer->id, client.id, {samples}, 0, 0.0};
        a.cost = packet_size(a.kind, a.payload, config.size_model);
        a.reward = refine(a.kind, peer->id, score_context(client, *peer, config.score_weights));
        out.push_back(a);
    }
    return out;
}

double action_priority(const Action& action, double bandwidth, const DecisionConfig& config) {
    const double channel = comm_cost(bandwidth, static_cast<double>(action.cost), config.size_model.alpha);
    if (config.priority == PriorityFormula::Linear) return action.reward - config.priority_lambda * channel;
    return action.reward / (1.0 + channel);
}

std::vector<Action> priority_order(std::span<const Action> scored, double bandwidth, const DecisionConfig& config) {
    std::vector<std::pair<double, Action>> keyed;
    keyed.reserve(scored.size());
    for (const Action& a : scored) keyed.emplace_back(action_priority(a, bandwidth, config), a);
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        if (x.second.src != y.second.src) return x.second.src < y.second.src;
        return x.second.kind < y.second.kind;
    });
    std::vector<Action> out;
    out.reserve(keyed.size());
    for (auto& [_, a] : keyed) out.push_back(a);
    return out;
}

std::vector<Action> select_actions(double bandwidth, std::span<const Action> scored, const DecisionConfig& config) {
    std::vector<Action> accepted;
    if (!(bandwidth > 0.0) || scored.empty()) return accepted;

    double spent = 0.0;
    for (const Action& a : priority_order(scored, bandwidth, config)) {
        const double cost = static_cast<double>(a.cost);
        if (cost > bandwidth - spent) {
            if (config.greedy_skip) continue;
            break;
        }
        accepted.push_back(a);
        spent += cost;
    }
    return accepted;
}

std::vector<ClientId> discover_peers(const NetworkGraph& graph, const ClientSummary& client,
                                     const DecisionConfig& config) {
    auto found = bfs_k_degree(graph, client.id, client.k_degree, BfsOptions{config.bfs_literal_depth});
    found.erase(found.begin());
    std::sort(found.begin(), found.end());
    return found;
}

std::vector<Action> pre_communication(const ClientSummary& client, const NetworkGraph& graph,
                                      const std::map<ClientId, ClientSummary>& directory, const ActionHistory& history,
                                      std::size_t current_round, const DecisionConfig& config,
                                      const RewardLedger* rewards) {
    std::vector<ClientSummary> peers;
    for (ClientId id : discover_peers(graph, client, config)) {
        auto it = directory.find(id);
        if (it == directory.end()) throw InternalError("no published state for peer " + std::to_string(id));
        peers.push_back(it->second);
    }
    const auto scored = ranking(client, peers, history, current_round, config, rewards);
    return select_actions(client.resources.bandwidth, scored, config);
}

DecisionEngine::DecisionEngine(DecisionConfig config) : config_(std::move(config)) {
    config_.validate();
}

DecisionEngine strategy_filter(DecisionConfig config, const std::set<ActionKind>& allowed) {
    if (allowed.empty()) throw ConfigError("strategy filter needs at least one allowed action kind");
    config.allowed = allowed;
    return DecisionEngine(std::move(config));
}

} // namespace p2pfl
