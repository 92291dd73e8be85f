#include "p2pfl/network_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "p2pfl/errors.hpp"
#include "p2pfl/random.hpp"

namespace p2pfl {

namespace {

void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError(std::string(name) + " must be in [0,1], got " + std::to_string(p));
    }
}

} // namespace

NetworkGraph::NetworkGraph(std::size_t node_count) {
    for (std::size_t i = 0; i < node_count; ++i) add_node();
}

ClientId NetworkGraph::add_node() {
    const ClientId id = next_id_++;
    adjacency_.emplace(id, std::set<ClientId>{});
    return id;
}

void NetworkGraph::restore_node(ClientId id) {
    if (!departed_.contains(id)) {
        throw NotFoundError("node " + std::to_string(id) + " has not departed");
    }
    departed_.erase(id);
    adjacency_.emplace(id, std::set<ClientId>{});
}

void NetworkGraph::remove_node(ClientId id) {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) throw NotFoundError("node " + std::to_string(id) + " not in graph");
    for (ClientId n : it->second) {
        adjacency_[n].erase(id);
        trusted_.erase(Edge::of(id, n));
        --edge_count_;
    }
    adjacency_.erase(it);
    departed_.insert(id);
}

bool NetworkGraph::add_edge(ClientId a, ClientId b, bool trusted) {
    if (a == b) throw ConfigError("self-loop on node " + std::to_string(a));
    auto ia = adjacency_.find(a);
    auto ib = adjacency_.find(b);
    if (ia == adjacency_.end() || ib == adjacency_.end()) {
        throw NotFoundError("edge endpoint not in graph");
    }
    if (!ia->second.insert(b).second) return false;
    ib->second.insert(a);
    ++edge_count_;
    if (trusted) trusted_.insert(Edge::of(a, b));
    return true;
}

bool NetworkGraph::remove_edge(ClientId a, ClientId b) {
    auto ia = adjacency_.find(a);
    if (ia == adjacency_.end() || !ia->second.erase(b)) return false;
    adjacency_[b].erase(a);
    trusted_.erase(Edge::of(a, b));
    --edge_count_;
    return true;
}

void NetworkGraph::set_trusted(ClientId a, ClientId b, bool trusted) {
    if (!has_edge(a, b)) throw NotFoundError("cannot label a missing edge as trusted");
    if (trusted) {
        trusted_.insert(Edge::of(a, b));
    } else {
        trusted_.erase(Edge::of(a, b));
    }
}

bool NetworkGraph::has_edge(ClientId a, ClientId b) const {
    auto it = adjacency_.find(a);
    return it != adjacency_.end() && it->second.contains(b);
}

const std::set<ClientId>& NetworkGraph::neighbors(ClientId id) const {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) throw NotFoundError("node " + std::to_string(id) + " not in graph");
    return it->second;
}

std::set<ClientId> NetworkGraph::trusted_peers(ClientId id) const {
    std::set<ClientId> out;
    for (ClientId n : neighbors(id)) {
        if (is_trusted(id, n)) out.insert(n);
    }
    return out;
}

std::vector<ClientId> NetworkGraph::nodes() const {
    std::vector<ClientId> out;
    out.reserve(adjacency_.size());
    for (const auto& [id, _] : adjacency_) out.push_back(id);
    return out;
}

std::vector<Edge> NetworkGraph::edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count_);
    for (const auto& [a, ns] : adjacency_) {
        for (ClientId b : ns) {
            if (a < b) out.push_back({a, b});
        }
    }
    return out;
}

void NetworkGraph::check_invariants() const {
    std::size_t half_edges = 0;
    for (const auto& [a, ns] : adjacency_) {
        if (ns.contains(a)) throw InternalError("self-loop at " + std::to_string(a));
        for (ClientId b : ns) {
            auto it = adjacency_.find(b);
            if (it == adjacency_.end()) throw InternalError("dangling endpoint " + std::to_string(b));
            if (!it->second.contains(a)) throw InternalError("asymmetric edge " + std::to_string(a) + "-" + std::to_string(b));
        }
        half_edges += ns.size();
        if (departed_.contains(a)) throw InternalError("live node marked departed");
        if (a >= next_id_) throw InternalError("node id beyond next_id");
    }
    if (half_edges != 2 * edge_count_) throw InternalError("edge count out of sync");
    for (const Edge& e : trusted_) {
        if (!has_edge(e.a, e.b)) throw InternalError("trusted pair is not an edge");
    }
}

NetworkGraph build_graph(const TopologySpec& spec) {
    if (spec.node_count == 0) throw ConfigError("topology.node_count must be >= 1");
    check_probability(spec.trust_fraction, "topology.trust_fraction");

    NetworkGraph g(spec.node_count);
    const auto n = static_cast<ClientId>(spec.node_count);
    Rng rng = make_rng(spec.seed, {0x70706f6cULL});

    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, ErdosRenyi>) {
                check_probability(m.p, "topology.p");
                for (ClientId a = 0; a < n; ++a) {
                    for (ClientId b = a + 1; b < n; ++b) {
                        if (bernoulli(rng, m.p)) g.add_edge(a, b);
                    }
                }
            } else if constexpr (std::is_same_v<M, Ring>) {
                if (m.k == 0) throw ConfigError("topology.ring_k must be >= 1");
                for (ClientId a = 0; a < n; ++a) {
                    for (std::size_t s = 1; s <= m.k; ++s) {
                        const auto b = static_cast<ClientId>((a + s) % n);
                        if (b != a) g.add_edge(a, b);
                    }
                }
            } else {
                for (ClientId a = 0; a < n; ++a) {
                    for (ClientId b = a + 1; b < n; ++b) g.add_edge(a, b);
                }
            }
        },
        spec.model);

    auto edges = g.edges();
    const auto trusted_count =
        static_cast<std::size_t>(std::floor(spec.trust_fraction * static_cast<double>(edges.size())));
    shuffle(std::span<Edge>(edges), rng);
    for (std::size_t i = 0; i < trusted_count; ++i) g.set_trusted(edges[i].a, edges[i].b, true);
    return g;
}

std::vector<ClientId> bfs_k_degree(const NetworkGraph& graph, ClientId client, std::size_t k,
                                   const BfsOptions& options, BfsStats* stats) {
    if (!graph.contains(client)) throw NotFoundError("client " + std::to_string(client) + " not in graph");

    std::vector<ClientId> peer_list;
    std::set<ClientId> seen{client};
    std::deque<std::pair<ClientId, std::size_t>> queue{{client, k}};
    BfsStats local;

    while (!queue.empty()) {
        const auto [peer, current_k] = queue.front();
        queue.pop_front();
        peer_list.push_back(peer);
        ++local.nodes_visited;
        if (current_k == 0) continue;

        const std::size_t child_k = options.literal_depth ? k - 1 : current_k - 1;
        for (ClientId child : graph.neighbors(peer)) {
            ++local.edges_inspected;
            if (!seen.insert(child).second) continue;
            queue.emplace_back(child, child_k);
        }
    }
    if (stats) *stats = local;
    return peer_list;
}

void ChurnConfig::validate() const {
    check_probability(p_leave, "churn.p_leave");
    check_probability(p_join, "churn.p_join");
    check_probability(p_rewire, "churn.p_rewire");
    check_probability(p_rejoin, "churn.p_rejoin");
    if (join_degree < 1) throw ConfigError("churn.join_degree must be >= 1");
}

ChurnResult apply_churn(const NetworkGraph& graph, const ChurnConfig& churn, std::uint64_t rng_seed) {
    churn.validate();
    ChurnResult out{graph, {}};
    NetworkGraph& g = out.graph;
    Rng rng = make_rng(rng_seed, {0x636875726eULL});

    for (ClientId id : graph.nodes()) {
        if (bernoulli(rng, churn.p_leave)) {
            g.remove_node(id);
            out.delta.departed.push_back(id);
        }
    }

    if (bernoulli(rng, churn.p_join)) {
        std::vector<ClientId> existing = g.nodes();
        ClientId id;
        // Departed set is read after this round's departures; a node never
        // rejoins in the round it left.
        std::vector<ClientId> eligible;
        for (ClientId d : g.departed()) {
            if (std::find(out.delta.departed.begin(), out.delta.departed.end(), d) == out.delta.departed.end()) {
                eligible.push_back(d);
            }
        }
        if (!eligible.empty() && bernoulli(rng, churn.p_rejoin)) {
            id = eligible.front();
            g.restore_node(id);
            out.delta.rejoined.push_back(id);
        } else {
            id = g.add_node();
            out.delta.joined.push_back(id);
        }
        const std::size_t degree = std::min(churn.join_degree, existing.size());
        for (std::size_t i = 0; i < degree; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_index(rng, existing.size() - i));
            std::swap(existing[i], existing[j]);
            g.add_edge(id, existing[i]);
        }
    }

    if (churn.p_rewire > 0.0) {
        for (const Edge& e : g.edges()) {
            if (!bernoulli(rng, churn.p_rewire)) continue;
            if (!g.has_edge(e.a, e.b)) continue;
            std::vector<ClientId> candidates;
            for (ClientId w : g.nodes()) {
                if (w != e.a && !g.has_edge(e.a, w)) candidates.push_back(w);
            }
            if (candidates.empty()) continue;
            const ClientId w = candidates[uniform_index(rng, candidates.size())];
            const bool trusted = g.is_trusted(e.a, e.b);
            g.remove_edge(e.a, e.b);
            g.add_edge(e.a, w, trusted);
            out.delta.rewired.push_back({e, Edge::of(e.a, w)});
        }
    }
    return out;
}

double average_degree(const NetworkGraph& graph) {
    if (graph.node_count() == 0) throw UndefinedValueError("average degree of an empty graph");
    return 2.0 * static_cast<double>(graph.edge_count()) / static_cast<double>(graph.node_count());
}

} // namespace p2pfl
