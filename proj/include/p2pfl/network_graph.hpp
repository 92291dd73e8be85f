#pragma once

// Dynamic peer-to-peer topology: undirected adjacency, trust-labelled edges,
// churn (leave / join / rewire) and hop-limited breadth-first peer discovery.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <variant>
#include <vector>

namespace p2pfl {

using ClientId = std::uint32_t;

/// Undirected edge stored with a < b.
struct Edge {
    ClientId a{};
    ClientId b{};

    static Edge of(ClientId x, ClientId y) { return x < y ? Edge{x, y} : Edge{y, x}; }
    auto operator<=>(const Edge&) const = default;
};

class NetworkGraph {
public:
    NetworkGraph() = default;
    /// Nodes 0..node_count-1, no edges.
    explicit NetworkGraph(std::size_t node_count);

    /// Adds a node with the next unused id and returns it.
    ClientId add_node();
    /// Re-adds a previously departed node under its old id.
    void restore_node(ClientId id);
    /// Removes the node, its edges and their trust labels; the id is remembered
    /// as departed.
    void remove_node(ClientId id);

    bool add_edge(ClientId a, ClientId b, bool trusted = false);
    bool remove_edge(ClientId a, ClientId b);
    void set_trusted(ClientId a, ClientId b, bool trusted);

    [[nodiscard]] bool contains(ClientId id) const { return adjacency_.contains(id); }
    [[nodiscard]] bool has_edge(ClientId a, ClientId b) const;
    [[nodiscard]] bool is_trusted(ClientId a, ClientId b) const { return trusted_.contains(Edge::of(a, b)); }

    /// Neighbours in ascending id order. Throws NotFoundError for unknown ids.
    [[nodiscard]] const std::set<ClientId>& neighbors(ClientId id) const;
    /// Neighbours joined to `id` by a trusted edge.
    [[nodiscard]] std::set<ClientId> trusted_peers(ClientId id) const;

    [[nodiscard]] std::vector<ClientId> nodes() const;
    [[nodiscard]] std::vector<Edge> edges() const;
    [[nodiscard]] const std::set<Edge>& trusted_edges() const { return trusted_; }
    [[nodiscard]] const std::set<ClientId>& departed() const { return departed_; }

    [[nodiscard]] std::size_t node_count() const { return adjacency_.size(); }
    [[nodiscard]] std::size_t edge_count() const { return edge_count_; }
    [[nodiscard]] ClientId next_id() const { return next_id_; }

    [[nodiscard]] std::size_t round() const { return round_; }
    void set_round(std::size_t r) { round_ = r; }

    /// Throws InternalError if symmetry, self-loop, trust or endpoint
    /// invariants are broken.
    void check_invariants() const;

    bool operator==(const NetworkGraph&) const = default;

private:
    std::map<ClientId, std::set<ClientId>> adjacency_;
    std::set<Edge> trusted_;
    std::set<ClientId> departed_;
    std::size_t edge_count_ = 0;
    ClientId next_id_ = 0;
    std::size_t round_ = 0;
};

struct ErdosRenyi {
    double p = 0.3;
};
struct Ring {
    std::size_t k = 1; ///< neighbours on each side
};
struct Complete {};

using TopologyModel = std::variant<ErdosRenyi, Ring, Complete>;

struct TopologySpec {
    std::size_t node_count = 1;
    TopologyModel model = Complete{};
    double trust_fraction = 0.0;
    std::uint64_t seed = 0;
};

/// Deterministic for a fixed seed. floor(trust_fraction * |E|) edges are
/// marked trusted by seeded sampling.
NetworkGraph build_graph(const TopologySpec& spec);

struct BfsOptions {
    /// Enqueue children with the starting depth minus one instead of the
    /// current depth minus one (the hop limit is then only applied at the
    /// first level). Kept for fidelity experiments.
    bool literal_depth = false;
};

struct BfsStats {
    std::size_t nodes_visited = 0;
    std::size_t edges_inspected = 0;
};

/// Every node within `k` hops of `client`, in FIFO BFS order with ascending
/// neighbour iteration. The first element is `client` itself.
std::vector<ClientId> bfs_k_degree(const NetworkGraph& graph, ClientId client, std::size_t k,
                                   const BfsOptions& options = {}, BfsStats* stats = nullptr);

struct ChurnConfig {
    double p_leave = 0.0;
    double p_join = 0.0;
    std::size_t join_degree = 1;
    double p_rewire = 0.0;
    /// Probability that a join event brings back a departed node (lowest id
    /// first) rather than a fresh one. 0 means joins are always fresh.
    double p_rejoin = 0.0;

    void validate() const;
    bool operator==(const ChurnConfig&) const = default;
};

struct RewiredEdge {
    Edge removed;
    Edge added;
    auto operator<=>(const RewiredEdge&) const = default;
};

struct ChurnDelta {
    std::vector<ClientId> departed;
    std::vector<ClientId> joined;
    std::vector<ClientId> rejoined;
    std::vector<RewiredEdge> rewired;

    [[nodiscard]] bool empty() const {
        return departed.empty() && joined.empty() && rejoined.empty() && rewired.empty();
    }
    bool operator==(const ChurnDelta&) const = default;
};

struct ChurnResult {
    NetworkGraph graph;
    ChurnDelta delta;
};

/// One churn step: departures, then at most one join, then per-edge rewiring.
ChurnResult apply_churn(const NetworkGraph& graph, const ChurnConfig& churn, std::uint64_t rng_seed);

/// 2E / V. Throws UndefinedValueError on an empty graph.
double average_degree(const NetworkGraph& graph);

} // namespace p2pfl
