#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code under test except for
// plain data types.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pfl/decision_engine.hpp"
#include "p2pfl/learner.hpp"
#include "p2pfl/network_graph.hpp"

namespace oracle {

using p2pfl::ClientId;

/// Adjacency matrix of a small undirected graph.
struct SmallGraph {
    std::size_t n = 0;
    std::vector<std::vector<bool>> adj;

    explicit SmallGraph(std::size_t nodes = 0) : n(nodes), adj(nodes, std::vector<bool>(nodes, false)) {}
    void connect(std::size_t a, std::size_t b) {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    [[nodiscard]] std::size_t edge_count() const {
        std::size_t e = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) e += adj[i][j];
        return e;
    }
    [[nodiscard]] p2pfl::NetworkGraph to_network() const {
        p2pfl::NetworkGraph g(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (adj[i][j]) g.add_edge(static_cast<ClientId>(i), static_cast<ClientId>(j));
        return g;
    }
};

/// graph6 line -> graph (n <= 62).
inline SmallGraph decode_graph6(const std::string& line) {
    if (line.empty()) throw std::runtime_error("empty graph6 line");
    const std::size_t n = static_cast<std::size_t>(line[0] - 63);
    SmallGraph g(n);
    std::size_t bit = 0;
    auto get = [&](std::size_t k) {
        const int c = line[1 + k / 6] - 63;
        return (c >> (5 - k % 6)) & 1;
    };
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < j; ++i, ++bit)
            if (get(bit)) g.connect(i, j);
    return g;
}

inline std::vector<SmallGraph> load_graph6_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<SmallGraph> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(decode_graph6(line));
    }
    return out;
}

constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// Hop distance from `src` to every node as the shortest simple path found by
/// enumerating all simple paths (exponential; meant for <= 8 nodes).
inline std::vector<std::size_t> hops_by_path_enumeration(const SmallGraph& g, std::size_t src) {
    std::vector<std::size_t> best(g.n, kUnreachable);
    std::vector<bool> on_path(g.n, false);
    auto dfs = [&](auto&& self, std::size_t v, std::size_t len) -> void {
        best[v] = std::min(best[v], len);
        on_path[v] = true;
        for (std::size_t w = 0; w < g.n; ++w)
            if (g.adj[v][w] && !on_path[w]) self(self, w, len + 1);
        on_path[v] = false;
    };
    dfs(dfs, src, 0);
    return best;
}

/// All-pairs hop distances by Floyd-Warshall.
inline std::vector<std::vector<std::size_t>> hops_floyd_warshall(const SmallGraph& g) {
    std::vector<std::vector<std::size_t>> d(g.n, std::vector<std::size_t>(g.n, kUnreachable));
    for (std::size_t i = 0; i < g.n; ++i) {
        d[i][i] = 0;
        for (std::size_t j = 0; j < g.n; ++j)
            if (g.adj[i][j]) d[i][j] = 1;
    }
    for (std::size_t k = 0; k < g.n; ++k)
        for (std::size_t i = 0; i < g.n; ++i)
            for (std::size_t j = 0; j < g.n; ++j)
                if (d[i][k] != kUnreachable && d[k][j] != kUnreachable) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

/// G(n, p) conditioned on connectivity by adding a random spanning tree first.
inline SmallGraph random_connected_graph(std::size_t n, double p, std::mt19937_64& rng) {
    SmallGraph g(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t v = 1; v < n; ++v) {
        std::uniform_int_distribution<std::size_t> parent(0, v - 1);
        g.connect(v, parent(rng));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (u(rng) < p) g.connect(i, j);
    return g;
}

/// Result of checking one BFS output against a distance vector.
struct BfsCheck {
    bool ok = true;
    std::string why;
};

inline BfsCheck check_bfs_output(const std::vector<ClientId>& out, std::size_t client, std::size_t k,
                                 const std::vector<std::size_t>& dist) {
    BfsCheck r;
    std::set<ClientId> seen(out.begin(), out.end());
    if (seen.size() != out.size()) return {false, "duplicate node"};
    std::set<ClientId> expect;
    for (std::size_t v = 0; v < dist.size(); ++v)
        if (dist[v] <= k) expect.insert(static_cast<ClientId>(v));
    if (seen != expect) return {false, "set differs from brute force"};
    if (out.empty() || out.front() != client) return {false, "first element is not the client"};
    for (std::size_t i = 1; i < out.size(); ++i)
        if (dist[out[i]] < dist[out[i - 1]]) return {false, "hop distance decreases"};
    return r;
}

using Big = boost::multiprecision::cpp_bin_float_50;

/// Coordinate-wise weighted mean in 50-digit arithmetic.
inline std::vector<double> weighted_mean(const std::vector<std::vector<double>>& params,
                                         const std::vector<double>& weights) {
    const std::size_t dim = params.front().size();
    std::vector<double> out(dim);
    Big total = 0;
    for (double w : weights) total += Big(w);
    for (std::size_t j = 0; j < dim; ++j) {
        Big acc = 0;
        for (std::size_t i = 0; i < params.size(); ++i) acc += Big(weights[i]) * Big(params[i][j]);
        out[j] = static_cast<double>(acc / total);
    }
    return out;
}

/// Central-difference gradient of `f` at `x`.
template <typename F>
std::vector<double> numeric_gradient(F&& f, std::vector<double> x, double step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double up = f(x);
        x[i] = orig - step;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

/// Priority order recomputed from scratch: reward / (1 + alpha * cost / bw),
/// descending, ties by peer id then kind.
inline std::vector<p2pfl::Action> priority_sorted(std::vector<p2pfl::Action> actions, double bandwidth, double alpha) {
    auto prio = [&](const p2pfl::Action& a) {
        return a.reward / (1.0 + alpha * static_cast<double>(a.cost) / bandwidth);
    };
    std::stable_sort(actions.begin(), actions.end(), [&](const auto& x, const auto& y) {
        const double px = prio(x), py = prio(y);
        if (px != py) return px > py;
        if (x.src != y.src) return x.src < y.src;
        return static_cast<int>(x.kind) < static_cast<int>(y.kind);
    });
    return actions;
}

/// Longest prefix of `ordered` whose running cost stays within `budget`.
inline std::vector<p2pfl::Action> maximal_prefix(const std::vector<p2pfl::Action>& ordered, double budget) {
    std::vector<p2pfl::Action> out;
    double spent = 0.0;
    for (const auto& a : ordered) {
        if (spent + static_cast<double>(a.cost) > budget) break;
        spent += static_cast<double>(a.cost);
        out.push_back(a);
    }
    return out;
}

/// Skip-and-continue greedy over `ordered`.
inline std::vector<p2pfl::Action> greedy_skip(const std::vector<p2pfl::Action>& ordered, double budget) {
    std::vector<p2pfl::Action> out;
    double spent = 0.0;
    for (const auto& a : ordered) {
        if (spent + static_cast<double>(a.cost) > budget) continue;
        spent += static_cast<double>(a.cost);
        out.push_back(a);
    }
    return out;
}

} // namespace oracle
