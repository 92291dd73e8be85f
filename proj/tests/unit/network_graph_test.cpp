#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "p2pfl/errors.hpp"
#include "p2pfl/network_graph.hpp"

using namespace p2pfl;

namespace {

NetworkGraph path_graph(std::size_t n) {
    NetworkGraph g(n);
    for (ClientId i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
    return g;
}

} // namespace

TEST(NetworkGraph, BasicMutationKeepsInvariants) {
    NetworkGraph g(3);
    EXPECT_TRUE(g.add_edge(0, 1, true));
    EXPECT_FALSE(g.add_edge(1, 0));
    EXPECT_THROW(g.add_edge(2, 2), ConfigError);
    EXPECT_TRUE(g.is_trusted(1, 0));
    EXPECT_EQ(g.trusted_peers(0), std::set<ClientId>{1});
    g.remove_node(1);
    EXPECT_EQ(g.edge_count(), 0u);
    EXPECT_TRUE(g.trusted_edges().empty());
    EXPECT_TRUE(g.departed().contains(1));
    g.check_invariants();
    EXPECT_EQ(g.add_node(), 3u);
    EXPECT_THROW((void)g.neighbors(1), NotFoundError);
}

TEST(BuildGraph, SingleNodeComplete) {
    auto g = build_graph({1, Complete{}, 0.0, 0});
    EXPECT_EQ(g.node_count(), 1u);
    EXPECT_EQ(g.edge_count(), 0u);
}

TEST(BuildGraph, RingOfFour) {
    auto g = build_graph({4, Ring{1}, 0.0, 0});
    EXPECT_EQ(g.edge_count(), 4u);
    for (ClientId v : g.nodes()) EXPECT_EQ(g.neighbors(v).size(), 2u);
}

TEST(BuildGraph, ErdosRenyiDeterministic) {
    TopologySpec spec{20, ErdosRenyi{0.3}, 0.5, 7};
    auto a = build_graph(spec);
    auto b = build_graph(spec);
    EXPECT_EQ(a.edges(), b.edges());
    EXPECT_EQ(a.trusted_edges(), b.trusted_edges());
    spec.seed = 8;
    EXPECT_NE(build_graph(spec).edges(), a.edges());
}

TEST(BuildGraph, TrustFractionRoundsDown) {
    for (double f : {0.0, 0.25, 0.5, 0.7, 1.0}) {
        auto g = build_graph({7, Complete{}, f, 3});
        EXPECT_EQ(g.trusted_edges().size(), static_cast<std::size_t>(std::floor(f * 21.0))) << f;
        g.check_invariants();
    }
}

TEST(BuildGraph, RejectsBadSpec) {
    EXPECT_THROW(build_graph({0, Complete{}, 0.0, 0}), ConfigError);
    EXPECT_THROW(build_graph({3, ErdosRenyi{1.5}, 0.0, 0}), ConfigError);
    EXPECT_THROW(build_graph({3, Complete{}, -0.1, 0}), ConfigError);
}

TEST(Bfs, ZeroHopsIsSelf) {
    EXPECT_EQ(bfs_k_degree(path_graph(4), 0, 0), std::vector<ClientId>{0});
}

TEST(Bfs, PathTwoHops) {
    auto g = path_graph(4);
    EXPECT_EQ(bfs_k_degree(g, 0, 2), (std::vector<ClientId>{0, 1, 2}));
    oracle::SmallGraph s(4);
    s.connect(0, 1);
    s.connect(1, 2);
    s.connect(2, 3);
    EXPECT_TRUE(oracle::check_bfs_output(bfs_k_degree(g, 0, 2), 0, 2, oracle::hops_by_path_enumeration(s, 0)).ok);
}

TEST(Bfs, CycleTerminatesWithoutRevisits) {
    NetworkGraph g(3);
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    g.add_edge(2, 0);
    EXPECT_EQ(bfs_k_degree(g, 0, 5), (std::vector<ClientId>{0, 1, 2}));
}

TEST(Bfs, UnknownClient) {
    EXPECT_THROW(bfs_k_degree(path_graph(3), 9, 1), NotFoundError);
}

TEST(Bfs, LiteralDepthOvershootsOnPath) {
    // Children carry the starting depth, so the limit only bites at the root.
    auto g = path_graph(6);
    EXPECT_EQ(bfs_k_degree(g, 0, 2).size(), 3u);
    EXPECT_EQ(bfs_k_degree(g, 0, 2, BfsOptions{true}).size(), 6u);
    EXPECT_EQ(bfs_k_degree(g, 0, 1, BfsOptions{true}).size(), 2u);
}

TEST(Bfs, CountersWithinLinearBound) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 200; ++t) {
        auto s = oracle::random_connected_graph(2 + t % 11, 0.3, rng);
        auto g = s.to_network();
        BfsStats stats;
        bfs_k_degree(g, 0, s.n, {}, &stats);
        EXPECT_LE(stats.nodes_visited, s.n);
        EXPECT_LE(stats.edges_inspected, 2 * s.edge_count());
    }
}

TEST(Bfs, RandomGraphsMatchFloydWarshall) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 100; ++t) {
        auto s = oracle::random_connected_graph(1 + t % 12, 0.25, rng);
        auto g = s.to_network();
        auto d = oracle::hops_floyd_warshall(s);
        for (std::size_t c = 0; c < s.n; ++c)
            for (std::size_t k = 0; k <= s.n; ++k) {
                auto r = oracle::check_bfs_output(bfs_k_degree(g, static_cast<ClientId>(c), k), c, k, d[c]);
                ASSERT_TRUE(r.ok) << r.why;
            }
    }
}

TEST(Churn, ZeroProbabilitiesLeaveGraphUnchanged) {
    auto g = build_graph({8, ErdosRenyi{0.4}, 0.5, 1});
    auto r = apply_churn(g, ChurnConfig{}, 99);
    EXPECT_EQ(r.graph, g);
    EXPECT_TRUE(r.delta.empty());
}

TEST(Churn, CertainDepartureEmptiesGraph) {
    auto g = build_graph({3, Complete{}, 0.0, 1});
    ChurnConfig c;
    c.p_leave = 1.0;
    auto r = apply_churn(g, c, 1);
    EXPECT_EQ(r.graph.node_count(), 0u);
    EXPECT_EQ(r.delta.departed, (std::vector<ClientId>{0, 1, 2}));
    // churn on the empty graph is a no-op
    auto again = apply_churn(r.graph, c, 2);
    EXPECT_EQ(again.graph.node_count(), 0u);
}

TEST(Churn, CertainJoinConnectsToMinDegree) {
    auto g = build_graph({5, Ring{1}, 0.0, 1});
    ChurnConfig c;
    c.p_join = 1.0;
    c.join_degree = 2;
    auto r = apply_churn(g, c, 3);
    EXPECT_EQ(r.graph.node_count(), 6u);
    ASSERT_EQ(r.delta.joined, std::vector<ClientId>{5});
    EXPECT_EQ(r.graph.neighbors(5).size(), 2u);

    c.join_degree = 9;
    r = apply_churn(g, c, 3);
    EXPECT_EQ(r.graph.neighbors(5).size(), 5u);
}

TEST(Churn, RejoinRestoresLowestDepartedId) {
    NetworkGraph g(4);
    g.add_edge(0, 1);
    g.add_edge(2, 3);
    g.remove_node(1);
    g.remove_node(3);
    ChurnConfig c;
    c.p_join = 1.0;
    c.p_rejoin = 1.0;
    auto r = apply_churn(g, c, 5);
    EXPECT_EQ(r.delta.rejoined, std::vector<ClientId>{1});
    EXPECT_TRUE(r.graph.contains(1));
    EXPECT_FALSE(r.graph.departed().contains(1));
}

TEST(Churn, RandomizedRoundsPreserveInvariants) {
    auto g = build_graph({12, ErdosRenyi{0.3}, 0.5, 4});
    ChurnConfig c{0.05, 0.3, 2, 0.1, 0.5};
    for (int round = 0; round < 1000; ++round) {
        auto r = apply_churn(g, c, static_cast<std::uint64_t>(round));
        ASSERT_NO_THROW(r.graph.check_invariants()) << round;
        for (ClientId d : r.delta.departed) EXPECT_FALSE(r.graph.contains(d));
        g = std::move(r.graph);
    }
}

TEST(Churn, Deterministic) {
    auto g = build_graph({10, ErdosRenyi{0.3}, 0.5, 4});
    ChurnConfig c{0.1, 0.5, 2, 0.2, 0.0};
    auto a = apply_churn(g, c, 17);
    auto b = apply_churn(g, c, 17);
    EXPECT_EQ(a.graph, b.graph);
    EXPECT_EQ(a.delta, b.delta);
}

TEST(Churn, RejectsBadConfig) {
    ChurnConfig c;
    c.p_leave = 2.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.join_degree = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AverageDegree, Examples) {
    EXPECT_DOUBLE_EQ(average_degree(build_graph({4, Ring{1}, 0.0, 0})), 2.0);
    EXPECT_DOUBLE_EQ(average_degree(build_graph({5, Complete{}, 0.0, 0})), 4.0);
    EXPECT_DOUBLE_EQ(average_degree(NetworkGraph(1)), 0.0);
    EXPECT_THROW(average_degree(NetworkGraph(0)), UndefinedValueError);
}
