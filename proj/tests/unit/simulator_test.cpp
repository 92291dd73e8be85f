#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "p2pfl/errors.hpp"
#include "p2pfl/simulator.hpp"

using namespace p2pfl;

namespace {

ScenarioConfig small_config(std::uint64_t seed = 1) {
    ScenarioConfig c;
    c.seed = seed;
    c.clients = 6;
    c.rounds = 6;
    c.dataset.class_count = 4;
    c.dataset.dim = 6;
    c.dataset.samples_per_class = 60;
    c.dataset.separation = 2.0;
    c.topology.p = 0.5;
    c.size_model.bytes_per_sample = 64;
    c.resources.bandwidth_min = 2000;
    c.resources.bandwidth_max = 8000;
    c.convergence.early_stop = false;
    return c;
}

std::string csv(const MetricsLog& log) {
    std::ostringstream out;
    write_metrics_csv(log, out);
    return out.str();
}

void expect_ledger(const MetricsLog& log, const SizeModel& sm) {
    std::map<std::size_t, std::uint64_t> sent, received;
    std::map<std::size_t, std::set<ClientId>> live;
    for (const auto& row : log.rows) live[row.round].insert(row.client);
    for (const auto& row : log.rows) {
        sent[row.round] += row.bytes_sent;
        received[row.round] += row.bytes_received;
        ASSERT_LE(static_cast<double>(row.bytes_sent), row.bandwidth) << "round " << row.round;
        std::uint64_t in = 0;
        for (const auto& a : row.actions) {
            ASSERT_EQ(a.cost, packet_size(a.kind, {a.payload}, sm));
            ASSERT_TRUE(live[row.round].contains(a.peer)) << "action from a departed client";
            ASSERT_NE(a.peer, row.client);
            in += a.cost;
        }
        ASSERT_EQ(in, row.bytes_received);
    }
    for (const auto& [round, s] : sent) ASSERT_EQ(s, received[round]) << "round " << round;
}

} // namespace

TEST(DetectConvergence, Examples) {
    std::vector<double> flat(6, 0.5);
    EXPECT_EQ(detect_convergence(flat, 3, 0.01), 0u);
    std::vector<double> rising{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    EXPECT_EQ(detect_convergence(rising, 2, 0.01), std::nullopt);
    std::vector<double> settle{0.2, 0.5, 0.70, 0.705, 0.709, 0.71};
    EXPECT_EQ(detect_convergence(settle, 3, 0.01), 2u);
    std::vector<double> short_series{0.5, 0.5};
    EXPECT_EQ(detect_convergence(short_series, 3, 0.01), std::nullopt);
}

TEST(ScenarioConfig, Validation) {
    auto c = small_config();
    EXPECT_NO_THROW(c.validate());
    c.rounds = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(run_simulation(c), ConfigError);
    c = small_config();
    c.convergence.epsilon = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.partition.regime = PartitionRegime::QuantitySkew;
    c.partition.ratios = {0.5, 0.5, 0.1, 0.05, 0.05, 0.0};
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("partition.ratios"), std::string::npos);
    }
}

TEST(Simulation, RowsPerRoundAndMonotoneBest) {
    auto c = small_config();
    auto log = run_simulation(c);
    EXPECT_EQ(log.rounds_executed, c.rounds);
    EXPECT_EQ(log.rows.size(), c.rounds * c.clients);
    std::map<ClientId, double> best;
    for (const auto& row : log.rows) {
        EXPECT_GE(row.best_accuracy, best[row.client]);
        EXPECT_GE(row.best_accuracy, row.accuracy);
        best[row.client] = row.best_accuracy;
    }
    for (std::size_t r = 1; r < log.mean_best_accuracy.size(); ++r)
        EXPECT_GE(log.mean_best_accuracy[r], log.mean_best_accuracy[r - 1]);
}

TEST(Simulation, LedgerBalancesOnFuzzedRuns) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 6; ++t) {
        auto c = small_config(rng());
        c.clients = 10;
        c.rounds = 8;
        c.k_degree = 1 + rng() % 3;
        c.partition.regime = t % 2 ? PartitionRegime::Pathological : PartitionRegime::Iid;
        c.churn = {0.1, 0.3, 2, 0.1, 0.5};
        c.decision.greedy_skip = t % 3 == 0;
        auto log = run_simulation(c);
        expect_ledger(log, c.size_model);
        std::uint64_t total = 0;
        for (const auto& row : log.rows) total += row.bytes_sent;
        EXPECT_EQ(total, log.total_bytes);
    }
}

TEST(Simulation, Deterministic) {
    auto c = small_config(5);
    c.churn = {0.1, 0.3, 2, 0.1, 0.5};
    EXPECT_EQ(csv(run_simulation(c)), csv(run_simulation(c)));
}

TEST(Simulation, ThreadCountDoesNotChangeResults) {
    auto c = small_config(6);
    EXPECT_EQ(csv(run_simulation(c, 1)), csv(run_simulation(c, 4)));
}

TEST(Simulation, SeedChangesAccuracy) {
    auto a = run_simulation(small_config(1));
    auto b = run_simulation(small_config(2));
    bool differs = false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) differs |= a.rows[i].accuracy != b.rows[i].accuracy;
    EXPECT_TRUE(differs);
}

TEST(Simulation, SingleClientIsPureLocalTraining) {
    auto c = small_config(7);
    c.clients = 1;
    c.rounds = 5;
    Simulation sim(c);
    const auto& client = sim.clients().at(0);
    const LabeledData local = client.local;
    Model model = sim.initial_model();
    const LabeledData test = sim.test_set();
    std::vector<TrainConfig> cfgs;
    for (std::size_t r = 0; r < c.rounds; ++r) cfgs.push_back(sim.train_config(0, r));
    sim.run();
    const auto& log = sim.log();
    ASSERT_EQ(log.rows.size(), c.rounds);
    for (std::size_t r = 0; r < c.rounds; ++r) {
        model = train_local(model, local, cfgs[r]);
        EXPECT_EQ(log.rows[r].accuracy, evaluate(model, test)) << "round " << r;
        EXPECT_TRUE(log.rows[r].actions.empty());
        EXPECT_EQ(log.rows[r].bytes_sent, 0u);
    }
}

TEST(Simulation, ModelOnlyStrategyLogsNoDataActions) {
    auto c = small_config(8);
    c.decision.allowed = {ActionKind::ShareModel};
    auto log = run_simulation(c);
    std::size_t n = 0;
    for (const auto& row : log.rows)
        for (const auto& a : row.actions) {
            EXPECT_EQ(a.kind, ActionKind::ShareModel);
            ++n;
        }
    EXPECT_GT(n, 0u);
}

TEST(Simulation, TrustBranchControlsSyntheticFlow) {
    auto c = small_config(9);
    c.topology.model = TopologyKind::Complete;
    c.topology.trust_fraction = 1.0;
    c.decision.allowed = {ActionKind::ShareSyntheticData};
    auto count = [](const MetricsLog& log) {
        std::size_t n = 0;
        for (const auto& row : log.rows) n += row.actions.size();
        return n;
    };
    EXPECT_EQ(count(run_simulation(c)), 0u);
    c.decision.trust_branch = TrustBranch::TrustedSynthetic;
    auto log = run_simulation(c);
    EXPECT_GT(count(log), 0u);
    for (const auto& row : log.rows)
        for (const auto& a : row.actions) EXPECT_EQ(a.kind, ActionKind::ShareSyntheticData);
}

TEST(Simulation, RealisedRewardsFilledExceptLastRound) {
    auto c = small_config(10);
    auto log = run_simulation(c);
    std::size_t checked = 0;
    std::map<std::pair<std::size_t, ClientId>, double> acc;
    for (const auto& row : log.rows) acc[{row.round, row.client}] = row.accuracy;
    for (const auto& row : log.rows)
        for (const auto& a : row.actions) {
            if (row.round + 1 == log.rounds_executed) {
                EXPECT_FALSE(a.realized_reward.has_value());
                continue;
            }
            ASSERT_TRUE(a.realized_reward.has_value());
            EXPECT_DOUBLE_EQ(*a.realized_reward, (acc[{row.round + 1, row.client}] - row.accuracy));
            ++checked;
        }
    EXPECT_GT(checked, 0u);
}

TEST(Simulation, ChurnKeepsClientsConsistent) {
    auto c = small_config(11);
    c.rounds = 15;
    c.churn = {0.2, 0.5, 2, 0.2, 0.5};
    Simulation sim(c);
    while (sim.run_round()) {
        sim.graph().check_invariants();
        for (ClientId id : sim.graph().nodes()) EXPECT_TRUE(sim.clients().contains(id));
        EXPECT_EQ(sim.clients().size(), sim.graph().node_count());
        for (const auto& [id, _] : sim.dormant()) EXPECT_FALSE(sim.graph().contains(id));
    }
    expect_ledger(sim.log(), c.size_model);
}

TEST(Simulation, EarlyStopWhenEveryClientConverges) {
    auto c = small_config(12);
    c.rounds = 40;
    c.convergence = {3, 0.5, true};
    auto log = run_simulation(c);
    EXPECT_LT(log.rounds_executed, c.rounds);
    for (const auto& [_, r] : log.convergence_round) EXPECT_TRUE(r.has_value());
}

TEST(Simulation, ReceivedDataClearedWhenNotRetained) {
    auto c = small_config(13);
    c.decision.allowed = {ActionKind::ShareRawData};
    c.topology.trust_fraction = 1.0;
    c.train.retain_received = false;
    Simulation sim(c);
    sim.run_round();
    sim.run_round();
    for (const auto& [_, client] : sim.clients()) {
        // only the latest round's deliveries survive
        std::size_t delivered = 0;
        for (const auto& row : sim.log().rows)
            if (row.round == 1 && row.client == client.id)
                for (const auto& a : row.actions) delivered += a.payload;
        EXPECT_EQ(client.received.size(), delivered);
    }
}

TEST(FedAvgAtReceiver, IdenticalModelsStayIdentical) {
    Model m = init_model({3, 2, 0}, {InitKind::SeededUniform, 0.4, 1}, 0.0);
    std::vector<Model> pair{m, m};
    std::vector<double> w{40, 25};
    EXPECT_EQ(fedavg(pair, w), m);
    Model other = init_model({3, 2, 0}, {InitKind::SeededUniform, 0.4, 2}, 0.0);
    std::vector<Model> ab{m, other}, ba{other, m};
    std::vector<double> wab{40, 25}, wba{25, 40};
    EXPECT_EQ(fedavg(ab, wab), fedavg(ba, wba));
}

TEST(MetricsCsv, HeaderAndRowCount) {
    auto c = small_config(14);
    auto log = run_simulation(c);
    std::istringstream in(csv(log));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, kMetricsCsvHeader);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
        ++rows;
    }
    EXPECT_EQ(rows, log.rows.size());
}
