#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "p2pfl/errors.hpp"
#include "p2pfl/learner.hpp"

using namespace p2pfl;

namespace {

LabeledData make_data(std::size_t n, std::size_t dim, std::size_t classes, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    LabeledData d(dim, classes);
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : x) v = g(rng);
        d.append(x, static_cast<int>(rng() % classes), 0.5 + static_cast<double>(rng() % 3));
    }
    return d;
}

Model random_model(const Architecture& arch, std::mt19937_64& rng, double frozen = 0.0) {
    return init_model(arch, {InitKind::SeededUniform, 0.5, rng()}, frozen);
}

} // namespace

TEST(Architecture, ParamCount) {
    EXPECT_EQ((Architecture{4, 3, 0}).param_count(), 15u);
    EXPECT_EQ((Architecture{4, 3, 5}).param_count(), 5u * 4 + 5 + 3 * 5 + 3);
    EXPECT_THROW((Architecture{0, 3, 0}).validate(), ConfigError);
    EXPECT_THROW((Architecture{2, 1, 0}).validate(), ConfigError);
}

TEST(InitModel, FrozenPrefixAndZeros) {
    auto m = init_model({4, 3, 0}, {}, 0.4);
    EXPECT_EQ(m.frozen_count(), 6u);
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(m.frozen_mask[i], i < 6);
    for (double p : m.params) EXPECT_EQ(p, 0.0);
    EXPECT_THROW(init_model({4, 3, 0}, {}, 1.5), ConfigError);
    auto u = init_model({4, 3, 0}, {InitKind::SeededUniform, 0.2, 3}, 0.0);
    for (double p : u.params) EXPECT_LE(std::abs(p), 0.2);
    EXPECT_EQ(u, init_model({4, 3, 0}, {InitKind::SeededUniform, 0.2, 3}, 0.0));
}

TEST(Loss, ZeroModelIsLogClassCount) {
    std::mt19937_64 rng(1);
    for (std::size_t c : {2u, 3u, 10u}) {
        auto d = make_data(20, 4, c, rng);
        auto m = init_model({4, c, 0}, {}, 0.0);
        EXPECT_NEAR(loss(m, d, 0.0), std::log(static_cast<double>(c)), 1e-12);
        auto h = init_model({4, c, 3}, {}, 0.0);
        EXPECT_NEAR(loss(h, d, 0.0), std::log(static_cast<double>(c)), 1e-12);
    }
}

TEST(Gradient, MatchesCentralDifferences) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const std::size_t dim = 1 + rng() % 5, classes = 2 + rng() % 4, hidden = (t % 2) ? 0 : 1 + rng() % 4;
        auto m = random_model({dim, classes, hidden}, rng);
        auto d = make_data(3 + rng() % 10, dim, classes, rng);
        const double l2 = (t % 3) * 0.05;
        auto analytic = gradient(m, d, l2);
        auto numeric = oracle::numeric_gradient(
            [&](const std::vector<double>& p) {
                Model probe = m;
                probe.params = p;
                return loss(probe, d, l2);
            },
            m.params, 1e-5);
        ASSERT_LE(oracle::max_relative_error(analytic, numeric, 1e-4), 1e-5) << "case " << t;
    }
}

TEST(Gradient, FrozenPositionsExactlyZero) {
    std::mt19937_64 rng(3);
    auto m = random_model({3, 3, 4}, rng, 0.5);
    auto d = make_data(15, 3, 3, rng);
    auto g = gradient(m, d, 0.1);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (m.frozen_mask[i]) EXPECT_EQ(g[i], 0.0);
}

TEST(TrainLocal, ZeroEpochsIsNoOp) {
    std::mt19937_64 rng(4);
    auto m = random_model({3, 2, 0}, rng);
    auto d = make_data(10, 3, 2, rng);
    EXPECT_EQ(train_local(m, d, {0, 4, 0.1, 0.0, 1}), m);
}

TEST(TrainLocal, FrozenEntriesBitIdentical) {
    std::mt19937_64 rng(5);
    auto m = random_model({3, 3, 4}, rng, 0.3);
    auto d = make_data(40, 3, 3, rng);
    auto out = train_local(m, d, {5, 8, 0.2, 0.01, 2});
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.frozen_mask[i]) EXPECT_EQ(out.params[i], m.params[i]);
    EXPECT_NE(out, m);
}

TEST(TrainLocal, DeterministicAndReducesLoss) {
    auto d = generate_dataset({3, 4, 40, 2.0, 6}).data;
    auto m = init_model({4, 3, 0}, {}, 0.0);
    TrainConfig cfg{10, 16, 0.1, 0.0, 9};
    auto a = train_local(m, d, cfg);
    EXPECT_EQ(a, train_local(m, d, cfg));
    EXPECT_LT(loss(a, d, 0.0), loss(m, d, 0.0));
    EXPECT_GE(evaluate(a, d), 0.9);
}

TEST(TrainLocal, Errors) {
    auto m = init_model({2, 2, 0}, {}, 0.0);
    LabeledData empty(2, 2);
    EXPECT_THROW(train_local(m, empty, {}), ConfigError);
    LabeledData one(2, 2);
    one.append(std::vector<double>{1e300, 1e300}, 0);
    EXPECT_THROW(train_local(m, one, {1, 1, 1e10, 0.0, 0}), NumericalDivergenceError);
    EXPECT_THROW((TrainConfig{1, 0, 0.1, 0.0, 0}).validate(), ConfigError);
    EXPECT_THROW((TrainConfig{1, 1, 0.0, 0.0, 0}).validate(), ConfigError);
}

TEST(Evaluate, Examples) {
    auto m = init_model({1, 2, 0}, {}, 0.0);
    m.params = {1.0, -1.0, 0.0, 0.0};  // W = [1; -1]
    LabeledData d(1, 2);
    d.append(std::vector<double>{2.0}, 0);
    d.append(std::vector<double>{-2.0}, 1);
    d.append(std::vector<double>{3.0}, 1);
    d.append(std::vector<double>{-1.0}, 0);
    EXPECT_DOUBLE_EQ(evaluate(m, d), 0.5);
    // ties resolve to the lowest class
    EXPECT_EQ(predict(init_model({1, 3, 0}, {}, 0.0), std::vector<double>{5.0}), 0);
    EXPECT_THROW(evaluate(m, LabeledData(1, 2)), ConfigError);
}

TEST(PredictProba, SumsToOne) {
    std::mt19937_64 rng(7);
    auto m = random_model({3, 4, 2}, rng);
    std::vector<double> x{1.0, -2.0, 0.5};
    auto p = predict_proba(m, x);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
}

TEST(FedAvg, Examples) {
    auto base = init_model({1, 2, 0}, {}, 0.0);
    Model a = base, b = base;
    a.params = {1, 2, 3, 4};
    b.params = {3, 4, 5, 6};
    std::vector<Model> ms{a, b};
    std::vector<double> eq{1, 1};
    EXPECT_EQ(fedavg(ms, eq).params, (std::vector<double>{2, 3, 4, 5}));
    std::vector<double> w{3, 1};
    EXPECT_EQ(fedavg(ms, w).params, (std::vector<double>{1.5, 2.5, 3.5, 4.5}));
    std::vector<Model> one{a};
    std::vector<double> w1{7};
    EXPECT_EQ(fedavg(one, w1), a);
}

TEST(FedAvg, MatchesHighPrecisionOracle) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1e3, 1e3), uw(0.01, 100.0);
    for (int t = 0; t < 300; ++t) {
        const std::size_t k = 1 + rng() % 8;
        Architecture arch{1 + rng() % 4, 2 + rng() % 3, 0};
        std::vector<Model> ms;
        std::vector<std::vector<double>> raw;
        std::vector<double> w;
        for (std::size_t i = 0; i < k; ++i) {
            auto m = init_model(arch, {}, 0.0);
            for (auto& p : m.params) p = u(rng);
            raw.push_back(m.params);
            ms.push_back(std::move(m));
            w.push_back(uw(rng));
        }
        auto got = fedavg(ms, w).params;
        auto want = oracle::weighted_mean(raw, w);
        for (std::size_t j = 0; j < got.size(); ++j) ASSERT_NEAR(got[j], want[j], 1e-12 * std::max(1.0, std::abs(want[j])));
    }
}

TEST(FedAvg, PermutationInvariantAndBounded) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 50; ++t) {
        std::vector<Model> ms;
        std::vector<double> w;
        for (int i = 0; i < 5; ++i) {
            ms.push_back(random_model({3, 2, 0}, rng));
            w.push_back(1.0 + static_cast<double>(rng() % 10));
        }
        auto ref = fedavg(ms, w);
        std::vector<std::size_t> perm{4, 2, 0, 3, 1};
        std::vector<Model> pm;
        std::vector<double> pw;
        for (auto i : perm) {
            pm.push_back(ms[i]);
            pw.push_back(w[i]);
        }
        EXPECT_EQ(fedavg(pm, pw), ref);
        for (std::size_t j = 0; j < ref.params.size(); ++j) {
            double lo = ms[0].params[j], hi = lo;
            for (const auto& m : ms) {
                lo = std::min(lo, m.params[j]);
                hi = std::max(hi, m.params[j]);
            }
            EXPECT_GE(ref.params[j], lo);
            EXPECT_LE(ref.params[j], hi);
        }
    }
}

TEST(FedAvg, Errors) {
    auto a = init_model({1, 2, 0}, {}, 0.0);
    auto b = init_model({2, 2, 0}, {}, 0.0);
    std::vector<Model> none;
    std::vector<double> nw;
    EXPECT_THROW(fedavg(none, nw), AggregationError);
    std::vector<Model> mixed{a, b};
    std::vector<double> w{1, 1};
    EXPECT_THROW(fedavg(mixed, w), AggregationError);
    std::vector<Model> same{a, a};
    std::vector<double> zero{1, 0};
    EXPECT_THROW(fedavg(same, zero), AggregationError);
    std::vector<double> short_w{1};
    EXPECT_THROW(fedavg(same, short_w), AggregationError);
}

TEST(PartialFedAvg, FrozenCopiedFromFirst) {
    auto a = init_model({1, 2, 0}, {}, 0.5);
    auto b = a;
    a.params = {1, 2, 3, 4};
    b.params = {9, 9, 5, 6};
    std::vector<Model> ms{a, b};
    std::vector<double> w{1, 1};
    EXPECT_EQ(partial_fedavg(ms, w).params, (std::vector<double>{1, 2, 4, 5}));
    auto c = init_model({1, 2, 0}, {}, 0.25);
    std::vector<Model> bad{a, c};
    EXPECT_THROW(partial_fedavg(bad, w), AggregationError);
}

TEST(Generator, SingleSample) {
    LabeledData d(2, 3);
    d.append(std::vector<double>{1.0, -1.0}, 2);
    auto g = fit_generator(d, 1e-3);
    EXPECT_EQ(g.present_classes(), 1u);
    EXPECT_EQ(g.classes[2].mean, (std::vector<double>{1.0, -1.0}));
    EXPECT_EQ(g.classes[2].variance, (std::vector<double>{1e-3, 1e-3}));
    auto s = sample_synthetic(g, 5, 1);
    for (int l : s.labels) EXPECT_EQ(l, 2);
}

TEST(Generator, HandComputedMoments) {
    LabeledData d(1, 2);
    for (double x : {1.0, 2.0, 3.0, 6.0}) d.append(std::vector<double>{x}, 0);
    d.append(std::vector<double>{10.0}, 1);
    auto g = fit_generator(d, 1e-3);
    EXPECT_DOUBLE_EQ(g.classes[0].mean[0], 3.0);
    EXPECT_DOUBLE_EQ(g.classes[0].variance[0], 3.5);  // population variance
    EXPECT_EQ(g.classes[0].count, 4u);
    EXPECT_EQ(g.sample_count(), 5u);
}

TEST(Generator, LabelCountsAndMeans) {
    std::mt19937_64 rng(10);
    LabeledData d(2, 2);
    std::normal_distribution<double> n0(2.0, 1.0);
    for (int i = 0; i < 300; ++i) d.append(std::vector<double>{n0(rng), -n0(rng)}, i < 100 ? 0 : 1);
    auto g = fit_generator(d);
    const std::size_t n = 10000;
    auto s = sample_synthetic(g, n, 4);
    ASSERT_EQ(s.size(), n);
    const auto hist = s.label_histogram();
    const double p = 1.0 / 3.0, sigma = std::sqrt(n * p * (1 - p));
    EXPECT_LE(std::abs(static_cast<double>(hist[0]) - n * p), 3 * sigma);
    for (int c = 0; c < 2; ++c) {
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (s.labels[i] == c) sum += s.row(i)[0];
        EXPECT_NEAR(sum / static_cast<double>(hist[c]), g.classes[c].mean[0], 0.05);
    }
    EXPECT_EQ(s, sample_synthetic(g, n, 4));
}

TEST(Generator, SamplesAreNotTrainingRows) {
    std::mt19937_64 rng(11);
    auto d = make_data(50, 3, 2, rng);
    auto s = sample_synthetic(fit_generator(d), 200, 3);
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j) {
            auto a = s.row(i);
            auto b = d.row(j);
            ASSERT_FALSE(std::equal(a.begin(), a.end(), b.begin()));
        }
}

TEST(Generator, EmptyThrows) {
    LabeledData d(2, 2);
    EXPECT_THROW(sample_synthetic(fit_generator(d), 3, 0), GeneratorEmptyError);
    EXPECT_THROW(fit_generator(d, 0.0), ConfigError);
}

TEST(Serialization, RoundTrip) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 20; ++t) {
        auto m = random_model({1 + rng() % 5, 2 + rng() % 4, rng() % 3}, rng, (t % 4) * 0.25);
        const auto blob = serialize_model(m);
        EXPECT_EQ(deserialize_model(blob), m);
        EXPECT_EQ(blob.size(), serialized_header_size(m) + 8 * m.params.size());
    }
}

TEST(Serialization, RejectsCorruptBlobs) {
    auto m = init_model({2, 2, 0}, {}, 0.5);
    const auto blob = serialize_model(m);
    EXPECT_THROW(deserialize_model("nope"), IngestionError);
    EXPECT_THROW(deserialize_model(blob.substr(0, blob.size() - 1)), IngestionError);
    EXPECT_THROW(deserialize_model(blob + "x"), IngestionError);
    auto wrong_version = blob;
    wrong_version[4] = 9;
    EXPECT_THROW(deserialize_model(wrong_version), IngestionError);
}
