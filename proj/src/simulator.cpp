#include "p2pfl/simulator.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>

#include "p2pfl/errors.hpp"
#include "p2pfl/numeric.hpp"
#include "p2pfl/random.hpp"

namespace p2pfl {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
    kTagDataset = 1,
    kTagSplit,
    kTagPretrainSplit,
    kTagSubset,
    kTagPartition,
    kTagTopology,
    kTagInit,
    kTagPretrain,
    kTagResources,
    kTagRotation,
    kTagScale,
    kTagNoise,
    kTagChurn,
    kTagTrain,
    kTagRawShare,
    kTagSynthetic,
};

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void check_range(double lo, double hi, const char* key, double min_allowed, double max_allowed) {
    if (!(lo >= min_allowed && hi <= max_allowed && lo <= hi)) {
        throw ConfigError(std::string(key) + " must satisfy " + std::to_string(min_allowed) + " <= min <= max <= " +
                          std::to_string(max_allowed));
    }
}

} // namespace

std::string_view to_string(PartitionRegime regime) {
    switch (regime) {
    case PartitionRegime::Iid: return "iid";
    case PartitionRegime::Pathological: return "pathological";
    case PartitionRegime::QuantitySkew: return "quantity_skew";
    case PartitionRegime::Covariate: return "covariate";
    }
    throw InternalError("unknown partition regime");
}

PartitionRegime parse_partition_regime(std::string_view name) {
    for (auto r : {PartitionRegime::Iid, PartitionRegime::Pathological, PartitionRegime::QuantitySkew,
                   PartitionRegime::Covariate}) {
        if (to_string(r) == name) return r;
    }
    throw ConfigError("partition.regime: unknown regime '" + std::string(name) + "'");
}

void ScenarioConfig::validate() const {
    if (clients < 1) throw ConfigError("clients must be >= 1");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (k_degree < 1) throw ConfigError("k_degree must be >= 1");

    if (dataset.csv_path.empty()) {
        if (dataset.class_count < 2) throw ConfigError("dataset.classes must be >= 2");
        if (dataset.dim < 1) throw ConfigError("dataset.dim must be >= 1");
        if (dataset.samples_per_class < 1) throw ConfigError("dataset.samples_per_class must be >= 1");
        if (!(dataset.separation > 0.0)) throw ConfigError("dataset.separation must be > 0");
    }
    if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
        throw ConfigError("dataset.test_fraction must be in (0,1)");
    }
    if (!(dataset.pretrain_fraction >= 0.0 && dataset.pretrain_fraction < 1.0)) {
        throw ConfigError("dataset.pretrain_fraction must be in [0,1)");
    }

    if (!(partition.data_fraction > 0.0 && partition.data_fraction <= 1.0)) {
        throw ConfigError("partition.data_fraction must be in (0,1]");
    }
    if (partition.regime == PartitionRegime::QuantitySkew && !partition.ratios.empty()) {
        if (partition.ratios.size() != clients) {
            throw ConfigError("partition.ratios must have one entry per client");
        }
        double total = 0.0;
        for (double r : partition.ratios) {
            if (!(r >= 0.0)) throw ConfigError("partition.ratios must be non-negative");
            total += r;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("partition.ratios must sum to 1 (got " + std::to_string(total) + ")");
        }
    }
    if (partition.regime == PartitionRegime::Pathological) {
        if (partition.labels_per_client < 1) throw ConfigError("partition.labels_per_client must be >= 1");
        if (dataset.csv_path.empty() && partition.labels_per_client > dataset.class_count) {
            throw ConfigError("partition.labels_per_client must not exceed dataset.classes");
        }
    }
    const auto& cov = partition.covariate;
    if (!(cov.rotation_strength >= 0.0)) throw ConfigError("partition.covariate.rotation_strength must be >= 0");
    if (!(cov.scale_min > 0.0 && cov.scale_min <= cov.scale_max)) {
        throw ConfigError("partition.covariate.scale_min/scale_max must satisfy 0 < min <= max");
    }
    if (!(cov.noise_sigma >= 0.0)) throw ConfigError("partition.covariate.noise_sigma must be >= 0");

    if (!(topology.p >= 0.0 && topology.p <= 1.0)) throw ConfigError("topology.p must be in [0,1]");
    if (!(topology.trust_fraction >= 0.0 && topology.trust_fraction <= 1.0)) {
        throw ConfigError("topology.trust_fraction must be in [0,1]");
    }
    if (topology.ring_k < 1) throw ConfigError("topology.ring_k must be >= 1");
    churn.validate();

    check_range(resources.power_min, resources.power_max, "resources.power", 0.0, 1.0);
    check_range(resources.mem_min, resources.mem_max, "resources.mem", 0.0, 1.0);
    if (!(resources.bandwidth_min > 0.0 && resources.bandwidth_min <= resources.bandwidth_max)) {
        throw ConfigError("resources.bandwidth must satisfy 0 < min <= max");
    }
    size_model.validate();

    if (!(model.frozen_fraction >= 0.0 && model.frozen_fraction <= 1.0)) {
        throw ConfigError("model.frozen_fraction must be in [0,1]");
    }
    if (model.init == InitKind::SeededUniform && !(model.init_scale > 0.0)) {
        throw ConfigError("model.init_scale must be > 0");
    }

    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (!(train.l2 >= 0.0)) throw ConfigError("train.l2 must be >= 0");
    if (!(train.variance_floor > 0.0)) throw ConfigError("train.variance_floor must be > 0");
    if (!(train.received_weight > 0.0)) throw ConfigError("train.received_weight must be > 0");

    decision.validate();

    if (convergence.window < 1) throw ConfigError("convergence.window must be >= 1");
    if (!(convergence.epsilon > 0.0)) throw ConfigError("convergence.epsilon must be > 0");
}

std::optional<std::size_t> detect_convergence(std::span<const double> series, std::size_t window, double epsilon) {
    if (window < 1 || series.size() < window) return std::nullopt;
    for (std::size_t r = 0; r + window <= series.size(); ++r) {
        const auto slice = series.subspan(r, window);
        const auto [lo, hi] = std::minmax_element(slice.begin(), slice.end());
        if (*hi - *lo <= epsilon) return r;
    }
    return std::nullopt;
}

namespace {

DecisionEngine make_engine(const ScenarioConfig& config) {
    config.validate();
    DecisionConfig dc = config.decision;
    dc.size_model = config.size_model;
    return strategy_filter(dc, dc.allowed);
}

} // namespace

Simulation::Simulation(const ScenarioConfig& config) : config_(config), engine_(make_engine(config)) {
    const std::uint64_t seed = config_.seed;

    if (config_.dataset.csv_path.empty()) {
        dataset_ = generate_dataset({config_.dataset.class_count, config_.dataset.dim,
                                     config_.dataset.samples_per_class, config_.dataset.separation,
                                     derive_seed(seed, {kTagDataset})});
    } else {
        dataset_ = load_csv_dataset(config_.dataset.csv_path);
    }
    const std::size_t dim = dataset_.data.dim;
    const std::size_t classes = dataset_.class_count();
    if (config_.partition.regime == PartitionRegime::Pathological && config_.partition.labels_per_client > classes) {
        throw ConfigError("partition.labels_per_client must not exceed the class count");
    }

    auto [test_idx, rest] = split_indices(dataset_.size(), config_.dataset.test_fraction, derive_seed(seed, {kTagSplit}));
    test_ = materialize(dataset_, Shard{0, test_idx, std::nullopt});

    // rest -> (pretraining split, client pool)
    std::vector<std::size_t> pretrain_idx, pool;
    {
        auto [held, remain] = split_indices(rest.size(), config_.dataset.pretrain_fraction,
                                            derive_seed(seed, {kTagPretrainSplit}));
        for (auto i : held) pretrain_idx.push_back(rest[i]);
        for (auto i : remain) pool.push_back(rest[i]);
    }
    if (config_.partition.data_fraction < 1.0) {
        auto [unused, kept] = split_indices(pool.size(), 1.0 - config_.partition.data_fraction,
                                            derive_seed(seed, {kTagSubset}));
        std::vector<std::size_t> subset;
        for (auto i : kept) subset.push_back(pool[i]);
        pool = std::move(subset);
    }

    std::vector<ClientId> ids(config_.clients);
    std::iota(ids.begin(), ids.end(), ClientId{0});
    const auto part_seed = derive_seed(seed, {kTagPartition});
    std::vector<Shard> shards;
    switch (config_.partition.regime) {
    case PartitionRegime::Iid:
    case PartitionRegime::Covariate:
        shards = partition_iid(pool, ids, part_seed);
        break;
    case PartitionRegime::Pathological:
        shards = partition_pathological(dataset_, pool, ids, config_.partition.labels_per_client, part_seed);
        break;
    case PartitionRegime::QuantitySkew: {
        auto ratios = config_.partition.ratios;
        if (ratios.empty()) ratios.assign(config_.clients, 1.0 / static_cast<double>(config_.clients));
        shards = partition_quantity_skew(pool, ids, ratios, part_seed);
        break;
    }
    }

    const Architecture arch{dim, classes, config_.model.hidden_dim};
    initial_model_ = init_model(arch, {config_.model.init, config_.model.init_scale, derive_seed(seed, {kTagInit})}, 0.0);
    if (!pretrain_idx.empty()) {
        const LabeledData pre = materialize(dataset_, Shard{0, pretrain_idx, std::nullopt});
        TrainConfig tc{config_.train.pretrain_epochs, config_.train.batch_size, config_.train.learning_rate,
                       config_.train.l2, derive_seed(seed, {kTagPretrain})};
        initial_model_ = train_local(initial_model_, pre, tc);
        if (arch.hidden_dim > 0) {
            // Keep the pretrained hidden layer, start the task head afresh.
            const std::size_t head = arch.hidden_dim * arch.input_dim + arch.hidden_dim;
            std::fill(initial_model_.params.begin() + static_cast<std::ptrdiff_t>(head), initial_model_.params.end(), 0.0);
        }
    }
    const auto frozen = static_cast<std::size_t>(
        std::floor(config_.model.frozen_fraction * static_cast<double>(initial_model_.params.size())));
    std::fill_n(initial_model_.frozen_mask.begin(), frozen, true);

    TopologySpec topo;
    topo.node_count = config_.clients;
    topo.trust_fraction = config_.topology.trust_fraction;
    topo.seed = derive_seed(seed, {kTagTopology});
    switch (config_.topology.model) {
    case TopologyKind::ErdosRenyi: topo.model = ErdosRenyi{config_.topology.p}; break;
    case TopologyKind::Ring: topo.model = Ring{config_.topology.ring_k}; break;
    case TopologyKind::Complete: topo.model = Complete{}; break;
    }
    graph_ = build_graph(topo);

    for (auto& s : shards) {
        const ClientId id = s.owner;
        clients_.emplace(id, make_client(id, std::move(s)));
    }
}

ClientState Simulation::make_client(ClientId id, Shard shard) {
    const std::uint64_t seed = config_.seed;
    ClientState c;
    c.id = id;
    c.k_degree = config_.k_degree;
    c.history = ActionHistory(config_.decision.window);
    c.model = initial_model_;
    c.received = LabeledData(dataset_.data.dim, dataset_.class_count());

    if (config_.partition.regime == PartitionRegime::Covariate && !shard.indices.empty()) {
        const auto& cov = config_.partition.covariate;
        CovariateTransform t;
        t.rotation_seed = derive_seed(seed, {kTagRotation, id});
        t.rotation_strength = cov.rotation_strength;
        t.noise_sigma = cov.noise_sigma;
        t.noise_seed = derive_seed(seed, {kTagNoise});
        t.per_class = cov.per_class;
        Rng rng = make_rng(seed, {kTagScale, id});
        t.scale.resize(dataset_.data.dim);
        for (double& s : t.scale) s = uniform(rng, cov.scale_min, cov.scale_max);
        shard.transform = t;
        c.local = apply_covariate_shift(dataset_, shard, t);
    } else {
        c.local = materialize(dataset_, shard);
    }
    c.shard = std::move(shard);
    if (!c.local.empty()) c.generator = fit_generator(c.local, config_.train.variance_floor);

    Rng rng = make_rng(seed, {kTagResources, id});
    const auto& r = config_.resources;
    c.resources.power = uniform(rng, r.power_min, r.power_max);
    c.resources.mem = uniform(rng, r.mem_min, r.mem_max);
    c.resources.bandwidth = uniform(rng, r.bandwidth_min, r.bandwidth_max);
    return c;
}

ClientSummary Simulation::summarize(const ClientState& c) const {
    ClientSummary s;
    s.id = c.id;
    s.accuracy = c.accuracy;
    s.shard_size = c.local.size();
    s.label_histogram = c.local.label_histogram();
    s.resources = c.resources;
    s.trusted_peers = graph_.trusted_peers(c.id);
    s.param_count = c.model.params.size();
    s.unfrozen_param_count = c.model.unfrozen_count();
    s.has_generator = c.generator.has_value();
    s.k_degree = c.k_degree;
    return s;
}

TrainConfig Simulation::train_config(ClientId id, std::size_t round) const {
    return TrainConfig{config_.train.epochs, config_.train.batch_size, config_.train.learning_rate, config_.train.l2,
                       derive_seed(config_.seed, {kTagTrain, id, round})};
}

void Simulation::churn_phase() {
    graph_.set_round(round_);
    if (round_ == 0) return;
    auto result = apply_churn(graph_, config_.churn, derive_seed(config_.seed, {kTagChurn, round_}));
    graph_ = std::move(result.graph);
    graph_.set_round(round_);
    for (ClientId id : result.delta.departed) {
        auto node = clients_.extract(id);
        dormant_.insert(std::move(node));
        last_row_.erase(id);
    }
    for (ClientId id : result.delta.rejoined) {
        auto node = dormant_.extract(id);
        clients_.insert(std::move(node));
    }
    for (ClientId id : result.delta.joined) {
        clients_.emplace(id, make_client(id, Shard{id, {}, std::nullopt}));
    }
}

void Simulation::train_and_evaluate_phase() {
    std::vector<ClientState*> live;
    for (auto& [_, c] : clients_) live.push_back(&c);

    parallel_for(live.size(), threads_, [&](std::size_t i) {
        ClientState& c = *live[i];
        try {
            if (c.training_size() > 0) {
                LabeledData train = c.local;
                train.append(c.received, config_.train.received_weight);
                if (config_.train.epochs > 0) c.model = train_local(c.model, train, train_config(c.id, round_));
                if (config_.train.generator_uses_received && !c.received.empty()) {
                    c.generator = fit_generator(train, config_.train.variance_floor);
                }
            }
            if (!config_.train.retain_received) c.received.clear();
            c.accuracy = evaluate(c.model, test_);
        } catch (const Error& e) {
            throw Error("round " + std::to_string(round_) + ", client " + std::to_string(c.id) + ": " + e.what());
        }
        c.best_accuracy = std::max(c.best_accuracy, c.accuracy);
        c.accuracy_series.push_back(c.accuracy);
    });

    // Realised reward of last round's actions: accuracy change since then.
    for (auto& [id, c] : clients_) {
        auto it = last_row_.find(id);
        if (it == last_row_.end()) continue;
        auto& row = log_.rows[it->second];
        if (row.round + 1 != round_) continue;
        const double delta = c.accuracy - row.accuracy;
        for (auto& a : row.actions) {
            a.realized_reward = delta;
            c.rewards.record(a.kind, a.peer, delta);
        }
    }
}

std::map<ClientId, std::vector<Action>> Simulation::decision_phase() {
    std::map<ClientId, ClientSummary> directory;
    for (const auto& [id, c] : clients_) directory.emplace(id, summarize(c));

    std::vector<ClientState*> live;
    for (auto& [_, c] : clients_) live.push_back(&c);
    std::vector<std::vector<Action>> chosen(live.size());
    parallel_for(live.size(), threads_, [&](std::size_t i) {
        ClientState& c = *live[i];
        c.history.prune(round_);
        chosen[i] = engine_.pre_communication(directory.at(c.id), graph_, directory, c.history, round_, &c.rewards);
    });

    std::map<ClientId, std::vector<Action>> out;
    for (std::size_t i = 0; i < live.size(); ++i) out.emplace(live[i]->id, std::move(chosen[i]));
    return out;
}

void Simulation::execute_phase(const std::map<ClientId, std::vector<Action>>& selected) {
    std::map<ClientId, Model> snapshot;
    for (const auto& [id, c] : clients_) snapshot.emplace(id, c.model);

    for (const auto& [dst_id, actions] : selected) {
        ClientState& dst = clients_.at(dst_id);
        for (const Action& a : actions) {
            auto src_it = clients_.find(a.src);
            if (src_it == clients_.end()) throw InternalError("action references departed client");
            ClientState& src = src_it->second;
            if (static_cast<double>(sent_[a.src] + a.cost) > src.resources.bandwidth) {
                ++log_.dropped_actions;
                continue;
            }
            switch (a.kind) {
            case ActionKind::ShareModel:
            case ActionKind::SharePartialModel: {
                const std::vector<Model> pair{dst.model, snapshot.at(a.src)};
                const std::vector<double> w{static_cast<double>(std::max<std::size_t>(1, dst.training_size())),
                                            static_cast<double>(std::max<std::size_t>(1, src.training_size()))};
                dst.model = a.kind == ActionKind::ShareModel ? fedavg(pair, w) : partial_fedavg(pair, w);
                break;
            }
            case ActionKind::ShareRawData: {
                Rng rng = make_rng(config_.seed, {kTagRawShare, round_, a.src, a.dst});
                std::vector<std::size_t> rows(src.local.size());
                std::iota(rows.begin(), rows.end(), std::size_t{0});
                const std::size_t n = std::min<std::size_t>(a.payload.count, rows.size());
                for (std::size_t i = 0; i < n; ++i) {
                    const auto j = i + static_cast<std::size_t>(uniform_index(rng, rows.size() - i));
                    std::swap(rows[i], rows[j]);
                    dst.received.append(src.local.row(rows[i]), src.local.labels[rows[i]]);
                }
                break;
            }
            case ActionKind::ShareSyntheticData: {
                if (!src.generator) throw InternalError("synthetic share from a client without a generator");
                dst.received.append(
                    sample_synthetic(*src.generator, a.payload.count, derive_seed(config_.seed, {kTagSynthetic, round_, a.src, a.dst})));
                break;
            }
            }
            sent_[a.src] += a.cost;
            received_bytes_[a.dst] += a.cost;
            dst.history.record(round_, a.kind, a.src);
            executed_[a.dst].push_back(ActionRecord{a.kind, a.src, a.cost, a.payload.count, std::nullopt});
        }
    }
}

void Simulation::record_phase() {
    std::vector<double> acc, best;
    for (auto& [id, c] : clients_) {
        ClientRoundRecord row;
        row.round = round_;
        row.client = id;
        row.accuracy = c.accuracy;
        row.best_accuracy = c.best_accuracy;
        row.bytes_sent = sent_[id];
        row.bytes_received = received_bytes_[id];
        row.bandwidth = c.resources.bandwidth;
        row.actions = std::move(executed_[id]);
        log_.total_bytes += row.bytes_sent;
        last_row_[id] = log_.rows.size();
        log_.rows.push_back(std::move(row));
        acc.push_back(c.accuracy);
        best.push_back(c.best_accuracy);
        log_.convergence_round[id] =
            detect_convergence(c.accuracy_series, config_.convergence.window, config_.convergence.epsilon);
    }
    for (auto& [id, c] : dormant_) {
        log_.convergence_round.try_emplace(
            id, detect_convergence(c.accuracy_series, config_.convergence.window, config_.convergence.epsilon));
    }
    const double n = static_cast<double>(acc.size());
    log_.mean_accuracy.push_back(acc.empty() ? 0.0 : pairwise_sum(acc) / n);
    log_.mean_best_accuracy.push_back(best.empty() ? 0.0 : pairwise_sum(best) / n);
    ++log_.rounds_executed;
}

bool Simulation::all_converged() const {
    if (clients_.empty()) return false;
    const std::size_t w = config_.convergence.window;
    return std::all_of(clients_.begin(), clients_.end(), [&](const auto& kv) {
        const auto& s = kv.second.accuracy_series;
        if (s.size() < w) return false;
        const auto [lo, hi] = std::minmax_element(s.end() - static_cast<std::ptrdiff_t>(w), s.end());
        return *hi - *lo <= config_.convergence.epsilon;
    });
}

bool Simulation::run_round() {
    if (finished_) return false;
    sent_.clear();
    received_bytes_.clear();
    executed_.clear();

    churn_phase();
    train_and_evaluate_phase();
    const auto selected = decision_phase();
    execute_phase(selected);
    record_phase();

    ++round_;
    if (round_ >= config_.rounds || (config_.convergence.early_stop && all_converged())) finished_ = true;
    return !finished_;
}

void Simulation::run() {
    while (run_round()) {
    }
}

MetricsLog run_simulation(const ScenarioConfig& config, std::size_t threads) {
    Simulation sim(config);
    sim.set_threads(threads);
    sim.run();
    return sim.log();
}

namespace {

std::string shortest(double x) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc{}) throw InternalError("cannot format number");
    return std::string(buf.data(), end);
}

template <typename T, typename F>
void join(std::ostream& out, const std::vector<T>& items, F&& field) {
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out << ';';
        field(items[i]);
    }
}

} // namespace

void write_metrics_csv(const MetricsLog& log, std::ostream& out) {
    out << kMetricsCsvHeader << '\n';
    for (const auto& row : log.rows) {
        out << row.round << ',' << row.client << ',' << shortest(row.accuracy) << ',' << shortest(row.best_accuracy) << ','
            << row.bytes_sent << ',' << row.bytes_received << ',';
        join(out, row.actions, [&](const ActionRecord& a) { out << to_string(a.kind); });
        out << ',';
        join(out, row.actions, [&](const ActionRecord& a) { out << a.peer; });
        out << ',';
        join(out, row.actions, [&](const ActionRecord& a) { out << a.cost; });
        out << ',';
        join(out, row.actions, [&](const ActionRecord& a) {
            if (a.realized_reward) out << shortest(*a.realized_reward);
        });
        out << '\n';
    }
}

} // namespace p2pfl
