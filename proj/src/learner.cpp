#include "p2pfl/learner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "p2pfl/errors.hpp"
#include "p2pfl/numeric.hpp"
#include "p2pfl/random.hpp"

namespace p2pfl {

std::size_t Architecture::param_count() const {
    if (hidden_dim == 0) return class_count * input_dim + class_count;
    return hidden_dim * input_dim + hidden_dim + class_count * hidden_dim + class_count;
}

void Architecture::validate() const {
    if (input_dim < 1) throw ConfigError("model input_dim must be >= 1");
    if (class_count < 2) throw ConfigError("model class_count must be >= 2");
}

std::size_t Model::frozen_count() const {
    return static_cast<std::size_t>(std::count(frozen_mask.begin(), frozen_mask.end(), true));
}

void Model::check_invariants() const {
    const auto n = arch.param_count();
    if (params.size() != n || frozen_mask.size() != n) throw InternalError("model size does not match architecture");
    for (double p : params) {
        if (!std::isfinite(p)) throw InternalError("non-finite model parameter");
    }
}

Model init_model(const Architecture& arch, const InitSpec& init, double frozen_fraction) {
    arch.validate();
    if (!(frozen_fraction >= 0.0 && frozen_fraction <= 1.0)) {
        throw ConfigError("model.frozen_fraction must be in [0,1]");
    }
    const auto n = arch.param_count();
    Model m{std::vector<double>(n, 0.0), arch, std::vector<bool>(n, false)};
    if (init.kind == InitKind::SeededUniform) {
        if (!(init.scale > 0.0)) throw ConfigError("model.init_scale must be > 0");
        Rng rng = make_rng(init.seed, {0x696e6974ULL});
        for (double& p : m.params) p = uniform(rng, -init.scale, init.scale);
    }
    const auto frozen = static_cast<std::size_t>(std::floor(frozen_fraction * static_cast<double>(n)));
    std::fill_n(m.frozen_mask.begin(), frozen, true);
    return m;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (!(l2_penalty >= 0.0)) throw ConfigError("train.l2 must be >= 0");
}

namespace {

/// Views into the flat parameter vector.
struct Layout {
    std::size_t d, c, h;
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;

    explicit Layout(const Architecture& a) : d(a.input_dim), c(a.class_count), h(a.hidden_dim) {
        if (h == 0) {
            w2 = 0;
            b2 = c * d;
        } else {
            w1 = 0;
            b1 = h * d;
            w2 = b1 + h;
            b2 = w2 + c * h;
        }
    }
};

/// Forward pass; fills `hidden` (size h) and `logits` (size c).
void forward(const Model& m, const Layout& L, std::span<const double> x, std::vector<double>& hidden,
             std::vector<double>& logits) {
    const double* p = m.params.data();
    std::span<const double> feat = x;
    std::size_t in = L.d;
    if (L.h > 0) {
        hidden.resize(L.h);
        for (std::size_t i = 0; i < L.h; ++i) {
            double z = p[L.b1 + i];
            const double* w = p + L.w1 + i * L.d;
            for (std::size_t j = 0; j < L.d; ++j) z += w[j] * x[j];
            hidden[i] = std::tanh(z);
        }
        feat = hidden;
        in = L.h;
    }
    logits.resize(L.c);
    for (std::size_t k = 0; k < L.c; ++k) {
        double z = p[L.b2 + k];
        const double* w = p + L.w2 + k * in;
        for (std::size_t j = 0; j < in; ++j) z += w[j] * feat[j];
        logits[k] = z;
    }
}

/// Softmax in place; returns log-sum-exp of the input logits.
double softmax_inplace(std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : z) v /= s;
    return mx + std::log(s);
}

/// Adds w * d(cross-entropy)/d(params) for one sample into `grad`.
void accumulate_sample_gradient(const Model& m, const Layout& L, std::span<const double> x, int y, double w,
                                std::vector<double>& grad, std::vector<double>& hidden, std::vector<double>& probs,
                                std::vector<double>& dhidden) {
    forward(m, L, x, hidden, probs);
    softmax_inplace(probs);
    probs[static_cast<std::size_t>(y)] -= 1.0;  // now dlogits / w

    const double* p = m.params.data();
    double* g = grad.data();
    std::span<const double> feat = L.h > 0 ? std::span<const double>(hidden) : x;
    const std::size_t in = L.h > 0 ? L.h : L.d;

    for (std::size_t k = 0; k < L.c; ++k) {
        const double dz = w * probs[k];
        g[L.b2 + k] += dz;
        double* gw = g + L.w2 + k * in;
        for (std::size_t j = 0; j < in; ++j) gw[j] += dz * feat[j];
    }
    if (L.h == 0) return;

    dhidden.assign(L.h, 0.0);
    for (std::size_t k = 0; k < L.c; ++k) {
        const double dz = w * probs[k];
        const double* w2 = p + L.w2 + k * L.h;
        for (std::size_t i = 0; i < L.h; ++i) dhidden[i] += dz * w2[i];
    }
    for (std::size_t i = 0; i < L.h; ++i) {
        const double dz = dhidden[i] * (1.0 - hidden[i] * hidden[i]);
        g[L.b1 + i] += dz;
        double* gw = g + L.w1 + i * L.d;
        for (std::size_t j = 0; j < L.d; ++j) gw[j] += dz * x[j];
    }
}

void check_data(const Model& m, const LabeledData& data) {
    if (data.dim != m.arch.input_dim) throw InternalError("data dimension does not match model input");
}

} // namespace

std::vector<double> predict_proba(const Model& model, std::span<const double> x) {
    Layout L(model.arch);
    std::vector<double> hidden, logits;
    forward(model, L, x, hidden, logits);
    softmax_inplace(logits);
    return logits;
}

int predict(const Model& model, std::span<const double> x) {
    Layout L(model.arch);
    std::vector<double> hidden, logits;
    forward(model, L, x, hidden, logits);
    // max_element returns the first maximum, i.e. the lowest class on ties.
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double loss(const Model& model, const LabeledData& data, double l2_penalty) {
    check_data(model, data);
    if (data.empty()) throw ConfigError("loss of an empty dataset");
    Layout L(model.arch);
    std::vector<double> hidden, logits;
    std::vector<double> terms(data.size()), weights(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        forward(model, L, data.row(i), hidden, logits);
        const double y_logit = logits[static_cast<std::size_t>(data.labels[i])];
        const double lse = softmax_inplace(logits);
        weights[i] = data.weight(i);
        terms[i] = weights[i] * (lse - y_logit);
    }
    double value = pairwise_sum(terms) / pairwise_sum(weights);
    if (l2_penalty > 0.0) {
        std::vector<double> sq;
        sq.reserve(model.params.size());
        for (std::size_t j = 0; j < model.params.size(); ++j) {
            if (!model.frozen_mask[j]) sq.push_back(model.params[j] * model.params[j]);
        }
        value += 0.5 * l2_penalty * pairwise_sum(sq);
    }
    return value;
}

std::vector<double> gradient(const Model& model, const LabeledData& data, double l2_penalty,
                             std::span<const std::size_t> rows) {
    check_data(model, data);
    Layout L(model.arch);
    std::vector<double> grad(model.params.size(), 0.0);
    std::vector<double> hidden, probs, dhidden;

    const std::size_t count = rows.empty() ? data.size() : rows.size();
    if (count == 0) throw ConfigError("gradient of an empty batch");
    std::vector<double> weights(count);
    for (std::size_t t = 0; t < count; ++t) {
        const std::size_t i = rows.empty() ? t : rows[t];
        weights[t] = data.weight(i);
        accumulate_sample_gradient(model, L, data.row(i), data.labels[i], weights[t], grad, hidden, probs, dhidden);
    }
    const double total = pairwise_sum(weights);
    for (std::size_t j = 0; j < grad.size(); ++j) {
        if (model.frozen_mask[j]) {
            grad[j] = 0.0;
        } else {
            grad[j] = grad[j] / total + l2_penalty * model.params[j];
        }
    }
    return grad;
}

Model train_local(const Model& model, const LabeledData& data, const TrainConfig& config) {
    config.validate();
    Model out = model;
    if (config.epochs == 0) return out;
    if (data.empty()) throw ConfigError("train_local on an empty shard");
    check_data(model, data);
    if (out.unfrozen_count() == 0) return out;

    Rng rng = make_rng(config.seed, {0x747261696eULL});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), rng);
        std::size_t batch = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            const auto rows = std::span<const std::size_t>(order).subspan(start, len);
            const auto g = gradient(out, data, config.l2_penalty, rows);
            bool finite = true;
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (out.frozen_mask[j]) continue;
                out.params[j] -= config.learning_rate * g[j];
                finite = finite && std::isfinite(out.params[j]);
            }
            if (!finite) {
                throw NumericalDivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                               std::to_string(batch));
            }
        }
    }
    return out;
}

double evaluate(const Model& model, const LabeledData& data) {
    if (data.empty()) throw ConfigError("evaluate on an empty dataset");
    check_data(model, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (predict(model, data.row(i)) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void check_aggregation_inputs(std::span<const Model> models, std::span<const double> weights) {
    if (models.empty()) throw AggregationError("fedavg needs at least one model");
    if (weights.size() != models.size()) throw AggregationError("fedavg weight count differs from model count");
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw AggregationError("fedavg weights must be positive");
    }
    for (const Model& m : models) {
        if (!(m.arch == models[0].arch)) throw AggregationError("fedavg architecture mismatch");
        if (m.params.size() != models[0].params.size()) throw AggregationError("fedavg parameter count mismatch");
        if (m.frozen_mask != models[0].frozen_mask) throw AggregationError("fedavg frozen mask mismatch");
    }
}

Model weighted_average(std::span<const Model> models, std::span<const double> weights, bool skip_frozen) {
    check_aggregation_inputs(models, weights);
    Model out = models[0];
    if (models.size() == 1) return out;

    std::vector<double> sorted_w(weights.begin(), weights.end());
    std::sort(sorted_w.begin(), sorted_w.end());
    const double total = pairwise_sum(sorted_w);

    std::vector<double> terms(models.size());
    for (std::size_t j = 0; j < out.params.size(); ++j) {
        if (skip_frozen && out.frozen_mask[j]) continue;
        double lo = models[0].params[j];
        double hi = lo;
        for (const Model& m : models) {
            lo = std::min(lo, m.params[j]);
            hi = std::max(hi, m.params[j]);
        }
        if (lo == hi) {
            out.params[j] = lo;
            continue;
        }
        for (std::size_t i = 0; i < models.size(); ++i) terms[i] = weights[i] * (models[i].params[j] - lo);
        std::sort(terms.begin(), terms.end());
        out.params[j] = std::clamp(lo + pairwise_sum(terms) / total, lo, hi);
    }
    return out;
}

} // namespace

Model fedavg(std::span<const Model> models, std::span<const double> weights) {
    return weighted_average(models, weights, false);
}

Model partial_fedavg(std::span<const Model> models, std::span<const double> weights) {
    return weighted_average(models, weights, true);
}

std::size_t Generator::present_classes() const {
    return static_cast<std::size_t>(std::count_if(classes.begin(), classes.end(), [](const auto& c) { return c.present(); }));
}

std::size_t Generator::sample_count() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.count;
    return n;
}

Generator fit_generator(const LabeledData& data, double variance_floor) {
    if (!(variance_floor > 0.0)) throw ConfigError("train.variance_floor must be > 0");
    Generator g{data.dim, std::vector<ClassStats>(data.class_count)};
    std::vector<std::vector<std::size_t>> members(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i) members[static_cast<std::size_t>(data.labels[i])].push_back(i);

    std::vector<double> column;
    for (std::size_t c = 0; c < data.class_count; ++c) {
        auto& st = g.classes[c];
        st.count = members[c].size();
        if (st.count == 0) continue;
        st.mean.assign(data.dim, 0.0);
        st.variance.assign(data.dim, 0.0);
        column.resize(st.count);
        const double n = static_cast<double>(st.count);
        for (std::size_t j = 0; j < data.dim; ++j) {
            for (std::size_t t = 0; t < st.count; ++t) column[t] = data.row(members[c][t])[j];
            const double mu = pairwise_sum(column) / n;
            for (double& v : column) v = (v - mu) * (v - mu);
            st.mean[j] = mu;
            st.variance[j] = std::max(variance_floor, pairwise_sum(column) / n);
        }
    }
    return g;
}

LabeledData sample_synthetic(const Generator& generator, std::size_t n, std::uint64_t seed) {
    const std::size_t total = generator.sample_count();
    if (total == 0) throw GeneratorEmptyError("generator has no present classes");
    LabeledData out(generator.dim, generator.classes.size());
    out.features.reserve(n * generator.dim);
    Rng rng = make_rng(seed, {0x73796e7468ULL});
    std::vector<double> x(generator.dim);
    for (std::size_t s = 0; s < n; ++s) {
        auto r = uniform_index(rng, total);
        std::size_t c = 0;
        while (r >= generator.classes[c].count) {
            r -= generator.classes[c].count;
            ++c;
        }
        const auto& st = generator.classes[c];
        for (std::size_t j = 0; j < generator.dim; ++j) {
            x[j] = st.mean[j] + std::sqrt(st.variance[j]) * standard_normal(rng);
        }
        out.append(x, static_cast<int>(c));
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'P', '2', 'P', 'M'};

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw IngestionError("model blob truncated at byte " + std::to_string(pos));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    return v;
}

std::vector<std::uint32_t> mask_runs(const std::vector<bool>& mask) {
    std::vector<std::uint32_t> runs;
    bool current = false;
    std::uint32_t len = 0;
    for (bool b : mask) {
        if (b != current) {
            runs.push_back(len);
            current = b;
            len = 0;
        }
        ++len;
    }
    runs.push_back(len);
    return runs;
}

} // namespace

std::size_t serialized_header_size(const Model& model) {
    return 4 + 4 * 4 + 8 + 4 + 4 * mask_runs(model.frozen_mask).size();
}

std::string serialize_model(const Model& model) {
    model.check_invariants();
    std::string out(kMagic, 4);
    put_le<std::uint32_t>(out, kModelFormatVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.arch.input_dim));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.arch.class_count));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.arch.hidden_dim));
    put_le<std::uint64_t>(out, model.params.size());
    const auto runs = mask_runs(model.frozen_mask);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(runs.size()));
    for (auto r : runs) put_le<std::uint32_t>(out, r);
    for (double p : model.params) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(p));
    return out;
}

Model deserialize_model(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IngestionError("not a model blob");
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kModelFormatVersion) throw IngestionError("unsupported model format version " + std::to_string(version));
    Model m;
    m.arch.input_dim = get_le<std::uint32_t>(bytes, pos);
    m.arch.class_count = get_le<std::uint32_t>(bytes, pos);
    m.arch.hidden_dim = get_le<std::uint32_t>(bytes, pos);
    const auto count = get_le<std::uint64_t>(bytes, pos);
    if (count != m.arch.param_count()) throw IngestionError("parameter count does not match architecture");
    const auto run_count = get_le<std::uint32_t>(bytes, pos);
    bool flag = false;
    for (std::uint32_t r = 0; r < run_count; ++r) {
        const auto len = get_le<std::uint32_t>(bytes, pos);
        m.frozen_mask.insert(m.frozen_mask.end(), len, flag);
        flag = !flag;
    }
    if (m.frozen_mask.size() != count) throw IngestionError("frozen mask length does not match parameter count");
    m.params.resize(count);
    for (auto& p : m.params) p = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
    if (pos != bytes.size()) throw IngestionError("trailing bytes after model blob");
    m.check_invariants();
    return m;
}

} // namespace p2pfl
