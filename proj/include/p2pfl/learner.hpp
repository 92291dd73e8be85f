#pragma once

// Desk-scale learner: softmax regression with an optional tanh hidden layer,
// sample-weighted FedAvg (full and trainable-only), and a class-conditional
// diagonal Gaussian generator standing in for a VAE.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "p2pfl/partitioner.hpp"

namespace p2pfl {

/// Parameter layout (row-major blocks, in order):
///   hidden_dim == 0:  W[C x d], b[C]
///   hidden_dim  > 0:  W1[h x d], b1[h], W2[C x h], b2[C]
/// W1 is the "backbone" block frozen for trainable-only sharing.
struct Architecture {
    std::size_t input_dim = 0;
    std::size_t class_count = 0;
    std::size_t hidden_dim = 0;

    [[nodiscard]] std::size_t param_count() const;
    /// Number of leading parameters forming the input->hidden weights
    /// (0 for a linear model).
    [[nodiscard]] std::size_t backbone_size() const { return hidden_dim * input_dim; }
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

struct Model {
    std::vector<double> params;
    Architecture arch;
    std::vector<bool> frozen_mask;

    [[nodiscard]] std::size_t frozen_count() const;
    [[nodiscard]] std::size_t unfrozen_count() const { return params.size() - frozen_count(); }
    /// Throws InternalError on size mismatch or non-finite parameters.
    void check_invariants() const;
    bool operator==(const Model&) const = default;
};

enum class InitKind { Zeros, SeededUniform };

struct InitSpec {
    InitKind kind = InitKind::Zeros;
    double scale = 0.1;  ///< U(-scale, scale) for SeededUniform
    std::uint64_t seed = 0;
};

/// The first floor(frozen_fraction * |params|) entries are marked frozen.
Model init_model(const Architecture& arch, const InitSpec& init, double frozen_fraction);

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 0.1;
    double l2_penalty = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class probabilities for one input.
std::vector<double> predict_proba(const Model& model, std::span<const double> x);
/// Argmax class; ties go to the lowest index.
int predict(const Model& model, std::span<const double> x);

/// Weighted mean cross-entropy plus 0.5 * l2 * ||unfrozen params||^2.
double loss(const Model& model, const LabeledData& data, double l2_penalty);

/// Analytic gradient of `loss` over the given rows (all rows when `rows` is
/// empty). Frozen positions are exactly 0.
std::vector<double> gradient(const Model& model, const LabeledData& data, double l2_penalty,
                             std::span<const std::size_t> rows = {});

/// Mini-batch SGD. Returns a new model; frozen entries are bit-identical to
/// the input. Throws NumericalDivergenceError on a non-finite loss.
Model train_local(const Model& model, const LabeledData& data, const TrainConfig& config);

/// Fraction of argmax-correct predictions. Throws ConfigError when empty.
double evaluate(const Model& model, const LabeledData& data);

/// Weighted parameter mean sum(w_i p_i) / sum(w_i). Each coordinate is
/// accumulated as an offset from its minimum over the inputs, with the terms
/// sorted before pairwise summation, so the result does not depend on input
/// order and never leaves [min, max].
Model fedavg(std::span<const Model> models, std::span<const double> weights);

/// As fedavg on unfrozen positions; frozen positions are copied from
/// models[0]. All masks must match.
Model partial_fedavg(std::span<const Model> models, std::span<const double> weights);

struct ClassStats {
    std::vector<double> mean;
    std::vector<double> variance;
    std::size_t count = 0;
    [[nodiscard]] bool present() const { return count > 0; }
};

struct Generator {
    std::size_t dim = 0;
    std::vector<ClassStats> classes;

    [[nodiscard]] std::size_t present_classes() const;
    [[nodiscard]] std::size_t sample_count() const;
};

/// Per-class mean and population variance (clamped below at variance_floor).
Generator fit_generator(const LabeledData& data, double variance_floor = 1e-3);

/// Labels drawn with probability proportional to class counts, features from
/// N(mean_c, diag(variance_c)). Throws GeneratorEmptyError with no classes.
LabeledData sample_synthetic(const Generator& generator, std::size_t n, std::uint64_t seed);

// Model wire format: "P2PM" magic, u32 version, u32 input_dim, u32 class_count,
// u32 hidden_dim, u64 param_count, u32 run count, u32 runs of the frozen mask
// (alternating, starting with unfrozen), then param_count little-endian f64.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes);
/// Bytes preceding the parameter block in serialize_model's output.
std::size_t serialized_header_size(const Model& model);

} // namespace p2pfl
