#pragma once

// Base dataset generation and splitting across clients: i.i.d., label-skewed
// (pathological), quantity-skewed, and covariate-shifted shards.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "p2pfl/network_graph.hpp"

namespace p2pfl {

/// Row-major labelled samples. `weights` is either empty (every sample has
/// weight 1) or aligned with `labels`.
struct LabeledData {
    std::size_t dim = 0;
    std::size_t class_count = 0;
    std::vector<double> features;
    std::vector<int> labels;
    std::vector<double> weights;

    LabeledData() = default;
    LabeledData(std::size_t dim_, std::size_t class_count_) : dim(dim_), class_count(class_count_) {}

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] bool empty() const { return labels.empty(); }
    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return std::span<const double>(features).subspan(i * dim, dim);
    }
    [[nodiscard]] double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

    void append(std::span<const double> x, int label, double w = 1.0);
    /// Appends every row of `other`, scaling its weights by `weight_scale`.
    void append(const LabeledData& other, double weight_scale = 1.0);
    void clear();

    /// Per-class sample counts (length class_count).
    [[nodiscard]] std::vector<std::size_t> label_histogram() const;

    bool operator==(const LabeledData&) const = default;
};

struct Dataset {
    LabeledData data;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] std::size_t class_count() const { return data.class_count; }
    /// Throws IngestionError if rows/labels disagree, a label is out of range
    /// or a class is missing.
    void validate() const;
};

struct DatasetSpec {
    std::size_t class_count = 10;
    std::size_t dim = 32;
    std::size_t samples_per_class = 250;
    double class_separation = 3.0;
    std::uint64_t seed = 0;
};

/// Gaussian mixture: class c ~ N(mu_c, I) with mu_c a seeded random unit
/// vector scaled by class_separation. Rows are grouped by class.
Dataset generate_dataset(const DatasetSpec& spec);

/// CSV with a header `f0,...,f{d-1},label`. class_count = max label + 1.
Dataset load_csv_dataset(const std::filesystem::path& path);

/// Writes a dataset in the format read by load_csv_dataset.
void save_csv_dataset(const Dataset& dataset, const std::filesystem::path& path);

struct CovariateTransform {
    /// Seeds the orthogonal matrix Q = orth(I + rotation_strength * G) with G
    /// standard normal; strength 0 gives exactly the identity.
    std::uint64_t rotation_seed = 0;
    double rotation_strength = 1.0;
    std::vector<double> scale;  ///< per-feature factors, > 0
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    /// Concept-drift variant: a distinct rotation per class label.
    bool per_class = false;

    void validate(std::size_t dim) const;
};

/// d x d row-major orthogonal matrix from (seed, strength) by modified
/// Gram-Schmidt.
std::vector<double> orthogonal_matrix(std::size_t dim, std::uint64_t seed, double strength);

struct Shard {
    ClientId owner = 0;
    std::vector<std::size_t> indices;
    std::optional<CovariateTransform> transform;
};

/// Seeded shuffle, then contiguous near-equal slices; the first
/// (n mod clients) clients receive one extra sample.
std::vector<Shard> partition_iid(const Dataset& dataset, std::span<const ClientId> clients, std::uint64_t seed);
std::vector<Shard> partition_iid(std::span<const std::size_t> pool, std::span<const ClientId> clients,
                                 std::uint64_t seed);

/// Label-sorted, label-pure chunks, clients.size() * labels_per_client of
/// them, dealt so each client holds labels_per_client chunks (hence at most
/// that many distinct labels). Every class gets at least one chunk, so
/// clients * labels_per_client must cover class_count.
std::vector<Shard> partition_pathological(const Dataset& dataset, std::span<const ClientId> clients,
                                          std::size_t labels_per_client, std::uint64_t seed);
std::vector<Shard> partition_pathological(const Dataset& dataset, std::span<const std::size_t> pool,
                                          std::span<const ClientId> clients, std::size_t labels_per_client,
                                          std::uint64_t seed);

/// Seeded shuffle, then contiguous slices of floor(ratio_i * n); the
/// remainder goes to the largest ratio (lowest position on ties).
std::vector<Shard> partition_quantity_skew(const Dataset& dataset, std::span<const ClientId> clients,
                                           std::span<const double> ratios, std::uint64_t seed);
std::vector<Shard> partition_quantity_skew(std::span<const std::size_t> pool, std::span<const ClientId> clients,
                                           std::span<const double> ratios, std::uint64_t seed);

/// Copies the shard's rows out of the dataset, untransformed.
LabeledData materialize(const Dataset& dataset, const Shard& shard);

/// Rows of the shard mapped through x -> Q diag(scale) x + eps. The dataset is
/// not modified; labels are carried over unchanged.
LabeledData apply_covariate_shift(const Dataset& dataset, const Shard& shard, const CovariateTransform& transform);

/// Splits [0, n) into (held_out, rest) by seeded shuffle; held_out has
/// floor(fraction * n) indices. Both outputs are sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

} // namespace p2pfl
