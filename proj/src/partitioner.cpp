#include "p2pfl/partitioner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "p2pfl/errors.hpp"
#include "p2pfl/random.hpp"

namespace p2pfl {

void LabeledData::append(std::span<const double> x, int label, double w) {
    if (x.size() != dim) throw InternalError("row dimension mismatch");
    if (w != 1.0 && weights.empty()) weights.assign(labels.size(), 1.0);
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
    if (!weights.empty()) weights.push_back(w);
}

void LabeledData::append(const LabeledData& other, double weight_scale) {
    if (other.empty()) return;
    if (other.dim != dim) throw InternalError("row dimension mismatch");
    const bool need_weights = !weights.empty() || !other.weights.empty() || weight_scale != 1.0;
    if (need_weights && weights.empty()) weights.assign(labels.size(), 1.0);
    features.insert(features.end(), other.features.begin(), other.features.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    if (need_weights) {
        for (std::size_t i = 0; i < other.size(); ++i) weights.push_back(other.weight(i) * weight_scale);
    }
}

void LabeledData::clear() {
    features.clear();
    labels.clear();
    weights.clear();
}

std::vector<std::size_t> LabeledData::label_histogram() const {
    std::vector<std::size_t> h(class_count, 0);
    for (int y : labels) ++h[static_cast<std::size_t>(y)];
    return h;
}

void Dataset::validate() const {
    if (data.features.size() != data.size() * data.dim) throw IngestionError("feature rows and labels differ in length");
    std::vector<bool> seen(data.class_count, false);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = data.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= data.class_count) {
            throw IngestionError("label out of range at row " + std::to_string(i));
        }
        seen[static_cast<std::size_t>(y)] = true;
    }
    for (std::size_t c = 0; c < seen.size(); ++c) {
        if (!seen[c]) throw IngestionError("class " + std::to_string(c) + " has no samples");
    }
}

Dataset generate_dataset(const DatasetSpec& spec) {
    if (spec.class_count < 1 || spec.dim < 1 || spec.samples_per_class < 1) {
        throw ConfigError("dataset counts must be >= 1");
    }
    if (!(spec.class_separation > 0.0)) throw ConfigError("dataset.separation must be > 0");

    Rng rng = make_rng(spec.seed, {0x64617461ULL});
    std::vector<double> means(spec.class_count * spec.dim);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        double norm2 = 0.0;
        auto mu = std::span<double>(means).subspan(c * spec.dim, spec.dim);
        do {
            norm2 = 0.0;
            for (double& m : mu) {
                m = standard_normal(rng);
                norm2 += m * m;
            }
        } while (norm2 == 0.0);
        const double s = spec.class_separation / std::sqrt(norm2);
        for (double& m : mu) m *= s;
    }

    Dataset ds{LabeledData(spec.dim, spec.class_count), spec.seed};
    ds.data.features.reserve(spec.class_count * spec.samples_per_class * spec.dim);
    std::vector<double> x(spec.dim);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            for (std::size_t j = 0; j < spec.dim; ++j) x[j] = means[c * spec.dim + j] + standard_normal(rng);
            ds.data.append(x, static_cast<int>(c));
        }
    }
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

} // namespace

Dataset load_csv_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open dataset " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw IngestionError("row 1: missing header");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header.back() != "label") {
        throw IngestionError("row 1: header must end with a 'label' column");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t j = 0; j < dim; ++j) {
        if (header[j] != "f" + std::to_string(j)) {
            throw IngestionError("row 1: expected column f" + std::to_string(j) + ", got '" + header[j] + "'");
        }
    }

    LabeledData data(dim, 0);
    std::vector<double> x(dim);
    std::size_t row = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != dim + 1) {
            throw IngestionError("row " + std::to_string(row) + ": expected " + std::to_string(dim + 1) +
                                 " columns, got " + std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            const auto& c = cells[j];
            auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), x[j]);
            if (ec != std::errc{} || p != c.data() + c.size() || !std::isfinite(x[j])) {
                throw IngestionError("row " + std::to_string(row) + ": bad number '" + c + "'");
            }
        }
        int y = 0;
        const auto& c = cells[dim];
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), y);
        if (ec != std::errc{} || p != c.data() + c.size() || y < 0) {
            throw IngestionError("row " + std::to_string(row) + ": bad label '" + c + "'");
        }
        max_label = std::max(max_label, y);
        data.append(x, y);
    }
    if (data.empty()) throw IngestionError("dataset has no rows");
    data.class_count = static_cast<std::size_t>(max_label + 1);
    Dataset ds{std::move(data), 0};
    ds.validate();
    return ds;
}

void save_csv_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const auto& d = dataset.data;
    for (std::size_t j = 0; j < d.dim; ++j) out << 'f' << j << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (double v : d.row(i)) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
            out.write(buf, p - buf);
            out << ',';
        }
        out << d.labels[i] << '\n';
    }
}

void CovariateTransform::validate(std::size_t dim) const {
    if (scale.size() != dim) throw InternalError("covariate scale has wrong dimension");
    for (double s : scale) {
        if (!(s > 0.0)) throw ConfigError("covariate scale factors must be > 0");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("covariate noise_sigma must be >= 0");
    if (!(rotation_strength >= 0.0)) throw ConfigError("covariate rotation_strength must be >= 0");
}

std::vector<double> orthogonal_matrix(std::size_t dim, std::uint64_t seed, double strength) {
    std::vector<double> q(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) q[i * dim + i] = 1.0;
    if (strength == 0.0) return q;

    Rng rng = make_rng(seed, {0x726f74ULL});
    for (double& v : q) v += strength * standard_normal(rng);

    // Modified Gram-Schmidt over rows.
    for (std::size_t i = 0; i < dim; ++i) {
        auto ri = std::span<double>(q).subspan(i * dim, dim);
        for (std::size_t k = 0; k < i; ++k) {
            auto rk = std::span<const double>(q).subspan(k * dim, dim);
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) dot += ri[j] * rk[j];
            for (std::size_t j = 0; j < dim; ++j) ri[j] -= dot * rk[j];
        }
        double norm = 0.0;
        for (double v : ri) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw InternalError("degenerate rotation draw");
        for (double& v : ri) v /= norm;
    }
    return q;
}

namespace {

std::vector<std::size_t> iota_pool(std::size_t n) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    return pool;
}

std::vector<ClientId> sorted_clients(std::span<const ClientId> clients) {
    if (clients.empty()) throw ConfigError("partition needs at least one client");
    std::vector<ClientId> out(clients.begin(), clients.end());
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw ConfigError("duplicate client id");
    return out;
}

std::vector<Shard> slice(const std::vector<std::size_t>& order, const std::vector<ClientId>& ids,
                         const std::vector<std::size_t>& sizes) {
    std::vector<Shard> shards;
    shards.reserve(ids.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Shard s{ids[i], {}, std::nullopt};
        s.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[i]));
        pos += sizes[i];
        shards.push_back(std::move(s));
    }
    return shards;
}

} // namespace

std::vector<Shard> partition_iid(std::span<const std::size_t> pool, std::span<const ClientId> clients,
                                 std::uint64_t seed) {
    const auto ids = sorted_clients(clients);
    if (pool.empty()) throw ConfigError("cannot partition an empty dataset");
    std::vector<std::size_t> order(pool.begin(), pool.end());
    Rng rng = make_rng(seed, {0x696964ULL});
    shuffle(std::span<std::size_t>(order), rng);

    const std::size_t base = order.size() / ids.size();
    const std::size_t extra = order.size() % ids.size();
    std::vector<std::size_t> sizes(ids.size(), base);
    for (std::size_t i = 0; i < extra; ++i) ++sizes[i];
    return slice(order, ids, sizes);
}

std::vector<Shard> partition_iid(const Dataset& dataset, std::span<const ClientId> clients, std::uint64_t seed) {
    const auto pool = iota_pool(dataset.size());
    return partition_iid(pool, clients, seed);
}

std::vector<Shard> partition_pathological(const Dataset& dataset, std::span<const std::size_t> pool,
                                          std::span<const ClientId> clients, std::size_t labels_per_client,
                                          std::uint64_t seed) {
    const auto ids = sorted_clients(clients);
    const std::size_t classes = dataset.class_count();
    if (labels_per_client < 1 || labels_per_client > classes) {
        throw ConfigError("partition.labels_per_client must be in [1, " + std::to_string(classes) + "]");
    }
    if (pool.empty()) throw ConfigError("cannot partition an empty dataset");

    Rng rng = make_rng(seed, {0x706174686fULL});
    std::vector<std::size_t> order(pool.begin(), pool.end());
    shuffle(std::span<std::size_t>(order), rng);
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t idx : order) by_class[static_cast<std::size_t>(dataset.data.labels[idx])].push_back(idx);

    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < classes; ++c) {
        if (!by_class[c].empty()) present.push_back(c);
    }

    const std::size_t chunks = ids.size() * labels_per_client;
    if (chunks < present.size()) {
        throw ConfigError("partition.labels_per_client: clients x labels_per_client = " + std::to_string(chunks) +
                          " cannot cover " + std::to_string(present.size()) + " classes");
    }
    if (chunks > order.size()) {
        throw ConfigError("partition.labels_per_client: clients x labels_per_client = " + std::to_string(chunks) +
                          " exceeds the " + std::to_string(order.size()) + " available samples");
    }

    // One chunk per present class, the rest by largest remainder on class size.
    std::vector<std::size_t> per_class(classes, 0);
    for (std::size_t c : present) per_class[c] = 1;
    std::size_t remaining = chunks - present.size();
    while (remaining > 0) {
        std::size_t best = classes;
        double best_gap = -1.0;
        for (std::size_t c : present) {
            if (per_class[c] >= by_class[c].size()) continue;
            const double target = static_cast<double>(chunks) * static_cast<double>(by_class[c].size()) /
                                  static_cast<double>(order.size());
            const double gap = target - static_cast<double>(per_class[c]);
            if (gap > best_gap) {
                best_gap = gap;
                best = c;
            }
        }
        if (best == classes) throw InternalError("chunk allocation ran out of samples");
        ++per_class[best];
        --remaining;
    }

    // Label-pure chunks, grouped by label; the class order is permuted so the
    // dealing below pairs different labels on each run.
    std::vector<std::size_t> class_order = present;
    shuffle(std::span<std::size_t>(class_order), rng);
    std::vector<std::vector<std::size_t>> chunk_list;
    for (std::size_t c : class_order) {
        const auto& members = by_class[c];
        const std::size_t m = per_class[c];
        const std::size_t base = members.size() / m;
        const std::size_t extra = members.size() % m;
        std::size_t pos = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t len = base + (j < extra ? 1 : 0);
            chunk_list.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(pos),
                                    members.begin() + static_cast<std::ptrdiff_t>(pos + len));
            pos += len;
        }
    }

    // Deal chunk j to client position (j mod clients); consecutive chunks of
    // one label land on distinct clients whenever a label has <= clients chunks.
    std::vector<std::size_t> client_order(ids.size());
    std::iota(client_order.begin(), client_order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(client_order), rng);

    std::vector<Shard> shards;
    for (ClientId id : ids) shards.push_back(Shard{id, {}, std::nullopt});
    for (std::size_t j = 0; j < chunk_list.size(); ++j) {
        auto& dst = shards[client_order[j % ids.size()]].indices;
        dst.insert(dst.end(), chunk_list[j].begin(), chunk_list[j].end());
    }
    return shards;
}

std::vector<Shard> partition_pathological(const Dataset& dataset, std::span<const ClientId> clients,
                                          std::size_t labels_per_client, std::uint64_t seed) {
    const auto pool = iota_pool(dataset.size());
    return partition_pathological(dataset, pool, clients, labels_per_client, seed);
}

std::vector<Shard> partition_quantity_skew(std::span<const std::size_t> pool, std::span<const ClientId> clients,
                                           std::span<const double> ratios, std::uint64_t seed) {
    const auto ids = sorted_clients(clients);
    if (ratios.size() != ids.size()) {
        throw ConfigError("partition.ratios: expected " + std::to_string(ids.size()) + " entries, got " +
                          std::to_string(ratios.size()));
    }
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw ConfigError("partition.ratios: negative ratio");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("partition.ratios: must sum to 1, got " + std::to_string(total));
    }
    if (pool.empty()) throw ConfigError("cannot partition an empty dataset");

    std::vector<std::size_t> order(pool.begin(), pool.end());
    Rng rng = make_rng(seed, {0x7175616eULL});
    shuffle(std::span<std::size_t>(order), rng);

    const double n = static_cast<double>(order.size());
    std::vector<std::size_t> sizes(ids.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        // Tolerance absorbs products like 0.29 * 100 = 28.999999999999996.
        sizes[i] = std::min(order.size(), static_cast<std::size_t>(std::floor(ratios[i] * n + 1e-9)));
        assigned += sizes[i];
    }
    if (assigned > order.size()) throw ConfigError("partition.ratios: slices exceed dataset size");
    const auto largest = static_cast<std::size_t>(std::max_element(ratios.begin(), ratios.end()) - ratios.begin());
    sizes[largest] += order.size() - assigned;
    return slice(order, ids, sizes);
}

std::vector<Shard> partition_quantity_skew(const Dataset& dataset, std::span<const ClientId> clients,
                                           std::span<const double> ratios, std::uint64_t seed) {
    const auto pool = iota_pool(dataset.size());
    return partition_quantity_skew(pool, clients, ratios, seed);
}

LabeledData materialize(const Dataset& dataset, const Shard& shard) {
    LabeledData out(dataset.data.dim, dataset.class_count());
    out.features.reserve(shard.indices.size() * out.dim);
    for (std::size_t idx : shard.indices) {
        if (idx >= dataset.size()) throw InternalError("shard index out of range");
        out.append(dataset.data.row(idx), dataset.data.labels[idx]);
    }
    return out;
}

LabeledData apply_covariate_shift(const Dataset& dataset, const Shard& shard, const CovariateTransform& transform) {
    const std::size_t d = dataset.data.dim;
    transform.validate(d);

    std::vector<std::vector<double>> rotations;
    if (transform.per_class) {
        for (std::size_t c = 0; c < dataset.class_count(); ++c) {
            rotations.push_back(orthogonal_matrix(d, derive_seed(transform.rotation_seed, {c}), transform.rotation_strength));
        }
    } else {
        rotations.push_back(orthogonal_matrix(d, transform.rotation_seed, transform.rotation_strength));
    }

    Rng noise = make_rng(transform.noise_seed, {shard.owner});
    LabeledData out(d, dataset.class_count());
    std::vector<double> scaled(d), y(d);
    for (std::size_t idx : shard.indices) {
        if (idx >= dataset.size()) throw InternalError("shard index out of range");
        const auto x = dataset.data.row(idx);
        const int label = dataset.data.labels[idx];
        const auto& q = rotations[transform.per_class ? static_cast<std::size_t>(label) : 0];
        for (std::size_t j = 0; j < d; ++j) scaled[j] = transform.scale[j] * x[j];
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += q[i * d + j] * scaled[j];
            y[i] = acc;
        }
        if (transform.noise_sigma > 0.0) {
            for (double& v : y) v += transform.noise_sigma * standard_normal(noise);
        }
        out.append(y, label);
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in [0,1)");
    auto order = iota_pool(n);
    Rng rng = make_rng(seed, {0x73706c6974ULL});
    shuffle(std::span<std::size_t>(order), rng);
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(held.begin(), held.end());
    std::sort(rest.begin(), rest.end());
    return {std::move(held), std::move(rest)};
}

} // namespace p2pfl
