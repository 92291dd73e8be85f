#pragma once

#include <cstddef>
#include <span>

namespace p2pfl {

/// Pairwise (cascade) summation in index order. Deterministic for a given
/// input order and with O(log n) error growth.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t leaf = 8;
    if (xs.size() <= leaf) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

} // namespace p2pfl
