#pragma once

// Greedy farthest-point solver for the k-center objective: pick k rows so
// the largest distance from any row to its nearest pick is small. The
// greedy order is returned as selected (a prefix of a larger selection is
// itself the smaller selection), together with the achieved coverage
// radius max_z min_c ||z - c||_2. Cost is O(k * n * d) through incremental
// min-distance updates.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dlite/errors.hpp"
#include "dlite/rng.hpp"

namespace dlite::distill {

enum class KCenterInit {
    kFarthestFromCentroid,  // deterministic, seed-independent
    kRandom,                // seeded uniform first center
};

struct KCenterResult {
    std::vector<std::int64_t> selected;  // greedy order
    double coverage_radius = 0.0;
};

namespace detail {

inline double sq_dist(const float* a, const float* b, std::int64_t d) {
    double s = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        const double diff = double(a[i]) - b[i];
        s += diff * diff;
    }
    return s;
}

}  // namespace detail

inline KCenterResult kcenter_select(const std::vector<float>& z, std::int64_t n,
                                    std::int64_t dims, std::int64_t k, std::uint64_t seed = 0,
                                    KCenterInit init = KCenterInit::kFarthestFromCentroid) {
    if (k < 1 || k > n)
        throw ContractError("kcenter_select: k=" + std::to_string(k) +
                            " out of range for n=" + std::to_string(n));
    KCenterResult out;
    out.selected.reserve(static_cast<std::size_t>(k));

    std::int64_t first = 0;
    if (init == KCenterInit::kFarthestFromCentroid) {
        std::vector<double> centroid(static_cast<std::size_t>(dims), 0.0);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t d = 0; d < dims; ++d) centroid[d] += z[i * dims + d];
        for (auto& c : centroid) c /= double(n);
        double best = -1.0;
        for (std::int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::int64_t d = 0; d < dims; ++d) {
                const double diff = double(z[i * dims + d]) - centroid[d];
                s += diff * diff;
            }
            if (s > best) {  // strict > keeps the lowest index on ties
                best = s;
                first = i;
            }
        }
    } else {
        Rng rng(seed);
        first = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    }
    out.selected.push_back(first);

    // min squared distance from each row to the chosen centers
    std::vector<double> min_sq(static_cast<std::size_t>(n));
    const float* c0 = z.data() + first * dims;
    for (std::int64_t i = 0; i < n; ++i)
        min_sq[i] = detail::sq_dist(z.data() + i * dims, c0, dims);

    while (static_cast<std::int64_t>(out.selected.size()) < k) {
        std::int64_t next = 0;
        double best = -1.0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (min_sq[i] > best) {
                best = min_sq[i];
                next = i;
            }
        }
        out.selected.push_back(next);
        const float* c = z.data() + next * dims;
        for (std::int64_t i = 0; i < n; ++i) {
            const double s = detail::sq_dist(z.data() + i * dims, c, dims);
            if (s < min_sq[i]) min_sq[i] = s;
        }
    }

    double worst = 0.0;
    for (std::int64_t i = 0; i < n; ++i) worst = std::max(worst, min_sq[i]);
    out.coverage_radius = std::sqrt(worst);
    return out;
}

// Radius of an arbitrary selection over an arbitrary candidate pool:
// max over pool rows of the distance to the nearest selected row.
inline double coverage_radius(const std::vector<float>& z, std::int64_t dims,
                              const std::vector<std::int64_t>& pool,
                              const std::vector<std::int64_t>& selected) {
    if (selected.empty()) throw ContractError("coverage_radius: empty selection");
    double worst = 0.0;
    for (const auto i : pool) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto c : selected)
            best = std::min(best, detail::sq_dist(z.data() + i * dims, z.data() + c * dims, dims));
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

// Uniform sample of k entries from `indices` without replacement, seeded;
// result ascending by original position (k = indices.size() returns all).
inline std::vector<std::int64_t> random_select(const std::vector<std::int64_t>& indices,
                                               std::int64_t k, std::uint64_t seed) {
    const auto n = static_cast<std::int64_t>(indices.size());
    if (k < 0 || k > n)
        throw ContractError("random_select: k=" + std::to_string(k) + " out of range for n=" +
                            std::to_string(n));
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                static_cast<std::size_t>(k));
    std::vector<std::int64_t> out;
    out.reserve(picks.size());
    for (const auto p : picks) out.push_back(indices[p]);
    return out;
}

}  // namespace dlite::distill
