#pragma once

// Histogram-based outlier scoring. Each latent dimension gets an
// equal-width histogram over its observed [min, max]; a sample's score is
// the sum over dimensions of log(1 / (p_i(x_i) + alpha)) where p_i is the
// (max-normalized) bin height. High score = rare = likely artifact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dlite/errors.hpp"

namespace dlite::distill {

enum class HistNorm {
    kMaxOne,   // heights scaled so the tallest bin is 1 (classic formulation)
    kDensity,  // heights integrate to 1 (ablation mode)
};

struct HistogramModel {
    std::int64_t dims = 0;
    double alpha = 1e-6;
    HistNorm norm = HistNorm::kMaxOne;
    // per dimension
    std::vector<std::vector<double>> bin_edges;  // B+1 ascending edges
    std::vector<std::vector<double>> heights;    // B normalized heights
};

inline std::int64_t default_bins(std::int64_t n) {
    return std::max<std::int64_t>(1, std::llround(std::sqrt(double(n))));
}

// Fits per-dimension equal-width histograms on Z (n x dims, row-major).
// A constant dimension collapses to a single unit-width bin of height 1.
inline HistogramModel fit_histograms(const std::vector<float>& z, std::int64_t n,
                                     std::int64_t dims, std::int64_t bins,
                                     double alpha = 1e-6, HistNorm norm = HistNorm::kMaxOne) {
    if (n < 2) throw ContractError("fit_histograms: need at least two samples");
    if (bins < 1) throw ContractError("fit_histograms: bins must be >= 1");
    HistogramModel model;
    model.dims = dims;
    model.alpha = alpha;
    model.norm = norm;
    model.bin_edges.resize(static_cast<std::size_t>(dims));
    model.heights.resize(static_cast<std::size_t>(dims));
    std::vector<double> counts;
    for (std::int64_t d = 0; d < dims; ++d) {
        double lo = z[d], hi = z[d];
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = z[i * dims + d];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        auto& edges = model.bin_edges[d];
        auto& heights = model.heights[d];
        if (hi <= lo) {
            // constant dimension: one bin, every in-range value has p = 1
            edges = {lo - 0.5, lo + 0.5};
            heights = {1.0};
            continue;
        }
        edges.resize(static_cast<std::size_t>(bins) + 1);
        const double width = (hi - lo) / double(bins);
        for (std::int64_t b = 0; b <= bins; ++b) edges[b] = lo + width * double(b);
        edges.back() = hi;
        counts.assign(static_cast<std::size_t>(bins), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = z[i * dims + d];
            auto b = static_cast<std::int64_t>((v - lo) / width);
            b = std::clamp<std::int64_t>(b, 0, bins - 1);
            counts[b] += 1.0;
        }
        heights.assign(counts.begin(), counts.end());
        if (norm == HistNorm::kMaxOne) {
            const double peak = *std::max_element(heights.begin(), heights.end());
            for (auto& h : heights) h /= peak;
        } else {
            const double total = std::accumulate(heights.begin(), heights.end(), 0.0);
            for (auto& h : heights) h /= total * width;
        }
    }
    return model;
}

struct OodScores {
    std::vector<double> scores;        // one per row
    std::vector<std::int64_t> ranking;  // indices by descending score, ties by ascending index
};

// p_d(x): height of the bin containing x; out-of-range values clamp to the
// nearest edge bin.
inline double histogram_density(const HistogramModel& model, std::int64_t d, double x) {
    const auto& edges = model.bin_edges[d];
    const auto& heights = model.heights[d];
    const auto bins = static_cast<std::int64_t>(heights.size());
    if (bins == 1) return heights[0];
    const double lo = edges.front(), hi = edges.back();
    const double width = (hi - lo) / double(bins);
    auto b = static_cast<std::int64_t>((x - lo) / width);
    b = std::clamp<std::int64_t>(b, 0, bins - 1);
    return heights[b];
}

inline OodScores score_ood(const std::vector<float>& z, std::int64_t n, std::int64_t dims,
                           const HistogramModel& model) {
    if (dims != model.dims)
        throw DimensionError("score_ood: model fitted on " + std::to_string(model.dims) +
                             " dims, got " + std::to_string(dims));
    OodScores out;
    out.scores.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::int64_t d = 0; d < dims; ++d) {
            const double p = histogram_density(model, d, z[i * dims + d]);
            s += std::log(1.0 / (p + model.alpha));
        }
        out.scores[i] = s;
    }
    out.ranking.resize(static_cast<std::size_t>(n));
    std::iota(out.ranking.begin(), out.ranking.end(), 0);
    std::sort(out.ranking.begin(), out.ranking.end(), [&](std::int64_t a, std::int64_t b) {
        if (out.scores[a] != out.scores[b]) return out.scores[a] > out.scores[b];
        return a < b;
    });
    return out;
}

// Drops the ceil(tau% * n) highest-scoring rows; returns kept indices
// in ascending order. tau is a percentage in [0, 100).
inline std::vector<std::int64_t> remove_outliers(const OodScores& scores, double tau) {
    if (tau < 0.0 || tau >= 100.0)
        throw ContractError("remove_outliers: tau must be in [0, 100)");
    const auto n = static_cast<std::int64_t>(scores.scores.size());
    const auto drop = static_cast<std::int64_t>(std::ceil(tau / 100.0 * double(n)));
    std::vector<std::int64_t> kept(scores.ranking.begin() + std::min(drop, n),
                                   scores.ranking.end());
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace dlite::distill
