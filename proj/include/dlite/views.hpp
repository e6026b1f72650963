#pragma once

// Spectral views and patch grids. Each segment (C x T) yields three views:
// the raw potential signal plus the one-sided FFT magnitude and phase.
// Spectral views are linearly resampled onto the time grid so all three
// share the same patch layout (P patches of length T_W), then each view is
// z-scored per channel and cut into non-overlapping patches.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dlite/errors.hpp"
#include "dlite/fft.hpp"

namespace dlite::signal {

struct SpectralViews {
    std::int64_t channels = 0;
    std::int64_t bins = 0;  // floor(T/2) + 1
    std::vector<float> magnitude;  // channels x bins
    std::vector<float> phase;      // channels x bins, radians in [-pi, pi]
};

// Per-channel one-sided spectrum: magnitude |F_k| and phase atan2(Im, Re).
inline SpectralViews fft_views(const float* x, std::int64_t channels, std::int64_t samples) {
    if (samples < 2) throw ContractError("fft_views: need at least two samples");
    SpectralViews v;
    v.channels = channels;
    v.bins = static_cast<std::int64_t>(onesided_bins(static_cast<std::size_t>(samples)));
    v.magnitude.resize(static_cast<std::size_t>(channels * v.bins));
    v.phase.resize(static_cast<std::size_t>(channels * v.bins));
    std::vector<float> row(static_cast<std::size_t>(samples));
    for (std::int64_t c = 0; c < channels; ++c) {
        std::copy_n(x + c * samples, samples, row.begin());
        const auto spec = fft_real(row);
        for (std::int64_t k = 0; k < v.bins; ++k) {
            const auto& z = spec[static_cast<std::size_t>(k)];
            v.magnitude[c * v.bins + k] = static_cast<float>(std::abs(z));
            v.phase[c * v.bins + k] = static_cast<float>(std::atan2(z.imag(), z.real()));
        }
    }
    return v;
}

// Linear interpolation of each channel row from length `src_len` to `dst_len`.
// Endpoints map to endpoints, so values stay within the convex hull of their
// neighbors (magnitudes stay non-negative, phases stay in [-pi, pi]).
inline std::vector<float> resample_rows(const std::vector<float>& src, std::int64_t channels,
                                        std::int64_t src_len, std::int64_t dst_len) {
    if (src_len < 1 || dst_len < 1) throw ContractError("resample_rows: lengths must be positive");
    std::vector<float> dst(static_cast<std::size_t>(channels * dst_len));
    if (src_len == 1) {
        for (std::int64_t c = 0; c < channels; ++c)
            for (std::int64_t t = 0; t < dst_len; ++t) dst[c * dst_len + t] = src[c];
        return dst;
    }
    const double step = double(src_len - 1) / double(dst_len > 1 ? dst_len - 1 : 1);
    for (std::int64_t c = 0; c < channels; ++c) {
        const float* s = src.data() + c * src_len;
        float* d = dst.data() + c * dst_len;
        for (std::int64_t t = 0; t < dst_len; ++t) {
            const double pos = t * step;
            const auto i0 = static_cast<std::int64_t>(pos);
            const std::int64_t i1 = std::min(i0 + 1, src_len - 1);
            const double frac = pos - double(i0);
            d[t] = static_cast<float>((1.0 - frac) * s[i0] + frac * s[i1]);
        }
    }
    return dst;
}

// Patch layout for a view of length L cut into P patches: L is truncated or
// zero-padded to the nearest multiple of P first.
struct PatchGrid {
    std::int64_t num_patches = 0;
    std::int64_t patch_len = 0;
    std::int64_t padded = 0;     // zeros appended
    std::int64_t truncated = 0;  // samples dropped

    std::int64_t grid_len() const { return num_patches * patch_len; }
};

inline PatchGrid make_patch_grid(std::int64_t length, std::int64_t num_patches) {
    if (num_patches <= 0) throw ContractError("make_patch_grid: num_patches must be positive");
    if (length <= 0) throw ContractError("make_patch_grid: length must be positive");
    PatchGrid g;
    g.num_patches = num_patches;
    g.patch_len = std::max<std::int64_t>(1, std::llround(double(length) / double(num_patches)));
    const std::int64_t target = g.patch_len * num_patches;
    g.padded = target > length ? target - length : 0;
    g.truncated = target < length ? length - target : 0;
    return g;
}

// view (channels x L) -> (channels x P x T_W); contiguous non-overlapping
// slices, so concatenating patches reconstructs the (grid-adjusted) view.
inline std::vector<float> patchify(const std::vector<float>& view, std::int64_t channels,
                                   std::int64_t length, const PatchGrid& grid) {
    const std::int64_t gl = grid.grid_len();
    std::vector<float> out(static_cast<std::size_t>(channels * gl), 0.0f);
    const std::int64_t copy_len = std::min(length, gl);
    for (std::int64_t c = 0; c < channels; ++c)
        std::copy_n(view.begin() + c * length, copy_len, out.begin() + c * gl);
    return out;  // (P, T_W) factors of the contiguous row: index (c, p, w) = c*gl + p*T_W + w
}

inline std::vector<float> unpatchify(const std::vector<float>& patches, std::int64_t channels,
                                     const PatchGrid& grid) {
    if (static_cast<std::int64_t>(patches.size()) != channels * grid.grid_len())
        throw DimensionError("unpatchify: patch buffer does not match grid");
    return patches;  // contiguous layout: concatenation is the identity
}

// Z-score one channel row in place: (x - mean) / (std + 1e-8).
inline void zscore_row(float* x, std::int64_t n) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= double(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= double(n);
    const double denom = std::sqrt(var) + 1e-8;
    for (std::int64_t i = 0; i < n; ++i)
        x[i] = static_cast<float>((x[i] - mean) / denom);
}

// One segment's three views on a shared patch grid. Batches stack these.
struct MultiViewSegment {
    std::int64_t channels = 0;
    PatchGrid grid;
    // each: channels x P x T_W, row-major
    std::vector<float> potential;
    std::vector<float> magnitude;
    std::vector<float> phase;
};

// Batch of per-segment views; raw (un-normalized) on construction.
struct MultiViewBatch {
    std::int64_t batch = 0;
    std::int64_t channels = 0;
    PatchGrid grid;
    std::vector<float> potential;  // batch x channels x P x T_W
    std::vector<float> magnitude;
    std::vector<float> phase;

    std::int64_t view_size() const { return channels * grid.grid_len(); }
};

// Builds the three raw views of one segment on the shared patch grid.
inline MultiViewSegment build_views(const float* x, std::int64_t channels, std::int64_t samples,
                                    std::int64_t num_patches) {
    MultiViewSegment out;
    out.channels = channels;
    out.grid = make_patch_grid(samples, num_patches);

    std::vector<float> pot(x, x + channels * samples);
    const auto spec = fft_views(x, channels, samples);
    const auto mag = resample_rows(spec.magnitude, channels, spec.bins, samples);
    const auto phs = resample_rows(spec.phase, channels, spec.bins, samples);

    out.potential = patchify(pot, channels, samples, out.grid);
    out.magnitude = patchify(mag, channels, samples, out.grid);
    out.phase = patchify(phs, channels, samples, out.grid);
    return out;
}

inline MultiViewBatch build_view_batch(const float* segments, std::int64_t batch,
                                       std::int64_t channels, std::int64_t samples,
                                       std::int64_t num_patches) {
    MultiViewBatch out;
    out.batch = batch;
    out.channels = channels;
    out.grid = make_patch_grid(samples, num_patches);
    const std::int64_t vs = out.view_size();
    out.potential.resize(static_cast<std::size_t>(batch * vs));
    out.magnitude.resize(static_cast<std::size_t>(batch * vs));
    out.phase.resize(static_cast<std::size_t>(batch * vs));
    for (std::int64_t b = 0; b < batch; ++b) {
        auto seg = build_views(segments + b * channels * samples, channels, samples, num_patches);
        std::copy(seg.potential.begin(), seg.potential.end(), out.potential.begin() + b * vs);
        std::copy(seg.magnitude.begin(), seg.magnitude.end(), out.magnitude.begin() + b * vs);
        std::copy(seg.phase.begin(), seg.phase.end(), out.phase.begin() + b * vs);
    }
    return out;
}

// Z-scores every view independently per channel per segment.
inline MultiViewBatch& normalize_views(MultiViewBatch& batch) {
    const std::int64_t gl = batch.grid.grid_len();
    for (auto* view : {&batch.potential, &batch.magnitude, &batch.phase}) {
        for (std::int64_t b = 0; b < batch.batch; ++b) {
            for (std::int64_t c = 0; c < batch.channels; ++c) {
                zscore_row(view->data() + (b * batch.channels + c) * gl, gl);
            }
        }
    }
    return batch;
}

}  // namespace dlite::signal
