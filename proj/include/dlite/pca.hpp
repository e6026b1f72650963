#pragma once

// Principal-component embedding of flattened segments. The covariance is
// accumulated incrementally in double precision (one chunk of rows at a
// time, no centered copy of the data), then the top-d eigenpairs come from
// block subspace iteration refined by a small Jacobi eigensolve. The sign
// of each component is fixed so its largest-magnitude entry is positive,
// which makes the embedding reproducible across runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dlite/errors.hpp"
#include "dlite/rng.hpp"

namespace dlite::distill {

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (double, n x n).
// Eigenvalues descending; eigenvectors are columns of V.
inline void jacobi_eigh(std::vector<double> a, std::int64_t n, std::vector<double>& eigvals,
                        std::vector<double>& eigvecs) {
    std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-26) break;
        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double vip = v[i * n + p], viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        if (a[x * n + x] != a[y * n + y]) return a[x * n + x] > a[y * n + y];
        return x < y;
    });
    eigvals.resize(static_cast<std::size_t>(n));
    eigvecs.assign(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
        eigvals[j] = a[order[j] * n + order[j]];
        for (std::int64_t i = 0; i < n; ++i) eigvecs[i * n + j] = v[i * n + order[j]];
    }
}

// Modified Gram-Schmidt on columns of B (rows x cols).
inline void orthonormalize_columns(std::vector<double>& b, std::int64_t rows,
                                   std::int64_t cols) {
    for (std::int64_t j = 0; j < cols; ++j) {
        for (std::int64_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < rows; ++i) dot += b[i * cols + k] * b[i * cols + j];
            for (std::int64_t i = 0; i < rows; ++i) b[i * cols + j] -= dot * b[i * cols + k];
        }
        double nrm = 0.0;
        for (std::int64_t i = 0; i < rows; ++i) nrm += b[i * cols + j] * b[i * cols + j];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-300) {
            // degenerate column: reset to a unit vector not already spanned
            for (std::int64_t i = 0; i < rows; ++i) b[i * cols + j] = (i == j % rows) ? 1.0 : 0.0;
            nrm = 1.0;
        }
        for (std::int64_t i = 0; i < rows; ++i) b[i * cols + j] /= nrm;
    }
}

}  // namespace detail

struct PcaModel {
    std::int64_t dims_in = 0;
    std::int64_t dims_out = 0;
    std::vector<double> mean;                // dims_in
    std::vector<double> components;          // dims_in x dims_out, column = component
    std::vector<double> explained_variance;  // dims_out, non-increasing
};

inline PcaModel pca_fit(const float* x, std::int64_t n, std::int64_t dims_in,
                        std::int64_t dims_out, std::int64_t chunk_rows = 256) {
    if (dims_out < 1 || dims_out > std::min(n, dims_in))
        throw ContractError("pca_fit: dims_out=" + std::to_string(dims_out) +
                            " out of range for n=" + std::to_string(n) +
                            ", dims_in=" + std::to_string(dims_in));
    PcaModel model;
    model.dims_in = dims_in;
    model.dims_out = dims_out;
    model.mean.assign(static_cast<std::size_t>(dims_in), 0.0);
    std::vector<double> gram(static_cast<std::size_t>(dims_in * dims_in), 0.0);

    // incremental accumulation: sum of rows and of outer products, one chunk
    // of rows at a time
    for (std::int64_t start = 0; start < n; start += chunk_rows) {
        const std::int64_t stop = std::min(n, start + chunk_rows);
        for (std::int64_t r = start; r < stop; ++r) {
            const float* row = x + r * dims_in;
            for (std::int64_t i = 0; i < dims_in; ++i) model.mean[i] += row[i];
            for (std::int64_t i = 0; i < dims_in; ++i) {
                const double xi = row[i];
                double* grow = gram.data() + i * dims_in;
                for (std::int64_t j = i; j < dims_in; ++j) grow[j] += xi * row[j];
            }
        }
    }
    for (auto& m : model.mean) m /= double(n);
    // covariance = E[xx^T] - mu mu^T
    for (std::int64_t i = 0; i < dims_in; ++i) {
        for (std::int64_t j = i; j < dims_in; ++j) {
            const double c = gram[i * dims_in + j] / double(n) - model.mean[i] * model.mean[j];
            gram[i * dims_in + j] = c;
            gram[j * dims_in + i] = c;
        }
    }

    // block subspace iteration on the covariance
    Rng rng(0x5A17ACE5EEDull);
    std::vector<double> basis(static_cast<std::size_t>(dims_in * dims_out));
    for (auto& v : basis) v = rng.uniform(-1.0, 1.0);
    detail::orthonormalize_columns(basis, dims_in, dims_out);

    std::vector<double> y(basis.size());
    std::vector<double> prev_ritz(static_cast<std::size_t>(dims_out), 0.0);
    for (int iter = 0; iter < 512; ++iter) {
        // y = cov * basis
        for (std::int64_t i = 0; i < dims_in; ++i) {
            const double* crow = gram.data() + i * dims_in;
            for (std::int64_t j = 0; j < dims_out; ++j) {
                double acc = 0.0;
                for (std::int64_t l = 0; l < dims_in; ++l) acc += crow[l] * basis[l * dims_out + j];
                y[i * dims_out + j] = acc;
            }
        }
        // Ritz values before orthonormalization: diag(B^T y)
        double drift = 0.0;
        for (std::int64_t j = 0; j < dims_out; ++j) {
            double r = 0.0;
            for (std::int64_t i = 0; i < dims_in; ++i) r += basis[i * dims_out + j] * y[i * dims_out + j];
            drift = std::max(drift, std::abs(r - prev_ritz[j]));
            prev_ritz[j] = r;
        }
        basis.swap(y);
        detail::orthonormalize_columns(basis, dims_in, dims_out);
        if (iter > 4 && drift < 1e-12 * (1.0 + std::abs(prev_ritz[0]))) break;
    }

    // Rayleigh-Ritz rotation: eigendecompose B^T Cov B
    std::vector<double> small(static_cast<std::size_t>(dims_out * dims_out), 0.0);
    std::vector<double> cb(static_cast<std::size_t>(dims_in * dims_out), 0.0);
    for (std::int64_t i = 0; i < dims_in; ++i) {
        const double* crow = gram.data() + i * dims_in;
        for (std::int64_t j = 0; j < dims_out; ++j) {
            double acc = 0.0;
            for (std::int64_t l = 0; l < dims_in; ++l) acc += crow[l] * basis[l * dims_out + j];
            cb[i * dims_out + j] = acc;
        }
    }
    for (std::int64_t a = 0; a < dims_out; ++a)
        for (std::int64_t b = 0; b < dims_out; ++b) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < dims_in; ++i)
                acc += basis[i * dims_out + a] * cb[i * dims_out + b];
            small[a * dims_out + b] = acc;
        }
    std::vector<double> ritz_vals, ritz_vecs;
    detail::jacobi_eigh(small, dims_out, ritz_vals, ritz_vecs);

    model.components.assign(static_cast<std::size_t>(dims_in * dims_out), 0.0);
    for (std::int64_t i = 0; i < dims_in; ++i)
        for (std::int64_t j = 0; j < dims_out; ++j) {
            double acc = 0.0;
            for (std::int64_t l = 0; l < dims_out; ++l)
                acc += basis[i * dims_out + l] * ritz_vecs[l * dims_out + j];
            model.components[i * dims_out + j] = acc;
        }
    model.explained_variance = std::move(ritz_vals);

    // sign convention: largest-magnitude entry of each component positive
    for (std::int64_t j = 0; j < dims_out; ++j) {
        std::int64_t arg = 0;
        double best = -1.0;
        for (std::int64_t i = 0; i < dims_in; ++i) {
            const double m = std::abs(model.components[i * dims_out + j]);
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        if (model.components[arg * dims_out + j] < 0.0)
            for (std::int64_t i = 0; i < dims_in; ++i) model.components[i * dims_out + j] *= -1.0;
    }
    return model;
}

// Projects rows onto the fitted components: Z = (X - mean) * components.
inline std::vector<float> pca_transform(const PcaModel& model, const float* x, std::int64_t n) {
    std::vector<float> z(static_cast<std::size_t>(n * model.dims_out));
    for (std::int64_t r = 0; r < n; ++r) {
        const float* row = x + r * model.dims_in;
        for (std::int64_t j = 0; j < model.dims_out; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < model.dims_in; ++i)
                acc += (double(row[i]) - model.mean[i]) * model.components[i * model.dims_out + j];
            z[r * model.dims_out + j] = static_cast<float>(acc);
        }
    }
    return z;
}

// Back-projection for reconstruction checks: X' = mean + Z * components^T.
inline std::vector<double> pca_reconstruct(const PcaModel& model, const float* z,
                                           std::int64_t n) {
    std::vector<double> x(static_cast<std::size_t>(n * model.dims_in));
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t i = 0; i < model.dims_in; ++i) {
            double acc = model.mean[i];
            for (std::int64_t j = 0; j < model.dims_out; ++j)
                acc += double(z[r * model.dims_out + j]) * model.components[i * model.dims_out + j];
            x[r * model.dims_in + i] = acc;
        }
    }
    return x;
}

}  // namespace dlite::distill
