#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// Tensors are shared handles onto graph nodes. Every op rebuilds its piece
// of the tape on the fly; backward(loss) walks the graph in reverse
// topological order and accumulates gradients into every reachable node
// that requires them. There is no broadcasting: shapes must match exactly,
// and the few rank-polymorphic ops (softmax, layer_norm, mean,
// log_sum_exp) take an explicit axis.
//
// Storage is float32 throughout. Reductions and inner products accumulate
// in double, and scalar results keep their double value alongside the
// stored float so loss readouts do not lose precision.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlite/errors.hpp"
#include "dlite/rng.hpp"

namespace dlite {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated on first use, numel == value.size()
    bool requires_grad = false;
    bool has_hi = false;
    double hi = 0.0;  // double-precision mirror for scalar results
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

// Global (per-thread) autograd switch. Inference paths disable taping.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto node = std::make_shared<TensorNode>();
        node->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor full(Shape shape, float v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.data()) x = v;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
            throw DimensionError("from_data: " + std::to_string(data.size()) +
                                 " values do not fill shape " + shape_str(shape));
        }
        for (const float v : data) {
            if (!std::isfinite(v)) throw NumericError("from_data: non-finite input value");
        }
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        Tensor t = zeros({}, requires_grad);
        t.node_->value[0] = static_cast<float>(v);
        t.node_->has_hi = true;
        t.node_->hi = v;
        return t;
    }

    // Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    static Tensor init_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
        Tensor t = zeros(std::move(shape), true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
        for (auto& x : t.data()) x = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<float>& data() { return node_->value; }
    const std::vector<float>& data() const { return node_->value; }
    std::vector<float>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<float>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rq) { node_->requires_grad = rq; }

    float item() const {
        if (numel() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }
    // Double-precision scalar readout when the producing op kept one.
    double item_hi() const {
        if (numel() != 1) throw ContractError("item_hi: tensor is not scalar");
        return node_->has_hi ? node_->hi : static_cast<double>(node_->value[0]);
    }

    void zero_grad() {
        node_->grad.assign(node_->value.size(), 0.0f);
    }

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<float>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(op) + ": non-finite output at flat index " +
                               std::to_string(i));
        }
    }
}

inline Tensor make_op(Shape shape, const char* op, std::initializer_list<Tensor> parents) {
    auto node = std::make_shared<TensorNode>();
    node->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
    node->shape = std::move(shape);
    node->op = op;
    bool rq = false;
    for (const auto& p : parents) rq = rq || p.requires_grad();
    node->requires_grad = rq && grad_mode();
    if (node->requires_grad) {
        for (const auto& p : parents) node->parents.push_back(p.node());
    }
    return Tensor(std::move(node));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

// (outer, n, inner) decomposition for single-axis ops.
struct AxisSplit {
    std::int64_t outer, n, inner;
};

inline AxisSplit split_axis(const char* op, const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    Tensor out = detail::make_op(a.shape(), "add", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    detail::check_finite("add", ov);
    if (a.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = a.item_hi() + b.item_hi();
    }
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    Tensor out = detail::make_op(a.shape(), "sub", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    detail::check_finite("sub", ov);
    if (a.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = a.item_hi() - b.item_hi();
    }
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
            }
        };
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    Tensor out = detail::make_op(a.shape(), "mul", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::check_finite("mul", ov);
    if (a.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = a.item_hi() * b.item_hi();
    }
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
            }
        };
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = detail::make_op(a.shape(), "scale", {a});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = static_cast<float>(av[i] * c);
    detail::check_finite("scale", ov);
    if (a.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = a.item_hi() * c;
    }
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        out.node()->backprop = [an, c](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += static_cast<float>(self.grad[i] * c);
        };
    }
    return out;
}

// y[r, c] = x[r, c] + b[c]
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
        throw DimensionError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = detail::make_op(x.shape(), "add_bias", {x, b});
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] + bv[c];
    detail::check_finite("add_bias", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [xn, bn, rows, cols](TensorNode& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        bn->grad[c] += self.grad[r * cols + c];
            }
        };
    }
    return out;
}

// y[r, c] = x[r, c] * g[c]
inline Tensor mul_rowwise(const Tensor& x, const Tensor& g) {
    if (x.rank() != 2 || g.rank() != 1 || x.dim(1) != g.dim(0)) {
        throw DimensionError("mul_rowwise: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(g.shape()));
    }
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = detail::make_op(x.shape(), "mul_rowwise", {x, g});
    const auto& xv = x.data();
    const auto& gv = g.data();
    auto& ov = out.data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] * gv[c];
    detail::check_finite("mul_rowwise", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        TensorNode* gn = g.node().get();
        out.node()->backprop = [xn, gn, rows, cols](TensorNode& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        xn->grad[r * cols + c] += self.grad[r * cols + c] * gn->value[c];
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        gn->grad[c] += self.grad[r * cols + c] * xn->value[r * cols + c];
            }
        };
    }
    return out;
}

inline Tensor gelu(const Tensor& x) {
    Tensor out = detail::make_op(x.shape(), "gelu", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        ov[i] = static_cast<float>(v * cdf);
    }
    detail::check_finite("gelu", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn](TensorNode& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = xn->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
                const double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
                xn->grad[i] += static_cast<float>(self.grad[i] * (cdf + v * pdf));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel_of(new_shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape));
    }
    Tensor out = detail::make_op(std::move(new_shape), "reshape", {a});
    out.data() = a.data();
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        out.node()->backprop = [an](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        };
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(a.shape()));
    const std::int64_t r = a.dim(0), c = a.dim(1);
    Tensor out = detail::make_op({c, r}, "transpose", {a});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        out.node()->backprop = [an, r, c](TensorNode& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
        };
    }
    return out;
}

// Axis permutation for any rank. out[idx[perm[0]], ..., idx[perm[k]]] = a[idx].
inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    const std::size_t rank = a.rank();
    if (perm.size() != rank) throw ContractError("permute: perm size must equal rank");
    std::vector<bool> seen(rank, false);
    Shape new_shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        const int p = perm[d];
        if (p < 0 || p >= static_cast<int>(rank) || seen[p])
            throw ContractError("permute: invalid permutation");
        seen[p] = true;
        new_shape[d] = a.shape()[p];
    }
    // in_stride_for_out_dim[d]: stride in the source for output dimension d.
    std::vector<std::int64_t> in_strides(rank, 1);
    for (int d = static_cast<int>(rank) - 2; d >= 0; --d)
        in_strides[d] = in_strides[d + 1] * a.shape()[d + 1];
    std::vector<std::int64_t> map_stride(rank);
    for (std::size_t d = 0; d < rank; ++d) map_stride[d] = in_strides[perm[d]];

    Tensor out = detail::make_op(new_shape, "permute", {a});
    const auto& av = a.data();
    auto& ov = out.data();
    const std::int64_t n = a.numel();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t src = 0;
    for (std::int64_t flat = 0; flat < n; ++flat) {
        ov[flat] = av[src];
        // odometer increment over the output index, tracking the source offset
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
            src += map_stride[d];
            if (++idx[d] < new_shape[d]) break;
            src -= map_stride[d] * new_shape[d];
            idx[d] = 0;
        }
    }
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        out.node()->backprop = [an, new_shape, map_stride, rank, n](TensorNode& self) {
            an->ensure_grad();
            std::vector<std::int64_t> ix(rank, 0);
            std::int64_t s = 0;
            for (std::int64_t flat = 0; flat < n; ++flat) {
                an->grad[s] += self.grad[flat];
                for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
                    s += map_stride[d];
                    if (++ix[d] < new_shape[d]) break;
                    s -= map_stride[d] * new_shape[d];
                    ix[d] = 0;
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out = detail::make_op({n, m}, "matmul", {a, b});
    const float* A = a.data().data();
    const float* B = b.data().data();
    float* C = out.data().data();
    std::vector<double> acc(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = A + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const float* brow = B + l * m;
            for (std::int64_t j = 0; j < m; ++j) acc[j] += av * brow[j];
        }
        float* crow = C + i * m;
        for (std::int64_t j = 0; j < m; ++j) crow[j] = static_cast<float>(acc[j]);
    }
    detail::check_finite("matmul", out.data());
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn, n, k, m](TensorNode& self) {
            const float* G = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * B^T
                for (std::int64_t i = 0; i < n; ++i) {
                    const float* grow = G + i * m;
                    float* darow = an->grad.data() + i * k;
                    for (std::int64_t l = 0; l < k; ++l) {
                        const float* brow = bn->value.data() + l * m;
                        double s = 0.0;
                        for (std::int64_t j = 0; j < m; ++j) s += double(grow[j]) * brow[j];
                        darow[l] += static_cast<float>(s);
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * dC
                for (std::int64_t i = 0; i < n; ++i) {
                    const float* arow = an->value.data() + i * k;
                    const float* grow = G + i * m;
                    for (std::int64_t l = 0; l < k; ++l) {
                        const float av = arow[l];
                        float* dbrow = bn->grad.data() + l * m;
                        for (std::int64_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return out;
}

// C[g] = A[g] * B[g], with B optionally given as [G, m, k] (transposed layout).
inline Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
        throw DimensionError("batched_matmul: incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::int64_t G = a.dim(0), n = a.dim(1), k = a.dim(2);
    const std::int64_t m = trans_b ? b.dim(1) : b.dim(2);
    const std::int64_t bk = trans_b ? b.dim(2) : b.dim(1);
    if (bk != k) {
        throw DimensionError("batched_matmul: inner dimensions differ " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    Tensor out = detail::make_op({G, n, m}, "batched_matmul", {a, b});
    const float* A = a.data().data();
    const float* B = b.data().data();
    float* C = out.data().data();
    std::vector<double> acc(static_cast<std::size_t>(m));
    for (std::int64_t g = 0; g < G; ++g) {
        const float* Ag = A + g * n * k;
        const float* Bg = B + g * k * m;  // same size either layout
        float* Cg = C + g * n * m;
        for (std::int64_t i = 0; i < n; ++i) {
            const float* arow = Ag + i * k;
            if (trans_b) {
                for (std::int64_t j = 0; j < m; ++j) {
                    const float* brow = Bg + j * k;
                    double s = 0.0;
                    for (std::int64_t l = 0; l < k; ++l) s += double(arow[l]) * brow[l];
                    Cg[i * m + j] = static_cast<float>(s);
                }
            } else {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t l = 0; l < k; ++l) {
                    const double av = arow[l];
                    const float* brow = Bg + l * m;
                    for (std::int64_t j = 0; j < m; ++j) acc[j] += av * brow[j];
                }
                for (std::int64_t j = 0; j < m; ++j) Cg[i * m + j] = static_cast<float>(acc[j]);
            }
        }
    }
    detail::check_finite("batched_matmul", out.data());
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn, G, n, k, m, trans_b](TensorNode& self) {
            const float* Gr = self.grad.data();
            for (std::int64_t g = 0; g < G; ++g) {
                const float* dCg = Gr + g * n * m;
                const float* Ag = an->value.data() + g * n * k;
                const float* Bg = bn->value.data() + g * k * m;
                if (an->requires_grad) {
                    an->ensure_grad();
                    float* dAg = an->grad.data() + g * n * k;
                    for (std::int64_t i = 0; i < n; ++i) {
                        for (std::int64_t j = 0; j < m; ++j) {
                            const float gv = dCg[i * m + j];
                            if (trans_b) {
                                const float* brow = Bg + j * k;  // B[g, j, :]
                                for (std::int64_t l = 0; l < k; ++l) dAg[i * k + l] += gv * brow[l];
                            } else {
                                for (std::int64_t l = 0; l < k; ++l)
                                    dAg[i * k + l] += gv * Bg[l * m + j];
                            }
                        }
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    float* dBg = bn->grad.data() + g * k * m;
                    for (std::int64_t i = 0; i < n; ++i) {
                        const float* arow = Ag + i * k;
                        for (std::int64_t j = 0; j < m; ++j) {
                            const float gv = dCg[i * m + j];
                            if (trans_b) {
                                float* brow = dBg + j * k;  // dB[g, j, :]
                                for (std::int64_t l = 0; l < k; ++l) brow[l] += gv * arow[l];
                            } else {
                                for (std::int64_t l = 0; l < k; ++l)
                                    dBg[l * m + j] += gv * arow[l];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// 1-D convolution over the last axis: x [N, Cin, L] * w [Cout, Cin, K] + b [Cout]
// ---------------------------------------------------------------------------

inline std::int64_t conv1d_out_len(std::int64_t L, std::int64_t K, std::int64_t stride,
                                   std::int64_t pad) {
    return (L + 2 * pad - K) / stride + 1;
}

inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
                     std::int64_t pad) {
    if (x.rank() != 3 || w.rank() != 3 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
        w.dim(0) != b.dim(0)) {
        throw DimensionError("conv1d: incompatible shapes x=" + shape_str(x.shape()) +
                             " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    }
    if (stride < 1) throw ContractError("conv1d: stride must be positive");
    const std::int64_t N = x.dim(0), Ci = x.dim(1), L = x.dim(2);
    const std::int64_t Co = w.dim(0), K = w.dim(2);
    const std::int64_t Lo = conv1d_out_len(L, K, stride, pad);
    if (Lo < 1) throw DimensionError("conv1d: output length would be empty");
    Tensor out = detail::make_op({N, Co, Lo}, "conv1d", {x, w, b});
    const float* X = x.data().data();
    const float* W = w.data().data();
    const float* B = b.data().data();
    float* O = out.data().data();
    for (std::int64_t n = 0; n < N; ++n) {
        const float* xn = X + n * Ci * L;
        float* on = O + n * Co * Lo;
        for (std::int64_t co = 0; co < Co; ++co) {
            const float* wc = W + co * Ci * K;
            for (std::int64_t lo = 0; lo < Lo; ++lo) {
                double acc = B[co];
                const std::int64_t base = lo * stride - pad;
                for (std::int64_t ci = 0; ci < Ci; ++ci) {
                    const float* xr = xn + ci * L;
                    const float* wr = wc + ci * K;
                    for (std::int64_t t = 0; t < K; ++t) {
                        const std::int64_t li = base + t;
                        if (li >= 0 && li < L) acc += double(wr[t]) * xr[li];
                    }
                }
                on[co * Lo + lo] = static_cast<float>(acc);
            }
        }
    }
    detail::check_finite("conv1d", out.data());
    if (out.requires_grad()) {
        TensorNode* xn_ = x.node().get();
        TensorNode* wn = w.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [xn_, wn, bn, N, Ci, L, Co, K, Lo, stride, pad](TensorNode& self) {
            const bool need_x = xn_->requires_grad;
            const bool need_w = wn->requires_grad;
            const bool need_b = bn->requires_grad;
            if (need_x) xn_->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            const float* G = self.grad.data();
            for (std::int64_t n = 0; n < N; ++n) {
                const float* xrow = xn_->value.data() + n * Ci * L;
                float* dxrow = need_x ? xn_->grad.data() + n * Ci * L : nullptr;
                for (std::int64_t co = 0; co < Co; ++co) {
                    const float* wc = wn->value.data() + co * Ci * K;
                    float* dwc = need_w ? wn->grad.data() + co * Ci * K : nullptr;
                    for (std::int64_t lo = 0; lo < Lo; ++lo) {
                        const float g = G[(n * Co + co) * Lo + lo];
                        if (g == 0.0f) continue;
                        if (need_b) bn->grad[co] += g;
                        const std::int64_t base = lo * stride - pad;
                        for (std::int64_t ci = 0; ci < Ci; ++ci) {
                            for (std::int64_t t = 0; t < K; ++t) {
                                const std::int64_t li = base + t;
                                if (li < 0 || li >= L) continue;
                                if (need_x) dxrow[ci * L + li] += g * wc[ci * K + t];
                                if (need_w) dwc[ci * K + t] += g * xrow[ci * L + li];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalizations and reductions
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
    const auto s = detail::split_axis("softmax", x.shape(), axis);
    Tensor out = detail::make_op(x.shape(), "softmax", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            const std::int64_t off = o * s.n * s.inner + in;
            double mx = -1e300;
            for (std::int64_t i = 0; i < s.n; ++i)
                mx = std::max(mx, double(xv[off + i * s.inner]));
            double denom = 0.0;
            for (std::int64_t i = 0; i < s.n; ++i)
                denom += std::exp(double(xv[off + i * s.inner]) - mx);
            for (std::int64_t i = 0; i < s.n; ++i)
                ov[off + i * s.inner] =
                    static_cast<float>(std::exp(double(xv[off + i * s.inner]) - mx) / denom);
        }
    }
    detail::check_finite("softmax", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn, s](TensorNode& self) {
            xn->ensure_grad();
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t in = 0; in < s.inner; ++in) {
                    const std::int64_t off = o * s.n * s.inner + in;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < s.n; ++i) {
                        const std::int64_t ix = off + i * s.inner;
                        dot += double(self.grad[ix]) * self.value[ix];
                    }
                    for (std::int64_t i = 0; i < s.n; ++i) {
                        const std::int64_t ix = off + i * s.inner;
                        xn->grad[ix] += static_cast<float>(self.value[ix] *
                                                           (double(self.grad[ix]) - dot));
                    }
                }
            }
        };
    }
    return out;
}

// Zero-mean unit-variance along one axis; no affine part (compose with
// mul_rowwise/add_bias for learnable scale and shift).
inline Tensor layer_norm(const Tensor& x, int axis, double eps = 1e-5) {
    const auto s = detail::split_axis("layer_norm", x.shape(), axis);
    Tensor out = detail::make_op(x.shape(), "layer_norm", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    auto inv_sigma = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(s.outer * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            const std::int64_t off = o * s.n * s.inner + in;
            double mean = 0.0;
            for (std::int64_t i = 0; i < s.n; ++i) mean += xv[off + i * s.inner];
            mean /= double(s.n);
            double var = 0.0;
            for (std::int64_t i = 0; i < s.n; ++i) {
                const double d = double(xv[off + i * s.inner]) - mean;
                var += d * d;
            }
            var /= double(s.n);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_sigma)[o * s.inner + in] = is;
            for (std::int64_t i = 0; i < s.n; ++i)
                ov[off + i * s.inner] =
                    static_cast<float>((double(xv[off + i * s.inner]) - mean) * is);
        }
    }
    detail::check_finite("layer_norm", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn, s, inv_sigma](TensorNode& self) {
            xn->ensure_grad();
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t in = 0; in < s.inner; ++in) {
                    const std::int64_t off = o * s.n * s.inner + in;
                    const double is = (*inv_sigma)[o * s.inner + in];
                    double gmean = 0.0, gydot = 0.0;
                    for (std::int64_t i = 0; i < s.n; ++i) {
                        const std::int64_t ix = off + i * s.inner;
                        gmean += self.grad[ix];
                        gydot += double(self.grad[ix]) * self.value[ix];
                    }
                    gmean /= double(s.n);
                    gydot /= double(s.n);
                    for (std::int64_t i = 0; i < s.n; ++i) {
                        const std::int64_t ix = off + i * s.inner;
                        xn->grad[ix] += static_cast<float>(
                            is * (double(self.grad[ix]) - gmean - self.value[ix] * gydot));
                    }
                }
            }
        };
    }
    return out;
}

inline Tensor mean(const Tensor& x, int axis) {
    const auto s = detail::split_axis("mean", x.shape(), axis);
    Shape out_shape;
    for (std::size_t d = 0; d < x.rank(); ++d)
        if (static_cast<int>(d) != axis) out_shape.push_back(x.shape()[d]);
    Tensor out = detail::make_op(out_shape, "mean", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    double last_hi = 0.0;
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            double acc = 0.0;
            const std::int64_t off = o * s.n * s.inner + in;
            for (std::int64_t i = 0; i < s.n; ++i) acc += xv[off + i * s.inner];
            last_hi = acc / double(s.n);
            ov[o * s.inner + in] = static_cast<float>(last_hi);
        }
    }
    detail::check_finite("mean", ov);
    if (out.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = last_hi;
    }
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn, s](TensorNode& self) {
            xn->ensure_grad();
            const double inv = 1.0 / double(s.n);
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t in = 0; in < s.inner; ++in) {
                    const float g = static_cast<float>(self.grad[o * s.inner + in] * inv);
                    const std::int64_t off = o * s.n * s.inner + in;
                    for (std::int64_t i = 0; i < s.n; ++i) xn->grad[off + i * s.inner] += g;
                }
            }
        };
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    Tensor out = detail::make_op({}, "sum_all", {x});
    double acc = 0.0;
    for (const float v : x.data()) acc += v;
    out.data()[0] = static_cast<float>(acc);
    out.node()->has_hi = true;
    out.node()->hi = acc;
    detail::check_finite("sum_all", out.data());
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn](TensorNode& self) {
            xn->ensure_grad();
            const float g = self.grad[0];
            for (auto& gv : xn->grad) gv += g;
        };
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    Tensor out = detail::make_op({}, "mean_all", {x});
    double acc = 0.0;
    for (const float v : x.data()) acc += v;
    const double m = acc / double(x.numel());
    out.data()[0] = static_cast<float>(m);
    out.node()->has_hi = true;
    out.node()->hi = m;
    detail::check_finite("mean_all", out.data());
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        const double inv = 1.0 / double(x.numel());
        out.node()->backprop = [xn, inv](TensorNode& self) {
            xn->ensure_grad();
            const float g = static_cast<float>(self.grad[0] * inv);
            for (auto& gv : xn->grad) gv += g;
        };
    }
    return out;
}

// Mean squared error over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mse", a, b);
    Tensor out = detail::make_op({}, "mse", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = double(av[i]) - bv[i];
        acc += d * d;
    }
    const double m = acc / double(av.size());
    out.data()[0] = static_cast<float>(m);
    out.node()->has_hi = true;
    out.node()->hi = m;
    detail::check_finite("mse", out.data());
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        const double inv = 2.0 / double(av.size());
        out.node()->backprop = [an, bn, inv](TensorNode& self) {
            const double g = double(self.grad[0]) * inv;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->value.size(); ++i)
                    an->grad[i] += static_cast<float>(g * (double(an->value[i]) - bn->value[i]));
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < bn->value.size(); ++i)
                    bn->grad[i] -= static_cast<float>(g * (double(an->value[i]) - bn->value[i]));
            }
        };
    }
    return out;
}

namespace detail {
inline constexpr double kCosEps = 1e-12;
}

// Cosine similarity of two tensors viewed as flat vectors.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("cosine_similarity", a, b);
    Tensor out = detail::make_op({}, "cosine_similarity", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    constexpr double kEps = detail::kCosEps;
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        dot += double(av[i]) * bv[i];
        na2 += double(av[i]) * av[i];
        nb2 += double(bv[i]) * bv[i];
    }
    const double na = std::sqrt(na2 + kEps), nb = std::sqrt(nb2 + kEps);
    const double s = dot / (na * nb);
    out.data()[0] = static_cast<float>(s);
    out.node()->has_hi = true;
    out.node()->hi = s;
    detail::check_finite("cosine_similarity", out.data());
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        out.node()->backprop = [an, bn, dot, na2, nb2](TensorNode& self) {
            constexpr double kEps = detail::kCosEps;
            const double na = std::sqrt(na2 + kEps), nb = std::sqrt(nb2 + kEps);
            const double g = self.grad[0];
            if (an->requires_grad) {
                an->ensure_grad();
                const double c1 = 1.0 / (na * nb);
                const double c2 = dot / ((na2 + kEps) * na * nb);
                for (std::size_t i = 0; i < an->value.size(); ++i)
                    an->grad[i] +=
                        static_cast<float>(g * (c1 * bn->value[i] - c2 * an->value[i]));
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const double c1 = 1.0 / (na * nb);
                const double c2 = dot / ((nb2 + kEps) * na * nb);
                for (std::size_t i = 0; i < bn->value.size(); ++i)
                    bn->grad[i] +=
                        static_cast<float>(g * (c1 * an->value[i] - c2 * bn->value[i]));
            }
        };
    }
    return out;
}

inline Tensor log_sum_exp(const Tensor& x, int axis) {
    const auto s = detail::split_axis("log_sum_exp", x.shape(), axis);
    Shape out_shape;
    for (std::size_t d = 0; d < x.rank(); ++d)
        if (static_cast<int>(d) != axis) out_shape.push_back(x.shape()[d]);
    Tensor out = detail::make_op(out_shape, "log_sum_exp", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    double hi_val = 0.0;
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            const std::int64_t off = o * s.n * s.inner + in;
            double mx = -1e300;
            for (std::int64_t i = 0; i < s.n; ++i)
                mx = std::max(mx, double(xv[off + i * s.inner]));
            double acc = 0.0;
            for (std::int64_t i = 0; i < s.n; ++i)
                acc += std::exp(double(xv[off + i * s.inner]) - mx);
            const double v = mx + std::log(acc);
            ov[o * s.inner + in] = static_cast<float>(v);
            hi_val = v;
        }
    }
    detail::check_finite("log_sum_exp", ov);
    if (out.numel() == 1) {
        out.node()->has_hi = true;
        out.node()->hi = hi_val;
    }
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn, s](TensorNode& self) {
            xn->ensure_grad();
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t in = 0; in < s.inner; ++in) {
                    const std::int64_t off = o * s.n * s.inner + in;
                    const double y = self.value[o * s.inner + in];
                    const double g = self.grad[o * s.inner + in];
                    for (std::int64_t i = 0; i < s.n; ++i) {
                        const std::int64_t ix = off + i * s.inner;
                        xn->grad[ix] +=
                            static_cast<float>(g * std::exp(double(xn->value[ix]) - y));
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Row gather/scatter ops
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx) {
    if (a.rank() != 2) throw DimensionError("gather_rows: expected rank-2, got " + shape_str(a.shape()));
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    for (const auto i : idx) {
        if (i < 0 || i >= rows) throw ContractError("gather_rows: index out of range");
    }
    Tensor out = detail::make_op({static_cast<std::int64_t>(idx.size()), cols}, "gather_rows", {a});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(av.begin() + idx[k] * cols, cols, ov.begin() + k * cols);
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        auto ix = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
        out.node()->backprop = [an, ix, cols](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t k = 0; k < ix->size(); ++k) {
                const std::int64_t r = (*ix)[k];
                for (std::int64_t c = 0; c < cols; ++c)
                    an->grad[r * cols + c] += self.grad[k * cols + c];
            }
        };
    }
    return out;
}

// y[r, :] = x[r, :] + table[idx[r], :]   (embedding lookup fused with add)
inline Tensor add_rows_gather(const Tensor& x, const Tensor& table,
                              std::vector<std::int64_t> idx) {
    if (x.rank() != 2 || table.rank() != 2 || x.dim(1) != table.dim(1)) {
        throw DimensionError("add_rows_gather: incompatible shapes " + shape_str(x.shape()) +
                             " and " + shape_str(table.shape()));
    }
    if (static_cast<std::int64_t>(idx.size()) != x.dim(0))
        throw ContractError("add_rows_gather: index count must equal row count");
    const std::int64_t cols = x.dim(1), vocab = table.dim(0);
    for (const auto i : idx) {
        if (i < 0 || i >= vocab) throw ContractError("add_rows_gather: index out of range");
    }
    Tensor out = detail::make_op(x.shape(), "add_rows_gather", {x, table});
    const auto& xv = x.data();
    const auto& tv = table.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < cols; ++c)
            ov[r * cols + c] = xv[r * cols + c] + tv[idx[r] * cols + c];
    detail::check_finite("add_rows_gather", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        TensorNode* tn = table.node().get();
        auto ix = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
        out.node()->backprop = [xn, tn, ix, cols](TensorNode& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (std::size_t r = 0; r < ix->size(); ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        tn->grad[(*ix)[r] * cols + c] += self.grad[r * cols + c];
            }
        };
    }
    return out;
}

// Vertical concatenation of rank-2 tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::int64_t cols = parts[0].dim(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols)
            throw DimensionError("concat_rows: column counts differ");
        rows += p.dim(0);
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {rows, cols};
    node->value.resize(static_cast<std::size_t>(rows * cols));
    node->op = "concat_rows";
    bool rq = false;
    for (const auto& p : parts) rq = rq || p.requires_grad();
    node->requires_grad = rq && grad_mode();
    Tensor out(node);
    std::int64_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + at * cols);
        at += p.dim(0);
    }
    if (node->requires_grad) {
        std::vector<TensorNode*> raw;
        for (const auto& p : parts) {
            node->parents.push_back(p.node());
            raw.push_back(p.node().get());
        }
        node->backprop = [raw, cols](TensorNode& self) {
            std::int64_t at = 0;
            for (TensorNode* p : raw) {
                const std::int64_t pr = p->shape[0];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t i = 0; i < pr * cols; ++i)
                        p->grad[i] += self.grad[at * cols + i];
                }
                at += pr;
            }
        };
    }
    return out;
}

// Off-diagonal entries of a square matrix, row-major order.
inline Tensor offdiag(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw DimensionError("offdiag: expected square matrix, got " + shape_str(a.shape()));
    const std::int64_t n = a.dim(0);
    if (n < 2) throw ContractError("offdiag: need at least a 2x2 matrix");
    Tensor out = detail::make_op({n * (n - 1)}, "offdiag", {a});
    const auto& av = a.data();
    auto& ov = out.data();
    std::int64_t p = 0;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            if (i != j) ov[p++] = av[i * n + j];
    if (out.requires_grad()) {
        TensorNode* an = a.node().get();
        out.node()->backprop = [an, n](TensorNode& self) {
            an->ensure_grad();
            std::int64_t p = 0;
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    if (i != j) an->grad[i * n + j] += self.grad[p++];
        };
    }
    return out;
}

// L2-normalize each row: y = x / sqrt(sum(x^2) + eps).
inline Tensor row_normalize(const Tensor& x, double eps = 1e-12) {
    if (x.rank() != 2) throw DimensionError("row_normalize: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = detail::make_op(x.shape(), "row_normalize", {x});
    const auto& xv = x.data();
    auto& ov = out.data();
    auto r2s = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        double r2 = eps;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double v = xv[r * cols + c];
            r2 += v * v;
        }
        (*r2s)[r] = r2;
        const double inv = 1.0 / std::sqrt(r2);
        for (std::int64_t c = 0; c < cols; ++c)
            ov[r * cols + c] = static_cast<float>(xv[r * cols + c] * inv);
    }
    detail::check_finite("row_normalize", ov);
    if (out.requires_grad()) {
        TensorNode* xn = x.node().get();
        out.node()->backprop = [xn, r2s, rows, cols](TensorNode& self) {
            xn->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double r2 = (*r2s)[r];
                const double inv = 1.0 / std::sqrt(r2);
                double dot = 0.0;
                for (std::int64_t c = 0; c < cols; ++c)
                    dot += double(xn->value[r * cols + c]) * self.grad[r * cols + c];
                const double k = dot / (r2 * std::sqrt(r2));
                for (std::int64_t c = 0; c < cols; ++c)
                    xn->grad[r * cols + c] += static_cast<float>(
                        self.grad[r * cols + c] * inv - k * xn->value[r * cols + c]);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Populates gradients of every node reachable from `loss` that requires
// them. Gradients accumulate across repeated calls; zero them explicitly
// between steps.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // nothing reachable requires gradients

    // Iterative post-order DFS for the topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes start each pass fresh; only leaves accumulate across
    // repeated backward calls.
    for (TensorNode* node : order) {
        if (node->backprop) node->grad.assign(node->value.size(), 0.0f);
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace dlite
