#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dlite/tensor.hpp"
#include "support/fd_check.hpp"
#include "support/test_util.hpp"

using namespace dlite;
using testutil::random_tensor;

namespace {

template <typename F>
void expect_grad_ok(std::vector<Tensor> params, F&& make_loss,
                    const fdcheck::Options& opt = {}) {
    const auto report = fdcheck::check_gradients(std::move(params), std::forward<F>(make_loss), opt);
    INFO(report.summary());
    CHECK(report.ok());
}

}  // namespace

TEST_CASE("shape checks surface the offending shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
    CHECK_THROWS_AS(reshape(a, {4, 2}), DimensionError);
    CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2x3]"));
}

TEST_CASE("non-finite values are rejected") {
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0f, std::nanf("")}), NumericError);
    Tensor big = Tensor::full({2}, 3e38f);
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("trivial identities") {
    Rng rng(11);
    Tensor v = random_tensor({5}, rng, false);
    CHECK(cosine_similarity(v, v).item() == Catch::Approx(1.0).margin(1e-6));
    CHECK(mse(v, v).item() == 0.0f);

    Tensor z = Tensor::zeros({3});
    const auto s = softmax(z, 0);
    for (const float p : s.data()) CHECK(p == Catch::Approx(1.0 / 3.0).margin(1e-7));
}

TEST_CASE("backward basics") {
    SECTION("loss independent of a parameter leaves its gradient zero") {
        Tensor p = Tensor::full({3}, 2.0f, true);
        Tensor q = Tensor::full({3}, 1.0f, true);
        Tensor loss = sum_all(q);
        backward(loss);
        for (const float g : p.grad()) CHECK(g == 0.0f);
        for (const float g : q.grad()) CHECK(g == 1.0f);
    }
    SECTION("sum gradient is all ones") {
        Tensor p = Tensor::full({2, 4}, 0.5f, true);
        backward(sum_all(p));
        for (const float g : p.grad()) CHECK(g == 1.0f);
    }
    SECTION("non-scalar loss is a contract error") {
        Tensor p = Tensor::full({2}, 1.0f, true);
        CHECK_THROWS_AS(backward(scale(p, 2.0)), ContractError);
    }
    SECTION("repeated backward accumulates") {
        Tensor p = Tensor::full({2}, 1.0f, true);
        Tensor loss = sum_all(p);
        backward(loss);
        backward(loss);
        for (const float g : p.grad()) CHECK(g == 2.0f);
    }
}

TEST_CASE("matmul gradient matches central differences at h=1e-3") {
    Rng rng(42);
    Tensor w = random_tensor({3, 4}, rng, true);
    Tensor x = random_tensor({4, 2}, rng, false);
    Tensor y = random_tensor({3, 2}, rng, false);
    fdcheck::Options opt;
    opt.h = 1e-3;
    opt.rel_tol = 1e-4;
    expect_grad_ok({w}, [&] { return mse(matmul(w, x), y); }, opt);
}

// Every differentiable op against the finite-difference oracle on small
// random tensors.
TEST_CASE("per-op finite-difference checks") {
    Rng rng(7);
    fdcheck::Options opt;
    opt.h = 1e-3;
    opt.rel_tol = 1e-4;

    SECTION("add/sub/mul/scale") {
        Tensor a = random_tensor({3, 4}, rng, true);
        Tensor b = random_tensor({3, 4}, rng, true);
        Tensor t = random_tensor({3, 4}, rng, false);
        expect_grad_ok({a, b}, [&] { return mse(add(a, b), t); }, opt);
        expect_grad_ok({a, b}, [&] { return mse(sub(a, b), t); }, opt);
        expect_grad_ok({a, b}, [&] { return mse(mul(a, b), t); }, opt);
        expect_grad_ok({a}, [&] { return mse(scale(a, 1.7), t); }, opt);
    }
    SECTION("add_bias/mul_rowwise") {
        Tensor x = random_tensor({4, 3}, rng, true);
        Tensor b = random_tensor({3}, rng, true);
        Tensor t = random_tensor({4, 3}, rng, false);
        expect_grad_ok({x, b}, [&] { return mse(add_bias(x, b), t); }, opt);
        expect_grad_ok({x, b}, [&] { return mse(mul_rowwise(x, b), t); }, opt);
    }
    SECTION("matmul both operands") {
        Tensor a = random_tensor({3, 5}, rng, true);
        Tensor b = random_tensor({5, 2}, rng, true);
        Tensor t = random_tensor({3, 2}, rng, false);
        expect_grad_ok({a, b}, [&] { return mse(matmul(a, b), t); }, opt);
    }
    SECTION("batched_matmul plain and transposed") {
        Tensor a = random_tensor({2, 3, 4}, rng, true);
        Tensor b = random_tensor({2, 4, 3}, rng, true);
        Tensor t = random_tensor({2, 3, 3}, rng, false);
        expect_grad_ok({a, b}, [&] { return mse(batched_matmul(a, b), t); }, opt);
        Tensor bt = random_tensor({2, 3, 4}, rng, true);
        expect_grad_ok({a, bt},
                                 [&] { return mse(batched_matmul(a, bt, true), t); }, opt);
    }
    SECTION("transpose/reshape/permute") {
        Tensor a = random_tensor({3, 4}, rng, true);
        Tensor t = random_tensor({4, 3}, rng, false);
        expect_grad_ok({a}, [&] { return mse(transpose(a), t); }, opt);
        Tensor t2 = random_tensor({2, 6}, rng, false);
        expect_grad_ok({a}, [&] { return mse(reshape(a, {2, 6}), t2); }, opt);
        Tensor b = random_tensor({2, 3, 4, 2}, rng, true);
        Tensor t3 = random_tensor({2, 4, 3, 2}, rng, false);
        expect_grad_ok({b},
                                 [&] { return mse(permute(b, {0, 2, 1, 3}), t3); }, opt);
    }
    SECTION("conv1d") {
        Tensor x = random_tensor({2, 3, 8}, rng, true);
        Tensor w = random_tensor({4, 3, 5}, rng, true);
        Tensor b = random_tensor({4}, rng, true);
        Tensor t = random_tensor({2, 4, 4}, rng, false);
        // loss is quadratic in every operand, so a larger step costs no
        // truncation and averages away float32 rounding
        auto copt = opt;
        copt.h = 1e-2;
        expect_grad_ok({x, w, b},
                                 [&] { return mse(conv1d(x, w, b, 2, 2), t); }, copt);
    }
    SECTION("gelu") {
        Tensor x = random_tensor({4, 4}, rng, true, 2.0);
        Tensor t = random_tensor({4, 4}, rng, false);
        expect_grad_ok({x}, [&] { return mse(gelu(x), t); }, opt);
    }
    SECTION("softmax over each axis") {
        Tensor x = random_tensor({3, 5}, rng, true, 2.0);
        Tensor t = random_tensor({3, 5}, rng, false);
        expect_grad_ok({x}, [&] { return mse(softmax(x, 0), t); }, opt);
        expect_grad_ok({x}, [&] { return mse(softmax(x, 1), t); }, opt);
    }
    SECTION("layer_norm") {
        Tensor x = random_tensor({4, 6}, rng, true, 2.0);
        Tensor t = random_tensor({4, 6}, rng, false);
        expect_grad_ok({x}, [&] { return mse(layer_norm(x, 1), t); }, opt);
    }
    SECTION("mean / mean_all / sum_all") {
        Tensor x = random_tensor({3, 4, 2}, rng, true);
        Tensor t = random_tensor({3, 2}, rng, false);
        expect_grad_ok({x}, [&] { return mse(mean(x, 1), t); }, opt);
        expect_grad_ok({x}, [&] { return mean_all(x); }, opt);
        expect_grad_ok({x}, [&] { return scale(sum_all(x), 0.25); }, opt);
    }
    SECTION("mse both operands") {
        Tensor a = random_tensor({3, 3}, rng, true);
        Tensor b = random_tensor({3, 3}, rng, true);
        expect_grad_ok({a, b}, [&] { return mse(a, b); }, opt);
    }
    SECTION("cosine_similarity") {
        Tensor a = random_tensor({6}, rng, true);
        Tensor b = random_tensor({6}, rng, true);
        expect_grad_ok({a, b}, [&] { return cosine_similarity(a, b); }, opt);
    }
    SECTION("log_sum_exp") {
        Tensor x = random_tensor({7}, rng, true, 2.0);
        expect_grad_ok({x}, [&] { return log_sum_exp(x, 0); }, opt);
        Tensor y = random_tensor({3, 4}, rng, true, 2.0);
        Tensor t = random_tensor({3}, rng, false);
        // composed case: the float32-rounded intermediate calls for a wider step
        auto lopt = opt;
        lopt.h = 1e-2;
        expect_grad_ok({y}, [&] { return mse(log_sum_exp(y, 1), t); }, lopt);
    }
    SECTION("gather_rows / add_rows_gather / concat_rows / offdiag / row_normalize") {
        Tensor x = random_tensor({4, 3}, rng, true);
        Tensor t = random_tensor({3, 3}, rng, false);
        expect_grad_ok({x},
                                 [&] { return mse(gather_rows(x, {2, 0, 2}), t); }, opt);
        Tensor table = random_tensor({5, 3}, rng, true);
        Tensor t4 = random_tensor({4, 3}, rng, false);
        expect_grad_ok(
            {x, table}, [&] { return mse(add_rows_gather(x, table, {1, 4, 0, 1}), t4); }, opt);
        Tensor y = random_tensor({2, 3}, rng, true);
        Tensor t5 = random_tensor({6, 3}, rng, false);
        expect_grad_ok(
            {x, y}, [&] { return mse(concat_rows({x, y}), t5); }, opt);
        Tensor sq = random_tensor({3, 3}, rng, true);
        Tensor t6 = random_tensor({6}, rng, false);
        expect_grad_ok({sq}, [&] { return mse(offdiag(sq), t6); }, opt);
        Tensor rn = random_tensor({3, 4}, rng, true);
        Tensor t7 = random_tensor({3, 4}, rng, false);
        expect_grad_ok({rn}, [&] { return mse(row_normalize(rn), t7); }, opt);
    }
}

// Composition oracle: a 2-layer network whose gradients are also derived by
// hand with plain double arithmetic.
TEST_CASE("autodiff matches the hand-written chain rule on a 2-layer net") {
    Rng rng(123);
    const std::int64_t in = 3, hid = 4, out_d = 2;
    Tensor w1 = random_tensor({in, hid}, rng, true);
    Tensor w2 = random_tensor({hid, out_d}, rng, true);
    Tensor x = random_tensor({1, in}, rng, false);
    Tensor y = random_tensor({1, out_d}, rng, false);

    Tensor h_pre = matmul(x, w1);
    Tensor h = gelu(h_pre);
    Tensor yhat = matmul(h, w2);
    Tensor loss = mse(yhat, y);
    backward(loss);

    // forward in double
    std::vector<double> hp(hid), hv(hid), yh(out_d);
    for (std::int64_t j = 0; j < hid; ++j) {
        double a = 0.0;
        for (std::int64_t i = 0; i < in; ++i) a += double(x.data()[i]) * w1.data()[i * hid + j];
        hp[j] = a;
        hv[j] = a * 0.5 * (1.0 + std::erf(a * 0.7071067811865475244));
    }
    for (std::int64_t k = 0; k < out_d; ++k) {
        double a = 0.0;
        for (std::int64_t j = 0; j < hid; ++j) a += hv[j] * w2.data()[j * out_d + k];
        yh[k] = a;
    }
    // chain rule: dL/dyhat -> dW2, dh -> dhp -> dW1
    std::vector<double> dy(out_d), dh(hid, 0.0), dhp(hid);
    for (std::int64_t k = 0; k < out_d; ++k) dy[k] = 2.0 * (yh[k] - y.data()[k]) / double(out_d);
    for (std::int64_t j = 0; j < hid; ++j)
        for (std::int64_t k = 0; k < out_d; ++k) {
            const double dw2 = hv[j] * dy[k];
            CHECK(double(w2.grad()[j * out_d + k]) == Catch::Approx(dw2).margin(1e-5));
            dh[j] += w2.data()[j * out_d + k] * dy[k];
        }
    for (std::int64_t j = 0; j < hid; ++j) {
        const double v = hp[j];
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        const double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
        dhp[j] = dh[j] * (cdf + v * pdf);
    }
    for (std::int64_t i = 0; i < in; ++i)
        for (std::int64_t j = 0; j < hid; ++j) {
            const double dw1 = double(x.data()[i]) * dhp[j];
            CHECK(double(w1.grad()[i * hid + j]) == Catch::Approx(dw1).margin(1e-5));
        }
}

TEST_CASE("inference mode records no tape") {
    Tensor p = Tensor::full({2, 2}, 1.0f, true);
    NoGradGuard ng;
    Tensor out = matmul(p, p);
    CHECK_FALSE(out.requires_grad());
    CHECK(out.node()->parents.empty());
}

TEST_CASE("structural op values") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor at = transpose(a);
    CHECK(at.data() == std::vector<float>{1, 4, 2, 5, 3, 6});

    const Tensor p = permute(reshape(a, {1, 2, 3}), {1, 0, 2});
    CHECK(p.shape() == Shape{2, 1, 3});
    CHECK(p.data() == a.data());

    const Tensor g = gather_rows(a, {1, 1});
    CHECK(g.data() == std::vector<float>{4, 5, 6, 4, 5, 6});

    const Tensor od = offdiag(Tensor::from_data({2, 2}, {1, 2, 3, 4}));
    CHECK(od.data() == std::vector<float>{2, 3});
}
