#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dlite/optim.hpp"
#include "dlite/tensor.hpp"
#include "support/test_util.hpp"

using namespace dlite;
using testutil::random_tensor;

TEST_CASE("adam defaults are the canonical constants") {
    AdamState s;
    CHECK(s.beta1 == 0.9f);
    CHECK(s.beta2 == 0.999f);
    CHECK(s.eps == 1e-8f);
}

TEST_CASE("zero gradient leaves parameters unchanged and increments step") {
    std::vector<Tensor> params = {Tensor::full({3}, 1.5f, true)};
    params[0].zero_grad();
    AdamState state = AdamState::for_params(params, 0.001f);
    adam_step(params, state);
    CHECK(state.step == 1);
    for (const float v : params[0].data()) CHECK(v == 1.5f);
}

TEST_CASE("first adam step with unit gradient moves by about -lr") {
    std::vector<Tensor> params = {Tensor::full({}, 0.0f, true)};
    params[0].grad()[0] = 1.0f;
    AdamState state = AdamState::for_params(params, 0.001f);
    adam_step(params, state);
    CHECK(double(params[0].data()[0]) == Catch::Approx(-0.001).margin(1e-7));
}

TEST_CASE("adam held at constant unit gradient keeps stepping down") {
    std::vector<Tensor> params = {Tensor::full({}, 0.0f, true)};
    AdamState state = AdamState::for_params(params, 0.001f);
    float prev = 0.0f;
    for (int i = 0; i < 10; ++i) {
        params[0].grad()[0] = 1.0f;
        adam_step(params, state);
        CHECK(params[0].data()[0] < prev);
        prev = params[0].data()[0];
    }
    CHECK(state.step == 10);
}

TEST_CASE("gradient clipping") {
    SECTION("norm 10 clipped to 5") {
        std::vector<Tensor> params = {Tensor::full({4}, 0.0f, true)};
        for (auto& g : params[0].grad()) g = 5.0f;  // norm = 10
        const double before = clip_grad_norm(params, 5.0);
        CHECK(before == Catch::Approx(10.0));
        CHECK(grad_global_norm(params) == Catch::Approx(5.0).margin(1e-6));
    }
    SECTION("norm 3 untouched") {
        std::vector<Tensor> params = {Tensor::full({9}, 0.0f, true)};
        for (auto& g : params[0].grad()) g = 1.0f;  // norm = 3
        clip_grad_norm(params, 5.0);
        for (const float g : params[0].grad()) CHECK(g == 1.0f);
    }
    SECTION("clipped norm never exceeds the bound on random gradients") {
        Rng rng(99);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<Tensor> params = {random_tensor({5}, rng, true, 0.0),
                                          random_tensor({3, 2}, rng, true, 0.0)};
            for (auto& p : params)
                for (auto& g : p.grad()) g = static_cast<float>(rng.normal(0.0, 4.0));
            const double max_norm = 0.5 + 10.0 * rng.uniform();
            clip_grad_norm(params, max_norm);
            CHECK(grad_global_norm(params) <= max_norm + 1e-6);
        }
    }
    SECTION("non-positive max_norm is a contract error") {
        std::vector<Tensor> params = {Tensor::full({2}, 0.0f, true)};
        CHECK_THROWS_AS(clip_grad_norm(params, 0.0), ContractError);
    }
}

TEST_CASE("learning-rate schedule halves every 10 epochs") {
    CHECK(lr_schedule(0, 0.001) == Catch::Approx(0.001));
    CHECK(lr_schedule(9, 0.001) == Catch::Approx(0.001));
    CHECK(lr_schedule(10, 0.001) == Catch::Approx(0.0005));
    CHECK(lr_schedule(25, 0.001) == Catch::Approx(0.00025));
    CHECK_THROWS_AS(lr_schedule(-1, 0.001), ContractError);
}

TEST_CASE("adam updates are bit-deterministic") {
    auto run = [] {
        Rng rng(2024);
        std::vector<Tensor> params = {random_tensor({4, 4}, rng, true)};
        AdamState state = AdamState::for_params(params, 0.01f);
        for (int i = 0; i < 20; ++i) {
            for (auto& g : params[0].grad()) g = static_cast<float>(rng.normal());
            clip_grad_norm(params, 5.0);
            adam_step(params, state);
        }
        return params[0].data();
    };
    CHECK(run() == run());
}
