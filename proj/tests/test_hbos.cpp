#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dlite/hbos.hpp"
#include "dlite/rng.hpp"

using namespace dlite;
using namespace dlite::distill;

TEST_CASE("uniform data gives near-flat normalized heights") {
    Rng rng(1);
    const std::int64_t n = 10000, d = 2, bins = 10;
    std::vector<float> z(n * d);
    for (auto& v : z) v = static_cast<float>(rng.uniform());
    const auto model = fit_histograms(z, n, d, bins);
    for (std::int64_t dim = 0; dim < d; ++dim)
        for (const double h : model.heights[dim]) CHECK(h == Catch::Approx(1.0).margin(0.3));
}

TEST_CASE("constant dimension scores density one everywhere") {
    const std::int64_t n = 6, d = 2;
    std::vector<float> z(n * d);
    for (std::int64_t i = 0; i < n; ++i) {
        z[i * d + 0] = 4.2f;  // constant
        z[i * d + 1] = static_cast<float>(i);
    }
    const auto model = fit_histograms(z, n, d, 3);
    CHECK(model.heights[0].size() == 1);
    for (std::int64_t i = 0; i < n; ++i)
        CHECK(histogram_density(model, 0, z[i * d]) == 1.0);
}

TEST_CASE("default bin count follows the square-root rule") {
    CHECK(default_bins(100) == 10);
    CHECK(default_bins(10000) == 100);
    CHECK(default_bins(2) == 1);
}

TEST_CASE("max-density point scores approximately -d*alpha") {
    Rng rng(3);
    const std::int64_t n = 500, d = 4;
    std::vector<float> z(n * d);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    // plant one point at zero; with normal data the middle bin is the mode
    for (std::int64_t dim = 0; dim < d; ++dim) z[dim] = 0.0f;
    const double alpha = 1e-6;
    const auto model = fit_histograms(z, n, d, 5, alpha);
    const auto scores = score_ood(z, n, d, model);
    const double expected = d * std::log(1.0 / (1.0 + alpha));
    CHECK(scores.scores[0] == Catch::Approx(expected).margin(1e-9));
    CHECK(std::abs(scores.scores[0]) < 1e-4);
}

// Hand-built 2-D instance: densities are recomputed with independent
// double-precision arithmetic straight from the score formula.
TEST_CASE("eight-point hand instance matches the exact formula") {
    const std::int64_t n = 8, d = 2;
    const std::vector<float> z = {
        0.5f, 10.5f, 1.5f, 11.5f, 1.6f, 11.6f, 2.5f, 12.5f,
        2.6f, 12.6f, 2.7f, 12.7f, 5.0f, 15.0f, 7.9f, 17.9f,
    };
    const double alpha = 1e-6;
    const std::int64_t bins = 4;
    const auto model = fit_histograms(z, n, d, bins, alpha);
    const auto scores = score_ood(z, n, d, model);

    for (std::int64_t i = 0; i < n; ++i) {
        double expected = 0.0;
        for (std::int64_t dim = 0; dim < d; ++dim) {
            double lo = z[dim], hi = z[dim];
            for (std::int64_t r = 0; r < n; ++r) {
                lo = std::min(lo, double(z[r * d + dim]));
                hi = std::max(hi, double(z[r * d + dim]));
            }
            const double width = (hi - lo) / double(bins);
            std::vector<double> counts(bins, 0.0);
            for (std::int64_t r = 0; r < n; ++r) {
                auto b = static_cast<std::int64_t>((double(z[r * d + dim]) - lo) / width);
                b = std::clamp<std::int64_t>(b, 0, bins - 1);
                counts[b] += 1.0;
            }
            const double peak = *std::max_element(counts.begin(), counts.end());
            auto b = static_cast<std::int64_t>((double(z[i * d + dim]) - lo) / width);
            b = std::clamp<std::int64_t>(b, 0, bins - 1);
            expected += std::log(1.0 / (counts[b] / peak + alpha));
        }
        CHECK(scores.scores[i] == expected);  // same arithmetic, bit for bit
    }
}

TEST_CASE("an injected far outlier ranks first") {
    Rng rng(17);
    const std::int64_t n = 1000, d = 8;
    std::vector<float> z(n * d);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const std::int64_t planted = 137;
    for (std::int64_t dim = 0; dim < d; ++dim)
        z[planted * d + dim] = static_cast<float>(8.0 + rng.uniform());
    const auto model = fit_histograms(z, n, d, default_bins(n));
    const auto scores = score_ood(z, n, d, model);
    CHECK(scores.ranking[0] == planted);
}

TEST_CASE("lowering a bin density strictly raises the score") {
    const std::vector<float> z = {0.1f,  0.0f, 0.1f,  0.0f, 0.15f, 0.0f,
                                  0.9f,  0.0f, 0.12f, 1.0f, 0.13f, 2.0f};
    const std::int64_t n = 6, d = 2;
    const auto model = fit_histograms(z, n, d, 2);
    const auto scores = score_ood(z, n, d, model);
    // row 3 sits in the sparse right bin of dim 0; row 0 in the dense left bin
    CHECK(scores.scores[3] > scores.scores[0]);
}

TEST_CASE("scoring clamps out-of-range values to the edge bins") {
    const std::vector<float> z = {0.0f, 1.0f, 2.0f, 3.0f};
    const auto model = fit_histograms(z, 4, 1, 2);
    const std::vector<float> probe = {-100.0f, 100.0f};
    const auto scores = score_ood(probe, 2, 1, model);
    CHECK(std::isfinite(scores.scores[0]));
    CHECK(std::isfinite(scores.scores[1]));
    CHECK(histogram_density(model, 0, -100.0) == model.heights[0].front());
    CHECK(histogram_density(model, 0, 100.0) == model.heights[0].back());
}

TEST_CASE("ranking breaks score ties by ascending index") {
    const std::vector<float> z = {1.0f, 1.0f, 5.0f, 5.0f};
    const auto model = fit_histograms(z, 4, 1, 2);
    const auto scores = score_ood(z, 4, 1, model);
    CHECK(scores.scores[0] == scores.scores[1]);
    for (std::size_t i = 0; i + 1 < scores.ranking.size(); ++i) {
        if (scores.scores[scores.ranking[i]] == scores.scores[scores.ranking[i + 1]])
            CHECK(scores.ranking[i] < scores.ranking[i + 1]);
    }
}

TEST_CASE("remove_outliers arithmetic") {
    Rng rng(23);
    const std::int64_t n = 1000;
    std::vector<float> z(n);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const auto model = fit_histograms(z, n, 1, 10);
    const auto scores = score_ood(z, n, 1, model);

    SECTION("tau = 0 keeps everything") {
        CHECK(remove_outliers(scores, 0.0).size() == 1000);
    }
    SECTION("tau = 1% of 1000 keeps exactly 990") {
        CHECK(remove_outliers(scores, 1.0).size() == 990);
    }
    SECTION("tau = 0.05% rounds up to one removal") {
        CHECK(remove_outliers(scores, 0.05).size() == 999);
    }
    SECTION("kept indices come back sorted and free of the top scorers") {
        const auto kept = remove_outliers(scores, 1.0);
        CHECK(std::is_sorted(kept.begin(), kept.end()));
        for (std::int64_t r = 0; r < 10; ++r)
            CHECK(std::find(kept.begin(), kept.end(), scores.ranking[r]) == kept.end());
    }
    SECTION("tau out of range is a contract error") {
        CHECK_THROWS_AS(remove_outliers(scores, 100.0), ContractError);
        CHECK_THROWS_AS(remove_outliers(scores, -0.1), ContractError);
    }
}

TEST_CASE("fit contract errors") {
    std::vector<float> z = {1.0f};
    CHECK_THROWS_AS(fit_histograms(z, 1, 1, 4), ContractError);
    std::vector<float> z2 = {1.0f, 2.0f};
    CHECK_THROWS_AS(fit_histograms(z2, 2, 1, 0), ContractError);
}

TEST_CASE("density normalization mode integrates to one") {
    Rng rng(31);
    const std::int64_t n = 2000;
    std::vector<float> z(n);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const auto model = fit_histograms(z, n, 1, 20, 1e-6, HistNorm::kDensity);
    const auto& edges = model.bin_edges[0];
    double integral = 0.0;
    for (std::size_t b = 0; b < model.heights[0].size(); ++b)
        integral += model.heights[0][b] * (edges[b + 1] - edges[b]);
    CHECK(integral == Catch::Approx(1.0).margin(1e-9));
}
