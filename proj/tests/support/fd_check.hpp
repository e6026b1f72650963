#pragma once

// Central finite-difference oracle for gradient checks. The oracle only
// re-runs the forward pass at perturbed parameter values; it never touches
// the reverse pass it is validating. The achieved step is measured from
// the float32-quantized parameter values so the quotient uses the step
// that was actually applied. Framework-free so both the unit tests and the
// acceptance suite can drive it.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dlite/rng.hpp"
#include "dlite/tensor.hpp"

namespace fdcheck {

struct Options {
    double h = 1e-3;
    // optional second step: an entry passes when either step agrees. The
    // error of a correct quotient is U-shaped in h (truncation up, float32
    // rounding down), so large- and small-gradient entries prefer
    // different steps; a systematically wrong gradient fails both.
    double h2 = 0.0;
    double rel_tol = 1e-4;
    // guard for float32 rounding of activations: an entry passes when
    // |fd - analytic| <= abs_tol + rel_tol * max(|fd|, |analytic|)
    double abs_tol = 1e-5;
    int entries_per_param = 0;  // 0 = every entry
    double min_grad = 0.0;      // skip entries with |analytic| below this (0 = keep all)
};

struct Report {
    int checked = 0;
    std::vector<std::string> failures;

    bool ok() const { return !failures.empty() ? false : checked > 0; }
    std::string summary() const {
        std::ostringstream os;
        os << checked << " entries checked";
        if (!failures.empty()) {
            os << ", " << failures.size() << " failed; first: " << failures.front();
        }
        return os.str();
    }
};

// make_loss must rebuild the forward pass from the current parameter values
// and return a scalar tensor.
template <typename MakeLoss>
Report check_gradients(std::vector<dlite::Tensor> params, MakeLoss&& make_loss,
                       const Options& opt = {}) {
    Report report;
    dlite::Tensor loss = make_loss();
    for (auto& p : params) p.zero_grad();
    dlite::backward(loss);
    std::vector<std::vector<float>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    dlite::Rng pick(0xFDC0FFEEULL);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].data();
        const auto n = static_cast<std::int64_t>(value.size());
        std::vector<std::int64_t> entries;
        if (opt.entries_per_param <= 0 || n <= opt.entries_per_param) {
            entries.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) entries[i] = i;
        } else {
            // prefer entries with healthy analytic gradients, fill up randomly
            std::vector<std::int64_t> order(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) order[i] = i;
            std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
                return std::abs(analytic[pi][a]) > std::abs(analytic[pi][b]);
            });
            for (int e = 0; e < opt.entries_per_param / 2; ++e) entries.push_back(order[e]);
            while (static_cast<int>(entries.size()) < opt.entries_per_param)
                entries.push_back(
                    static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(n))));
        }
        auto quotient_at = [&](std::int64_t i, double h) {
            const float saved = value[i];
            value[i] = static_cast<float>(double(saved) + h);
            const double plus_at = value[i];
            const double f_plus = make_loss().item_hi();
            value[i] = static_cast<float>(double(saved) - h);
            const double minus_at = value[i];
            const double f_minus = make_loss().item_hi();
            value[i] = saved;
            return (f_plus - f_minus) / (plus_at - minus_at);
        };
        for (const auto i : entries) {
            const double g = analytic[pi][i];
            if (opt.min_grad > 0.0 && std::abs(g) < opt.min_grad) continue;
            double fd = quotient_at(i, opt.h);
            double err = std::abs(fd - g);
            double bound = opt.abs_tol + opt.rel_tol * std::max(std::abs(fd), std::abs(g));
            if (!(err <= bound) && opt.h2 > 0.0) {
                const double fd2 = quotient_at(i, opt.h2);
                const double err2 = std::abs(fd2 - g);
                const double bound2 =
                    opt.abs_tol + opt.rel_tol * std::max(std::abs(fd2), std::abs(g));
                if (err2 <= bound2 || err2 < err) {
                    fd = fd2;
                    err = err2;
                    bound = bound2;
                }
            }
            report.checked += 1;
            if (!(err <= bound)) {
                std::ostringstream os;
                os << "param " << pi << " entry " << i << ": analytic=" << g << " fd=" << fd
                   << " err=" << err << " bound=" << bound;
                report.failures.push_back(os.str());
            }
        }
    }
    return report;
}

}  // namespace fdcheck
