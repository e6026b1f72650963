#pragma once

// Synthetic multi-subject benchmark. Segments are per-class sinusoid
// mixtures with subject-specific drift and Gaussian noise; a fraction of
// segments is replaced by artifacts (impulse trains or saturated flat
// lines). Hidden class labels and artifact flags are returned alongside
// the data but must never feed into selection: strategies see only
// unlabeled latents. A small multinomial logistic probe trained on each
// strategy's subset measures how much learning value the subset retains.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/compressor.hpp"
#include "dlite/distill.hpp"
#include "dlite/errors.hpp"
#include "dlite/hash.hpp"
#include "dlite/hbos.hpp"
#include "dlite/kcenter.hpp"
#include "dlite/pca.hpp"
#include "dlite/rng.hpp"
#include "dlite/segment_io.hpp"

namespace dlite::synth {

struct SynthSpec {
    std::int64_t n_subjects = 10;
    std::int64_t segments_per_subject = 500;
    std::int64_t channels = 4;
    std::int64_t samples = 256;
    std::int64_t classes = 6;
    std::int64_t harmonics = 6;     // shared frequency pool size
    double class_sep = 0.3;         // amplitude-profile spread between classes
    double class_skew = 0.6;        // geometric class weights; 1 = uniform
    double subject_drift = 0.4;     // per-subject gain/phase spread
    double artifact_rate = 0.01;    // fraction of segments replaced
    double artifact_amplitude = 8.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_subjects < 1 || segments_per_subject < 1 || channels < 1 || samples < 2)
            throw ConfigError("SynthSpec: shape fields must be positive");
        if (classes < 2) throw ConfigError("SynthSpec: need at least two classes");
        if (harmonics < 1) throw ConfigError("SynthSpec: need at least one harmonic");
        if (artifact_rate < 0.0 || artifact_rate >= 1.0)
            throw ConfigError("SynthSpec: artifact_rate must be in [0, 1)");
        if (class_skew <= 0.0 || class_skew > 1.0)
            throw ConfigError("SynthSpec: class_skew must be in (0, 1]");
        if (class_sep <= 0.0) throw ConfigError("SynthSpec: class_sep must be positive");
        if (noise_sigma < 0.0) throw ConfigError("SynthSpec: noise_sigma must be >= 0");
    }

    std::int64_t total() const { return n_subjects * segments_per_subject; }
};

inline nlohmann::ordered_json synth_spec_json(const SynthSpec& s) {
    nlohmann::ordered_json j;
    j["n_subjects"] = s.n_subjects;
    j["segments_per_subject"] = s.segments_per_subject;
    j["channels"] = s.channels;
    j["samples"] = s.samples;
    j["classes"] = s.classes;
    j["harmonics"] = s.harmonics;
    j["class_sep"] = s.class_sep;
    j["class_skew"] = s.class_skew;
    j["subject_drift"] = s.subject_drift;
    j["artifact_rate"] = s.artifact_rate;
    j["artifact_amplitude"] = s.artifact_amplitude;
    j["noise_sigma"] = s.noise_sigma;
    j["seed"] = s.seed;
    return j;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.segments_per_subject = j.value("segments_per_subject", s.segments_per_subject);
    s.channels = j.value("channels", s.channels);
    s.samples = j.value("samples", s.samples);
    s.classes = j.value("classes", s.classes);
    s.harmonics = j.value("harmonics", s.harmonics);
    s.class_sep = j.value("class_sep", s.class_sep);
    s.class_skew = j.value("class_skew", s.class_skew);
    s.subject_drift = j.value("subject_drift", s.subject_drift);
    s.artifact_rate = j.value("artifact_rate", s.artifact_rate);
    s.artifact_amplitude = j.value("artifact_amplitude", s.artifact_amplitude);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    return s;
}

struct SynthData {
    signal::SegmentSet set;
    std::vector<int> labels;    // hidden class per segment (evaluation only)
    std::vector<bool> flags;    // true = injected artifact (evaluation only)
};

inline SynthData generate(const SynthSpec& spec) {
    spec.validate();
    SynthData out;
    Rng rng(derive_seed(spec.seed, "synth"));
    const std::int64_t n = spec.total();
    const std::int64_t c = spec.channels, t = spec.samples;

    // one shared frequency pool; classes differ only in how strongly each
    // channel expresses each harmonic, so separability is set by class_sep
    // rather than by disjoint spectra. Oscillation phase is drawn per
    // segment: it carries no class information.
    std::vector<double> freqs(spec.harmonics);
    std::vector<double> amps(spec.classes * c * spec.harmonics);
    const double fmax = std::max(3.0, double(t) / 8.0);
    for (std::int64_t h = 0; h < spec.harmonics; ++h)
        freqs[h] = 1.0 + (fmax - 1.0) * (double(h) + rng.uniform()) / double(spec.harmonics);
    for (auto& a : amps) a = 1.0 + spec.class_sep * rng.uniform(-1.0, 1.0);

    // skewed class weights: w_k proportional to skew^k
    std::vector<double> cum(spec.classes);
    double acc = 0.0, w = 1.0;
    for (std::int64_t k = 0; k < spec.classes; ++k) {
        acc += w;
        cum[k] = acc;
        w *= spec.class_skew;
    }
    for (auto& v : cum) v /= acc;

    // per-subject drift: channel gains and phase offsets
    std::vector<double> gain(spec.n_subjects * c), shift(spec.n_subjects * c);
    for (auto& g : gain) g = 1.0 + spec.subject_drift * rng.normal();
    for (auto& s : shift) s = spec.subject_drift * rng.normal();

    out.set.n = n;
    out.set.channels = c;
    out.set.samples = t;
    out.set.sample_rate_hz = 200.0;
    out.set.dataset_id = "synth-" + std::to_string(spec.seed);
    out.set.source_notes = "synthetic benchmark data";
    out.set.data.resize(static_cast<std::size_t>(n * c * t));
    out.set.subject_ids.resize(static_cast<std::size_t>(n));
    out.labels.resize(static_cast<std::size_t>(n));
    out.flags.assign(static_cast<std::size_t>(n), false);

    // exactly round(rho * n) segments become artifacts
    const auto n_artifacts = static_cast<std::size_t>(std::llround(spec.artifact_rate * double(n)));
    for (const auto i : rng.sample_without_replacement(static_cast<std::size_t>(n), n_artifacts))
        out.flags[i] = true;

    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t subj = i / spec.segments_per_subject;
        char sid[32];
        std::snprintf(sid, sizeof(sid), "subj%02lld", static_cast<long long>(subj));
        out.set.subject_ids[i] = sid;

        const double u = rng.uniform();
        int cls = 0;
        while (cls + 1 < spec.classes && u > cum[cls]) ++cls;
        out.labels[i] = cls;

        float* seg = out.set.segment(i);
        const bool artifact = out.flags[i];
        const bool spike_artifact = artifact && rng.uniform() < 0.5;
        if (spike_artifact) {
            // dense impulse train on a quiet baseline
            for (std::int64_t j = 0; j < c * t; ++j)
                seg[j] = static_cast<float>(0.05 * rng.normal());
            const auto spikes =
                static_cast<int>(t / 16 + rng.below(static_cast<std::uint64_t>(t / 16 + 1)));
            for (int sp = 0; sp < spikes; ++sp) {
                const auto at = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t)));
                const double amp = spec.artifact_amplitude * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                for (std::int64_t ch = 0; ch < c; ++ch) seg[ch * t + at] = static_cast<float>(amp);
            }
            continue;
        }
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double g = gain[subj * c + ch];
            const double sh = shift[subj * c + ch];
            std::vector<double> seg_phase(static_cast<std::size_t>(spec.harmonics));
            for (auto& ph : seg_phase) ph = rng.uniform(0.0, kTwoPi);
            for (std::int64_t j = 0; j < t; ++j) {
                double v = 0.0;
                for (std::int64_t h = 0; h < spec.harmonics; ++h) {
                    const double a = amps[(cls * c + ch) * spec.harmonics + h];
                    v += g * a *
                         std::sin(kTwoPi * freqs[h] * double(j) / double(t) + seg_phase[h] + sh);
                }
                v += spec.noise_sigma * rng.normal();
                seg[ch * t + j] = static_cast<float>(v);
            }
        }
        if (artifact) {
            // flat-lined at the rails: piecewise-constant saturation that
            // chatters between the two rail levels
            const double level = spec.artifact_amplitude * rng.uniform(0.5, 1.0);
            double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
            for (std::int64_t j = 0; j < t; ++j) {
                if (rng.uniform() < 1.0 / 16.0) side = -side;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    seg[ch * t + j] = static_cast<float>(side * level);
            }
        }
    }
    return out;
}

// Fraction of injected artifacts captured inside the removed top-tau% set.
struct OutlierRecovery {
    double precision = 0.0;
    double recall = 0.0;
    std::int64_t removed = 0;
    std::int64_t flagged = 0;
};

inline OutlierRecovery eval_outlier_recovery(const distill::OodScores& scores,
                                             const std::vector<bool>& flags, double tau) {
    const auto n = static_cast<std::int64_t>(scores.scores.size());
    if (n != static_cast<std::int64_t>(flags.size()))
        throw ContractError("eval_outlier_recovery: scores/flags size mismatch");
    const auto drop = static_cast<std::int64_t>(std::ceil(tau / 100.0 * double(n)));
    OutlierRecovery out;
    for (std::int64_t r = 0; r < std::min(drop, n); ++r) {
        out.removed += 1;
        if (flags[static_cast<std::size_t>(scores.ranking[r])]) out.precision += 1.0;
    }
    for (const bool f : flags) out.flagged += f ? 1 : 0;
    out.recall = out.flagged > 0 ? out.precision / double(out.flagged) : 1.0;
    out.precision = out.removed > 0 ? out.precision / double(out.removed) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Multinomial logistic probe (the downstream proxy)
// ---------------------------------------------------------------------------

struct LogisticModel {
    std::int64_t dims = 0;
    std::int64_t classes = 0;
    std::vector<double> mean, stdev;  // feature standardization from the training split
    std::vector<double> weights;      // (dims + 1) x classes, last row = bias
};

inline LogisticModel fit_logistic(const std::vector<float>& x, const std::vector<int>& y,
                                  std::int64_t n, std::int64_t dims, std::int64_t classes,
                                  int iters = 400, double lr = 1.0, double l2 = 1e-4) {
    if (n < 1) throw ContractError("fit_logistic: empty training set");
    LogisticModel m;
    m.dims = dims;
    m.classes = classes;
    m.mean.assign(static_cast<std::size_t>(dims), 0.0);
    m.stdev.assign(static_cast<std::size_t>(dims), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t d = 0; d < dims; ++d) m.mean[d] += x[i * dims + d];
    for (auto& v : m.mean) v /= double(n);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t d = 0; d < dims; ++d) {
            const double c = x[i * dims + d] - m.mean[d];
            m.stdev[d] += c * c;
        }
    for (auto& v : m.stdev) v = std::sqrt(v / double(n)) + 1e-8;

    std::vector<double> xs(static_cast<std::size_t>(n * dims));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t d = 0; d < dims; ++d)
            xs[i * dims + d] = (x[i * dims + d] - m.mean[d]) / m.stdev[d];

    m.weights.assign(static_cast<std::size_t>((dims + 1) * classes), 0.0);
    std::vector<double> logits(static_cast<std::size_t>(classes));
    std::vector<double> grad(m.weights.size());
    for (int it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* xi = xs.data() + i * dims;
            double mx = -1e300;
            for (std::int64_t k = 0; k < classes; ++k) {
                double v = m.weights[dims * classes + k];  // bias
                for (std::int64_t d = 0; d < dims; ++d)
                    v += xi[d] * m.weights[d * classes + k];
                logits[k] = v;
                mx = std::max(mx, v);
            }
            double denom = 0.0;
            for (std::int64_t k = 0; k < classes; ++k) denom += std::exp(logits[k] - mx);
            for (std::int64_t k = 0; k < classes; ++k) {
                const double p = std::exp(logits[k] - mx) / denom;
                const double err = p - (y[i] == k ? 1.0 : 0.0);
                for (std::int64_t d = 0; d < dims; ++d) grad[d * classes + k] += err * xi[d];
                grad[dims * classes + k] += err;
            }
        }
        const double inv_n = 1.0 / double(n);
        for (std::size_t j = 0; j < m.weights.size(); ++j) {
            double g = grad[j] * inv_n;
            if (j < static_cast<std::size_t>(m.dims * classes)) g += l2 * m.weights[j];
            m.weights[j] -= lr * g;
        }
    }
    return m;
}

inline int logistic_predict(const LogisticModel& m, const float* row) {
    int best = 0;
    double best_v = -1e300;
    for (std::int64_t k = 0; k < m.classes; ++k) {
        double v = m.weights[m.dims * m.classes + k];
        for (std::int64_t d = 0; d < m.dims; ++d)
            v += ((row[d] - m.mean[d]) / m.stdev[d]) * m.weights[d * m.classes + k];
        if (v > best_v) {
            best_v = v;
            best = k;
        }
    }
    return best;
}

inline double logistic_accuracy(const LogisticModel& m, const std::vector<float>& x,
                                const std::vector<int>& y, const std::vector<std::int64_t>& rows,
                                std::int64_t dims) {
    if (rows.empty()) throw ContractError("logistic_accuracy: empty evaluation set");
    std::int64_t hits = 0;
    for (const auto r : rows)
        hits += logistic_predict(m, x.data() + r * dims) == y[static_cast<std::size_t>(r)] ? 1 : 0;
    return double(hits) / double(rows.size());
}

}  // namespace dlite::synth
