#pragma once

// Benchmark harness: generates synthetic data, trains a compressor, runs
// every selection strategy at every distillation ratio, and scores each
// cell with the logistic probe plus latent-space coverage. Cells are
// independent jobs keyed by seed; results are emitted in a fixed order so
// the CSV is reproducible regardless of worker count.

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/compressor.hpp"
#include "dlite/distill.hpp"
#include "dlite/errors.hpp"
#include "dlite/hash.hpp"
#include "dlite/pca.hpp"
#include "dlite/synth.hpp"

namespace dlite::synth {

struct BenchSpec {
    SynthSpec synth;
    double test_fraction = 0.2;
    std::int64_t train_limit = 1536;       // max segments used to fit the compressor
    double tau = -1.0;                     // percent; negative = artifact_rate * 100
    std::vector<double> etas = {1.0, 5.0, 10.0, 25.0};
    std::vector<std::string> strategies = {"proposed", "random", "pca_ds"};
    compressor::CompressorConfig comp = bench_compressor_defaults();

    // A compressor sized for repeated benchmark runs; library defaults stay
    // untouched for real use.
    static compressor::CompressorConfig bench_compressor_defaults() {
        compressor::CompressorConfig c;
        c.d_latent = 32;
        c.enc_layers = 2;
        c.dec_layers = 1;
        c.heads = 4;
        c.num_patches = 8;
        c.epochs = 8;
        c.batch_size = 32;
        return c;
    }

    double tau_percent() const { return tau >= 0.0 ? tau : synth.artifact_rate * 100.0; }

    void validate() const {
        synth.validate();
        if (test_fraction <= 0.0 || test_fraction >= 1.0)
            throw ConfigError("BenchSpec: test_fraction must be in (0, 1)");
        if (train_limit < 2) throw ConfigError("BenchSpec: train_limit must be >= 2");
        if (etas.empty()) throw ConfigError("BenchSpec: need at least one eta");
        for (const double e : etas)
            if (e <= 0.0 || e > 100.0) throw ConfigError("BenchSpec: eta must be in (0, 100]");
        comp.validate();
    }
};

inline nlohmann::ordered_json bench_spec_json(const BenchSpec& b) {
    nlohmann::ordered_json j = synth_spec_json(b.synth);
    j["test_fraction"] = b.test_fraction;
    j["train_limit"] = b.train_limit;
    j["tau"] = b.tau_percent();
    j["etas"] = b.etas;
    j["strategies"] = b.strategies;
    j["compressor"] = compressor::config_json(b.comp);
    return j;
}

inline BenchSpec bench_spec_from_json(const nlohmann::json& j) {
    BenchSpec b;
    b.synth = synth_spec_from_json(j);
    b.test_fraction = j.value("test_fraction", b.test_fraction);
    b.train_limit = j.value("train_limit", b.train_limit);
    b.tau = j.value("tau", b.tau);
    if (j.contains("etas")) b.etas = j.at("etas").get<std::vector<double>>();
    if (j.contains("strategies"))
        b.strategies = j.at("strategies").get<std::vector<std::string>>();
    if (j.contains("compressor"))
        b.comp = compressor::config_from_json(j.at("compressor"), b.comp);
    return b;
}

struct BenchCell {
    std::string strategy;
    double eta = 0.0;
    std::int64_t seed = 0;
    double accuracy = 0.0;
    double coverage_radius = 0.0;
    double ood_recall = 0.0;
    std::string config_hash;
};

namespace detail {

inline std::vector<float> gather_latent_rows(const std::vector<float>& z, std::int64_t dims,
                                             const std::vector<std::int64_t>& rows) {
    std::vector<float> out(rows.size() * static_cast<std::size_t>(dims));
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(z.begin() + rows[r] * dims, dims, out.begin() + static_cast<std::int64_t>(r) * dims);
    return out;
}

}  // namespace detail

// One benchmark seed: data, split, compressor, and all strategy cells.
inline std::vector<BenchCell> run_bench_seed(const BenchSpec& spec, std::int64_t seed_index,
                                             const std::string& config_hash) {
    SynthSpec sp = spec.synth;
    sp.seed = derive_seed(spec.synth.seed, "bench-data", static_cast<std::uint64_t>(seed_index));
    const SynthData data = generate(sp);
    const std::int64_t n = data.set.n;

    // held-out evaluation split drawn from clean segments only
    Rng split_rng(derive_seed(sp.seed, "bench-split"));
    std::vector<std::int64_t> shuffled(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) shuffled[i] = i;
    split_rng.shuffle(shuffled);
    const auto n_test = static_cast<std::int64_t>(std::llround(spec.test_fraction * double(n)));
    std::vector<std::int64_t> test, pool;
    for (const auto i : shuffled) {
        if (static_cast<std::int64_t>(test.size()) < n_test && !data.flags[static_cast<std::size_t>(i)])
            test.push_back(i);
        else
            pool.push_back(i);
    }
    std::sort(test.begin(), test.end());
    std::sort(pool.begin(), pool.end());

    // compressor trained on a capped, seed-shuffled slice of the pool
    Rng subset_rng(derive_seed(sp.seed, "train-subset"));
    std::vector<std::int64_t> train_idx = pool;
    subset_rng.shuffle(train_idx);
    if (static_cast<std::int64_t>(train_idx.size()) > spec.train_limit)
        train_idx.resize(static_cast<std::size_t>(spec.train_limit));
    std::sort(train_idx.begin(), train_idx.end());

    compressor::CompressorConfig cfg = spec.comp;
    cfg.seed = derive_seed(sp.seed, "train");
    compressor::MultiViewCompressor model(cfg, data.set.channels, data.set.samples);
    compressor::train(model, data.set.subset(train_idx));
    const auto latents = compressor::encode_dataset(model, data.set);
    const std::int64_t d = latents.d;

    // HBOS on the selection pool
    const auto pool_z = detail::gather_latent_rows(latents.z, d, pool);
    const auto pool_n = static_cast<std::int64_t>(pool.size());
    const auto hist = distill::fit_histograms(pool_z, pool_n, d, distill::default_bins(pool_n));
    const auto scores = distill::score_ood(pool_z, pool_n, d, hist);
    std::vector<bool> pool_flags(pool.size());
    std::int64_t pool_flagged = 0;
    for (std::size_t r = 0; r < pool.size(); ++r) {
        pool_flags[r] = data.flags[static_cast<std::size_t>(pool[r])];
        pool_flagged += pool_flags[r] ? 1 : 0;
    }
    // auto tau matches the pool's realized contamination (the clean test
    // split concentrates artifacts slightly above the injection rate)
    const double tau = spec.tau >= 0.0
                           ? spec.tau
                           : 100.0 * double(pool_flagged) / double(pool_n);
    const auto recovery = eval_outlier_recovery(scores, pool_flags, tau);

    // shared pieces per strategy
    const auto kept_local = distill::remove_outliers(scores, tau);
    std::vector<std::int64_t> kept_global;
    kept_global.reserve(kept_local.size());
    for (const auto r : kept_local) kept_global.push_back(pool[static_cast<std::size_t>(r)]);
    const auto kept_z = detail::gather_latent_rows(latents.z, d, kept_global);

    const bool want_pca =
        std::find(spec.strategies.begin(), spec.strategies.end(), "pca_ds") != spec.strategies.end();
    std::vector<std::int64_t> pca_kept_global;
    std::vector<float> pca_kept_z;
    std::int64_t pca_dims = 0;
    if (want_pca) {
        const std::int64_t flat = data.set.channels * data.set.samples;
        const auto pool_set = data.set.subset(pool);
        const auto pca = distill::pca_fit(pool_set.data.data(), pool_n, flat,
                                          std::min<std::int64_t>(cfg.d_latent, std::min(pool_n, flat)));
        const auto pca_pool_z = distill::pca_transform(pca, pool_set.data.data(), pool_n);
        const auto pca_hist =
            distill::fit_histograms(pca_pool_z, pool_n, pca.dims_out, distill::default_bins(pool_n));
        const auto pca_scores = distill::score_ood(pca_pool_z, pool_n, pca.dims_out, pca_hist);
        const auto pca_kept_local = distill::remove_outliers(pca_scores, tau);
        pca_dims = pca.dims_out;
        pca_kept_global.reserve(pca_kept_local.size());
        for (const auto r : pca_kept_local)
            pca_kept_global.push_back(pool[static_cast<std::size_t>(r)]);
        pca_kept_z.resize(pca_kept_local.size() * static_cast<std::size_t>(pca.dims_out));
        for (std::size_t r = 0; r < pca_kept_local.size(); ++r)
            std::copy_n(pca_pool_z.begin() + pca_kept_local[r] * pca.dims_out, pca.dims_out,
                        pca_kept_z.begin() + static_cast<std::int64_t>(r) * pca.dims_out);
    }

    std::vector<BenchCell> cells;
    for (std::size_t ei = 0; ei < spec.etas.size(); ++ei) {
        const double eta = spec.etas[ei];
        for (const auto& strategy : spec.strategies) {
            std::vector<std::int64_t> selected;     // global segment ids
            std::vector<std::int64_t> candidates;   // what the selection should cover
            if (strategy == "proposed") {
                const auto k = distill::selection_size(
                    static_cast<std::int64_t>(kept_global.size()), eta);
                const auto got = distill::kcenter_select(
                    kept_z, static_cast<std::int64_t>(kept_global.size()), d, k);
                for (const auto local : got.selected)
                    selected.push_back(kept_global[static_cast<std::size_t>(local)]);
                candidates = kept_global;
            } else if (strategy == "random") {
                const auto k = distill::selection_size(pool_n, eta);
                selected = distill::random_select(
                    pool, k, derive_seed(sp.seed, "random-select", static_cast<std::uint64_t>(ei)));
                candidates = pool;
            } else if (strategy == "pca_ds") {
                const auto k = distill::selection_size(
                    static_cast<std::int64_t>(pca_kept_global.size()), eta);
                const auto got = distill::kcenter_select(
                    pca_kept_z, static_cast<std::int64_t>(pca_kept_global.size()), pca_dims, k);
                for (const auto local : got.selected)
                    selected.push_back(pca_kept_global[static_cast<std::size_t>(local)]);
                candidates = pca_kept_global;
            } else {
                throw ConfigError("run_bench_seed: unknown strategy '" + strategy + "'");
            }

            const auto train_z = detail::gather_latent_rows(latents.z, d, selected);
            std::vector<int> train_y;
            train_y.reserve(selected.size());
            for (const auto i : selected) train_y.push_back(data.labels[static_cast<std::size_t>(i)]);
            const auto probe = fit_logistic(train_z, train_y,
                                            static_cast<std::int64_t>(selected.size()), d,
                                            spec.synth.classes);

            BenchCell cell;
            cell.strategy = strategy;
            cell.eta = eta;
            cell.seed = seed_index;
            cell.accuracy = logistic_accuracy(probe, latents.z, data.labels, test, d);
            cell.coverage_radius = distill::coverage_radius(latents.z, d, candidates, selected);
            cell.ood_recall = recovery.recall;
            cell.config_hash = config_hash;
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

// Runs n_seeds independent benchmark repetitions, optionally in parallel.
// Output order is fixed: seed-major, then the (eta, strategy) grid.
inline std::vector<BenchCell> run_bench(const BenchSpec& spec, std::int64_t n_seeds,
                                        std::int64_t threads = 1) {
    spec.validate();
    if (n_seeds < 1) throw ConfigError("run_bench: need at least one seed");
    const std::string config_hash = to_hex(fnv1a64(bench_spec_json(spec).dump()));
    std::vector<std::vector<BenchCell>> per_seed(static_cast<std::size_t>(n_seeds));

    if (threads <= 1 || n_seeds == 1) {
        for (std::int64_t s = 0; s < n_seeds; ++s)
            per_seed[static_cast<std::size_t>(s)] = run_bench_seed(spec, s, config_hash);
    } else {
        std::mutex mu;
        std::int64_t next = 0;
        std::exception_ptr failure;
        auto worker = [&] {
            for (;;) {
                std::int64_t s;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= n_seeds || failure) return;
                    s = next++;
                }
                try {
                    auto cells = run_bench_seed(spec, s, config_hash);
                    std::lock_guard<std::mutex> lock(mu);
                    per_seed[static_cast<std::size_t>(s)] = std::move(cells);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        };
        std::vector<std::thread> workers;
        const auto n_workers = std::min<std::int64_t>(threads, n_seeds);
        workers.reserve(static_cast<std::size_t>(n_workers));
        for (std::int64_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
        for (auto& w : workers) w.join();
        if (failure) std::rethrow_exception(failure);
    }

    std::vector<BenchCell> all;
    for (auto& cells : per_seed)
        for (auto& c : cells) all.push_back(std::move(c));
    return all;
}

inline std::string bench_csv(const std::vector<BenchCell>& cells) {
    std::string out = "strategy,eta,seed,accuracy,coverage_radius,ood_recall,config_hash\n";
    char line[256];
    for (const auto& c : cells) {
        std::snprintf(line, sizeof(line), "%s,%.10g,%lld,%.10g,%.10g,%.10g,%s\n",
                      c.strategy.c_str(), c.eta, static_cast<long long>(c.seed), c.accuracy,
                      c.coverage_radius, c.ood_recall, c.config_hash.c_str());
        out += line;
    }
    return out;
}

// 5-seed-mean accuracy for one (strategy, eta); helper for trend checks.
inline double mean_accuracy(const std::vector<BenchCell>& cells, const std::string& strategy,
                            double eta) {
    double acc = 0.0;
    std::int64_t count = 0;
    for (const auto& c : cells) {
        if (c.strategy == strategy && c.eta == eta) {
            acc += c.accuracy;
            count += 1;
        }
    }
    if (count == 0) throw ContractError("mean_accuracy: no cells for " + strategy);
    return acc / double(count);
}

}  // namespace dlite::synth
