#pragma once

// Batch orchestration: discovers dataset pairs under an input root, trains
// one shared compressor, distills each pair independently, exports
// selected subsets, and records a run.json capturing the resolved
// configuration, seed, and content hashes of the inputs. Identical
// run.json means identical outputs.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/bench.hpp"
#include "dlite/compressor.hpp"
#include "dlite/distill.hpp"
#include "dlite/errors.hpp"
#include "dlite/hash.hpp"
#include "dlite/pca.hpp"
#include "dlite/segment_io.hpp"

namespace dlite::pipeline {

namespace fs = std::filesystem;

enum class Strategy { kProposed, kRandom, kPcaDs };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "proposed") return Strategy::kProposed;
    if (s == "random") return Strategy::kRandom;
    if (s == "pca_ds") return Strategy::kPcaDs;
    throw UsageError("unknown strategy '" + s + "' (expected proposed|random|pca_ds)");
}

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kProposed: return "proposed";
        case Strategy::kRandom: return "random";
        case Strategy::kPcaDs: return "pca_ds";
    }
    return "?";
}

// Worker cap: DLITE_THREADS when set, else the hardware concurrency.
inline std::int64_t max_threads() {
    if (const char* env = std::getenv("DLITE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<std::int64_t>(hw) : 1;
}

inline bool is_pair_dir(const fs::path& dir) {
    return fs::exists(dir / "data.bin") && fs::exists(dir / "manifest.json");
}

// Dataset pairs under `root` (root itself or its direct subdirectories),
// sorted by path for a stable processing order.
inline std::vector<fs::path> discover_pairs(const fs::path& root) {
    if (!fs::exists(root)) throw UsageError("input root does not exist: " + root.string());
    std::vector<fs::path> pairs;
    if (is_pair_dir(root)) pairs.push_back(root);
    if (fs::is_directory(root)) {
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.is_directory() && is_pair_dir(entry.path())) pairs.push_back(entry.path());
        }
    }
    std::sort(pairs.begin(), pairs.end());
    if (pairs.empty())
        throw UsageError("no dataset pairs (data.bin + manifest.json) under " + root.string());
    return pairs;
}

inline nlohmann::ordered_json input_content_hashes(const std::vector<fs::path>& pairs) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& p : pairs) {
        const std::uint64_t h =
            fnv1a64(to_hex(hash_file(p / "data.bin")) + to_hex(hash_file(p / "manifest.json")));
        j[p.filename().string().empty() ? p.string() : p.filename().string()] = to_hex(h);
    }
    return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IntegrityError("cannot write " + path.string());
    out << text;
}

inline void write_run_json(const fs::path& path, const std::string& command,
                           const nlohmann::ordered_json& resolved,
                           const std::vector<fs::path>& inputs) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = resolved;
    j["input_hashes"] = input_content_hashes(inputs);
    write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// train-compressor
// ---------------------------------------------------------------------------

struct TrainOptions {
    fs::path input_root;
    fs::path out_ckpt;
    compressor::CompressorConfig config;
};

// Pools every pair under the input root (uniform segment shape required)
// and trains one shared compressor. Writes the checkpoint, a training-loss
// CSV next to it, and run.json.
inline void cmd_train_compressor(const TrainOptions& opt) {
    const auto pairs = discover_pairs(opt.input_root);
    std::vector<signal::SegmentSet> sets;
    sets.reserve(pairs.size());
    for (const auto& p : pairs) sets.push_back(signal::load_segment_set(p));
    for (std::size_t i = 1; i < sets.size(); ++i) {
        if (sets[i].channels != sets[0].channels || sets[i].samples != sets[0].samples)
            throw ConfigError("train-compressor: pair " + pairs[i].string() +
                              " has segment shape " + std::to_string(sets[i].channels) + "x" +
                              std::to_string(sets[i].samples) + " but " + pairs[0].string() +
                              " has " + std::to_string(sets[0].channels) + "x" +
                              std::to_string(sets[0].samples));
    }
    signal::SegmentSet pooled = std::move(sets[0]);
    for (std::size_t i = 1; i < sets.size(); ++i) {
        pooled.data.insert(pooled.data.end(), sets[i].data.begin(), sets[i].data.end());
        pooled.subject_ids.insert(pooled.subject_ids.end(), sets[i].subject_ids.begin(),
                                  sets[i].subject_ids.end());
        pooled.n += sets[i].n;
    }

    compressor::CompressorConfig cfg = opt.config;
    cfg.seed = derive_seed(opt.config.seed, "train");
    compressor::MultiViewCompressor model(cfg, pooled.channels, pooled.samples);
    const auto result = compressor::train(model, pooled);

    fs::create_directories(opt.out_ckpt.parent_path().empty() ? fs::path(".")
                                                              : opt.out_ckpt.parent_path());
    compressor::save_checkpoint(opt.out_ckpt, model);
    write_text(fs::path(opt.out_ckpt.string() + ".log.csv"),
               compressor::training_log_csv(result));

    nlohmann::ordered_json resolved;
    resolved["input_root"] = opt.input_root.string();
    resolved["out"] = opt.out_ckpt.string();
    resolved["seed"] = opt.config.seed;
    resolved["compressor"] = compressor::config_json(opt.config);
    write_run_json(fs::path(opt.out_ckpt.string() + ".run.json"), "train-compressor", resolved,
                   pairs);
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

struct DistillCmdOptions {
    fs::path input_root;
    fs::path ckpt;  // required for strategy=proposed
    fs::path out_root;
    Strategy strategy = Strategy::kProposed;
    double eta = 5.0;
    double tau = 0.05;
    std::uint64_t seed = 42;
    std::int64_t bins = 0;
    double alpha = 1e-6;
    std::int64_t pca_dim = 64;  // embedding width for strategy=pca_ds
    bool write_scores = true;
};

struct PairSummary {
    std::string dataset_id;
    std::int64_t n = 0;
    std::int64_t kept = 0;
    std::int64_t selected = 0;
    double coverage_radius = 0.0;
    std::map<std::string, std::int64_t> per_subject;
};

namespace detail {

inline PairSummary distill_one_pair(const DistillCmdOptions& opt, const fs::path& pair_dir,
                                    const compressor::MultiViewCompressor* model) {
    const auto set = signal::load_segment_set(pair_dir);
    distill::SelectionManifest manifest;
    distill::OodScores scores;
    bool have_scores = false;

    if (opt.strategy == Strategy::kRandom) {
        // structure-free baseline: no latents, no outlier pass
        manifest.dataset_id = set.dataset_id;
        manifest.kept_after_ood.resize(static_cast<std::size_t>(set.n));
        for (std::int64_t i = 0; i < set.n; ++i) manifest.kept_after_ood[i] = i;
        const auto k = distill::selection_size(set.n, opt.eta);
        manifest.selected = distill::random_select(
            manifest.kept_after_ood, k, derive_seed(opt.seed, "random-select" + set.dataset_id));
        manifest.tau = 0.0;
        manifest.eta = opt.eta;
        manifest.seed = opt.seed;
        distill::DistillOptions dopt;
        dopt.tau = 0.0;
        dopt.eta = opt.eta;
        dopt.seed = opt.seed;
        manifest.config_hash = distill::options_hash(dopt);
        manifest.coverage_radius = -1.0;  // no latent space to measure in
    } else {
        compressor::LatentMatrix latents;
        if (opt.strategy == Strategy::kProposed) {
            latents = compressor::encode_dataset(*model, set);
        } else {
            const std::int64_t flat = set.channels * set.samples;
            const std::int64_t d = std::min<std::int64_t>(opt.pca_dim, std::min(set.n, flat));
            const auto pca = distill::pca_fit(set.data.data(), set.n, flat, d);
            latents.n = set.n;
            latents.d = d;
            latents.z = distill::pca_transform(pca, set.data.data(), set.n);
        }
        distill::DistillOptions dopt;
        dopt.tau = opt.tau;
        dopt.eta = opt.eta;
        dopt.seed = derive_seed(opt.seed, set.dataset_id);
        dopt.bins = opt.bins;
        dopt.alpha = opt.alpha;
        manifest = distill::distill_dataset(set.dataset_id, latents, dopt, &scores);
        have_scores = true;
    }

    const fs::path out_dir = opt.out_root / pair_dir.filename();
    fs::create_directories(out_dir);
    distill::write_manifest(out_dir / "manifest.json", manifest);
    if (have_scores && opt.write_scores)
        write_text(out_dir / "scores.csv", distill::scores_csv(scores));

    PairSummary summary;
    summary.dataset_id = set.dataset_id;
    summary.n = set.n;
    summary.kept = static_cast<std::int64_t>(manifest.kept_after_ood.size());
    summary.selected = static_cast<std::int64_t>(manifest.selected.size());
    summary.coverage_radius = manifest.coverage_radius;
    for (const auto i : manifest.selected) summary.per_subject[set.subject_ids[i]] += 1;
    return summary;
}

}  // namespace detail

inline std::string summary_csv(const std::vector<PairSummary>& rows) {
    std::string out = "dataset_id,n,kept,selected,coverage_radius,subject_counts\n";
    for (const auto& r : rows) {
        char head[192];
        std::snprintf(head, sizeof(head), "%s,%lld,%lld,%lld,%.10g,",
                      r.dataset_id.c_str(), static_cast<long long>(r.n),
                      static_cast<long long>(r.kept), static_cast<long long>(r.selected),
                      r.coverage_radius);
        out += head;
        bool first = true;
        for (const auto& [subject, count] : r.per_subject) {
            if (!first) out += ';';
            out += subject + ":" + std::to_string(count);
            first = false;
        }
        out += "\n";
    }
    return out;
}

// Runs the selection pipeline on every pair under the input root
// (independently, possibly in parallel) and writes per-pair manifests plus
// a summary CSV and run.json under out_root.
inline std::vector<PairSummary> cmd_distill(const DistillCmdOptions& opt) {
    if (opt.eta <= 0.0 || opt.eta > 100.0) throw UsageError("distill: eta must be in (0, 100]");
    if (opt.tau < 0.0 || opt.tau >= 100.0) throw UsageError("distill: tau must be in [0, 100)");
    const auto pairs = discover_pairs(opt.input_root);

    compressor::MultiViewCompressor* model = nullptr;
    std::unique_ptr<compressor::MultiViewCompressor> owned;
    if (opt.strategy == Strategy::kProposed) {
        if (opt.ckpt.empty()) throw UsageError("distill: --ckpt is required for strategy=proposed");
        owned = std::make_unique<compressor::MultiViewCompressor>(
            compressor::load_checkpoint(opt.ckpt));
        model = owned.get();
    }

    std::vector<PairSummary> rows(pairs.size());
    const auto threads = std::min<std::int64_t>(max_threads(), static_cast<std::int64_t>(pairs.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i)
            rows[i] = detail::distill_one_pair(opt, pairs[i], model);
    } else {
        std::mutex mu;
        std::size_t next = 0;
        std::exception_ptr failure;
        auto worker = [&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= pairs.size() || failure) return;
                    i = next++;
                }
                try {
                    rows[i] = detail::distill_one_pair(opt, pairs[i], model);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        };
        std::vector<std::thread> workers;
        for (std::int64_t i = 0; i < threads; ++i) workers.emplace_back(worker);
        for (auto& w : workers) w.join();
        if (failure) std::rethrow_exception(failure);
    }

    write_text(opt.out_root / "summary.csv", summary_csv(rows));
    nlohmann::ordered_json resolved;
    resolved["input_root"] = opt.input_root.string();
    resolved["ckpt"] = opt.ckpt.string();
    resolved["out"] = opt.out_root.string();
    resolved["strategy"] = strategy_name(opt.strategy);
    resolved["eta"] = opt.eta;
    resolved["tau"] = opt.tau;
    resolved["seed"] = opt.seed;
    resolved["bins"] = opt.bins;
    resolved["alpha"] = opt.alpha;
    resolved["pca_dim"] = opt.pca_dim;
    write_run_json(opt.out_root / "run.json", "distill", resolved, pairs);
    return rows;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

// Writes a new dataset pair holding only the manifest's selected segments.
// Segments keep their original relative order, so an everything-selected
// manifest reproduces data.bin byte for byte.
inline void cmd_export(const fs::path& manifest_path, const fs::path& input_pair,
                       const fs::path& out_pair) {
    const auto manifest = distill::read_manifest(manifest_path);
    const auto set = signal::load_segment_set(input_pair);
    for (const auto i : manifest.selected) {
        if (i < 0 || i >= set.n)
            throw IntegrityError("export: selected index " + std::to_string(i) +
                                 " out of range for n=" + std::to_string(set.n));
    }
    std::vector<std::int64_t> ordered = manifest.selected;
    std::sort(ordered.begin(), ordered.end());
    signal::write_segment_set(out_pair, set.subset(ordered));
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

inline void cmd_bench(const fs::path& spec_path, const fs::path& out_csv,
                      std::int64_t n_seeds) {
    std::ifstream in(spec_path);
    if (!in) throw UsageError("bench: cannot open spec " + spec_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bench: invalid spec JSON: " + std::string(e.what()));
    }
    const auto spec = synth::bench_spec_from_json(j);
    const auto cells = synth::run_bench(spec, n_seeds, max_threads());
    write_text(out_csv, synth::bench_csv(cells));

    nlohmann::ordered_json resolved;
    resolved["spec"] = synth::bench_spec_json(spec);
    resolved["seeds"] = n_seeds;
    resolved["out"] = out_csv.string();
    nlohmann::ordered_json run;
    run["command"] = "bench";
    run["config"] = resolved;
    write_text(fs::path(out_csv.string() + ".run.json"), run.dump(2) + "\n");
}

}  // namespace dlite::pipeline
