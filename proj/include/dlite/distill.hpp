#pragma once

// End-to-end distillation of one dataset: HBOS scoring over the latent
// rows, removal of the top tau% outliers, then greedy k-center selection of
// eta% of the remaining rows. The result is a SelectionManifest that can be
// persisted as JSON and replayed byte-for-byte.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/compressor.hpp"
#include "dlite/errors.hpp"
#include "dlite/hash.hpp"
#include "dlite/hbos.hpp"
#include "dlite/kcenter.hpp"

namespace dlite::distill {

struct DistillOptions {
    double tau = 0.05;  // percent of highest-OOD rows to drop
    double eta = 5.0;   // percent of remaining rows to keep
    std::uint64_t seed = 42;
    std::int64_t bins = 0;  // 0 = round(sqrt(n))
    double alpha = 1e-6;
    HistNorm hist_norm = HistNorm::kMaxOne;
    KCenterInit init = KCenterInit::kFarthestFromCentroid;

    void validate() const {
        if (eta <= 0.0 || eta > 100.0) throw ConfigError("distill: eta must be in (0, 100]");
        if (tau < 0.0 || tau >= 100.0) throw ConfigError("distill: tau must be in [0, 100)");
        if (alpha <= 0.0) throw ConfigError("distill: alpha must be positive");
        if (bins < 0) throw ConfigError("distill: bins must be >= 0");
    }
};

struct SelectionManifest {
    std::string dataset_id;
    std::vector<std::int64_t> kept_after_ood;  // ascending
    std::vector<std::int64_t> selected;        // greedy order, original indices
    double tau = 0.0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;
    double coverage_radius = 0.0;
};

inline std::string options_hash(const DistillOptions& opt) {
    nlohmann::ordered_json j;
    j["tau"] = opt.tau;
    j["eta"] = opt.eta;
    j["seed"] = opt.seed;
    j["bins"] = opt.bins;
    j["alpha"] = opt.alpha;
    j["hist_norm"] = opt.hist_norm == HistNorm::kMaxOne ? "max_one" : "density";
    j["kcenter_init"] = opt.init == KCenterInit::kFarthestFromCentroid ? "centroid" : "random";
    return to_hex(fnv1a64(j.dump()));
}

// Selection size for a post-removal pool: round(eta% * n_kept), at least 1.
inline std::int64_t selection_size(std::int64_t n_kept, double eta) {
    return std::max<std::int64_t>(1, std::llround(eta / 100.0 * double(n_kept)));
}

inline SelectionManifest distill_dataset(const std::string& dataset_id,
                                         const compressor::LatentMatrix& latents,
                                         const DistillOptions& opt,
                                         OodScores* scores_out = nullptr) {
    opt.validate();
    if (latents.n < 2) throw ContractError("distill_dataset: need at least two segments");

    const std::int64_t bins = opt.bins > 0 ? opt.bins : default_bins(latents.n);
    const auto model = fit_histograms(latents.z, latents.n, latents.d, bins, opt.alpha,
                                      opt.hist_norm);
    auto scores = score_ood(latents.z, latents.n, latents.d, model);
    auto kept = remove_outliers(scores, opt.tau);
    if (kept.empty()) throw ContractError("distill_dataset: tau removed every segment");

    std::vector<float> kept_z(kept.size() * static_cast<std::size_t>(latents.d));
    for (std::size_t r = 0; r < kept.size(); ++r)
        std::copy_n(latents.z.begin() + kept[r] * latents.d, latents.d,
                    kept_z.begin() + static_cast<std::int64_t>(r) * latents.d);

    const std::int64_t k = selection_size(static_cast<std::int64_t>(kept.size()), opt.eta);
    auto picked = kcenter_select(kept_z, static_cast<std::int64_t>(kept.size()), latents.d, k,
                                 derive_seed(opt.seed, "kcenter"), opt.init);

    SelectionManifest m;
    m.dataset_id = dataset_id;
    m.kept_after_ood = std::move(kept);
    m.selected.reserve(picked.selected.size());
    for (const auto local : picked.selected) m.selected.push_back(m.kept_after_ood[local]);
    m.tau = opt.tau;
    m.eta = opt.eta;
    m.seed = opt.seed;
    m.config_hash = options_hash(opt);
    m.coverage_radius = picked.coverage_radius;
    if (scores_out) *scores_out = std::move(scores);
    return m;
}

inline nlohmann::ordered_json manifest_to_json(const SelectionManifest& m) {
    nlohmann::ordered_json j;
    j["dataset_id"] = m.dataset_id;
    j["kept_after_ood"] = m.kept_after_ood;
    j["selected"] = m.selected;
    j["tau"] = m.tau;
    j["eta"] = m.eta;
    j["seed"] = m.seed;
    j["config_hash"] = m.config_hash;
    j["coverage_radius"] = m.coverage_radius;
    return j;
}

inline SelectionManifest manifest_from_json(const nlohmann::json& j) {
    SelectionManifest m;
    try {
        m.dataset_id = j.at("dataset_id").get<std::string>();
        m.kept_after_ood = j.at("kept_after_ood").get<std::vector<std::int64_t>>();
        m.selected = j.at("selected").get<std::vector<std::int64_t>>();
        m.tau = j.at("tau").get<double>();
        m.eta = j.at("eta").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.coverage_radius = j.at("coverage_radius").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest_from_json: " + std::string(e.what()));
    }
    return m;
}

inline void write_manifest(const std::filesystem::path& path, const SelectionManifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IntegrityError("write_manifest: cannot open " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

inline SelectionManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_manifest: missing " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_manifest: invalid JSON: " + std::string(e.what()));
    }
    return manifest_from_json(j);
}

// Optional score dump: one row per segment, ranked order available through
// the rank column.
inline std::string scores_csv(const OodScores& scores) {
    std::vector<std::int64_t> rank_of(scores.scores.size());
    for (std::size_t r = 0; r < scores.ranking.size(); ++r)
        rank_of[static_cast<std::size_t>(scores.ranking[r])] = static_cast<std::int64_t>(r);
    std::string out = "index,score,rank\n";
    char line[96];
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.10g,%lld\n", i, scores.scores[i],
                      static_cast<long long>(rank_of[i]));
        out += line;
    }
    return out;
}

}  // namespace dlite::distill
