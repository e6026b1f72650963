#pragma once

// Multi-view self-supervised autoencoder. Each segment's three views
// (potential, FFT magnitude, FFT phase) are cut into patches, every patch
// is mapped to one token by a per-view convolutional encoder, tokens get
// positional and view embeddings, and a transformer encoder produces the
// token sequence whose mean is the segment latent. A shallow transformer
// decoder plus per-view MLP heads reconstructs all patches. Training
// minimizes reconstruction error plus a small inter-instance
// discrimination term that penalizes cross-sample token similarity inside
// a batch.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/errors.hpp"
#include "dlite/optim.hpp"
#include "dlite/rng.hpp"
#include "dlite/segment_io.hpp"
#include "dlite/tensor.hpp"
#include "dlite/views.hpp"

namespace dlite::compressor {

struct CompressorConfig {
    std::int64_t d_latent = 64;
    std::int64_t enc_layers = 6;
    std::int64_t dec_layers = 2;
    std::int64_t heads = 8;
    std::int64_t num_patches = 20;
    double beta = 1e-4;
    std::int64_t epochs = 50;
    double base_lr = 1e-3;
    double clip_norm = 5.0;
    std::int64_t batch_size = 32;
    std::uint64_t seed = 42;
    // architecture details not tied to any reported value
    std::int64_t conv_channels = 8;
    std::int64_t ffn_mult = 4;

    void validate() const {
        if (d_latent <= 0 || enc_layers <= 0 || dec_layers <= 0 || heads <= 0 ||
            num_patches <= 0 || epochs <= 0 || batch_size <= 0 || conv_channels <= 0 ||
            ffn_mult <= 0)
            throw ConfigError("CompressorConfig: all counts must be positive");
        if (d_latent % heads != 0)
            throw ConfigError("CompressorConfig: d_latent must be divisible by heads");
        if (base_lr <= 0.0 || clip_norm <= 0.0)
            throw ConfigError("CompressorConfig: base_lr and clip_norm must be positive");
        if (beta < 0.0) throw ConfigError("CompressorConfig: beta must be non-negative");
    }
};

inline nlohmann::ordered_json config_json(const CompressorConfig& c) {
    nlohmann::ordered_json j;
    j["d_latent"] = c.d_latent;
    j["enc_layers"] = c.enc_layers;
    j["dec_layers"] = c.dec_layers;
    j["heads"] = c.heads;
    j["num_patches"] = c.num_patches;
    j["beta"] = c.beta;
    j["epochs"] = c.epochs;
    j["base_lr"] = c.base_lr;
    j["clip_norm"] = c.clip_norm;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["conv_channels"] = c.conv_channels;
    j["ffn_mult"] = c.ffn_mult;
    return j;
}

inline CompressorConfig config_from_json(const nlohmann::json& j,
                                         CompressorConfig c = CompressorConfig{}) {
    c.d_latent = j.value("d_latent", c.d_latent);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.heads = j.value("heads", c.heads);
    c.num_patches = j.value("num_patches", c.num_patches);
    c.beta = j.value("beta", c.beta);
    c.epochs = j.value("epochs", c.epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    return c;
}

// Per-segment token grid: 3 views x P patches, with the index metadata
// needed to keep attention permutation checks honest.
struct TokenSequence {
    Tensor tokens;  // [batch*3*P, d]
    std::vector<std::int64_t> positions;  // patch index per token row
    std::vector<std::int64_t> views;      // view index per token row
    std::int64_t batch = 0;
    std::int64_t num_patches = 0;
    std::int64_t d = 0;
};

struct LatentMatrix {
    std::int64_t n = 0;
    std::int64_t d = 0;
    std::vector<float> z;  // n x d, row i is segment i
};

// Reconstruction loss: squared error summed over every element, divided by
// the number of segments in the batch.
inline Tensor loss_rec(const Tensor& reconstructed, const Tensor& target,
                       std::int64_t batch_size = 1) {
    const Tensor diff = sub(reconstructed, target);
    return scale(sum_all(mul(diff, diff)), 1.0 / double(batch_size));
}

// Discrimination term from already-projected vectors:
// log(sum_{i != j} exp(cos(u_i, w_j))) / (B*(B-1)), division outside the log.
inline Tensor idc_from_projections(const Tensor& u, const Tensor& w) {
    if (u.rank() != 2 || w.rank() != 2 || u.dim(0) != w.dim(0) || u.dim(1) != w.dim(1))
        throw DimensionError("idc_from_projections: projections must share [B, d] shape");
    const std::int64_t b = u.dim(0);
    if (b < 2) throw ContractError("idc_from_projections: batch must hold at least 2 samples");
    const Tensor sims = matmul(row_normalize(u), transpose(row_normalize(w)));
    const Tensor lse = log_sum_exp(offdiag(sims), 0);
    return scale(lse, 1.0 / double(b * (b - 1)));
}

class MultiViewCompressor {
public:
    MultiViewCompressor(CompressorConfig cfg, std::int64_t channels, std::int64_t samples)
        : cfg_(cfg), channels_(channels), samples_(samples) {
        cfg_.validate();
        if (channels <= 0 || samples <= 1)
            throw ConfigError("MultiViewCompressor: need channels >= 1 and samples >= 2");
        grid_ = signal::make_patch_grid(samples, cfg_.num_patches);
        conv1_len_ = conv1d_out_len(grid_.patch_len, kKernel, kStride, kPad);
        conv2_len_ = conv1d_out_len(conv1_len_, kKernel, kStride, kPad);
        if (conv2_len_ < 1)
            throw ConfigError("MultiViewCompressor: patch length too short for the conv stack");
        Rng rng(derive_seed(cfg_.seed, "init"));
        build_parameters(rng);
    }

    const CompressorConfig& config() const { return cfg_; }
    std::int64_t channels() const { return channels_; }
    std::int64_t samples() const { return samples_; }
    const signal::PatchGrid& grid() const { return grid_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(named_.size());
        for (const auto& [name, t] : named_) out.push_back(t);
        return out;
    }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return named_; }

    Tensor& param(const std::string& name) {
        for (auto& [n, t] : named_)
            if (n == name) return t;
        throw ContractError("unknown parameter: " + name);
    }

    // --- forward pieces ----------------------------------------------------

    // Patch -> token encoding for all three views, with positional and view
    // embeddings added and tokens arranged segment-major: row b*3P + v*P + p.
    TokenSequence encode_patches(const signal::MultiViewBatch& batch) const {
        if (batch.channels != channels_ || batch.grid.patch_len != grid_.patch_len ||
            batch.grid.num_patches != grid_.num_patches)
            throw ContractError("encode_patches: batch layout does not match the model");
        const std::int64_t b = batch.batch;
        const std::int64_t p = grid_.num_patches;
        const std::int64_t d = cfg_.d_latent;

        const std::vector<const std::vector<float>*> views = {&batch.potential, &batch.magnitude,
                                                              &batch.phase};
        std::vector<Tensor> view_tokens;
        view_tokens.reserve(3);
        std::vector<std::int64_t> pos_idx(static_cast<std::size_t>(b * p));
        for (std::int64_t r = 0; r < b * p; ++r) pos_idx[r] = r % p;
        for (int v = 0; v < 3; ++v) {
            Tensor x = Tensor::from_data({b * channels_ * p, 1, grid_.patch_len}, *views[v]);
            Tensor h = gelu(conv1d(x, cparam(v, "conv1.w"), cparam(v, "conv1.b"), kStride, kPad));
            h = gelu(conv1d(h, cparam(v, "conv2.w"), cparam(v, "conv2.b"), kStride, kPad));
            h = reshape(h, {b * channels_ * p, cfg_.conv_channels * conv2_len_});
            Tensor tok = add_bias(matmul(h, cparam(v, "proj.w")), cparam(v, "proj.b"));
            // mean over channels keeps the encoder montage-agnostic
            tok = reshape(mean(reshape(tok, {b, channels_, p * d}), 1), {b * p, d});
            tok = add_rows_gather(tok, cparam_c("pos_emb"), pos_idx);
            tok = add_rows_gather(tok, cparam_c("view_emb"),
                                  std::vector<std::int64_t>(static_cast<std::size_t>(b * p), v));
            view_tokens.push_back(tok);
        }
        // interleave [v, b, p] rows into [b, v, p]
        const Tensor stacked = concat_rows(view_tokens);
        std::vector<std::int64_t> map(static_cast<std::size_t>(3 * b * p));
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t v = 0; v < 3; ++v)
                for (std::int64_t pi = 0; pi < p; ++pi)
                    map[bi * 3 * p + v * p + pi] = v * b * p + bi * p + pi;
        TokenSequence seq;
        seq.tokens = gather_rows(stacked, map);
        seq.batch = b;
        seq.num_patches = p;
        seq.d = d;
        seq.positions.resize(map.size());
        seq.views.resize(map.size());
        for (std::int64_t r = 0; r < 3 * b * p; ++r) {
            seq.positions[r] = (r % (3 * p)) % p;
            seq.views[r] = (r % (3 * p)) / p;
        }
        return seq;
    }

    // Transformer encoder over a token sequence; z is the per-segment mean
    // of the encoded tokens.
    std::pair<Tensor, Tensor> encode(const TokenSequence& seq) const {
        Tensor x = seq.tokens;
        const std::int64_t s = 3 * seq.num_patches;
        for (std::int64_t l = 0; l < cfg_.enc_layers; ++l)
            x = block(x, "enc." + std::to_string(l), seq.batch, s);
        x = affine_norm(x, "enc.final");
        const Tensor z = mean(reshape(x, {seq.batch, s, cfg_.d_latent}), 1);
        return {z, x};
    }

    // Decoder: shallow transformer over encoded tokens plus per-view MLP
    // heads. Returns one [B*P, C*T_W] tensor per view.
    std::array<Tensor, 3> decode(const Tensor& encoded, std::int64_t batch) const {
        const std::int64_t p = grid_.num_patches;
        const std::int64_t s = 3 * p;
        Tensor x = encoded;
        for (std::int64_t l = 0; l < cfg_.dec_layers; ++l)
            x = block(x, "dec." + std::to_string(l), batch, s);
        x = affine_norm(x, "dec.final");
        std::array<Tensor, 3> recon;
        for (int v = 0; v < 3; ++v) {
            std::vector<std::int64_t> rows(static_cast<std::size_t>(batch * p));
            for (std::int64_t bi = 0; bi < batch; ++bi)
                for (std::int64_t pi = 0; pi < p; ++pi) rows[bi * p + pi] = bi * s + v * p + pi;
            Tensor h = gather_rows(x, rows);
            h = gelu(add_bias(matmul(h, cparam(v, "head.w1")), cparam(v, "head.b1")));
            recon[v] = add_bias(matmul(h, cparam(v, "head.w2")), cparam(v, "head.b2"));
        }
        return recon;
    }

    Tensor project_g1(const Tensor& pooled) const { return mlp2(pooled, "g1"); }
    Tensor project_g2(const Tensor& pooled) const { return mlp2(pooled, "g2"); }

    // IDC loss between pooled pre-encoder tokens and pooled encoded tokens.
    Tensor loss_idc(const Tensor& z_pre, const Tensor& z_post) const {
        return idc_from_projections(project_g1(z_pre), project_g2(z_post));
    }

    struct BatchLosses {
        Tensor total;
        Tensor rec;
        Tensor idc;  // undefined tensor when beta == 0 and batch < 2
    };

    // Full training objective on one normalized view batch.
    BatchLosses forward_losses(const signal::MultiViewBatch& batch) const {
        const std::int64_t b = batch.batch;
        TokenSequence seq = encode_patches(batch);
        const Tensor z_pre =
            mean(reshape(seq.tokens, {b, 3 * grid_.num_patches, cfg_.d_latent}), 1);
        auto [z, encoded] = encode(seq);
        auto recon = decode(encoded, b);

        const std::vector<const std::vector<float>*> views = {&batch.potential, &batch.magnitude,
                                                              &batch.phase};
        BatchLosses out;
        for (int v = 0; v < 3; ++v) {
            const Tensor target = patch_targets(*views[v], b);
            const Tensor term = loss_rec(recon[v], target, b);
            out.rec = out.rec.defined() ? add(out.rec, term) : term;
        }
        if (b >= 2) {
            out.idc = loss_idc(z_pre, z);
            out.total = add(out.rec, scale(out.idc, cfg_.beta));
        } else {
            out.total = out.rec;
        }
        return out;
    }

    // Latents for a normalized view batch (inference path, no tape).
    std::vector<float> encode_latents(const signal::MultiViewBatch& batch) const {
        NoGradGuard ng;
        TokenSequence seq = encode_patches(batch);
        auto [z, encoded] = encode(seq);
        (void)encoded;
        return z.data();
    }

    // Rearranges a raw [B, C, P, T_W] view buffer into per-patch target rows
    // [B*P, C*T_W] matching the decoder head output layout.
    Tensor patch_targets(const std::vector<float>& view, std::int64_t batch) const {
        const std::int64_t p = grid_.num_patches, tw = grid_.patch_len;
        const std::int64_t gl = grid_.grid_len();
        std::vector<float> rows(static_cast<std::size_t>(batch * p * channels_ * tw));
        for (std::int64_t bi = 0; bi < batch; ++bi)
            for (std::int64_t pi = 0; pi < p; ++pi)
                for (std::int64_t c = 0; c < channels_; ++c)
                    std::copy_n(view.begin() + bi * channels_ * gl + c * gl + pi * tw, tw,
                                rows.begin() + ((bi * p + pi) * channels_ + c) * tw);
        return Tensor::from_data({batch * p, channels_ * tw}, std::move(rows));
    }

    static constexpr std::int64_t kKernel = 7;
    static constexpr std::int64_t kStride = 2;
    static constexpr std::int64_t kPad = 3;

private:
    Tensor block(const Tensor& x_in, const std::string& prefix, std::int64_t b,
                 std::int64_t s) const {
        const std::int64_t d = cfg_.d_latent;
        const std::int64_t heads = cfg_.heads;
        const std::int64_t hd = d / heads;
        Tensor h = affine_norm(x_in, prefix + ".ln1");
        const Tensor q = head_split(add_bias(matmul(h, p(prefix + ".attn.wq")), p(prefix + ".attn.bq")), b, s);
        const Tensor k = head_split(add_bias(matmul(h, p(prefix + ".attn.wk")), p(prefix + ".attn.bk")), b, s);
        const Tensor v = head_split(add_bias(matmul(h, p(prefix + ".attn.wv")), p(prefix + ".attn.bv")), b, s);
        Tensor attn = softmax(scale(batched_matmul(q, k, true), 1.0 / std::sqrt(double(hd))), 2);
        Tensor ctx = head_merge(batched_matmul(attn, v), b, s);
        Tensor x = add(x_in, add_bias(matmul(ctx, p(prefix + ".attn.wo")), p(prefix + ".attn.bo")));
        Tensor f = affine_norm(x, prefix + ".ln2");
        f = gelu(add_bias(matmul(f, p(prefix + ".ffn.w1")), p(prefix + ".ffn.b1")));
        f = add_bias(matmul(f, p(prefix + ".ffn.w2")), p(prefix + ".ffn.b2"));
        return add(x, f);
    }

    Tensor affine_norm(const Tensor& x, const std::string& prefix) const {
        return add_bias(mul_rowwise(layer_norm(x, 1), p(prefix + ".g")), p(prefix + ".b"));
    }

    Tensor mlp2(const Tensor& x, const std::string& prefix) const {
        Tensor h = gelu(add_bias(matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
        return add_bias(matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
    }

    // [B*S, d] -> [B*H, S, hd]
    Tensor head_split(const Tensor& x, std::int64_t b, std::int64_t s) const {
        const std::int64_t h = cfg_.heads, hd = cfg_.d_latent / cfg_.heads;
        return reshape(permute(reshape(x, {b, s, h, hd}), {0, 2, 1, 3}), {b * h, s, hd});
    }

    // [B*H, S, hd] -> [B*S, d]
    Tensor head_merge(const Tensor& x, std::int64_t b, std::int64_t s) const {
        const std::int64_t h = cfg_.heads, hd = cfg_.d_latent / cfg_.heads;
        return reshape(permute(reshape(x, {b, h, s, hd}), {0, 2, 1, 3}), {b * s, cfg_.d_latent});
    }

    const Tensor& p(const std::string& name) const {
        for (const auto& [n, t] : named_)
            if (n == name) return t;
        throw ContractError("unknown parameter: " + name);
    }
    const Tensor& cparam(int view, const std::string& suffix) const {
        return p("view" + std::to_string(view) + "." + suffix);
    }
    const Tensor& cparam_c(const std::string& name) const { return p(name); }

    void add_param(const std::string& name, Tensor t) { named_.emplace_back(name, std::move(t)); }

    void build_parameters(Rng& rng) {
        const std::int64_t d = cfg_.d_latent, f = cfg_.conv_channels;
        const std::int64_t flat = f * conv2_len_;
        for (int v = 0; v < 3; ++v) {
            const std::string pre = "view" + std::to_string(v) + ".";
            add_param(pre + "conv1.w", Tensor::init_uniform({f, 1, kKernel}, kKernel, rng));
            add_param(pre + "conv1.b", Tensor::zeros({f}, true));
            add_param(pre + "conv2.w", Tensor::init_uniform({f, f, kKernel}, f * kKernel, rng));
            add_param(pre + "conv2.b", Tensor::zeros({f}, true));
            add_param(pre + "proj.w", Tensor::init_uniform({flat, d}, flat, rng));
            add_param(pre + "proj.b", Tensor::zeros({d}, true));
        }
        add_param("pos_emb", Tensor::init_uniform({grid_.num_patches, d}, d, rng));
        add_param("view_emb", Tensor::init_uniform({3, d}, d, rng));
        for (std::int64_t l = 0; l < cfg_.enc_layers; ++l)
            build_block("enc." + std::to_string(l), rng);
        add_param("enc.final.g", Tensor::full({d}, 1.0f, true));
        add_param("enc.final.b", Tensor::zeros({d}, true));
        for (std::int64_t l = 0; l < cfg_.dec_layers; ++l)
            build_block("dec." + std::to_string(l), rng);
        add_param("dec.final.g", Tensor::full({d}, 1.0f, true));
        add_param("dec.final.b", Tensor::zeros({d}, true));
        const std::int64_t out_dim = channels_ * grid_.patch_len;
        for (int v = 0; v < 3; ++v) {
            const std::string pre = "view" + std::to_string(v) + ".";
            add_param(pre + "head.w1", Tensor::init_uniform({d, 2 * d}, d, rng));
            add_param(pre + "head.b1", Tensor::zeros({2 * d}, true));
            add_param(pre + "head.w2", Tensor::init_uniform({2 * d, out_dim}, 2 * d, rng));
            add_param(pre + "head.b2", Tensor::zeros({out_dim}, true));
        }
        for (const std::string g : {"g1", "g2"}) {
            add_param(g + ".w1", Tensor::init_uniform({d, d}, d, rng));
            add_param(g + ".b1", Tensor::zeros({d}, true));
            add_param(g + ".w2", Tensor::init_uniform({d, d}, d, rng));
            add_param(g + ".b2", Tensor::zeros({d}, true));
        }
    }

    void build_block(const std::string& prefix, Rng& rng) {
        const std::int64_t d = cfg_.d_latent;
        const std::int64_t ff = cfg_.ffn_mult * d;
        add_param(prefix + ".ln1.g", Tensor::full({d}, 1.0f, true));
        add_param(prefix + ".ln1.b", Tensor::zeros({d}, true));
        for (const std::string w : {"wq", "wk", "wv", "wo"})
            add_param(prefix + ".attn." + w, Tensor::init_uniform({d, d}, d, rng));
        for (const std::string b : {"bq", "bk", "bv", "bo"})
            add_param(prefix + ".attn." + b, Tensor::zeros({d}, true));
        add_param(prefix + ".ln2.g", Tensor::full({d}, 1.0f, true));
        add_param(prefix + ".ln2.b", Tensor::zeros({d}, true));
        add_param(prefix + ".ffn.w1", Tensor::init_uniform({d, ff}, d, rng));
        add_param(prefix + ".ffn.b1", Tensor::zeros({ff}, true));
        add_param(prefix + ".ffn.w2", Tensor::init_uniform({ff, d}, ff, rng));
        add_param(prefix + ".ffn.b2", Tensor::zeros({d}, true));
    }

    CompressorConfig cfg_;
    std::int64_t channels_;
    std::int64_t samples_;
    signal::PatchGrid grid_;
    std::int64_t conv1_len_ = 0;
    std::int64_t conv2_len_ = 0;
    std::vector<std::pair<std::string, Tensor>> named_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLog {
    std::int64_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_rec = 0.0;
    double loss_idc = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

// Normalized, patched views for every segment, built once before training.
class ViewCache {
public:
    ViewCache(const signal::SegmentSet& set, std::int64_t num_patches) {
        channels_ = set.channels;
        grid_ = signal::make_patch_grid(set.samples, num_patches);
        const std::int64_t vs = channels_ * grid_.grid_len();
        view_size_ = vs;
        n_ = set.n;
        for (auto* buf : {&potential_, &magnitude_, &phase_})
            buf->resize(static_cast<std::size_t>(set.n * vs));
        for (std::int64_t i = 0; i < set.n; ++i) {
            signal::MultiViewBatch one = signal::build_view_batch(
                set.segment(i), 1, set.channels, set.samples, num_patches);
            signal::normalize_views(one);
            std::copy(one.potential.begin(), one.potential.end(), potential_.begin() + i * vs);
            std::copy(one.magnitude.begin(), one.magnitude.end(), magnitude_.begin() + i * vs);
            std::copy(one.phase.begin(), one.phase.end(), phase_.begin() + i * vs);
        }
    }

    std::int64_t size() const { return n_; }
    const signal::PatchGrid& grid() const { return grid_; }

    // Assembles a normalized MultiViewBatch for the given segment indices.
    signal::MultiViewBatch gather(const std::vector<std::int64_t>& idx) const {
        signal::MultiViewBatch b;
        b.batch = static_cast<std::int64_t>(idx.size());
        b.channels = channels_;
        b.grid = grid_;
        const std::int64_t vs = view_size_;
        b.potential.resize(static_cast<std::size_t>(b.batch * vs));
        b.magnitude.resize(static_cast<std::size_t>(b.batch * vs));
        b.phase.resize(static_cast<std::size_t>(b.batch * vs));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(potential_.begin() + idx[r] * vs, vs, b.potential.begin() + r * vs);
            std::copy_n(magnitude_.begin() + idx[r] * vs, vs, b.magnitude.begin() + r * vs);
            std::copy_n(phase_.begin() + idx[r] * vs, vs, b.phase.begin() + r * vs);
        }
        return b;
    }

private:
    std::int64_t n_ = 0;
    std::int64_t channels_ = 0;
    std::int64_t view_size_ = 0;
    signal::PatchGrid grid_;
    std::vector<float> potential_, magnitude_, phase_;
};

// Shuffled mini-batch training with Adam, global-norm clipping, and the
// step learning-rate schedule. Deterministic for a fixed seed.
inline TrainResult train(MultiViewCompressor& model, const signal::SegmentSet& set) {
    const CompressorConfig& cfg = model.config();
    if (set.n < cfg.batch_size || cfg.batch_size < 2)
        throw ContractError("train: need n >= batch_size >= 2 (n=" + std::to_string(set.n) +
                            ", batch_size=" + std::to_string(cfg.batch_size) + ")");
    ViewCache cache(set, cfg.num_patches);
    auto params = model.parameters();
    AdamState state = AdamState::for_params(params, static_cast<float>(cfg.base_lr));
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

    std::vector<std::int64_t> order(static_cast<std::size_t>(set.n));
    for (std::int64_t i = 0; i < set.n; ++i) order[i] = i;

    TrainResult result;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(static_cast<int>(epoch), cfg.base_lr);
        state.lr = static_cast<float>(lr);
        shuffle_rng.shuffle(order);
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < set.n; start += cfg.batch_size) {
            const std::int64_t stop = std::min<std::int64_t>(set.n, start + cfg.batch_size);
            if (stop - start < 2) break;  // a single-segment tail has no pairs to discriminate
            std::vector<std::int64_t> idx(order.begin() + start, order.begin() + stop);
            auto batch = cache.gather(idx);
            try {
                auto losses = model.forward_losses(batch);
                zero_grads(params);
                backward(losses.total);
                clip_grad_norm(params, cfg.clip_norm);
                adam_step(params, state);
                const auto bsz = static_cast<double>(stop - start);
                log.loss_total += losses.total.item_hi() * bsz;
                log.loss_rec += losses.rec.item_hi() * bsz;
                log.loss_idc += (losses.idc.defined() ? losses.idc.item_hi() : 0.0) * bsz;
                seen += stop - start;
            } catch (const NumericError& e) {
                throw NumericError("train: aborted at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(start / cfg.batch_size) + ": " +
                                   e.what());
            }
        }
        log.loss_total /= double(seen);
        log.loss_rec /= double(seen);
        log.loss_idc /= double(seen);
        result.log.push_back(log);
    }
    return result;
}

inline std::string training_log_csv(const TrainResult& result) {
    std::string out = "epoch,lr,loss_total,loss_rec,loss_idc\n";
    char line[192];
    for (const auto& e : result.log) {
        std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(e.epoch), e.lr, e.loss_total, e.loss_rec,
                      e.loss_idc);
        out += line;
    }
    return out;
}

// Order-preserving latent extraction; each row depends only on its own
// segment, so batching is purely a throughput choice.
inline LatentMatrix encode_dataset(const MultiViewCompressor& model,
                                   const signal::SegmentSet& set,
                                   std::int64_t batch_size = 64) {
    if (set.channels != model.channels() || set.samples != model.samples())
        throw ConfigError("encode_dataset: segment shape (" + std::to_string(set.channels) +
                          "x" + std::to_string(set.samples) + ") does not match the model (" +
                          std::to_string(model.channels()) + "x" +
                          std::to_string(model.samples()) + ")");
    LatentMatrix out;
    out.n = set.n;
    out.d = model.config().d_latent;
    out.z.resize(static_cast<std::size_t>(out.n * out.d));
    for (std::int64_t start = 0; start < set.n; start += batch_size) {
        const std::int64_t stop = std::min<std::int64_t>(set.n, start + batch_size);
        auto batch = signal::build_view_batch(set.segment(start), stop - start, set.channels,
                                              set.samples, model.config().num_patches);
        signal::normalize_views(batch);
        const auto z = model.encode_latents(batch);
        std::copy(z.begin(), z.end(), out.z.begin() + start * out.d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "DLCKPT", u16 version, u32 json length, config
// JSON, u32 param count, then per parameter: u32 name length, name, u32 rank,
// u32 dims..., float32 data. Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCkptMagic[6] = {'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kCkptVersion = 1;
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const MultiViewCompressor& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("save_checkpoint: cannot open " + path.string());
    nlohmann::ordered_json meta;
    meta["config"] = config_json(model.config());
    meta["channels"] = model.channels();
    meta["samples"] = model.samples();
    const std::string meta_str = meta.dump();
    out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const std::uint16_t version = detail::kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const auto meta_len = static_cast<std::uint32_t>(meta_str.size());
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    const auto n_params = static_cast<std::uint32_t>(model.named_parameters().size());
    out.write(reinterpret_cast<const char*>(&n_params), sizeof(n_params));
    for (const auto& [name, t] : model.named_parameters()) {
        const auto name_len = static_cast<std::uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rank = static_cast<std::uint32_t>(t.shape().size());
        out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
        for (const auto d : t.shape()) {
            const auto dim = static_cast<std::uint32_t>(d);
            out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
        }
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.data().size() * sizeof(float)));
    }
    if (!out) throw IntegrityError("save_checkpoint: short write to " + path.string());
}

inline MultiViewCompressor load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_checkpoint: missing " + path.string());
    char magic[6];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
        throw FormatError("load_checkpoint: bad magic in " + path.string());
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != detail::kCkptVersion)
        throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t meta_len = 0;
    in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), meta_len);
    if (!in) throw FormatError("load_checkpoint: truncated header");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_checkpoint: bad metadata JSON: " + std::string(e.what()));
    }
    const CompressorConfig cfg = config_from_json(meta.at("config"));
    MultiViewCompressor model(cfg, meta.at("channels").get<std::int64_t>(),
                              meta.at("samples").get<std::int64_t>());
    std::uint32_t n_params = 0;
    in.read(reinterpret_cast<char*>(&n_params), sizeof(n_params));
    if (n_params != model.named_parameters().size())
        throw IntegrityError("load_checkpoint: parameter count mismatch");
    for (std::uint32_t pi = 0; pi < n_params; ++pi) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint32_t dim = 0;
            in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
            d = dim;
        }
        Tensor& t = model.param(name);
        if (t.shape() != shape)
            throw IntegrityError("load_checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.data().size() * sizeof(float)));
        if (!in) throw IntegrityError("load_checkpoint: truncated tensor data for " + name);
    }
    return model;
}

}  // namespace dlite::compressor
