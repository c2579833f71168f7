#pragma once

// Downstream model over the frozen tokenizer latents: a causal transformer
// backbone reads mixed text/audio streams, a linear LM head scores text
// tokens, and a DiT-style velocity head generates the next latent patch by
// flow matching. Instantiates text-to-speech (generation) and speech-to-text
// (understanding) from shared weights.

#include "holitok/pipeline.hpp"

namespace holitok {

struct UnifiedConfig {
    int64_t d_z = 8;
    int64_t patch = 4;   // latent frames per autoregressive unit
    int64_t n_text = 16; // raw text symbols; markers live above this range
    int64_t width = 128, heads = 4, layers = 4;
    int64_t dit_width = 128, dit_heads = 4, dit_layers = 4;
    int64_t patch_enc_layers = 2;
    int64_t semantic_dim = 64;  // feature width in mean_pool_linear mode
    int64_t max_positions = 256;
    int64_t max_text = 64;  // transcription length cap
    int64_t k_max = 128;    // generation patch cap
    double lambda_eos = 1.0;
    bool mean_pool_linear = false;  // otherwise the per-patch encoder

    // marker ids in a reserved range directly above the text symbols
    int64_t tok_text() const { return n_text + 0; }
    int64_t tok_t2s() const { return n_text + 1; }
    int64_t tok_speech() const { return n_text + 2; }
    int64_t tok_s2t() const { return n_text + 3; }
    int64_t tok_desc() const { return n_text + 4; }
    int64_t tok_loss_open() const { return n_text + 5; }
    int64_t tok_loss_close() const { return n_text + 6; }
    int64_t tok_eos() const { return n_text + 7; }
    int64_t tok_audio() const { return n_text + 8; }  // stream slot for a patch
    int64_t vocab() const { return n_text + 9; }

    void validate() const {
        if (patch < 1) fail("unified config: patch size must be >= 1");
        if (n_text < 2 || width < 1 || layers < 1 || dit_layers < 1)
            fail("unified config: bad dimensions");
        if (width % heads != 0 || dit_width % dit_heads != 0)
            fail("unified config: width not divisible by heads");
    }
};

// ---------------------------------------------------------------------------
// patching

template <typename S>
struct PatchSequence {
    std::vector<Tensor<S>> patches;  // each [P, d_z]; final patch zero-padded
    std::vector<int64_t> valid;      // real frames per patch
    int64_t P = 0;
    int64_t t_z = 0;
    int64_t count() const { return int64_t(patches.size()); }
};

template <typename S>
PatchSequence<S> patchify(const Tensor<S>& z, int64_t P) {
    if (P < 1) fail("patchify: patch size must be >= 1");
    if (z.rank() != 2 || z.dim(0) < 1) fail("patchify: need a [T, d] latent sequence");
    PatchSequence<S> ps;
    ps.P = P;
    ps.t_z = z.dim(0);
    int64_t K = (z.dim(0) + P - 1) / P;
    for (int64_t k = 0; k < K; ++k) {
        int64_t lo = k * P;
        int64_t n = std::min(P, z.dim(0) - lo);
        Tensor<S> p = slice_rows(z, lo, n);
        if (n < P) p = concat_rows<S>({p, zeros<S>({P - n, z.dim(1)})});
        ps.patches.push_back(p);
        ps.valid.push_back(n);
    }
    return ps;
}

template <typename S>
Tensor<S> unpatchify(const PatchSequence<S>& ps) {
    if (ps.patches.empty()) fail("unpatchify: empty patch sequence");
    std::vector<Tensor<S>> parts;
    for (size_t k = 0; k < ps.patches.size(); ++k)
        parts.push_back(slice_rows(ps.patches[k], 0, ps.valid[k]));
    return concat_rows(parts);
}

// ---------------------------------------------------------------------------
// sequence layout

enum class UnifiedTask : int64_t { tts = 0, asr = 1, desc_tts = 2 };

struct SequenceLayout {
    std::vector<int64_t> tokens;       // token id per position
    std::vector<int64_t> patch_index;  // patch number at audio slots, else -1
    std::vector<uint8_t> loss_mask;    // 1 inside the loss span
    UnifiedTask task = UnifiedTask::tts;

    int64_t length() const { return int64_t(tokens.size()); }
    int64_t n_patches() const {
        int64_t k = 0;
        for (int64_t p : patch_index) k = std::max(k, p + 1);
        return k;
    }
    int64_t patch_position(int64_t k) const {
        for (size_t i = 0; i < patch_index.size(); ++i)
            if (patch_index[i] == k) return int64_t(i);
        fail("layout has no position for patch " + std::to_string(k));
        return -1;
    }

    void validate(const UnifiedConfig& cfg) const {
        if (tokens.size() != patch_index.size() || tokens.size() != loss_mask.size())
            fail("layout: field lengths disagree");
        if (length() > cfg.max_positions) fail("layout exceeds max positions");
        int task_markers = 0;
        int64_t open = -1, close = -1, next_patch = 0;
        for (size_t i = 0; i < tokens.size(); ++i) {
            int64_t tk = tokens[i];
            if (tk < 0 || tk >= cfg.vocab()) fail("layout: token id out of range");
            if (tk == cfg.tok_t2s() || tk == cfg.tok_s2t()) ++task_markers;
            if (tk == cfg.tok_loss_open()) open = int64_t(i);
            if (tk == cfg.tok_loss_close()) close = int64_t(i);
            if ((tk == cfg.tok_audio()) != (patch_index[i] >= 0))
                fail("layout: audio marker and patch index disagree");
            if (patch_index[i] >= 0 && patch_index[i] != next_patch++)
                fail("layout: patch indices must run 0,1,2,...");
        }
        if (task_markers != 1) fail("layout: expected exactly one task marker");
        if (open < 0 || close < 0 || open >= close) fail("layout: malformed loss span");
        for (size_t i = 0; i < tokens.size(); ++i) {
            bool inside = int64_t(i) > open && int64_t(i) < close;
            if (loss_mask[i] && !inside) fail("layout: loss mask outside the span");
            if (!loss_mask[i] && inside) fail("layout: unmasked position inside the span");
        }
    }
};

inline SequenceLayout build_layout(UnifiedTask task, const std::vector<int64_t>& text,
                                   int64_t n_patches, const UnifiedConfig& cfg,
                                   const std::vector<int64_t>& desc = {}) {
    if (text.empty()) fail("build_layout: empty text");
    if (n_patches < 1) fail("build_layout: need at least one audio patch");
    for (int64_t t : text)
        if (t < 0 || t >= cfg.n_text) fail("build_layout: text symbol out of range");
    SequenceLayout lay;
    lay.task = task;
    auto put = [&lay](int64_t tok, int64_t patch, bool mask) {
        lay.tokens.push_back(tok);
        lay.patch_index.push_back(patch);
        lay.loss_mask.push_back(mask ? 1 : 0);
    };
    if (task == UnifiedTask::desc_tts) {
        if (desc.empty()) fail("build_layout: description task needs a description");
        put(cfg.tok_desc(), -1, false);
        for (int64_t d : desc) put(d, -1, false);
    }
    if (task == UnifiedTask::tts || task == UnifiedTask::desc_tts) {
        put(cfg.tok_text(), -1, false);
        for (int64_t t : text) put(t, -1, false);
        put(cfg.tok_t2s(), -1, false);
        put(cfg.tok_loss_open(), -1, false);
        for (int64_t k = 0; k < n_patches; ++k) put(cfg.tok_audio(), k, true);
        put(cfg.tok_eos(), -1, true);
        put(cfg.tok_loss_close(), -1, false);
    } else {
        put(cfg.tok_speech(), -1, false);
        for (int64_t k = 0; k < n_patches; ++k) put(cfg.tok_audio(), k, false);
        put(cfg.tok_s2t(), -1, false);
        put(cfg.tok_loss_open(), -1, false);
        for (int64_t t : text) put(t, -1, true);
        put(cfg.tok_eos(), -1, true);
        put(cfg.tok_loss_close(), -1, false);
    }
    lay.validate(cfg);
    return lay;
}

// ---------------------------------------------------------------------------
// audio-to-embedding mappings

// Small non-causal transformer over the frames of one patch, mean-pooled.
template <typename S>
struct PatchEncoder {
    Linear<S> in_proj;
    Tensor<S> pos;
    std::vector<TransformerBlock<S>> blocks;

    PatchEncoder() = default;
    PatchEncoder(const UnifiedConfig& cfg, Rng& rng)
        : in_proj(cfg.d_z, cfg.width, rng),
          pos(init_weight<S>({cfg.patch, cfg.width}, cfg.width, rng)) {
        for (int64_t i = 0; i < cfg.patch_enc_layers; ++i)
            blocks.emplace_back(cfg.width, cfg.heads, rng);
    }

    Tensor<S> forward(const Tensor<S>& patch) const {  // [P, d_z] -> [1, width]
        Tensor<S> x = add(in_proj.forward(patch), pos);
        for (const auto& b : blocks) x = b.forward(x, false);
        return reshape(mean_axis(x, 0), {1, x.dim(1)});
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        in_proj.collect(p + ".in", m);
        m.emplace(p + ".pos", pos);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(p + ".block" + std::to_string(i), m);
    }
};

// Mean over the valid frames of each patch, then one linear map. The rows
// may be raw latents or semantic-encoder features of the same sequence.
template <typename S>
Tensor<S> mean_pool_patches(const Tensor<S>& rows, const PatchSequence<S>& ps,
                            const Linear<S>& proj) {
    if (rows.dim(0) != ps.t_z) fail("mean_pool_patches: row count does not match the latents");
    std::vector<Tensor<S>> pooled;
    for (int64_t k = 0; k < ps.count(); ++k) {
        Tensor<S> part = slice_rows(rows, k * ps.P, ps.valid[size_t(k)]);
        pooled.push_back(reshape(mean_axis(part, 0), {1, rows.dim(1)}));
    }
    return proj.forward(concat_rows(pooled));  // [K, width]
}

// ---------------------------------------------------------------------------
// DiT velocity head: per-block adaptive normalization from the timestep,
// self-attention over the patch frames, cross-attention over the causal
// prefix (backbone hiddens and embedded latent history).

template <typename S>
Tensor<S> timestep_features(double t, int64_t dim) {
    std::vector<S> v(size_t(dim), S(0));
    int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        v[size_t(i)] = static_cast<S>(std::sin(t * freq));
        v[size_t(half + i)] = static_cast<S>(std::cos(t * freq));
    }
    return from_values<S>({1, dim}, v);
}

template <typename S>
struct DitBlock {
    Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    MultiHeadAttention<S> self_attn, cross_attn;
    Linear<S> fc1, fc2;
    Linear<S> mod;  // timestep embedding -> 9 per-width vectors, zero-init

    DitBlock() = default;
    DitBlock(int64_t dim, int64_t heads, Rng& rng)
        : ln1_g(init_zero<S>({dim})), ln1_b(init_zero<S>({dim})),
          ln2_g(init_zero<S>({dim})), ln2_b(init_zero<S>({dim})),
          ln3_g(init_zero<S>({dim})), ln3_b(init_zero<S>({dim})),
          self_attn(dim, heads, rng), cross_attn(dim, heads, rng),
          fc1(dim, 4 * dim, rng), fc2(4 * dim, dim, rng), mod(dim, 9 * dim, rng) {
        std::fill(ln1_g.values().begin(), ln1_g.values().end(), S(1));
        std::fill(ln2_g.values().begin(), ln2_g.values().end(), S(1));
        std::fill(ln3_g.values().begin(), ln3_g.values().end(), S(1));
        mod.zero_init();  // gates start at zero: the block is the identity
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& ctx, const Tensor<S>& t_emb) const {
        int64_t d = x.dim(1);
        Tensor<S> m = mod.forward(t_emb);  // [1, 9d]
        auto piece = [&](int64_t i) { return reshape(slice_cols(m, i * d, d), {d}); };
        auto modulate = [&](const Tensor<S>& y, int64_t i) {
            return add_rowvec(mul_rowvec(y, add_scalar(piece(2 * i), S(1))), piece(2 * i + 1));
        };
        Tensor<S> h = add(x, mul_rowvec(self_attn.self_forward(
                                            modulate(layer_norm_rows(x, ln1_g, ln1_b), 0), false),
                                        piece(6)));
        h = add(h, mul_rowvec(cross_attn.forward(
                                  modulate(layer_norm_rows(h, ln2_g, ln2_b), 1), ctx, false),
                              piece(7)));
        return add(h, mul_rowvec(fc2.forward(silu(fc1.forward(
                                     modulate(layer_norm_rows(h, ln3_g, ln3_b), 2)))),
                                 piece(8)));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".ln1.g", ln1_g);
        m.emplace(p + ".ln1.b", ln1_b);
        m.emplace(p + ".ln2.g", ln2_g);
        m.emplace(p + ".ln2.b", ln2_b);
        m.emplace(p + ".ln3.g", ln3_g);
        m.emplace(p + ".ln3.b", ln3_b);
        self_attn.collect(p + ".self", m);
        cross_attn.collect(p + ".cross", m);
        fc1.collect(p + ".fc1", m);
        fc2.collect(p + ".fc2", m);
        mod.collect(p + ".mod", m);
    }
};

template <typename S>
struct DitHead {
    Linear<S> in_proj;          // d_z -> dit width
    Tensor<S> x_pos;            // [P, dit width]
    Linear<S> h_proj;           // backbone width -> dit width
    Linear<S> z_proj;           // d_z -> dit width (latent history frames)
    Tensor<S> ctx_pos;          // positional rows for the latent history
    Linear<S> t_fc1, t_fc2;     // timestep embedding MLP
    std::vector<DitBlock<S>> blocks;
    Tensor<S> out_g, out_b;
    Linear<S> out;              // dit width -> d_z, zero-init

    DitHead() = default;
    DitHead(const UnifiedConfig& cfg, Rng& rng)
        : in_proj(cfg.d_z, cfg.dit_width, rng),
          x_pos(init_weight<S>({cfg.patch, cfg.dit_width}, cfg.dit_width, rng)),
          h_proj(cfg.width, cfg.dit_width, rng),
          z_proj(cfg.d_z, cfg.dit_width, rng),
          ctx_pos(init_weight<S>({cfg.max_positions * cfg.patch, cfg.dit_width}, cfg.dit_width,
                                 rng)),
          t_fc1(cfg.dit_width, cfg.dit_width, rng),
          t_fc2(cfg.dit_width, cfg.dit_width, rng),
          out_g(init_zero<S>({cfg.dit_width})), out_b(init_zero<S>({cfg.dit_width})),
          out(cfg.dit_width, cfg.d_z, rng) {
        for (int64_t i = 0; i < cfg.dit_layers; ++i)
            blocks.emplace_back(cfg.dit_width, cfg.dit_heads, rng);
        std::fill(out_g.values().begin(), out_g.values().end(), S(1));
        out.zero_init();  // fresh head predicts exactly zero velocity
    }

    // z_t: [P, d_z] noisy patch; h_prefix: [Th, width] causal backbone rows;
    // z_hist: [Tf, d_z] previously decided latent frames (may be empty rows).
    Tensor<S> forward(const Tensor<S>& z_t, double t, const Tensor<S>& h_prefix,
                      const Tensor<S>& z_hist) const {
        if (t < 0.0 || t > 1.0) fail("velocity head: t must lie in [0,1]");
        Tensor<S> t_emb = t_fc2.forward(silu(t_fc1.forward(
            timestep_features<S>(t, t_fc1.w.dim(0)))));
        std::vector<Tensor<S>> ctx_rows{h_proj.forward(h_prefix)};
        if (z_hist.rank() == 2 && z_hist.dim(0) > 0) {
            if (z_hist.dim(0) > ctx_pos.dim(0)) fail("velocity head: latent history too long");
            ctx_rows.push_back(add(z_proj.forward(z_hist), slice_rows(ctx_pos, 0, z_hist.dim(0))));
        }
        Tensor<S> ctx = concat_rows(ctx_rows);
        Tensor<S> x = add(in_proj.forward(z_t), x_pos);
        for (const auto& b : blocks) x = b.forward(x, ctx, t_emb);
        return out.forward(layer_norm_rows(x, out_g, out_b));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        in_proj.collect(p + ".in", m);
        m.emplace(p + ".x_pos", x_pos);
        h_proj.collect(p + ".h", m);
        z_proj.collect(p + ".z", m);
        m.emplace(p + ".ctx_pos", ctx_pos);
        t_fc1.collect(p + ".t1", m);
        t_fc2.collect(p + ".t2", m);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(p + ".block" + std::to_string(i), m);
        m.emplace(p + ".out_ln.g", out_g);
        m.emplace(p + ".out_ln.b", out_b);
        out.collect(p + ".out", m);
    }
};

// ---------------------------------------------------------------------------
// the unified model

template <typename S>
struct BackboneState {
    Tensor<S> hidden;  // [T, width]
    Tensor<S> logits;  // [T, vocab]
};

template <typename S>
struct UnifiedModel {
    UnifiedConfig cfg;
    Tensor<S> tok_table;  // [vocab, width]
    Tensor<S> pos_table;  // [max_positions, width]
    PatchEncoder<S> patch_enc;     // used unless mean_pool_linear
    Linear<S> mp_proj;             // used in mean_pool_linear mode
    SupervisionNet<S> semantic;    // feature extractor for mean_pool_linear
    std::vector<TransformerBlock<S>> blocks;
    Tensor<S> lnf_g, lnf_b;
    Linear<S> lm_head;   // zero-init: a fresh model scores all tokens equally
    Linear<S> eos_head;  // zero-init: a fresh model halts with probability 1/2
    DitHead<S> dit;
    Tensor<S> latent_rms;  // [1]; codec latents are standardized by this factor

    static UnifiedConfig checked(UnifiedConfig c) {
        c.validate();
        return c;
    }

    UnifiedModel(const UnifiedConfig& cfg_, Rng& rng)
        : cfg(checked(cfg_)),
          tok_table(init_weight<S>({cfg_.vocab(), cfg_.width}, cfg_.width, rng)),
          pos_table(init_weight<S>({cfg_.max_positions, cfg_.width}, cfg_.width, rng)),
          patch_enc(cfg_, rng),
          mp_proj(cfg_.semantic_dim, cfg_.width, rng),
          semantic(semantic_config(cfg_), rng),
          lnf_g(init_zero<S>({cfg_.width})), lnf_b(init_zero<S>({cfg_.width})),
          lm_head(cfg_.width, cfg_.vocab(), rng),
          eos_head(cfg_.width, 1, rng),
          dit(cfg_, rng),
          latent_rms(full<S>({1}, S(1))) {
        for (int64_t i = 0; i < cfg.layers; ++i) blocks.emplace_back(cfg.width, cfg.heads, rng);
        std::fill(lnf_g.values().begin(), lnf_g.values().end(), S(1));
        lm_head.zero_init();
        eos_head.zero_init();
    }

    static SupervisionConfig semantic_config(const UnifiedConfig& c) {
        SupervisionConfig sc;
        sc.d_z = c.d_z;
        sc.width = c.semantic_dim;
        sc.causal_encoder = true;
        return sc;
    }

    // [K, width] embedding rows for the patches of one utterance
    Tensor<S> embed_patches(const PatchSequence<S>& ps) const {
        if (cfg.mean_pool_linear) {
            Tensor<S> feats = semantic.encode(unpatchify(ps));
            return mean_pool_patches(feats, ps, mp_proj);
        }
        std::vector<Tensor<S>> rows;
        for (const auto& p : ps.patches) rows.push_back(patch_enc.forward(p));
        return concat_rows(rows);
    }

    BackboneState<S> forward(const SequenceLayout& lay, const Tensor<S>& patch_embs) const {
        lay.validate(cfg);
        if (lay.n_patches() != patch_embs.dim(0))
            fail("backbone: layout expects " + std::to_string(lay.n_patches()) +
                 " patch embeddings, got " + std::to_string(patch_embs.dim(0)));
        std::vector<Tensor<S>> rows;
        for (size_t i = 0; i < lay.tokens.size(); ++i) {
            if (lay.patch_index[i] >= 0)
                rows.push_back(slice_rows(patch_embs, lay.patch_index[i], 1));
            else
                rows.push_back(gather_rows(tok_table, {lay.tokens[i]}));
        }
        Tensor<S> x = add(concat_rows(rows), slice_rows(pos_table, 0, lay.length()));
        for (const auto& b : blocks) x = b.forward(x, true);
        Tensor<S> h = layer_norm_rows(x, lnf_g, lnf_b);
        return {h, lm_head.forward(h)};
    }

    // one termination logit per audio-patch position
    Tensor<S> eos_logits(const SequenceLayout& lay, const Tensor<S>& hidden) const {
        std::vector<Tensor<S>> rows;
        for (int64_t k = 0; k < lay.n_patches(); ++k)
            rows.push_back(slice_rows(hidden, lay.patch_position(k), 1));
        return eos_head.forward(concat_rows(rows));  // [K, 1]
    }

    ParamMap<S> params() const {
        ParamMap<S> m;
        m.emplace("unified.tok_table", tok_table);
        m.emplace("unified.pos_table", pos_table);
        if (cfg.mean_pool_linear) {
            mp_proj.collect("unified.mp_proj", m);
            semantic.collect("unified.semantic", m);
        } else {
            patch_enc.collect("unified.patch_enc", m);
        }
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect("unified.backbone.block" + std::to_string(i), m);
        m.emplace("unified.backbone.lnf.g", lnf_g);
        m.emplace("unified.backbone.lnf.b", lnf_b);
        lm_head.collect("unified.lm_head", m);
        eos_head.collect("unified.eos_head", m);
        dit.collect("unified.dit", m);
        m.emplace("unified.latent_rms", latent_rms);
        return m;
    }

    void save(const std::string& path) const { save_params(path, params()); }
    void load(const std::string& path) {
        ParamMap<S> m = params();
        load_params(path, m);
    }
};

// Start the downstream semantic encoder from a trained supervision network.
// Only meaningful in mean_pool_linear mode; shapes must agree.
template <typename S>
void adopt_semantic(UnifiedModel<S>& model, const SupervisionNet<S>& sup) {
    if (!model.cfg.mean_pool_linear) fail("adopt_semantic requires mean_pool_linear mode");
    ParamMap<S> src, dst;
    sup.collect("s", src);
    model.semantic.collect("s", dst);
    for (auto& [name, t] : dst) {
        auto it = src.find(name);
        if (it == src.end() || it->second.shape() != t.shape())
            fail("adopt_semantic: incompatible supervision network at '" + name + "'");
        t.values() = it->second.values();
    }
}

// ---------------------------------------------------------------------------
// losses

// Next-token cross-entropy restricted to masked positions with text targets.
template <typename S>
Tensor<S> understanding_loss(const SequenceLayout& lay, const Tensor<S>& logits,
                             const UnifiedConfig& cfg) {
    if (logits.rank() != 2 || logits.dim(0) != lay.length())
        fail("understanding_loss: logits do not match the layout");
    std::vector<int64_t> targets(size_t(lay.length() - 1), -1);
    int64_t counted = 0;
    for (int64_t j = 1; j < lay.length(); ++j) {
        if (!lay.loss_mask[size_t(j)]) continue;
        if (lay.tokens[size_t(j)] == cfg.tok_audio()) continue;  // trained by the flow head
        targets[size_t(j - 1)] = lay.tokens[size_t(j)];
        ++counted;
    }
    if (counted == 0) fail("understanding_loss: empty loss span");
    return cross_entropy_rows(slice_rows(logits, 0, lay.length() - 1), targets);
}

template <typename S>
struct FlowMatchSample {
    int64_t k = 0;        // patch index within its utterance
    double t = 0.0;
    Tensor<S> z_t;        // [P, d_z] interpolated noisy state
    Tensor<S> u;          // [P, d_z] target velocity
    int64_t valid = 0;    // frames counted by the loss
    Tensor<S> h_prefix;   // causal backbone rows before the patch position
    Tensor<S> z_hist;     // latent frames of earlier patches ([0, d_z] if none)
};

template <typename S>
FlowMatchSample<S> make_flow_sample(const PatchSequence<S>& ps, int64_t k, double t,
                                    const Tensor<S>& eps, const Tensor<S>& h_prefix) {
    if (k < 0 || k >= ps.count()) fail("make_flow_sample: patch index out of range");
    if (t < 0.0 || t > 1.0) fail("make_flow_sample: t must lie in [0,1]");
    FlowMatchSample<S> s;
    s.k = k;
    s.t = t;
    const Tensor<S>& zk = ps.patches[size_t(k)];
    s.z_t = add(mul_scalar(eps, static_cast<S>(1.0 - t)), mul_scalar(zk, static_cast<S>(t)));
    s.u = sub(zk, eps);
    s.valid = ps.valid[size_t(k)];
    s.h_prefix = h_prefix;
    if (k > 0) {
        std::vector<Tensor<S>> hist;
        for (int64_t j = 0; j < k; ++j)
            hist.push_back(slice_rows(ps.patches[size_t(j)], 0, ps.valid[size_t(j)]));
        s.z_hist = concat_rows(hist);
    } else {
        s.z_hist = zeros<S>({0, zk.dim(1)});
    }
    return s;
}

// Mean squared velocity error over the valid frames, averaged over samples.
template <typename S>
Tensor<S> fm_loss(const DitHead<S>& dit, const std::vector<FlowMatchSample<S>>& samples) {
    if (samples.empty()) fail("fm_loss: no samples");
    Tensor<S> acc = zeros<S>({1});
    for (const auto& s : samples) {
        if (s.t < 0.0 || s.t > 1.0) fail("fm_loss: t must lie in [0,1]");
        Tensor<S> v = dit.forward(s.z_t, s.t, s.h_prefix, s.z_hist);
        Tensor<S> d = sub(slice_rows(v, 0, s.valid), slice_rows(s.u, 0, s.valid));
        acc = add(acc, mean(square(d)));
    }
    return mul_scalar(acc, S(1) / S(samples.size()));
}

// Binary cross-entropy on the termination logits; labels mark the last patch.
template <typename S>
Tensor<S> eos_loss(const Tensor<S>& logits, const std::vector<S>& is_last) {
    return bce_logits(logits, is_last);
}

// ---------------------------------------------------------------------------
// sampling

// Euler integration of dz/dt = v(z, t) from t = 0 to 1.
template <typename S, typename Field>
Tensor<S> euler_integrate(Tensor<S> z, Field v, int64_t n_steps) {
    if (n_steps < 1) fail("euler_integrate: need at least one step");
    S dt = S(1) / S(n_steps);
    for (int64_t i = 0; i < n_steps; ++i) {
        double t = double(i) / double(n_steps);
        z = add(z, mul_scalar(v(z, t), dt));
        for (S x : z.values())
            if (!std::isfinite(double(x))) fail("sample_patch: non-finite state during integration");
    }
    return z;
}

template <typename S>
Tensor<S> sample_patch(const DitHead<S>& dit, const Tensor<S>& h_prefix, const Tensor<S>& z_hist,
                       int64_t P, int64_t d_z, int64_t n_steps, Rng& rng) {
    NoGradGuard ng;
    Tensor<S> z0 = randn<S>({P, d_z}, rng);
    return euler_integrate(z0, [&](const Tensor<S>& z, double t) {
        return dit.forward(z, t, h_prefix, z_hist);
    }, n_steps);
}

// ---------------------------------------------------------------------------
// end-to-end inference on top of a frozen tokenizer

// Latents for downstream use: deterministic posterior mean of the codec.
template <typename S>
Tensor<S> downstream_latents(const Codec<S>& codec, const Tensor<S>& wave) {
    NoGradGuard ng;
    return codec.posterior.forward(codec.encode(wave)).first.detach();
}

template <typename S>
std::vector<int64_t> transcribe_latents(const UnifiedModel<S>& model, const Tensor<S>& z) {
    NoGradGuard ng;
    const UnifiedConfig& cfg = model.cfg;
    Tensor<S> zn = mul_scalar(z, static_cast<S>(1.0 / double(model.latent_rms.values()[0])));
    PatchSequence<S> ps = patchify(zn, cfg.patch);
    Tensor<S> patch_embs = model.embed_patches(ps);
    SequenceLayout lay;
    lay.task = UnifiedTask::asr;
    auto put = [&lay](int64_t tok, int64_t patch) {
        lay.tokens.push_back(tok);
        lay.patch_index.push_back(patch);
        lay.loss_mask.push_back(0);
    };
    put(cfg.tok_speech(), -1);
    for (int64_t k = 0; k < ps.count(); ++k) put(cfg.tok_audio(), k);
    put(cfg.tok_s2t(), -1);
    put(cfg.tok_loss_open(), -1);
    std::vector<int64_t> out;
    while (int64_t(out.size()) < cfg.max_text) {
        // incomplete layouts skip validation; the mask plays no role here
        if (lay.length() >= cfg.max_positions) break;
        std::vector<Tensor<S>> rows;
        for (size_t i = 0; i < lay.tokens.size(); ++i) {
            if (lay.patch_index[i] >= 0)
                rows.push_back(slice_rows(patch_embs, lay.patch_index[i], 1));
            else
                rows.push_back(gather_rows(model.tok_table, {lay.tokens[i]}));
        }
        Tensor<S> x = add(concat_rows(rows), slice_rows(model.pos_table, 0, lay.length()));
        for (const auto& b : model.blocks) x = b.forward(x, true);
        Tensor<S> h = layer_norm_rows(x, model.lnf_g, model.lnf_b);
        Tensor<S> logits = model.lm_head.forward(slice_rows(h, lay.length() - 1, 1));
        // greedy over text symbols and the end marker only
        int64_t best = cfg.tok_eos();
        S best_v = logits.values()[size_t(cfg.tok_eos())];
        for (int64_t t = 0; t < cfg.n_text; ++t)
            if (logits.values()[size_t(t)] > best_v) {
                best_v = logits.values()[size_t(t)];
                best = t;
            }
        if (best == cfg.tok_eos()) break;
        out.push_back(best);
        put(best, -1);
    }
    return out;
}

template <typename S>
Tensor<S> synthesize_latents(const UnifiedModel<S>& model, const std::vector<int64_t>& text,
                             Rng& rng, int64_t n_steps = 16) {
    NoGradGuard ng;
    const UnifiedConfig& cfg = model.cfg;
    if (text.empty()) fail("synthesize: empty text");
    SequenceLayout lay;
    lay.task = UnifiedTask::tts;
    auto put = [&lay](int64_t tok, int64_t patch) {
        lay.tokens.push_back(tok);
        lay.patch_index.push_back(patch);
        lay.loss_mask.push_back(0);
    };
    put(cfg.tok_text(), -1);
    for (int64_t t : text) put(t, -1);
    put(cfg.tok_t2s(), -1);
    put(cfg.tok_loss_open(), -1);
    std::vector<Tensor<S>> patches;
    while (int64_t(patches.size()) < cfg.k_max && lay.length() < cfg.max_positions) {
        std::vector<Tensor<S>> rows;
        for (size_t i = 0; i < lay.tokens.size(); ++i) {
            if (lay.patch_index[i] >= 0)
                rows.push_back(model.cfg.mean_pool_linear
                                   ? Tensor<S>()  // replaced below
                                   : model.patch_enc.forward(patches[size_t(lay.patch_index[i])]));
            else
                rows.push_back(gather_rows(model.tok_table, {lay.tokens[i]}));
        }
        if (model.cfg.mean_pool_linear && !patches.empty()) {
            PatchSequence<S> ps;
            ps.P = cfg.patch;
            ps.t_z = int64_t(patches.size()) * cfg.patch;
            ps.patches = patches;
            ps.valid.assign(patches.size(), cfg.patch);
            Tensor<S> embs = model.embed_patches(ps);
            for (size_t i = 0; i < lay.tokens.size(); ++i)
                if (lay.patch_index[i] >= 0)
                    rows[i] = slice_rows(embs, lay.patch_index[i], 1);
        }
        Tensor<S> x = add(concat_rows(rows), slice_rows(model.pos_table, 0, lay.length()));
        for (const auto& b : model.blocks) x = b.forward(x, true);
        Tensor<S> h = layer_norm_rows(x, model.lnf_g, model.lnf_b);
        // termination check on the hidden state of the newest patch
        if (!patches.empty()) {
            int64_t pos = lay.length() - 1;  // last appended position is patch k-1
            Tensor<S> logit = model.eos_head.forward(slice_rows(h, pos, 1));
            double p = 1.0 / (1.0 + std::exp(-double(logit.values()[0])));
            if (p > 0.5) break;
        }
        Tensor<S> z_hist = patches.empty()
                               ? zeros<S>({0, cfg.d_z})
                               : concat_rows(patches);
        Tensor<S> next = sample_patch(model.dit, h, z_hist, cfg.patch, cfg.d_z, n_steps, rng);
        put(cfg.tok_audio(), int64_t(patches.size()));
        patches.push_back(next);
    }
    if (patches.empty()) fail("synthesize: produced no patches");
    // back to the codec's latent range for decoding
    return mul_scalar(concat_rows(patches), model.latent_rms.values()[0]);
}

// ---------------------------------------------------------------------------
// training driver over a frozen tokenizer

struct UnifiedTrainConfig {
    int64_t steps = 2000;
    uint64_t seed = 1;
    double lr0 = 1e-3;
    int64_t warmup = 100;
    std::string tasks = "unified";  // "tts" | "asr" | "unified"
    int64_t tts_ratio = 5;          // unified mode draws tts:asr at ratio:1
    int64_t fm_samples = 2;         // flow-matching draws per generation step
    bool freeze_semantic_encoder = false;
    std::string dit_init;           // optional checkpoint for the velocity head
};

template <typename S>
TrainingLog train_unified(UnifiedModel<S>& model, const Codec<S>& codec,
                          const std::vector<Utterance>& data, const UnifiedTrainConfig& tc) {
    if (data.empty()) fail("train_unified: empty training set");
    if (tc.tasks != "tts" && tc.tasks != "asr" && tc.tasks != "unified")
        fail("train_unified: tasks must be tts, asr, or unified");
    if (tc.freeze_semantic_encoder && !model.cfg.mean_pool_linear)
        fail("freeze_semantic_encoder requires mean_pool_linear mode");
    const UnifiedConfig& cfg = model.cfg;

    if (!tc.dit_init.empty()) {
        // adopt the velocity head of a previously trained model
        BlobMap blobs = load_blobs(tc.dit_init);
        ParamMap<S> mine = model.params();
        for (auto& [name, t] : mine) {
            if (name.rfind("unified.dit.", 0) != 0) continue;
            auto it = blobs.find(name);
            if (it == blobs.end()) fail("dit-init checkpoint missing tensor '" + name + "'");
            blob_into(it->second, name, t);
        }
    }

    // frozen tokenizer: cache deterministic latents per utterance, standardized
    // to unit RMS so downstream behavior is independent of the codec's range
    std::vector<Tensor<S>> raw;
    double sq = 0.0;
    int64_t count = 0;
    for (const auto& utt : data) {
        Tensor<S> x = crop_to_length<S>(utt, int64_t(utt.samples.size()));
        Tensor<S> z = downstream_latents(codec, x);
        for (S v : z.values()) sq += double(v) * double(v);
        count += z.numel();
        raw.push_back(z);
    }
    double rms = std::max(std::sqrt(sq / double(count)), 1e-8);
    model.latent_rms.values()[0] = static_cast<S>(rms);
    std::vector<PatchSequence<S>> cached;
    for (const auto& z : raw)
        cached.push_back(patchify(mul_scalar(z, static_cast<S>(1.0 / rms)), cfg.patch));

    ParamMap<S> params = model.params();
    set_trainable(params, "", true);
    if (tc.freeze_semantic_encoder) set_trainable(params, "unified.semantic", false);
    AdamW<S> opt(downstream_optim_config());
    ScheduleConfig sched;
    sched.cosine = true;
    sched.lr0 = tc.lr0;
    sched.warmup = std::min<int64_t>(tc.warmup, std::max<int64_t>(1, tc.steps / 10));
    sched.total = tc.steps;
    sched.min_lr = 0.1 * tc.lr0;

    TrainingLog log;
    log.columns = {"step", "lr", "task", "ce", "fm", "eos", "total"};
    for (int64_t step = 0; step < tc.steps; ++step) {
        Rng rng(mix_seed(tc.seed, uint64_t(step)));
        double lr = lr_schedule(step, sched);
        size_t i = size_t(rng.uniform_int(int64_t(data.size())));
        bool tts = tc.tasks == "tts" ||
                   (tc.tasks == "unified" && rng.uniform_int(tc.tts_ratio + 1) < tc.tts_ratio);
        const PatchSequence<S>& ps = cached[i];
        std::vector<int64_t> text(data[i].transcript.begin(), data[i].transcript.end());
        zero_grads(params);
        double ce_v = 0.0, fm_v = 0.0, eos_v = 0.0;
        Tensor<S> total;
        if (tts) {
            SequenceLayout lay = build_layout(UnifiedTask::tts, text, ps.count(), cfg);
            BackboneState<S> bs = model.forward(lay, model.embed_patches(ps));
            std::vector<FlowMatchSample<S>> samples;
            for (int64_t s = 0; s < tc.fm_samples; ++s) {
                int64_t k = rng.uniform_int(ps.count());
                double t = rng.uniform();
                Tensor<S> eps = randn<S>({cfg.patch, cfg.d_z}, rng);
                Tensor<S> h_prefix = slice_rows(bs.hidden, 0, lay.patch_position(k));
                samples.push_back(make_flow_sample(ps, k, t, eps, h_prefix));
            }
            Tensor<S> fm = fm_loss(model.dit, samples);
            std::vector<S> is_last(size_t(ps.count()), S(0));
            is_last.back() = S(1);
            Tensor<S> eos = eos_loss(model.eos_logits(lay, bs.hidden), is_last);
            total = add(fm, mul_scalar(eos, static_cast<S>(cfg.lambda_eos)));
            fm_v = double(fm.item());
            eos_v = double(eos.item());
        } else {
            SequenceLayout lay = build_layout(UnifiedTask::asr, text, ps.count(), cfg);
            BackboneState<S> bs = model.forward(lay, model.embed_patches(ps));
            Tensor<S> ce = understanding_loss(lay, bs.logits, cfg);
            total = ce;
            ce_v = double(ce.item());
        }
        total.backward();
        opt.step(params, lr);
        log.rows.push_back({double(step), lr, tts ? 0.0 : 1.0, ce_v, fm_v, eos_v,
                            double(total.item())});
    }
    return log;
}

}  // namespace holitok
