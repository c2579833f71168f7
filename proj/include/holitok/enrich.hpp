#pragma once

// Latent-enrichment components: frozen random "teacher" networks producing
// frame-level and utterance-level targets, temporal alignment of the student
// latents onto the teacher rate, per-teacher projection heads with a cosine
// distillation loss, and a small task-conditioned encoder/decoder that scores
// symbol sequences directly from the latents.

#include "holitok/corpus.hpp"
#include "holitok/nn.hpp"
#include "holitok/ops.hpp"

namespace holitok {

// ---------------------------------------------------------------------------
// frozen teachers

// Strided conv stack over the waveform at a rate that deliberately differs
// from the codec's latent rate (160x downsample: 8 kHz -> 50 Hz), so the
// alignment path is always exercised. Parameters are frozen at construction.
template <typename S>
struct FrameTeacher {
    std::vector<Conv1dLayer<S>> convs;
    int64_t dim = 32;

    FrameTeacher() = default;
    FrameTeacher(uint64_t seed, int64_t dim_ = 32) : dim(dim_) {
        Rng rng(mix_seed(seed, 0xf0a));
        std::vector<int64_t> strides = {4, 5, 8};
        int64_t cin = 1;
        for (int64_t s : strides) {
            convs.push_back(Conv1dLayer<S>::causal(cin, dim, 2 * s, s, 1, rng));
            cin = dim;
        }
        ParamMap<S> m;
        collect("frame_teacher", m);
        set_trainable(m, "", false);
    }

    // wave [T] -> [T_r, dim], T_r = ceil(ceil(ceil(T/4)/5)/8)
    Tensor<S> forward(const Tensor<S>& wave) const {
        Tensor<S> h = reshape(wave, {1, wave.dim(0)});
        for (size_t i = 0; i < convs.size(); ++i) {
            h = convs[i].forward(h);
            if (i + 1 < convs.size()) h = tanh(h);
        }
        return transpose(h);
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(p + ".conv" + std::to_string(i), m);
    }
};

// Conv stack, mean pooled over time, unit-normalized: one vector per
// utterance. Also frozen at construction.
template <typename S>
struct UtteranceTeacher {
    std::vector<Conv1dLayer<S>> convs;
    int64_t dim = 16;

    UtteranceTeacher() = default;
    UtteranceTeacher(uint64_t seed, int64_t dim_ = 16) : dim(dim_) {
        Rng rng(mix_seed(seed, 0xf0b));
        convs.push_back(Conv1dLayer<S>::causal(1, dim, 16, 8, 1, rng));
        convs.push_back(Conv1dLayer<S>::causal(dim, dim, 16, 8, 1, rng));
        ParamMap<S> m;
        collect("utt_teacher", m);
        set_trainable(m, "", false);
    }

    // wave [T] -> [1, dim] with unit L2 norm
    Tensor<S> forward(const Tensor<S>& wave) const {
        Tensor<S> h = reshape(wave, {1, wave.dim(0)});
        h = convs[1].forward(tanh(convs[0].forward(h)));
        Tensor<S> pooled = reshape(mean_axis(h, 1), {1, dim});
        double n2 = 0.0;
        for (S v : pooled.values()) n2 += double(v) * double(v);
        if (n2 == 0.0) fail("utterance teacher produced a zero-norm embedding");
        return mul_scalar(pooled, static_cast<S>(1.0 / std::sqrt(n2)));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(p + ".conv" + std::to_string(i), m);
    }
};

// ---------------------------------------------------------------------------
// alignment and the distillation loss

// Linearly resamples [T, D] rows onto target_t rows; identity when the
// lengths already match.
template <typename S>
Tensor<S> align_frames(const Tensor<S>& x, int64_t target_t) {
    if (target_t < 1) fail("align_frames: target length must be >= 1");
    return interp_linear_rows(x, target_t);
}

// Row-wise cosine similarity [T, D] x [T, D] -> [T, 1]; exact zero-norm rows
// are rejected (cosine undefined) with the offending frame index.
template <typename S>
Tensor<S> cosine_rows(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    require_same_shape(a, b, "cosine_rows");
    int64_t t = a.dim(0), d = a.dim(1);
    for (int64_t i = 0; i < t; ++i) {
        double na = 0.0, nb = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            na += double(a.values()[i * d + j]) * double(a.values()[i * d + j]);
            nb += double(b.values()[i * d + j]) * double(b.values()[i * d + j]);
        }
        if (na == 0.0 || nb == 0.0)
            fail(std::string(what) + ": cosine undefined for zero-norm vector at frame " + std::to_string(i));
    }
    Tensor<S> dot = sum_axis(mul(a, b), 1);
    Tensor<S> norms = mul(sqrt(sum_axis(square(a), 1)), sqrt(sum_axis(square(b), 1)));
    return reshape(div(dot, norms), {t, 1});
}

// Two-layer head mapping aligned latents into a teacher's space.
template <typename S>
struct DistillHead {
    Linear<S> fc1, fc2;

    DistillHead() = default;
    DistillHead(int64_t d_in, int64_t d_out, Rng& rng)
        : fc1(d_in, 4 * d_out, rng), fc2(4 * d_out, d_out, rng) {}
    Tensor<S> forward(const Tensor<S>& x) const { return fc2.forward(silu(fc1.forward(x))); }
    void collect(const std::string& p, ParamMap<S>& m) const {
        fc1.collect(p + ".fc1", m);
        fc2.collect(p + ".fc2", m);
    }
};

template <typename S>
struct TeacherBundle {
    FrameTeacher<S> frame_teacher;
    UtteranceTeacher<S> utt_teacher;
    DistillHead<S> frame_head, utt_head;
    double lambda_frame = 1.0, lambda_utt = 1.0;

    TeacherBundle() = default;
    TeacherBundle(int64_t d_z, uint64_t teacher_seed, Rng& rng)
        : frame_teacher(teacher_seed), utt_teacher(teacher_seed),
          frame_head(d_z, frame_teacher.dim, rng), utt_head(d_z, utt_teacher.dim, rng) {}

    // trainable heads only; the teachers are frozen and excluded
    void collect(const std::string& p, ParamMap<S>& m) const {
        frame_head.collect(p + ".frame_head", m);
        utt_head.collect(p + ".utt_head", m);
    }
    ParamMap<S> teacher_params() const {
        ParamMap<S> m;
        frame_teacher.collect("frame_teacher", m);
        utt_teacher.collect("utt_teacher", m);
        return m;
    }
};

// Sum over teachers of lambda_r * mean(1 - cos(head(aligned latents),
// teacher target)); targets are constants (stop-gradient).
template <typename S>
Tensor<S> distill_loss(const Tensor<S>& z, const TeacherBundle<S>& bundle, const Tensor<S>& wave) {
    Tensor<S> frame_target = bundle.frame_teacher.forward(wave).detach();
    Tensor<S> aligned = align_frames(z, frame_target.dim(0));
    Tensor<S> frame_cos = cosine_rows(bundle.frame_head.forward(aligned), frame_target, "frame distill");
    Tensor<S> frame_term = mean(sub(full<S>({frame_cos.dim(0), 1}, S(1)), frame_cos));

    Tensor<S> utt_target = bundle.utt_teacher.forward(wave).detach();
    Tensor<S> pooled = reshape(mean_axis(z, 0), {1, z.dim(1)});
    Tensor<S> utt_cos = cosine_rows(bundle.utt_head.forward(pooled), utt_target, "utterance distill");
    Tensor<S> utt_term = sub(full<S>({1}, S(1)), reshape(utt_cos, {1}));

    return add(mul_scalar(frame_term, static_cast<S>(bundle.lambda_frame)),
               mul_scalar(utt_term, static_cast<S>(bundle.lambda_utt)));
}

// ---------------------------------------------------------------------------
// task-conditioned supervision

// Task ids and the shared symbol space: transcript symbols occupy
// [0, vocab), class labels are offset to [vocab, vocab + n_classes), and a
// single end-of-sequence id sits at the top.
enum class Task : int64_t { transcribe = 0, classify = 1 };

struct SupervisionConfig {
    int64_t d_z = 8;
    int64_t width = 64;
    int64_t heads = 4;
    int64_t enc_layers = 2;
    int64_t dec_layers = 2;
    int64_t n_symbols = 20;  // transcript vocab + class labels
    int64_t n_tasks = 2;
    int64_t max_len = 256;
    bool causal_encoder = false;
};

inline std::vector<int64_t> supervision_targets(const Utterance& utt, Task task,
                                                const CorpusConfig& corpus) {
    if (task == Task::transcribe) return std::vector<int64_t>(utt.transcript.begin(), utt.transcript.end());
    if (task == Task::classify) return {corpus.vocab + utt.class_label};
    fail("unknown supervision task id " + std::to_string(static_cast<int64_t>(task)));
}

// Transformer encoder over latents (causal or not per config) feeding a
// causal decoder that scores [task, latents, symbols...] left to right.
template <typename S>
struct SupervisionNet {
    SupervisionConfig cfg;
    Linear<S> in_proj;
    std::vector<TransformerBlock<S>> enc, dec;
    Tensor<S> task_table, sym_table, pos_table;
    Linear<S> out;  // zero-initialized: uniform logits at init

    SupervisionNet() = default;
    SupervisionNet(const SupervisionConfig& cfg_, Rng& rng)
        : cfg(cfg_), in_proj(cfg_.d_z, cfg_.width, rng) {
        for (int64_t i = 0; i < cfg.enc_layers; ++i) enc.emplace_back(cfg.width, cfg.heads, rng);
        for (int64_t i = 0; i < cfg.dec_layers; ++i) dec.emplace_back(cfg.width, cfg.heads, rng);
        task_table = init_weight<S>({cfg.n_tasks, cfg.width}, cfg.width, rng);
        sym_table = init_weight<S>({cfg.n_symbols + 1, cfg.width}, cfg.width, rng);
        pos_table = init_weight<S>({cfg.max_len, cfg.width}, cfg.width, rng);
        out = Linear<S>(cfg.width, cfg.n_symbols + 1, rng);
        out.zero_init();
    }

    int64_t eos_id() const { return cfg.n_symbols; }

    Tensor<S> encode(const Tensor<S>& z) const {
        Tensor<S> h = in_proj.forward(z);
        for (const auto& b : enc) h = b.forward(h, cfg.causal_encoder);
        return h;
    }

    void collect(const std::string& p, ParamMap<S>& m) const {
        in_proj.collect(p + ".in_proj", m);
        for (size_t i = 0; i < enc.size(); ++i) enc[i].collect(p + ".enc" + std::to_string(i), m);
        for (size_t i = 0; i < dec.size(); ++i) dec[i].collect(p + ".dec" + std::to_string(i), m);
        m.emplace(p + ".task_table", task_table);
        m.emplace(p + ".sym_table", sym_table);
        m.emplace(p + ".pos_table", pos_table);
        out.collect(p + ".out", m);
    }

    // Decoder logits for the stream [task, encoded latents, embedded
    // symbols]; returns [L, n_symbols + 1].
    Tensor<S> decode_stream(const Tensor<S>& enc_h, int64_t task,
                            const std::vector<int64_t>& symbols) const {
        if (task < 0 || task >= cfg.n_tasks) fail("unknown supervision task id " + std::to_string(task));
        for (int64_t s : symbols)
            if (s < 0 || s > cfg.n_symbols)
                fail("supervision symbol " + std::to_string(s) + " outside vocabulary of " +
                     std::to_string(cfg.n_symbols + 1));
        std::vector<Tensor<S>> parts;
        parts.push_back(gather_rows(task_table, {task}));
        parts.push_back(enc_h);
        if (!symbols.empty()) parts.push_back(gather_rows(sym_table, symbols));
        Tensor<S> h = concat_rows<S>(parts);
        if (h.dim(0) > cfg.max_len) fail("supervision stream exceeds configured max length");
        h = add(h, slice_rows(pos_table, 0, h.dim(0)));
        for (const auto& b : dec) h = b.forward(h, true);
        return out.forward(h);
    }
};

// Teacher-forced next-symbol cross-entropy with an end-of-sequence symbol
// appended; mean over target positions. Gradient flows back into z.
template <typename S>
Tensor<S> supervision_loss(const Tensor<S>& z, Task task, const std::vector<int64_t>& y,
                           const SupervisionNet<S>& net) {
    int64_t task_id = static_cast<int64_t>(task);
    Tensor<S> enc_h = net.encode(z);
    Tensor<S> logits = net.decode_stream(enc_h, task_id, y);
    int64_t prefix = 1 + enc_h.dim(0);
    // position prefix-1 predicts y[0]; the last symbol position predicts EOS
    std::vector<int64_t> targets(logits.dim(0), -1);
    for (size_t i = 0; i < y.size(); ++i) targets[prefix - 1 + i] = y[i];
    targets[prefix - 1 + y.size()] = net.eos_id();
    return cross_entropy_rows(logits, targets);
}

// Greedy left-to-right decode until EOS (or max_symbols).
template <typename S>
std::vector<int64_t> greedy_decode(const Tensor<S>& z, Task task, const SupervisionNet<S>& net,
                                   int64_t max_symbols) {
    NoGradGuard ng;
    Tensor<S> enc_h = net.encode(z);
    std::vector<int64_t> out;
    for (int64_t i = 0; i < max_symbols; ++i) {
        Tensor<S> logits = net.decode_stream(enc_h, static_cast<int64_t>(task), out);
        int64_t last = logits.dim(0) - 1, v = logits.dim(1);
        int64_t best = 0;
        for (int64_t j = 1; j < v; ++j)
            if (logits.values()[last * v + j] > logits.values()[last * v + best]) best = j;
        if (best == net.eos_id()) break;
        out.push_back(best);
    }
    return out;
}

}  // namespace holitok
