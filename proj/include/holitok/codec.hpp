#pragma once

// The tokenizer: a causal strided conv encoder (with one 2-frame lookahead
// conv at the latent rate), an LSTM variational bottleneck whose KL term is
// computed through a normalizing flow, and a mirrored SnakeBeta decoder that
// upsamples back to the waveform. Parameter names are grouped under
// "encoder.", "bottleneck." (posterior + flow), and "decoder." so the stage
// scheduler can freeze whole subtrees by prefix.

#include <utility>

#include "holitok/nn.hpp"

namespace holitok {

struct CodecConfig {
    int sample_rate = 8000;
    std::vector<int64_t> strides = {2, 2, 4, 4};
    std::vector<int64_t> kernels = {4, 4, 8, 8};
    int64_t base_channels = 4;   // doubles after every downsampling block
    int64_t d_z = 8;
    int64_t residual_layers = 2;  // per encoder block
    int64_t lstm_layers = 2;
    int64_t lstm_hidden = 32;     // LSTM width and project-in/out width
    int64_t flow_layers = 2;
    int64_t lookahead = 2;        // latent frames of right context
    std::vector<int64_t> amp_kernels = {3, 7};

    int64_t hop() const {
        int64_t h = 1;
        for (int64_t s : strides) h *= s;
        return h;
    }
    int64_t frame_rate() const { return sample_rate / hop(); }
    int64_t top_channels() const { return base_channels << strides.size(); }

    void validate() const {
        if (strides.size() != kernels.size()) fail("codec config: strides/kernels length mismatch");
        if (sample_rate % hop() != 0) fail("codec config: frame rate is not integral");
        for (size_t i = 0; i < strides.size(); ++i)
            if (kernels[i] < strides[i]) fail("codec config: kernel smaller than stride");
    }
};

inline CodecConfig toy_codec_config() { return CodecConfig{}; }

inline CodecConfig paper_codec_config() {
    CodecConfig c;
    c.sample_rate = 48000;
    c.strides = {2, 2, 2, 4, 6, 10};
    c.kernels = {4, 4, 4, 8, 12, 20};
    c.base_channels = 12;
    c.d_z = 128;
    c.residual_layers = 6;
    c.lstm_layers = 4;
    c.lstm_hidden = 256;
    c.flow_layers = 4;
    c.lookahead = 2;
    c.amp_kernels = {3, 7, 11};
    return c;
}

constexpr double kLogSigmaMin = -9.0;
constexpr double kLogSigmaMax = 4.0;
constexpr double kLog2Pi = 1.8378770664093454836;

// ---------------------------------------------------------------------------
// building blocks

// x + conv1x1(lrelu(dilated causal conv(lrelu(x)))), dilation 2^index.
template <typename S>
struct ResUnit {
    Conv1dLayer<S> c1, c2;

    ResUnit() = default;
    ResUnit(int64_t ch, int64_t dilation, Rng& rng)
        : c1(Conv1dLayer<S>::causal(ch, ch, 3, 1, dilation, rng)),
          c2(Conv1dLayer<S>::causal(ch, ch, 1, 1, 1, rng)) {}

    Tensor<S> forward(const Tensor<S>& x) const {
        return add(x, c2.forward(leaky_relu(c1.forward(leaky_relu(x, S(0.1))), S(0.1))));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        c1.collect(p + ".c1", m);
        c2.collect(p + ".c2", m);
    }
};

template <typename S>
struct EncoderBlock {
    std::vector<ResUnit<S>> res;
    Conv1dLayer<S> down;

    EncoderBlock() = default;
    EncoderBlock(int64_t ch, int64_t kernel, int64_t stride, int64_t n_res, Rng& rng) {
        for (int64_t i = 0; i < n_res; ++i) res.emplace_back(ch, int64_t(1) << i, rng);
        down = Conv1dLayer<S>::causal(ch, 2 * ch, kernel, stride, 1, rng);
    }
    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> h = x;
        for (const auto& r : res) h = r.forward(h);
        return down.forward(leaky_relu(h, S(0.1)));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < res.size(); ++i) res[i].collect(p + ".res" + std::to_string(i), m);
        down.collect(p + ".down", m);
    }
};

// x + snake(conv(snake(dilated causal conv(x)))) with per-channel SnakeBeta.
template <typename S>
struct AmpUnit {
    Conv1dLayer<S> c1, c2;
    Tensor<S> la1, lb1, la2, lb2;  // log alpha / log beta, identity-friendly at 0

    AmpUnit() = default;
    AmpUnit(int64_t ch, int64_t kernel, int64_t dilation, Rng& rng)
        : c1(Conv1dLayer<S>::causal(ch, ch, kernel, 1, dilation, rng)),
          c2(Conv1dLayer<S>::causal(ch, ch, kernel, 1, 1, rng)),
          la1(init_zero<S>({ch})), lb1(init_zero<S>({ch})),
          la2(init_zero<S>({ch})), lb2(init_zero<S>({ch})) {}

    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> h = snake_beta(c1.forward(x), la1, lb1);
        return add(x, snake_beta(c2.forward(h), la2, lb2));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        c1.collect(p + ".c1", m);
        c2.collect(p + ".c2", m);
        m.emplace(p + ".la1", la1);
        m.emplace(p + ".lb1", lb1);
        m.emplace(p + ".la2", la2);
        m.emplace(p + ".lb2", lb2);
    }
};

template <typename S>
struct DecoderBlock {
    ConvT1dLayer<S> up;
    std::vector<AmpUnit<S>> amps;

    DecoderBlock() = default;
    DecoderBlock(int64_t ch_in, int64_t kernel, int64_t stride,
                 const std::vector<int64_t>& amp_kernels, Rng& rng)
        : up(ch_in, ch_in / 2, kernel, stride, rng) {
        for (size_t i = 0; i < amp_kernels.size(); ++i)
            amps.emplace_back(ch_in / 2, amp_kernels[i], int64_t(1) << i, rng);
    }
    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> h = up.forward(x);
        for (const auto& a : amps) h = a.forward(h);
        return h;
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        up.collect(p + ".up", m);
        for (size_t i = 0; i < amps.size(); ++i) amps[i].collect(p + ".amp" + std::to_string(i), m);
    }
};

// ---------------------------------------------------------------------------
// posterior bottleneck

// project-in -> unidirectional LSTM stack -> project-out -> width-1 conv
// emitting (mu, log sigma). The head is zero-initialized and mu is a residual
// off the input, so at initialization mu = z and log sigma = 0.
template <typename S>
struct PosteriorStack {
    Linear<S> proj_in, proj_out, head;  // head: d_z -> 2*d_z
    std::vector<LSTMLayer<S>> lstms;
    int64_t d_z = 0;

    PosteriorStack() = default;
    PosteriorStack(const CodecConfig& cfg, Rng& rng)
        : proj_in(cfg.d_z, cfg.lstm_hidden, rng),
          proj_out(cfg.lstm_hidden, cfg.d_z, rng),
          head(cfg.d_z, 2 * cfg.d_z, rng),
          d_z(cfg.d_z) {
        for (int64_t i = 0; i < cfg.lstm_layers; ++i) lstms.emplace_back(cfg.lstm_hidden, cfg.lstm_hidden, rng);
        head.zero_init();
    }

    // z: [T, d_z] -> (mu [T, d_z], log_sigma [T, d_z])
    std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& z) const {
        Tensor<S> h = proj_in.forward(z);
        for (const auto& l : lstms) h = l.forward(h);
        Tensor<S> both = head.forward(proj_out.forward(h));
        Tensor<S> mu = add(z, slice_cols(both, 0, d_z));
        Tensor<S> log_sigma = clamp(slice_cols(both, d_z, d_z),
                                    static_cast<S>(kLogSigmaMin), static_cast<S>(kLogSigmaMax));
        return {mu, log_sigma};
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        proj_in.collect(p + ".proj_in", m);
        proj_out.collect(p + ".proj_out", m);
        head.collect(p + ".head", m);
        for (size_t i = 0; i < lstms.size(); ++i) lstms[i].collect(p + ".lstm" + std::to_string(i), m);
    }
};

// z = mu + exp(log_sigma) * eps, with eps treated as a constant.
template <typename S>
Tensor<S> sample_reparameterized(const Tensor<S>& mu, const Tensor<S>& log_sigma, const Tensor<S>& eps) {
    require_same_shape(mu, eps, "sample_reparameterized");
    return add(mu, mul(exp(log_sigma), eps.detach()));
}

// ---------------------------------------------------------------------------
// normalizing flow (per-frame affine coupling across channels)

template <typename S>
struct FlowLayer {
    Linear<S> fc1, fc2;  // fc2 zero-initialized: identity transform at start
    bool swap = false;
    int64_t d1 = 0, d2 = 0;

    FlowLayer() = default;
    FlowLayer(int64_t d_z, bool swap_, Rng& rng)
        : fc1(d_z / 2, d_z, rng), fc2(d_z, 2 * (d_z - d_z / 2), rng), swap(swap_),
          d1(d_z / 2), d2(d_z - d_z / 2) {
        fc2.zero_init();
    }

    // returns (y, per-frame log|det J| [T,1])
    std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& x) const {
        Tensor<S> a = swap ? slice_cols(x, d2, d1) : slice_cols(x, 0, d1);
        Tensor<S> b = swap ? slice_cols(x, 0, d2) : slice_cols(x, d1, d2);
        Tensor<S> st = fc2.forward(tanh(fc1.forward(a)));
        Tensor<S> s = tanh(slice_cols(st, 0, d2));  // bounded log-scale
        Tensor<S> t = slice_cols(st, d2, d2);
        Tensor<S> b2 = add(mul(b, exp(s)), t);
        Tensor<S> y = swap ? concat_cols<S>({b2, a}) : concat_cols<S>({a, b2});
        Tensor<S> logdet = reshape(sum_axis(s, 1), {x.dim(0), 1});
        return {y, logdet};
    }
    Tensor<S> inverse(const Tensor<S>& y) const {
        Tensor<S> a = swap ? slice_cols(y, d2, d1) : slice_cols(y, 0, d1);
        Tensor<S> b2 = swap ? slice_cols(y, 0, d2) : slice_cols(y, d1, d2);
        Tensor<S> st = fc2.forward(tanh(fc1.forward(a)));
        Tensor<S> s = tanh(slice_cols(st, 0, d2));
        Tensor<S> t = slice_cols(st, d2, d2);
        Tensor<S> b = mul(sub(b2, t), exp(neg(s)));
        return swap ? concat_cols<S>({b, a}) : concat_cols<S>({a, b});
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        fc1.collect(p + ".fc1", m);
        fc2.collect(p + ".fc2", m);
    }
};

template <typename S>
struct FlowStack {
    std::vector<FlowLayer<S>> layers;

    FlowStack() = default;
    FlowStack(const CodecConfig& cfg, Rng& rng) {
        for (int64_t i = 0; i < cfg.flow_layers; ++i) layers.emplace_back(cfg.d_z, i % 2 == 1, rng);
    }
    std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& z) const {
        Tensor<S> y = z;
        Tensor<S> logdet = zeros<S>({z.dim(0), 1});
        for (const auto& l : layers) {
            auto [y2, ld] = l.forward(y);
            y = y2;
            logdet = add(logdet, ld);
        }
        return {y, logdet};
    }
    Tensor<S> inverse(const Tensor<S>& y) const {
        Tensor<S> z = y;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) z = it->inverse(z);
        return z;
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(p + ".layer" + std::to_string(i), m);
    }
};

// ---------------------------------------------------------------------------
// KL estimator and closed form

// Closed-form diagonal-Gaussian KL to N(0, I): per-frame sum over dims of
// 0.5*(mu^2 + sigma^2 - 1 - 2 log sigma), averaged over frames.
template <typename S>
Tensor<S> kl_closed_form(const Tensor<S>& mu, const Tensor<S>& log_sigma) {
    Tensor<S> sig2 = exp(mul_scalar(log_sigma, S(2)));
    Tensor<S> per = mul_scalar(sub(add(square(mu), sig2),
                                   add_scalar(mul_scalar(log_sigma, S(2)), S(1))), S(0.5));
    return mean(sum_axis(per, 1));
}

// Monte-Carlo estimate of E[log q(z0) - log|det J| - log N(z_K; 0, I)] with
// z_K = flow(z0); reparameterized draws keep it differentiable in (mu, log
// sigma). With the identity flow this converges to the closed form.
// Returns (estimate, standard error of the per-draw frame means).
template <typename S>
std::pair<Tensor<S>, double> kl_with_flow(const Tensor<S>& mu, const Tensor<S>& log_sigma,
                                          const FlowStack<S>& flow, int n_mc, Rng& rng) {
    if (n_mc < 1) fail("kl_with_flow: n_mc must be >= 1");
    int64_t t = mu.dim(0), d = mu.dim(1);
    Tensor<S> acc = zeros<S>({1});
    double sum = 0.0, sum_sq = 0.0;
    for (int j = 0; j < n_mc; ++j) {
        Tensor<S> eps = randn<S>({t, d}, rng);
        Tensor<S> z0 = sample_reparameterized(mu, log_sigma, eps);
        // log q(z0) with z0 = mu + sigma*eps substituted: -0.5log2pi - logsig - eps^2/2
        Tensor<S> logq = sum_axis(sub(mul_scalar(add(log_sigma, mul_scalar(square(eps.detach()), S(0.5))), S(-1)),
                                      full<S>({t, d}, static_cast<S>(0.5 * kLog2Pi))), 1);
        auto [zk, logdet] = flow.forward(z0);
        Tensor<S> logp = sum_axis(mul_scalar(add_scalar(square(zk), static_cast<S>(kLog2Pi)), S(-0.5)), 1);
        Tensor<S> per_frame = sub(sub(reshape(logq, {t, 1}), logdet), reshape(logp, {t, 1}));
        Tensor<S> draw = mean(per_frame);
        double v = static_cast<double>(draw.item());
        sum += v;
        sum_sq += v * v;
        acc = add(acc, draw);
    }
    Tensor<S> est = mul_scalar(acc, S(1) / S(n_mc));
    double var = n_mc > 1 ? std::max(0.0, (sum_sq - sum * sum / n_mc) / (n_mc - 1)) : 0.0;
    double se = std::sqrt(var / n_mc);
    return {est, se};
}

// ---------------------------------------------------------------------------
// the codec

template <typename S>
struct Codec {
    CodecConfig cfg;

    // encoder
    Conv1dLayer<S> in_conv;
    std::vector<EncoderBlock<S>> enc_blocks;
    Conv1dLayer<S> enc_proj;
    Conv1dLayer<S> enc_look;  // the single non-causal conv
    // bottleneck
    PosteriorStack<S> posterior;
    FlowStack<S> flow;
    // decoder: mirrored pre-decoder bottleneck, lookahead conv, upsampling
    Linear<S> dec_proj_in, dec_proj_out;
    std::vector<LSTMLayer<S>> dec_lstms;
    Conv1dLayer<S> dec_look;
    std::vector<DecoderBlock<S>> dec_blocks;
    Conv1dLayer<S> out_conv;

    Codec() = default;
    Codec(const CodecConfig& cfg_, Rng& rng) : cfg(cfg_) {
        cfg.validate();
        int64_t ch = cfg.base_channels;
        in_conv = Conv1dLayer<S>::causal(1, ch, 7, 1, 1, rng);
        for (size_t b = 0; b < cfg.strides.size(); ++b) {
            enc_blocks.emplace_back(ch, cfg.kernels[b], cfg.strides[b], cfg.residual_layers, rng);
            ch *= 2;
        }
        enc_proj = Conv1dLayer<S>::causal(ch, cfg.d_z, 3, 1, 1, rng);
        enc_look = Conv1dLayer<S>::lookahead(cfg.d_z, cfg.d_z, 3, cfg.lookahead, rng);
        posterior = PosteriorStack<S>(cfg, rng);
        flow = FlowStack<S>(cfg, rng);
        dec_proj_in = Linear<S>(cfg.d_z, cfg.lstm_hidden, rng);
        for (int64_t i = 0; i < cfg.lstm_layers; ++i) dec_lstms.emplace_back(cfg.lstm_hidden, cfg.lstm_hidden, rng);
        dec_proj_out = Linear<S>(cfg.lstm_hidden, cfg.d_z, rng);
        dec_look = Conv1dLayer<S>::lookahead(cfg.d_z, ch, 3, cfg.lookahead, rng);
        for (size_t b = cfg.strides.size(); b-- > 0;) {
            dec_blocks.emplace_back(ch, cfg.kernels[b], cfg.strides[b], cfg.amp_kernels, rng);
            ch /= 2;
        }
        out_conv = Conv1dLayer<S>::causal(ch, 1, 7, 1, 1, rng);
    }

    // wave [T] -> latents [T_z, d_z]; right-pads to a hop multiple.
    Tensor<S> encode(const Tensor<S>& wave, std::vector<Tensor<S>>* trace = nullptr) const {
        if (wave.rank() != 1 || wave.dim(0) < 1) fail("encode expects a non-empty mono waveform");
        int64_t hop = cfg.hop();
        int64_t t = wave.dim(0);
        int64_t pad = (hop - t % hop) % hop;
        Tensor<S> x = reshape(pad > 0 ? pad_time(wave, 0, pad) : wave, {1, t + pad});
        Tensor<S> h = in_conv.forward(x);
        if (trace) trace->push_back(h);
        for (const auto& b : enc_blocks) {
            h = b.forward(h);
            if (trace) trace->push_back(h);
        }
        h = enc_proj.forward(leaky_relu(h, S(0.1)));
        if (trace) trace->push_back(h);
        h = enc_look.forward(h);
        if (trace) trace->push_back(h);
        return transpose(h);
    }

    // z [T_z, d_z] -> wave [T_z * hop]
    Tensor<S> decode(const Tensor<S>& z, std::vector<Tensor<S>>* trace = nullptr) const {
        if (z.rank() != 2 || z.dim(1) != cfg.d_z)
            fail("decode expects [T_z, " + std::to_string(cfg.d_z) + "] latents, got " + shape_str(z.shape()));
        // mirrored bottleneck with a residual, so it starts near identity
        Tensor<S> h = dec_proj_in.forward(z);
        for (const auto& l : dec_lstms) h = l.forward(h);
        Tensor<S> zr = add(z, dec_proj_out.forward(h));
        if (trace) trace->push_back(zr);
        Tensor<S> c = dec_look.forward(transpose(zr));
        if (trace) trace->push_back(c);
        for (const auto& b : dec_blocks) {
            c = b.forward(c);
            if (trace) trace->push_back(c);
        }
        Tensor<S> wave = tanh(out_conv.forward(c));
        if (trace) trace->push_back(wave);
        return reshape(wave, {wave.dim(1)});
    }

    void collect(ParamMap<S>& m) const {
        in_conv.collect("encoder.in_conv", m);
        for (size_t b = 0; b < enc_blocks.size(); ++b)
            enc_blocks[b].collect("encoder.block" + std::to_string(b), m);
        enc_proj.collect("encoder.proj", m);
        enc_look.collect("encoder.look", m);
        posterior.collect("bottleneck.posterior", m);
        flow.collect("bottleneck.flow", m);
        dec_proj_in.collect("decoder.proj_in", m);
        for (size_t i = 0; i < dec_lstms.size(); ++i)
            dec_lstms[i].collect("decoder.lstm" + std::to_string(i), m);
        dec_proj_out.collect("decoder.proj_out", m);
        dec_look.collect("decoder.look", m);
        for (size_t b = 0; b < dec_blocks.size(); ++b)
            dec_blocks[b].collect("decoder.block" + std::to_string(b), m);
        out_conv.collect("decoder.out_conv", m);
    }
    ParamMap<S> params() const {
        ParamMap<S> m;
        collect(m);
        return m;
    }
};

// ---------------------------------------------------------------------------
// causality probe

struct ProbeReport {
    int64_t encoder_lookahead = -1;  // measured, in latent frames
    int64_t decoder_lookahead = -1;
    bool pass = false;
    int64_t probes = 0;
    std::string detail;
};

// Perturbs inputs position-by-position and checks which outputs move, layer
// by layer. Encoder layers must stay strictly causal at their own rates until
// the lookahead conv adds exactly cfg.lookahead frames of right context;
// decoder output may react at most lookahead frames early. probe positions:
// every position when n_probes <= 0, else a random subset.
template <typename S>
ProbeReport causality_probe(const Codec<S>& model, int64_t n_samples, int64_t n_probes, Rng& rng) {
    NoGradGuard ng;
    const CodecConfig& cfg = model.cfg;
    int64_t hop = cfg.hop();
    ProbeReport rep;
    rep.pass = true;

    // strides accumulated per encoder trace entry: in_conv, blocks..., proj, look
    std::vector<int64_t> enc_sp = {1};
    int64_t sp = 1;
    for (int64_t s : cfg.strides) enc_sp.push_back(sp *= s);
    enc_sp.push_back(hop);  // proj
    enc_sp.push_back(hop);  // lookahead conv
    std::vector<int64_t> enc_ahead(enc_sp.size(), 0);
    enc_ahead.back() = cfg.lookahead;

    Tensor<S> wave = rand_uniform<S>({n_samples}, rng, -0.5, 0.5);
    std::vector<Tensor<S>> base_trace;
    model.encode(wave, &base_trace);

    std::vector<int64_t> enc_positions;
    if (n_probes <= 0)
        for (int64_t p = 0; p < n_samples; ++p) enc_positions.push_back(p);
    else
        for (int64_t i = 0; i < n_probes; ++i) {
            int64_t p = rng.uniform_int(n_samples);
            // only hop-aligned samples at frame >= lookahead can reveal the
            // full lookahead depth, so alternate such positions with free ones
            int64_t frames = n_samples / hop;
            if (i % 2 == 0 && frames > 0) {
                int64_t lo = std::min(cfg.lookahead, frames - 1);
                p = (lo + rng.uniform_int(frames - lo)) * hop;
            }
            enc_positions.push_back(p);
        }

    int64_t measured_enc = 0;
    for (int64_t p : enc_positions) {
        Tensor<S> wp = wave.detach();
        wp.values()[p] += S(0.25);
        std::vector<Tensor<S>> trace;
        model.encode(wp, &trace);
        for (size_t li = 0; li < trace.size() && rep.pass; ++li) {
            int64_t steps = trace[li].dim(1);
            int64_t ch = trace[li].dim(0);
            // tight bound: causal convs with kernel >= stride reach exactly
            // u*stride, so the first step sample p may touch is ceil(p/sp).
            // A floor bound would let sub-stride leaks hide in the slack.
            int64_t u_min = (p + enc_sp[li] - 1) / enc_sp[li] - enc_ahead[li];
            for (int64_t u = 0; u < steps; ++u) {
                bool changed = false;
                for (int64_t c = 0; c < ch; ++c)
                    if (trace[li].values()[c * steps + u] != base_trace[li].values()[c * steps + u]) {
                        changed = true;
                        break;
                    }
                if (changed && u < u_min) {
                    rep.pass = false;
                    rep.detail = "encoder layer " + std::to_string(li) + " leaks: input sample " +
                                 std::to_string(p) + " reached step " + std::to_string(u) +
                                 " (earliest legal " + std::to_string(u_min) + ")";
                    break;
                }
                if (changed && li + 1 == trace.size())
                    measured_enc = std::max(measured_enc, p / hop - u);
            }
        }
        ++rep.probes;
        if (!rep.pass) break;
    }
    rep.encoder_lookahead = measured_enc;

    // decoder: perturb latent frames
    int64_t t_z = n_samples / hop + (n_samples % hop != 0 ? 1 : 0);
    Tensor<S> z = randn<S>({t_z, cfg.d_z}, rng, 0.5);
    std::vector<Tensor<S>> dec_base;
    model.decode(z, &dec_base);
    std::vector<int64_t> dec_sp = {1};  // mirror output at frame rate
    sp = 1;
    dec_sp.push_back(1);  // lookahead conv (frame rate)
    for (size_t b = cfg.strides.size(); b-- > 0;) dec_sp.push_back(sp *= cfg.strides[b]);
    dec_sp.push_back(hop);  // final wave
    std::vector<int64_t> dec_ahead(dec_sp.size(), cfg.lookahead);
    dec_ahead[0] = 0;  // the mirror LSTM stack is strictly causal

    std::vector<int64_t> dec_positions;
    if (n_probes <= 0)
        for (int64_t p = 0; p < t_z; ++p) dec_positions.push_back(p);
    else
        for (int64_t i = 0; i < n_probes; ++i) {
            int64_t p = rng.uniform_int(t_z);
            if (i % 2 == 0 && t_z > cfg.lookahead)
                p = cfg.lookahead + rng.uniform_int(t_z - cfg.lookahead);
            dec_positions.push_back(p);
        }

    int64_t measured_dec = 0;
    for (int64_t p : dec_positions) {
        Tensor<S> zp = z.detach();
        zp.values()[p * cfg.d_z] += S(0.25);
        std::vector<Tensor<S>> trace;
        model.decode(zp, &trace);
        for (size_t li = 0; li < trace.size() && rep.pass; ++li) {
            // trace entry li runs at dec_sp[li] samples per latent frame
            bool frame_major = li == 0;  // mirror output is [T_z, d_z]
            int64_t steps = frame_major ? trace[li].dim(0) : trace[li].dim(1);
            int64_t ch = frame_major ? trace[li].dim(1) : trace[li].dim(0);
            int64_t u_min = (p - dec_ahead[li]) * dec_sp[li];
            for (int64_t u = 0; u < steps; ++u) {
                bool changed = false;
                for (int64_t c = 0; c < ch; ++c) {
                    S a = frame_major ? trace[li].values()[u * ch + c] : trace[li].values()[c * steps + u];
                    S b = frame_major ? dec_base[li].values()[u * ch + c] : dec_base[li].values()[c * steps + u];
                    if (a != b) {
                        changed = true;
                        break;
                    }
                }
                if (changed && u < u_min) {
                    rep.pass = false;
                    rep.detail = "decoder layer " + std::to_string(li) + " leaks: latent frame " +
                                 std::to_string(p) + " reached step " + std::to_string(u) +
                                 " (earliest legal " + std::to_string(u_min) + ")";
                    break;
                }
                if (changed && li + 1 == trace.size())
                    measured_dec = std::max(measured_dec, p - u / hop);
            }
        }
        ++rep.probes;
        if (!rep.pass) break;
    }
    rep.decoder_lookahead = measured_dec;
    if (rep.pass && (measured_enc != cfg.lookahead || measured_dec != cfg.lookahead)) {
        rep.pass = false;
        rep.detail = "measured lookahead enc=" + std::to_string(measured_enc) +
                     " dec=" + std::to_string(measured_dec) + ", expected " +
                     std::to_string(cfg.lookahead);
    }
    return rep;
}

}  // namespace holitok
