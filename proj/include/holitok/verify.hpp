#pragma once

// Self-checks behind the `verify` command and the acceptance suite: rate and
// compression arithmetic, finite-difference gradient sweeps over every
// differentiable primitive plus the full third-stage composite loss, codec
// causality probes, Monte-Carlo agreement of the flow KL with its closed
// form, and the reconstruction-shift bound.

#include <cstdio>
#include <functional>
#include <numeric>

#include "holitok/gradcheck.hpp"
#include "holitok/pipeline.hpp"
#include "holitok/unified.hpp"

namespace holitok {

// ---------------------------------------------------------------------------
// rate / compression report

struct RateInfo {
    int64_t f_s = 0;      // audio sample rate, Hz
    int64_t f_z = 0;      // latent frame rate, Hz (= tokens per second)
    int64_t d_z = 0;
    int64_t b_float = 32;
    int64_t cr_num = 0, cr_den = 0;  // reduced fraction
    double cr = 0.0;
    int64_t tps = 0;
};

inline int64_t ceil_log2(int64_t v) {
    if (v < 1) fail("ceil_log2: need a positive value");
    int64_t bits = 0;
    while ((int64_t(1) << bits) < v) ++bits;
    return bits;
}

// compression against a nominal raw bitrate of f_s * ceil(log2 f_s) bits/s
inline RateInfo rate_info(const CodecConfig& cfg) {
    cfg.validate();
    RateInfo r;
    r.f_s = cfg.sample_rate;
    r.f_z = cfg.frame_rate();
    r.d_z = cfg.d_z;
    int64_t num = r.f_s * ceil_log2(r.f_s);
    int64_t den = r.f_z * r.d_z * r.b_float;
    int64_t g = std::gcd(num, den);
    r.cr_num = num / g;
    r.cr_den = den / g;
    r.cr = double(r.cr_num) / double(r.cr_den);
    r.tps = r.f_z;
    return r;
}

// ---------------------------------------------------------------------------
// report plumbing

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyReport {
    std::string preset = "toy";
    std::vector<CheckResult> checks;
    bool all_pass() const {
        if (checks.empty()) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

namespace detail {
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// gradient sweep: one named finite-difference check per primitive family

struct NamedGradCheck {
    std::string name;
    std::function<GradCheckReport(uint64_t)> run;  // seed -> report
};

inline std::vector<NamedGradCheck> primitive_gradchecks() {
    using T = Tensor<double>;
    using Params = std::vector<std::pair<std::string, T>>;
    auto leaf = [](const Shape& s, Rng& rng, double lo, double hi) {
        T t = rand_uniform<double>(s, rng, lo, hi);
        t.set_requires_grad(true);
        return t;
    };
    auto check = [](const Params& params, auto&& fn, Rng& rng) {
        return check_gradients(params, fn, rng, 6, 1e-4);
    };

    std::vector<NamedGradCheck> out;
    auto entry = [&out](const std::string& name, std::function<GradCheckReport(uint64_t)> fn) {
        out.push_back({name, std::move(fn)});
    };

    entry("elementwise", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE1, seed));
        T a = leaf({3, 4}, rng, -1.5, 1.5);
        T b = leaf({3, 4}, rng, 0.5, 2.0);
        T c = leaf({3, 4}, rng, -0.8, 0.8);
        Params params{{"a", a}, {"b", b}, {"c", c}};
        return check(params, [&]() {
            T u = add(sub(mul(a, b), div(c, b)), neg(c));
            T v = add(tanh(u), add(sigmoid(a), silu(c)));
            v = add(v, add(exp(clamp(c, -2.0, 2.0)), add(log(b), sqrt(b))));
            v = add(v, add(leaky_relu(add_scalar(a, 2.1), 0.1), abs(add_scalar(b, 1.0))));
            return mean(square(add(mul_scalar(v, 0.7), square(c))));
        }, rng);
    });
    entry("matmul_transpose_reshape", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE2, seed));
        T a = leaf({3, 2}, rng, -1.0, 1.0);
        T b = leaf({2, 4}, rng, -1.0, 1.0);
        Params params{{"a", a}, {"b", b}};
        return check(params, [&]() {
            T y = matmul(a, b);
            return mean(square(matmul(transpose(y), reshape(a, {3, 2}))));
        }, rng);
    });
    entry("reductions", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE3, seed));
        T a = leaf({3, 5}, rng, -1.0, 1.0);
        Params params{{"a", a}};
        return check(params, [&]() {
            T rows = sum_axis(a, 0);
            T cols = mean_axis(a, 1);
            T s = add(sum(square(reshape(rows, {5, 1}))), mean(square(reshape(cols, {3, 1}))));
            return add(s, mul_scalar(mean(a), 0.7));
        }, rng);
    });
    entry("softmax_rows", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE4, seed));
        T x = leaf({4, 6}, rng, -3.0, 3.0);
        T w = rand_uniform<double>({4, 6}, rng, -1.0, 1.0);
        Params params{{"x", x}};
        return check(params, [&]() {
            T p = softmax_rows(x);
            T pm = softmax_rows_masked(x, {2, 4, 6, 3});
            return add(mean(mul(p, w)), mean(mul(pm, w)));
        }, rng);
    });
    entry("layer_norm_rows", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE5, seed));
        T x = leaf({4, 6}, rng, -2.0, 2.0);
        T g = leaf({6}, rng, 0.5, 1.5);
        T b = leaf({6}, rng, -0.5, 0.5);
        Params params{{"x", x}, {"g", g}, {"b", b}};
        return check(params, [&]() { return mean(square(layer_norm_rows(x, g, b))); }, rng);
    });
    entry("shape_surgery", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE6, seed));
        T a = leaf({3, 4}, rng, -1.0, 1.0);
        T b = leaf({2, 4}, rng, -1.0, 1.0);
        T v = leaf({4}, rng, 0.5, 1.5);
        Params params{{"a", a}, {"b", b}, {"v", v}};
        return check(params, [&]() {
            T cat = concat_rows<double>({a, b});
            T wide = concat_cols<double>({cat, cat});
            T sl = slice_cols(slice_rows(wide, 1, 3), 2, 4);
            T padded = pad_time(sl, 1, 2);
            T ph = phase_select(padded, 2, 1);
            T gathered = gather_rows(cat, {0, 3, 3});
            T mixed = add_rowvec(mul_rowvec(gathered, v), v);
            return add(mean(square(ph)), mean(square(mixed)));
        }, rng);
    });
    entry("conv1d", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE7, seed));
        T x = leaf({2, 9}, rng, -1.0, 1.0);
        T w = leaf({3, 2, 4}, rng, -0.7, 0.7);
        T b = leaf({3}, rng, -0.3, 0.3);
        Params params{{"x", x}, {"w", w}, {"b", b}};
        return check(params, [&]() {
            return mean(square(conv1d(x, w, b, 2, 1, 3, 0)));
        }, rng);
    });
    entry("conv_transpose1d", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE8, seed));
        T x = leaf({3, 5}, rng, -1.0, 1.0);
        T w = leaf({3, 2, 4}, rng, -0.7, 0.7);
        T b = leaf({2}, rng, -0.3, 0.3);
        Params params{{"x", x}, {"w", w}, {"b", b}};
        return check(params, [&]() {
            return mean(square(conv_transpose1d(x, w, b, 2)));
        }, rng);
    });
    entry("snake_beta", [=](uint64_t seed) {
        Rng rng(mix_seed(0xE9, seed));
        T x = leaf({3, 7}, rng, -1.5, 1.5);
        T la = leaf({3}, rng, -0.5, 0.5);
        T lb = leaf({3}, rng, -0.5, 0.5);
        Params params{{"x", x}, {"la", la}, {"lb", lb}};
        return check(params, [&]() { return mean(square(snake_beta(x, la, lb))); }, rng);
    });
    entry("frame_and_magnitude", [=](uint64_t seed) {
        Rng rng(mix_seed(0xEA, seed));
        T x = leaf({24}, rng, -1.0, 1.0);
        T re = leaf({3, 4}, rng, 0.3, 1.0);
        T im = leaf({3, 4}, rng, 0.3, 1.0);
        Params params{{"x", x}, {"re", re}, {"im", im}};
        return check(params, [&]() {
            T framed = frame_signal(x, 8, 4);
            return add(mean(square(framed)), mean(complex_magnitude(re, im)));
        }, rng);
    });
    entry("interp_linear_rows", [=](uint64_t seed) {
        Rng rng(mix_seed(0xEB, seed));
        T x = leaf({4, 3}, rng, -1.0, 1.0);
        Params params{{"x", x}};
        return check(params, [&]() { return mean(square(interp_linear_rows(x, 7))); }, rng);
    });
    entry("cross_entropy_rows", [=](uint64_t seed) {
        Rng rng(mix_seed(0xEC, seed));
        T x = leaf({5, 6}, rng, -2.0, 2.0);
        Params params{{"x", x}};
        return check(params, [&]() {
            return cross_entropy_rows(x, {1, -1, 0, 5, 2});
        }, rng);
    });
    entry("bce_logits", [=](uint64_t seed) {
        Rng rng(mix_seed(0xED, seed));
        T x = leaf({6, 1}, rng, -3.0, 3.0);
        Params params{{"x", x}};
        return check(params, [&]() {
            return bce_logits(x, std::vector<double>{1, 0, 1, 0, 0, 1});
        }, rng);
    });
    return out;
}

// Third-stage composite objective (reconstruction + adversarial + feature
// matching + flow KL + distillation + task supervision) on a scaled-down
// system; every loss term participates.
inline GradCheckReport composite_gradcheck(uint64_t seed) {
    CodecConfig cc;
    cc.strides = {2, 4};
    cc.kernels = {4, 8};
    cc.base_channels = 2;
    cc.d_z = 4;
    cc.residual_layers = 1;
    cc.lstm_layers = 1;
    cc.lstm_hidden = 6;
    cc.flow_layers = 2;
    cc.amp_kernels = {3};
    SupervisionConfig sc;
    sc.d_z = 4;
    sc.width = 8;
    sc.heads = 2;
    sc.enc_layers = 1;
    sc.dec_layers = 1;

    Rng srng(mix_seed(seed, 0xC0));
    TokenizerSystem<double> sys(cc, sc, seed, srng);
    std::vector<MelConfig> scales = toy_mel_scales();
    Tensor<double> x = rand_uniform<double>({512}, srng, -0.5, 0.5);
    std::vector<int64_t> symbols{1, 2};
    LossWeights w;

    ParamMap<double> gen = sys.codec_params();
    sys.sup.collect("sup", gen);
    set_trainable(gen, "", true);
    ParamMap<double> disc = sys.disc_params();
    set_trainable(disc, "", false);

    auto loss_fn = [&]() {
        Rng rng(mix_seed(seed, 0xC1));  // same draws on every evaluation
        Tensor<double> z = sys.codec.encode(x);
        auto ms = sys.codec.posterior.forward(z);
        Tensor<double> eps = randn<double>({z.dim(0), z.dim(1)}, rng);
        Tensor<double> z_used = sample_reparameterized(ms.first, ms.second, eps);
        Tensor<double> fake = sys.codec.decode(z_used);
        Tensor<double> x_pad = pad_time(x, 0, fake.dim(0) - x.dim(0));
        auto d_real = sys.disc.forward(x_pad);
        auto g_fake = sys.disc.forward(fake);
        std::vector<std::vector<Tensor<double>>> real_const;
        for (auto& sub : d_real.second) {
            real_const.emplace_back();
            for (auto& f : sub) real_const.back().push_back(f.detach());
        }
        Tensor<double> total =
            add(add(mul_scalar(multiscale_mel_loss(x_pad, fake, scales), w.spec),
                    mul_scalar(gan_losses(d_real.first, g_fake.first).first, w.adv)),
                mul_scalar(feature_matching_loss(real_const, g_fake.second), w.fm));
        total = add(total, mul_scalar(kl_with_flow(ms.first, ms.second, sys.codec.flow, 1, rng).first,
                                      w.beta_high));
        total = add(total, mul_scalar(distill_loss(z_used, sys.teachers, x_pad), w.distill));
        total = add(total, mul_scalar(supervision_loss(z_used, Task::transcribe, symbols, sys.sup),
                                      w.sup));
        return total;
    };

    // one representative weight tensor per subsystem keeps the sweep tractable
    std::vector<std::string> prefixes{"encoder.in_conv", "encoder.block0", "bottleneck.posterior",
                                      "bottleneck.flow", "decoder.", "sup."};
    std::vector<std::pair<std::string, Tensor<double>>> picked;
    for (const auto& prefix : prefixes)
        for (const auto& [name, t] : gen)
            if (name.rfind(prefix, 0) == 0 && name.size() >= 2 &&
                name.compare(name.size() - 2, 2, ".w") == 0) {
                picked.emplace_back(name, t);
                break;
            }
    Rng crng(mix_seed(seed, 0xC2));
    return check_gradients(picked, loss_fn, crng, 3, 1e-3);
}

inline std::vector<CheckResult> gradient_checks(int prim_seeds, int comp_seeds) {
    std::vector<CheckResult> out;
    for (const auto& nc : primitive_gradchecks()) {
        double worst = 0.0;
        bool pass = true;
        int64_t coords = 0;
        for (int s = 0; s < prim_seeds; ++s) {
            GradCheckReport rep = nc.run(uint64_t(s));
            pass = pass && rep.pass;
            worst = std::max(worst, rep.max_rel);
            coords += rep.coords_checked;
        }
        out.push_back({"gradients." + nc.name, pass,
                       "seeds=" + std::to_string(prim_seeds) + " coords=" + std::to_string(coords) +
                           " max_rel=" + detail::fmt(worst)});
    }
    double worst = 0.0;
    bool pass = true;
    for (int s = 0; s < comp_seeds; ++s) {
        GradCheckReport rep = composite_gradcheck(uint64_t(s));
        pass = pass && rep.pass;
        worst = std::max(worst, rep.max_rel);
    }
    out.push_back({"gradients.stage3_composite", pass,
                   "seeds=" + std::to_string(comp_seeds) + " max_rel=" + detail::fmt(worst)});
    return out;
}

// ---------------------------------------------------------------------------
// causality

// Exhaustive per-position probe on the toy preset; sampled probe positions at
// the paper scale, where each probe is a full forward pass.
inline std::vector<CheckResult> causality_checks(bool paper, uint64_t seed) {
    std::vector<CheckResult> out;
    Rng rng(mix_seed(seed, 0xCA));
    if (!paper) {
        Codec<float> codec(toy_codec_config(), rng);
        Rng prng(mix_seed(seed, 0xCB));
        ProbeReport rep = causality_probe(codec, 512, 0, prng);
        out.push_back({"causality.toy", rep.pass && rep.encoder_lookahead == 2 &&
                                            rep.decoder_lookahead == 2,
                       "enc=" + std::to_string(rep.encoder_lookahead) +
                           " dec=" + std::to_string(rep.decoder_lookahead) +
                           " probes=" + std::to_string(rep.probes) +
                           (rep.detail.empty() ? "" : " " + rep.detail)});
    } else {
        Codec<float> codec(paper_codec_config(), rng);
        Rng prng(mix_seed(seed, 0xCC));
        ProbeReport rep = causality_probe(codec, 3 * codec.cfg.hop(), 6, prng);
        out.push_back({"causality.paper", rep.pass && rep.encoder_lookahead == 2 &&
                                              rep.decoder_lookahead == 2,
                       "enc=" + std::to_string(rep.encoder_lookahead) +
                           " dec=" + std::to_string(rep.decoder_lookahead) +
                           " probes=" + std::to_string(rep.probes) +
                           (rep.detail.empty() ? "" : " " + rep.detail)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// KL agreement

inline std::vector<CheckResult> kl_checks(int n_posteriors, int n_mc, uint64_t seed) {
    NoGradGuard ng;
    CodecConfig cc;
    cc.d_z = 6;
    cc.flow_layers = 2;
    Rng frng(mix_seed(seed, 0x1F));
    FlowStack<double> flow(cc, frng);  // fresh coupling layers are the identity

    Rng rng(mix_seed(seed, 0x2F));
    int within = 0;
    double worst_sigma = 0.0;
    for (int i = 0; i < n_posteriors; ++i) {
        Tensor<double> mu = rand_uniform<double>({3, cc.d_z}, rng, -1.5, 1.5);
        Tensor<double> ls = rand_uniform<double>({3, cc.d_z}, rng, -0.7, 0.7);
        double closed = kl_closed_form(mu, ls).item();
        auto [est, se] = kl_with_flow(mu, ls, flow, n_mc, rng);
        double dev = std::abs(est.item() - closed) / std::max(se, 1e-12);
        worst_sigma = std::max(worst_sigma, dev);
        if (dev < 3.0) ++within;
    }
    std::vector<CheckResult> out;
    out.push_back({"kl.monte_carlo_vs_closed_form", within == n_posteriors,
                   "within_3se=" + std::to_string(within) + "/" + std::to_string(n_posteriors) +
                       " worst=" + detail::fmt(worst_sigma) + "se n_mc=" + std::to_string(n_mc)});

    // unit-mean unit-sigma posterior: 0.5 per dimension in closed form
    Tensor<double> mu1 = full<double>({2, cc.d_z}, 1.0);
    Tensor<double> ls1 = zeros<double>({2, cc.d_z});
    double closed = kl_closed_form(mu1, ls1).item();
    bool exact = std::abs(closed - 0.5 * double(cc.d_z)) < 1e-12;
    auto [est, se] = kl_with_flow(mu1, ls1, flow, n_mc, rng);
    double dev = std::abs(est.item() - closed) / std::max(se, 1e-12);
    out.push_back({"kl.unit_gaussian_case", exact && dev < 3.0,
                   "closed=" + detail::fmt(closed) + " per_dim=" +
                       detail::fmt(closed / double(cc.d_z)) + " mc_dev=" + detail::fmt(dev) + "se"});
    return out;
}

// ---------------------------------------------------------------------------
// reconstruction-shift bound

inline std::vector<CheckResult> bound_checks(uint64_t seed) {
    std::vector<CheckResult> out;

    // linear decoder: every probe ratio is exactly ||W u||/||u||, so the
    // bound holds deterministically
    {
        const int64_t n = 6, m = 10, n_eval = 5;
        Rng rng(mix_seed(seed, 0xB0));
        std::vector<double> w(size_t(m * n));
        for (auto& x : w) x = rng.normal();
        auto decode = [&](const Tensor<double>& z) {
            std::vector<double> y(size_t(m), 0.0);
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c)
                    y[size_t(r)] += w[size_t(r * n + c)] * z.values()[size_t(c)];
            return from_values<double>({m}, y);
        };
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) x = rng.normal();
        std::vector<Tensor<double>> xs, z_ae, z_vae;
        for (int64_t i = 0; i < n_eval; ++i) {
            std::vector<double> z(static_cast<size_t>(n)), zv(static_cast<size_t>(n));
            for (size_t c = 0; c < size_t(n); ++c) z[c] = rng.normal();
            Tensor<double> zrow = from_values<double>({n}, z);
            Tensor<double> x = decode(zrow);
            for (int64_t r = 0; r < m; ++r) x.values()[size_t(r)] += 0.3 * rng.normal();
            double a = 0.5 + rng.uniform();
            for (size_t c = 0; c < size_t(n); ++c) zv[c] = z[c] + a * v[c];
            xs.push_back(x);
            z_ae.push_back(zrow);
            z_vae.push_back(from_values<double>({n}, zv));
        }
        Rng prng(mix_seed(seed, 0xB1));
        FidelityReport rep = fidelity_bound_core<double>(xs, z_ae, z_vae, decode, 64, prng);
        out.push_back({"bound.linear_decoder_oracle", rep.pass,
                       "lhs=" + detail::fmt(rep.lhs) + " rhs_safe=" + detail::fmt(rep.rhs_safe) +
                           " l_hat=" + detail::fmt(rep.l_hat)});
    }

    // identical models at zero noise: no latent shift, bound collapses to
    // the autoencoder error term
    {
        auto sys = toy_tokenizer_system<float>(seed + 1);
        CorpusConfig cc;
        cc.min_seconds = 0.2;
        cc.max_seconds = 0.25;
        std::vector<Utterance> eval_set = synth_corpus(seed + 2, 4, cc);
        Rng prng(mix_seed(seed, 0xB2));
        FidelityReport rep =
            fidelity_bound_report(sys.codec, sys.codec, eval_set, 8, prng, 0.0);
        bool degenerate = rep.delta_shift == 0.0 && rep.lhs == rep.eps_ae;
        out.push_back({"bound.zero_shift_degenerate", rep.pass && degenerate,
                       "eps_ae=" + detail::fmt(rep.eps_ae) + " delta=" +
                           detail::fmt(rep.delta_shift) + " lhs=" + detail::fmt(rep.lhs)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// driver

// group: gradients | causality | kl | bound | all
inline VerifyReport run_verify(const std::string& group, bool paper, uint64_t seed) {
    VerifyReport rep;
    rep.preset = paper ? "paper" : "toy";
    bool all = group == "all";
    bool known = all;
    auto append = [&rep](std::vector<CheckResult> v) {
        for (auto& c : v) rep.checks.push_back(std::move(c));
    };
    if (all || group == "gradients") {
        known = true;
        append(gradient_checks(3, 1));
    }
    if (all || group == "causality") {
        known = true;
        append(causality_checks(paper, seed));
    }
    if (all || group == "kl") {
        known = true;
        append(kl_checks(10, 2000, seed));
    }
    if (all || group == "bound") {
        known = true;
        append(bound_checks(seed));
    }
    if (!known) fail("unknown verify group '" + group + "' (gradients|causality|kl|bound|all)");
    return rep;
}

}  // namespace holitok
