#pragma once

// Progressive three-stage training:
//   stage 1  plain autoencoder with the spectral + adversarial objective
//   stage 2  variational bottleneck trained under the frozen autoencoder,
//            weak KL (beta_low)
//   stage 3  everything trainable, strong KL (beta_high) plus teacher
//            distillation and task supervision on the latents
// plus the reconstruction-fidelity bound report relating the stage-2 VAE
// distortion to the stage-1 AE distortion and the latent shift.

#include <fstream>

#include "holitok/adversary.hpp"
#include "holitok/checkpoint.hpp"
#include "holitok/codec.hpp"
#include "holitok/corpus.hpp"
#include "holitok/dsp.hpp"
#include "holitok/enrich.hpp"
#include "holitok/optim.hpp"

namespace holitok {

struct LossWeights {
    double spec = 45.0;
    double adv = 1.0;
    double fm = 2.0;
    double beta_low = 0.1;
    double beta_high = 7.0;
    double distill = 1.0;  // the bundle applies per-teacher weights internally
    double sup = 1.0;
};

struct StagePlan {
    int stage = 1;
    int64_t steps = 300;
    int64_t batch = 4;
    uint64_t seed = 1;
    int64_t crop_samples = 0;  // 0: one second at the codec sample rate
    LossWeights weights;
    bool ablate_distill = false;
    bool ablate_supervise = false;

    void validate() const {
        if (stage < 1 || stage > 3) fail("stage plan: stage must be 1, 2, or 3");
        if (steps < 1 || batch < 1) fail("stage plan: steps and batch must be >= 1");
        if (stage != 3 && (ablate_distill || ablate_supervise))
            fail("stage plan inconsistency: ablation flags only apply to stage 3 losses");
    }
    double beta() const {
        return stage == 2 ? weights.beta_low : stage == 3 ? weights.beta_high : 0.0;
    }
};

inline StagePlan toy_stage_plan(int stage, uint64_t seed = 1) {
    StagePlan p;
    p.stage = stage;
    p.seed = seed;
    p.steps = stage == 1 ? 300 : 200;
    return p;
}

struct TrainingLog {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int64_t col(const std::string& name) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return int64_t(i);
        fail("training log has no column '" + name + "'");
        return -1;
    }
    double mean_of(const std::string& name, int64_t begin, int64_t end) const {
        int64_t c = col(name);
        if (begin < 0 || end > int64_t(rows.size()) || begin >= end) fail("training log: bad row range");
        double s = 0.0;
        for (int64_t r = begin; r < end; ++r) s += rows[r][c];
        return s / double(end - begin);
    }
    std::string to_csv() const {
        std::string out;
        for (size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
        out += "\n";
        char buf[32];
        for (const auto& r : rows) {
            for (size_t i = 0; i < r.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.10g", r[i]);
                out += (i ? "," : "") + std::string(buf);
            }
            out += "\n";
        }
        return out;
    }
    void save_csv(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) fail("cannot open '" + path + "' for writing");
        f << to_csv();
    }
};

inline std::vector<MelConfig> mel_scales_for(int sample_rate) {
    return sample_rate == 8000 ? toy_mel_scales() : paper_mel_scales();
}

// ---------------------------------------------------------------------------
// the trainable system: codec + discriminator + distillation heads +
// supervision net, with a record of the highest completed stage

template <typename S>
struct TokenizerSystem {
    CodecConfig ccfg;
    SupervisionConfig scfg;
    uint64_t teacher_seed = 42;
    Codec<S> codec;
    DiscriminatorBank<S> disc;
    TeacherBundle<S> teachers;
    SupervisionNet<S> sup;
    int stage_completed = 0;

    TokenizerSystem(const CodecConfig& ccfg_, const SupervisionConfig& scfg_,
                    uint64_t teacher_seed_, Rng& rng)
        : ccfg(ccfg_), scfg(scfg_), teacher_seed(teacher_seed_),
          codec(ccfg_, rng),
          disc(ccfg_.sample_rate == 8000 ? toy_periods() : paper_periods(), rng),
          teachers(ccfg_.d_z, teacher_seed_, rng),
          sup(scfg_, rng) {
        if (scfg.d_z != ccfg.d_z) fail("supervision config d_z does not match the codec");
    }

    ParamMap<S> codec_params() const { return codec.params(); }
    ParamMap<S> disc_params() const {
        ParamMap<S> m;
        disc.collect("disc", m);
        return m;
    }
    ParamMap<S> enrich_params() const {
        ParamMap<S> m;
        teachers.collect("enrich", m);
        sup.collect("sup", m);
        return m;
    }
    ParamMap<S> all_params() const {
        ParamMap<S> m = codec_params();
        disc.collect("disc", m);
        teachers.collect("enrich", m);
        sup.collect("sup", m);
        return m;
    }

    void save(const std::string& path) const {
        ParamMap<S> m = all_params();
        BlobMap blobs;
        for (const auto& [name, t] : m) blobs.emplace(name, to_blob(t));
        Tensor<S> stage_t = from_values<S>({1}, {static_cast<S>(stage_completed)});
        blobs.emplace("meta.stage", to_blob(stage_t));
        save_blobs(path, blobs);
    }
    void load(const std::string& path) {
        BlobMap blobs = load_blobs(path);
        auto it = blobs.find("meta.stage");
        if (it == blobs.end()) fail("checkpoint missing tensor 'meta.stage'");
        Tensor<S> stage_t = zeros<S>({1});
        blob_into(it->second, "meta.stage", stage_t);
        stage_completed = static_cast<int>(stage_t.values()[0]);
        ParamMap<S> m = all_params();
        for (auto& [name, t] : m) {
            auto b = blobs.find(name);
            if (b == blobs.end()) fail("checkpoint missing tensor '" + name + "'");
            blob_into(b->second, name, t);
        }
    }
};

template <typename S>
TokenizerSystem<S> toy_tokenizer_system(uint64_t seed) {
    Rng rng(mix_seed(seed, 0x70c));
    return TokenizerSystem<S>(toy_codec_config(), SupervisionConfig{}, seed, rng);
}

// ---------------------------------------------------------------------------
// stage runner

// Fixed-length crop: zero-pad short utterances on the right, start at zero
// when longer (keeps the transcript aligned with the audio).
template <typename S>
Tensor<S> crop_to_length(const Utterance& utt, int64_t n) {
    std::vector<S> v(n, S(0));
    int64_t m = std::min<int64_t>(n, int64_t(utt.samples.size()));
    for (int64_t i = 0; i < m; ++i) v[i] = static_cast<S>(utt.samples[i]);
    return from_values<S>({n}, v);
}

template <typename S>
TrainingLog run_stage(TokenizerSystem<S>& sys, const StagePlan& plan,
                      const std::vector<Utterance>& data) {
    plan.validate();
    if (data.empty()) fail("run_stage: empty training set");
    if (sys.stage_completed < plan.stage - 1)
        fail("stage " + std::to_string(plan.stage) + " requires a stage " +
             std::to_string(plan.stage - 1) + " checkpoint (completed: " +
             std::to_string(sys.stage_completed) + ")");

    int64_t crop = plan.crop_samples > 0 ? plan.crop_samples : sys.ccfg.sample_rate;
    std::vector<MelConfig> scales = mel_scales_for(sys.ccfg.sample_rate);
    CorpusConfig corpus_cfg;
    corpus_cfg.sample_rate = sys.ccfg.sample_rate;

    ParamMap<S> gen_params = sys.codec_params();
    if (plan.stage == 3) {
        sys.teachers.collect("enrich", gen_params);
        sys.sup.collect("sup", gen_params);
    }
    ParamMap<S> disc_params = sys.disc_params();

    set_trainable(gen_params, "", true);
    if (plan.stage == 1) set_trainable(gen_params, "bottleneck.", false);
    if (plan.stage == 2) {
        set_trainable(gen_params, "encoder.", false);
        set_trainable(gen_params, "decoder.", false);
    }

    AdamW<S> gen_opt(tokenizer_optim_config());
    AdamW<S> disc_opt(tokenizer_optim_config());
    ScheduleConfig sched;  // exponential decay from 1e-4

    TrainingLog log;
    log.columns = {"step", "lr", "spec", "adv_g", "fm", "kl", "distill", "sup", "disc", "total"};

    for (int64_t step = 0; step < plan.steps; ++step) {
        Rng rng(mix_seed(plan.seed, uint64_t(step)));
        double lr = lr_schedule(step, sched);
        zero_grads(gen_params);
        zero_grads(disc_params);

        Tensor<S> d_loss_acc = zeros<S>({1});
        Tensor<S> spec_acc = zeros<S>({1}), adv_acc = zeros<S>({1}), fm_acc = zeros<S>({1});
        Tensor<S> kl_acc = zeros<S>({1}), distill_acc = zeros<S>({1}), sup_acc = zeros<S>({1});

        for (int64_t b = 0; b < plan.batch; ++b) {
            const Utterance& utt = data[size_t(rng.uniform_int(int64_t(data.size())))];
            Tensor<S> x = crop_to_length<S>(utt, crop);

            // generator reconstruction path for this stage
            Tensor<S> z = sys.codec.encode(x);
            Tensor<S> z_used = z;
            Tensor<S> mu, log_sigma;
            if (plan.stage >= 2) {
                auto ms = sys.codec.posterior.forward(z);
                mu = ms.first;
                log_sigma = ms.second;
                Tensor<S> eps = randn<S>({z.dim(0), z.dim(1)}, rng);
                z_used = sample_reparameterized(mu, log_sigma, eps);
            }
            Tensor<S> fake = sys.codec.decode(z_used);
            Tensor<S> x_pad = pad_time(x, 0, fake.dim(0) - x.dim(0));

            // discriminator objective from the current parameters
            auto d_real = sys.disc.forward(x_pad);
            auto d_fake = sys.disc.forward(fake.detach());
            d_loss_acc = add(d_loss_acc, gan_losses(d_real.first, d_fake.first).second);

            // generator objective with the discriminator frozen; real
            // features reused as constants
            set_trainable(disc_params, "", false);
            auto g_fake = sys.disc.forward(fake);
            std::vector<std::vector<Tensor<S>>> real_const;
            for (auto& sub : d_real.second) {
                real_const.emplace_back();
                for (auto& f : sub) real_const.back().push_back(f.detach());
            }
            spec_acc = add(spec_acc, multiscale_mel_loss(x_pad, fake, scales));
            adv_acc = add(adv_acc, gan_losses(d_real.first, g_fake.first).first);
            fm_acc = add(fm_acc, feature_matching_loss(real_const, g_fake.second));
            if (plan.stage >= 2)
                kl_acc = add(kl_acc, kl_with_flow(mu, log_sigma, sys.codec.flow, 1, rng).first);
            if (plan.stage == 3) {
                if (!plan.ablate_distill)
                    distill_acc = add(distill_acc, distill_loss(z_used, sys.teachers, x_pad));
                if (!plan.ablate_supervise) {
                    Task task = rng.uniform_int(2) == 0 ? Task::transcribe : Task::classify;
                    auto y = supervision_targets(utt, task, corpus_cfg);
                    sup_acc = add(sup_acc, supervision_loss(z_used, task, y, sys.sup));
                }
            }
            set_trainable(disc_params, "", true);
        }

        S inv_b = S(1) / S(plan.batch);
        Tensor<S> d_total = mul_scalar(d_loss_acc, inv_b);
        Tensor<S> spec = mul_scalar(spec_acc, inv_b);
        Tensor<S> adv = mul_scalar(adv_acc, inv_b);
        Tensor<S> fm = mul_scalar(fm_acc, inv_b);
        Tensor<S> kl = mul_scalar(kl_acc, inv_b);
        Tensor<S> dst = mul_scalar(distill_acc, inv_b);
        Tensor<S> sup_l = mul_scalar(sup_acc, inv_b);

        // backward order matters: the discriminator loss graph was recorded
        // with disc params trainable, so run it before freezing them again
        d_total.backward();
        set_trainable(disc_params, "", false);
        Tensor<S> gen_total =
            add(add(mul_scalar(spec, static_cast<S>(plan.weights.spec)),
                    mul_scalar(adv, static_cast<S>(plan.weights.adv))),
                mul_scalar(fm, static_cast<S>(plan.weights.fm)));
        if (plan.stage >= 2) gen_total = add(gen_total, mul_scalar(kl, static_cast<S>(plan.beta())));
        if (plan.stage == 3)
            gen_total = add(gen_total, add(mul_scalar(dst, static_cast<S>(plan.weights.distill)),
                                           mul_scalar(sup_l, static_cast<S>(plan.weights.sup))));
        gen_total.backward();
        set_trainable(disc_params, "", true);

        disc_opt.step(disc_params, lr);
        gen_opt.step(gen_params, lr);

        log.rows.push_back({double(step), lr, double(spec.item()), double(adv.item()),
                            double(fm.item()), double(kl.item()), double(dst.item()),
                            double(sup_l.item()), double(d_total.item()),
                            double(gen_total.item())});
    }
    sys.stage_completed = std::max(sys.stage_completed, plan.stage);
    return log;
}

// ---------------------------------------------------------------------------
// fidelity bound report

struct FidelityReport {
    double eps_ae = 0.0;       // E ||x - G(z_ae)||^2
    double delta_shift = 0.0;  // E ||z_vae - z_ae||^2
    double l_hat = 0.0;        // max probed ||G(z+d)-G(z)|| / ||d||
    double lhs = 0.0;          // E ||x - G(z_vae)||^2
    double rhs = 0.0;          // 2 eps_ae + 2 l_hat^2 delta_shift
    double rhs_safe = 0.0;     // same with 2*l_hat (probe underestimates)
    int64_t n_eval = 0;
    int64_t n_probes = 0;
    bool pass = false;        // lhs <= rhs_safe
    bool statistical = true;  // l_hat is a sampled lower bound
};

namespace detail {
template <typename S>
double sq_norm(const std::vector<S>& a, const std::vector<S>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s;
}
}  // namespace detail

// Core computation over explicit (x, z_ae, z_vae) triples and a decoder
// callable, so it can also be exercised with closed-form decoders.
template <typename S, typename Decode>
FidelityReport fidelity_bound_core(const std::vector<Tensor<S>>& xs,
                                   const std::vector<Tensor<S>>& z_ae,
                                   const std::vector<Tensor<S>>& z_vae,
                                   Decode decode, int64_t n_probes, Rng& rng) {
    if (xs.empty() || xs.size() != z_ae.size() || xs.size() != z_vae.size())
        fail("fidelity bound: empty or mismatched evaluation set");
    NoGradGuard ng;
    FidelityReport rep;
    rep.n_eval = int64_t(xs.size());
    rep.n_probes = n_probes;
    for (size_t i = 0; i < xs.size(); ++i) {
        Tensor<S> ae_out = decode(z_ae[i]);
        Tensor<S> vae_out = decode(z_vae[i]);
        rep.eps_ae += detail::sq_norm(xs[i].values(), ae_out.values());
        rep.lhs += detail::sq_norm(xs[i].values(), vae_out.values());
        rep.delta_shift += detail::sq_norm(z_ae[i].values(), z_vae[i].values());
    }
    rep.eps_ae /= double(xs.size());
    rep.lhs /= double(xs.size());
    rep.delta_shift /= double(xs.size());

    for (int64_t p = 0; p < n_probes; ++p) {
        size_t i = size_t(rng.uniform_int(int64_t(xs.size())));
        double u = rng.uniform();
        Tensor<S> base = z_ae[i].detach();
        for (int64_t j = 0; j < base.numel(); ++j)
            base.values()[j] += static_cast<S>(u * (double(z_vae[i].values()[j]) -
                                                    double(z_ae[i].values()[j])));
        double rms = 0.0;
        for (S v : base.values()) rms += double(v) * double(v);
        rms = std::sqrt(rms / double(base.numel()));
        double radius = 1e-2 * std::max(rms, 1e-8);
        // alternate isotropic probes with probes along the AE->VAE segment
        std::vector<double> dir(size_t(base.numel()));
        if (p % 2 == 0) {
            for (auto& d : dir) d = rng.normal();
        } else {
            for (size_t j = 0; j < dir.size(); ++j)
                dir[j] = double(z_vae[i].values()[j]) - double(z_ae[i].values()[j]);
        }
        double dn = 0.0;
        for (double d : dir) dn += d * d;
        dn = std::sqrt(dn);
        if (dn == 0.0) continue;  // degenerate segment; skip this probe
        Tensor<S> moved = base.detach();
        for (int64_t j = 0; j < base.numel(); ++j)
            moved.values()[j] += static_cast<S>(dir[size_t(j)] / dn * radius);
        Tensor<S> out0 = decode(base);
        Tensor<S> out1 = decode(moved);
        double num = std::sqrt(detail::sq_norm(out0.values(), out1.values()));
        double den = std::sqrt(detail::sq_norm(base.values(), moved.values()));
        if (den > 0.0) rep.l_hat = std::max(rep.l_hat, num / den);
    }
    rep.rhs = 2.0 * rep.eps_ae + 2.0 * rep.l_hat * rep.l_hat * rep.delta_shift;
    rep.rhs_safe = 2.0 * rep.eps_ae + 2.0 * (2.0 * rep.l_hat) * (2.0 * rep.l_hat) * rep.delta_shift;
    rep.pass = rep.lhs <= rep.rhs_safe;
    return rep;
}

// Measures the AE-to-VAE latent shift at a given posterior noise scale.
// Returns (mean shift, standard error over utterances).
template <typename S>
std::pair<double, double> delta_shift_estimate(const Codec<S>& model,
                                               const std::vector<Tensor<S>>& waves,
                                               double noise_scale, Rng& rng) {
    if (waves.empty()) fail("delta_shift_estimate: empty evaluation set");
    NoGradGuard ng;
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& x : waves) {
        Tensor<S> z = model.encode(x);
        auto [mu, ls] = model.posterior.forward(z);
        Tensor<S> eps = randn<S>({z.dim(0), z.dim(1)}, rng);
        Tensor<S> zv = add(mu, mul(mul_scalar(exp(ls), static_cast<S>(noise_scale)), eps));
        double d = detail::sq_norm(z.values(), zv.values());
        sum += d;
        sum_sq += d * d;
    }
    double n = double(waves.size());
    double mean = sum / n;
    double var = n > 1 ? std::max(0.0, (sum_sq - sum * sum / n) / (n - 1)) : 0.0;
    return {mean, std::sqrt(var / n)};
}

// Full report on a trained system: stage-1 encoder/decoder provide the AE
// path, the stage-2 posterior provides the latent shift.
template <typename S>
FidelityReport fidelity_bound_report(const Codec<S>& stage1, const Codec<S>& stage2,
                                     const std::vector<Utterance>& eval_set,
                                     int64_t n_probes, Rng& rng, double noise_scale = 1.0) {
    if (eval_set.empty()) fail("fidelity bound: empty evaluation set");
    NoGradGuard ng;
    std::vector<Tensor<S>> xs, z_ae, z_vae;
    for (const auto& utt : eval_set) {
        Tensor<S> x = crop_to_length<S>(utt, int64_t(utt.samples.size()));
        Tensor<S> z = stage1.encode(x);
        auto [mu, ls] = stage2.posterior.forward(z);
        Tensor<S> eps = randn<S>({z.dim(0), z.dim(1)}, rng);
        Tensor<S> zv = add(mu, mul(mul_scalar(exp(ls), static_cast<S>(noise_scale)), eps));
        xs.push_back(pad_time(x, 0, z.dim(0) * stage1.cfg.hop() - x.dim(0)));
        z_ae.push_back(z);
        z_vae.push_back(zv);
    }
    return fidelity_bound_core<S>(xs, z_ae, z_vae,
                                  [&](const Tensor<S>& z) { return stage2.decode(z); },
                                  n_probes, rng);
}

}  // namespace holitok
