// Discriminator bank structure, LSGAN loss values against direct
// recomputation, feature-matching semantics (including the stop-gradient on
// real features), and gradient isolation between generator and discriminator.

#include "doctest.h"
#include "holitok/adversary.hpp"
#include "holitok/codec.hpp"
#include "holitok/dsp.hpp"
#include "holitok/gradcheck.hpp"

using namespace holitok;

namespace {
using T = Tensor<double>;
}

TEST_CASE("toy bank on one second: two score maps, three feature taps each") {
    NoGradGuard ng;
    Rng rng(80);
    DiscriminatorBank<double> bank(toy_periods(), rng);
    T wave = rand_uniform<double>({8000}, rng, -0.5, 0.5);
    auto [scores, features] = bank.forward(wave);
    REQUIRE(scores.size() == 2);
    REQUIRE(features.size() == 2);
    CHECK(scores[0].dim(0) == 2);  // one score row per phase
    CHECK(scores[1].dim(0) == 3);
    for (auto& f : features) CHECK(f.size() >= 3);
    // phase streams halve/third the length, then three stride-3 convs
    CHECK(scores[0].dim(1) == 149);  // ceil(ceil(ceil(4000/3)/3)/3)
    CHECK(scores[1].dim(1) == 99);   // 8000 padded to 8001 -> 2667 per phase
    CHECK_THROWS_AS(bank.forward(zeros<double>({0})), std::runtime_error);
}

TEST_CASE("zero waveform with freshly initialized (zero) biases scores zero") {
    NoGradGuard ng;
    Rng rng(81);
    DiscriminatorBank<double> bank(toy_periods(), rng);
    auto [scores, features] = bank.forward(zeros<double>({600}));
    for (auto& s : scores)
        for (double v : s.values()) CHECK(v == 0.0);
}

TEST_CASE("gradient check through discriminator scores") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(mix_seed(82, seed));
        DiscriminatorBank<double> bank({2, 3}, rng, {4, 6, 8});
        T wave = rand_uniform<double>({90}, rng, -0.5, 0.5);
        wave.set_requires_grad(true);
        ParamMap<double> pm = bank.params();
        std::vector<std::pair<std::string, T>> params(pm.begin(), pm.end());
        params.emplace_back("wave", wave);
        auto loss_fn = [&]() {
            auto [scores, features] = bank.forward(wave);
            T acc = zeros<double>({1});
            for (auto& s : scores) acc = add(acc, mean(square(s)));
            return acc;
        };
        auto rep = check_gradients(params, loss_fn, rng, 4, 1e-3);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("LSGAN losses: pinned values and direct recomputation") {
    Rng rng(83);
    std::vector<T> ones = {full<double>({2, 5}, 1.0), full<double>({3, 4}, 1.0)};
    std::vector<T> zs = {zeros<double>({2, 5}), zeros<double>({3, 4})};
    auto [g0, d0] = gan_losses(ones, zs);
    CHECK(g0.item() == doctest::Approx(1.0).epsilon(1e-14));  // fake = 0
    CHECK(d0.item() == doctest::Approx(0.0).epsilon(1e-14));  // real = 1, fake = 0
    auto [g1, d1] = gan_losses(ones, ones);  // fake = 1: generator satisfied
    CHECK(g1.item() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(d1.item() == doctest::Approx(1.0).epsilon(1e-14));

    // random maps against a scalar recomputation of the stated formula
    std::vector<T> real = {randn<double>({2, 7}, rng), randn<double>({3, 5}, rng)};
    std::vector<T> fake = {randn<double>({2, 7}, rng), randn<double>({3, 5}, rng)};
    auto [g, d] = gan_losses(real, fake);
    double eg = 0.0, ed = 0.0;
    for (size_t i = 0; i < real.size(); ++i) {
        double mg = 0.0, mr = 0.0, mf = 0.0;
        for (int64_t j = 0; j < real[i].numel(); ++j) {
            mg += (fake[i].values()[j] - 1.0) * (fake[i].values()[j] - 1.0);
            mr += (real[i].values()[j] - 1.0) * (real[i].values()[j] - 1.0);
            mf += fake[i].values()[j] * fake[i].values()[j];
        }
        eg += mg / real[i].numel();
        ed += mr / real[i].numel() + mf / real[i].numel();
    }
    eg /= real.size();
    ed /= real.size();
    CHECK(g.item() == doctest::Approx(eg).epsilon(1e-12));
    CHECK(d.item() == doctest::Approx(ed).epsilon(1e-12));

    std::vector<T> short_list = {real[0]};
    CHECK_THROWS_AS(gan_losses(real, short_list), std::runtime_error);
}

TEST_CASE("feature matching: zero on identical features, hand-computed value") {
    Rng rng(84);
    std::vector<std::vector<T>> fa = {{randn<double>({2, 3}, rng), randn<double>({4, 2}, rng)}};
    CHECK(feature_matching_loss(fa, fa).item() == 0.0);

    // two layers, values chosen so the nested means are exact by hand:
    // layer 0 diffs {1, 1, 1, 1} -> mean 1; layer 1 diffs {3, 0} -> mean 1.5
    std::vector<std::vector<T>> fr = {{zeros<double>({2, 2}), zeros<double>({1, 2})}};
    std::vector<std::vector<T>> ff = {{full<double>({2, 2}, 1.0),
                                       from_values<double>({1, 2}, {-3.0, 0.0})}};
    CHECK(feature_matching_loss(fr, ff).item() == doctest::Approx(1.25).epsilon(1e-12));

    std::vector<std::vector<T>> bad = {{fa[0][0]}};
    CHECK_THROWS_AS(feature_matching_loss(fa, bad), std::runtime_error);
}

TEST_CASE("feature matching puts exactly zero gradient on the real waveform") {
    Rng rng(85);
    DiscriminatorBank<double> bank({2}, rng, {4, 6, 8});
    T real_wave = rand_uniform<double>({66}, rng, -0.5, 0.5);
    T fake_wave = rand_uniform<double>({66}, rng, -0.5, 0.5);
    real_wave.set_requires_grad(true);
    fake_wave.set_requires_grad(true);
    auto [rs, rf] = bank.forward(real_wave);
    auto [fs, ff] = bank.forward(fake_wave);
    feature_matching_loss(rf, ff).backward();
    for (double g : real_wave.grad()) CHECK(g == 0.0);
    bool any = false;
    for (double g : fake_wave.grad()) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("generator and discriminator updates stay gradient-isolated") {
    Rng rng(86);
    CodecConfig cfg;
    cfg.strides = {2, 4};
    cfg.kernels = {4, 8};
    cfg.base_channels = 2;
    cfg.d_z = 4;
    cfg.residual_layers = 1;
    cfg.lstm_layers = 1;
    cfg.lstm_hidden = 8;
    cfg.flow_layers = 2;
    Codec<double> model(cfg, rng);
    DiscriminatorBank<double> bank({2, 3}, rng, {4, 6, 8});
    ParamMap<double> gen_params = model.params();
    ParamMap<double> disc_params = bank.params();
    std::vector<MelConfig> scales = {{64, 16, 20, 0.0, 0.0, 8000}};

    T wave = rand_uniform<double>({64}, rng, -0.5, 0.5);

    // generator step: discriminator frozen, full generator objective
    set_trainable(disc_params, "", false);
    T fake = model.decode(model.encode(wave));
    auto [rs, rfeat] = bank.forward(wave);
    auto [fs, ffeat] = bank.forward(fake);
    auto [g_loss, d_loss_unused] = gan_losses(rs, fs);
    T gen_total = add(add(mul_scalar(multiscale_mel_loss(fake, wave, scales), 45.0),
                          mul_scalar(g_loss, 1.0)),
                      mul_scalar(feature_matching_loss(rfeat, ffeat), 2.0));
    gen_total.backward();
    for (auto& [n, p] : disc_params)
        for (double g : p.grad()) CHECK(g == 0.0);
    bool gen_any = false;
    for (auto& [n, p] : gen_params)
        for (double g : p.grad()) gen_any = gen_any || g != 0.0;
    CHECK(gen_any);

    // discriminator step: generator output detached, generator frozen
    set_trainable(disc_params, "", true);
    set_trainable(gen_params, "", false);
    zero_grads(gen_params);
    zero_grads(disc_params);
    auto [rs2, rf2] = bank.forward(wave);
    auto [fs2, ff2] = bank.forward(fake.detach());
    auto [g2, d2] = gan_losses(rs2, fs2);
    d2.backward();
    for (auto& [n, p] : gen_params)
        for (double g : p.grad()) CHECK(g == 0.0);
    bool disc_any = false;
    for (auto& [n, p] : disc_params)
        for (double g : p.grad()) disc_any = disc_any || g != 0.0;
    CHECK(disc_any);
}
