// Spectral oracles: closed-form DFT of a Hann-windowed sine, a direct
// Parseval energy identity, filterbank construction properties, and the
// multi-scale loss contract (zero at identity, symmetry, monotone blend).

#include <cmath>

#include "doctest.h"
#include "holitok/dsp.hpp"
#include "holitok/gradcheck.hpp"

using namespace holitok;

namespace {
using T = Tensor<double>;
constexpr double kPi = 3.14159265358979323846;

T sine_wave(int64_t n, double freq, int sr, double amp = 1.0, double phase = 0.3) {
    T w = zeros<double>({n});
    for (int64_t i = 0; i < n; ++i)
        w.data()[i] = amp * std::sin(2.0 * kPi * freq * i / sr + phase);
    return w;
}
}  // namespace

TEST_CASE("all-zero waveform produces exactly zero magnitudes") {
    NoGradGuard ng;
    MelConfig cfg{64, 16, 20, 0.0, 0.0, 8000};
    T mag = stft_magnitude(zeros<double>({256}), cfg);
    CHECK(mag.dim(0) == 33);
    CHECK(mag.dim(1) == 256 / 16 + 1);
    for (int64_t i = 0; i < mag.numel(); ++i) CHECK(mag.values()[i] == 0.0);
    T mel = mel_project(mag, cfg);
    for (int64_t i = 0; i < mel.numel(); ++i) CHECK(mel.values()[i] == 0.0);
}

TEST_CASE("Hann-windowed sine at a bin center matches the 3-bin closed form") {
    // Windowing convolves the line spectrum with the Hann kernel
    // (-1/4, 1/2, -1/4), so a bin-centered sine of amplitude A puts |X| =
    // A*N/4 on its bin, A*N/8 on each neighbor, and exactly zero elsewhere.
    // The mainlobe therefore holds ~100% of the energy while the center bin
    // alone holds 2/3 of it.
    NoGradGuard ng;
    MelConfig cfg{64, 16, 20, 0.0, 0.0, 8000};
    int64_t k0 = 7;
    double freq = static_cast<double>(k0) * cfg.sample_rate / cfg.fft_size;
    double amp = 0.8;
    T wave = sine_wave(512, freq, cfg.sample_rate, amp);
    T mag = stft_magnitude(wave, cfg);
    int64_t bins = cfg.fft_size / 2 + 1;
    int64_t frames = mag.dim(1);
    int64_t f = frames / 2;  // interior frame: untouched by reflection padding
    double center = amp * cfg.fft_size / 4.0;
    double side = amp * cfg.fft_size / 8.0;
    double total = 0.0;
    int64_t argmax = 0;
    for (int64_t k = 0; k < bins; ++k) {
        double v = mag.values()[k * frames + f];
        total += v * v;
        if (v > mag.values()[argmax * frames + f]) argmax = k;
        if (std::llabs(k - k0) > 1) CHECK(v < 1e-9 * center);  // no leakage beyond the kernel
    }
    CHECK(argmax == k0);
    CHECK(mag.values()[k0 * frames + f] == doctest::Approx(center).epsilon(1e-9));
    CHECK(mag.values()[(k0 - 1) * frames + f] == doctest::Approx(side).epsilon(1e-9));
    CHECK(mag.values()[(k0 + 1) * frames + f] == doctest::Approx(side).epsilon(1e-9));
    double lobe = center * center + 2.0 * side * side;
    CHECK(lobe / total > 0.999);                                // mainlobe carries the energy
    CHECK(center * center / total == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("Parseval: one-sided spectral energy matches windowed-frame energy on noise") {
    NoGradGuard ng;
    Rng rng(41);
    MelConfig cfg{64, 16, 20, 0.0, 0.0, 8000};
    T wave = randn<double>({400}, rng, 0.3);
    T mag = stft_magnitude(wave, cfg);
    T frames = frame_signal(wave, cfg.fft_size, cfg.hop);
    auto hw = hann_window(cfg.fft_size);
    int64_t bins = cfg.fft_size / 2 + 1;
    int64_t nf = mag.dim(1);
    for (int64_t f = 0; f < nf; ++f) {
        double spec = 0.0;
        for (int64_t k = 0; k < bins; ++k) {
            double v = mag.values()[k * nf + f];
            double w = (k == 0 || k == cfg.fft_size / 2) ? 1.0 : 2.0;  // conjugate bins
            spec += w * v * v;
        }
        double time = 0.0;
        for (int64_t i = 0; i < cfg.fft_size; ++i) {
            double s = frames.values()[f * cfg.fft_size + i] * hw[i];
            time += s * s;
        }
        CHECK(spec == doctest::Approx(cfg.fft_size * time).epsilon(0.05));
    }
}

TEST_CASE("mel filterbank rows are positive, neighbors-only overlapping, with sparse columns") {
    for (const MelConfig& cfg : toy_mel_scales()) {
        auto fb = mel_filterbank(cfg);
        int64_t bins = cfg.fft_size / 2 + 1;
        for (int64_t m = 0; m < cfg.n_mels; ++m) {
            double row_sum = 0.0;
            for (int64_t k = 0; k < bins; ++k) {
                CHECK(fb[m * bins + k] >= 0.0);
                row_sum += fb[m * bins + k];
            }
            CHECK(row_sum > 0.0);
        }
        // supports of non-adjacent filters never share a bin
        for (int64_t m = 0; m + 2 < cfg.n_mels; ++m)
            for (int64_t m2 = m + 2; m2 < cfg.n_mels; ++m2)
                for (int64_t k = 0; k < bins; ++k)
                    CHECK(fb[m * bins + k] * fb[m2 * bins + k] == 0.0);
        // a single-bin impulse excites at most two mel channels
        for (int64_t k = 0; k < bins; ++k) {
            int hits = 0;
            for (int64_t m = 0; m < cfg.n_mels; ++m)
                if (fb[m * bins + k] > 0.0) ++hits;
            CHECK(hits <= 2);
        }
        // adjacent filters do overlap somewhere (construction sanity)
        int adjacent_overlaps = 0;
        for (int64_t m = 0; m + 1 < cfg.n_mels; ++m)
            for (int64_t k = 0; k < bins; ++k)
                if (fb[m * bins + k] * fb[(m + 1) * bins + k] > 0.0) {
                    ++adjacent_overlaps;
                    break;
                }
        CHECK(adjacent_overlaps > cfg.n_mels / 2);
    }
}

TEST_CASE("multiscale mel loss: zero at identity, positive otherwise, symmetric") {
    NoGradGuard ng;
    auto scales = toy_mel_scales();
    Rng rng(42);
    T x = sine_wave(8000, 440.0, 8000, 0.5);
    CHECK(multiscale_mel_loss(x, x, scales).item() == 0.0);
    T silence = zeros<double>({8000});
    double d1 = multiscale_mel_loss(x, silence, scales).item();
    CHECK(d1 > 0.0);
    double d2 = multiscale_mel_loss(silence, x, scales).item();
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
}

TEST_CASE("loss decreases as the estimate blends toward the target") {
    NoGradGuard ng;
    auto scales = toy_mel_scales();
    Rng rng(43);
    T x = sine_wave(4000, 440.0, 8000, 0.5);
    T noise = randn<double>({4000}, rng, 0.3);
    auto blend = [&](double lam) {
        T m = zeros<double>({4000});
        for (int64_t i = 0; i < 4000; ++i)
            m.data()[i] = (1.0 - lam) * noise.values()[i] + lam * x.values()[i];
        return multiscale_mel_loss(x, m, scales).item();
    };
    double l0 = blend(0.0), l5 = blend(0.5), l1 = blend(1.0);
    CHECK(l0 > l5);
    CHECK(l5 > l1);
    CHECK(l1 == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("length handling: one-hop pad is accepted, larger gaps are rejected") {
    NoGradGuard ng;
    auto scales = toy_mel_scales();
    T x = sine_wave(1024, 500.0, 8000, 0.5);
    T y = sine_wave(1024 - 64, 500.0, 8000, 0.5);
    CHECK(multiscale_mel_loss(x, y, scales).item() >= 0.0);  // padded, no throw
    T z = sine_wave(1024 - 65, 500.0, 8000, 0.5);
    CHECK_THROWS_WITH_AS(multiscale_mel_loss(x, z, scales), doctest::Contains("length mismatch"),
                         std::runtime_error);
    CHECK_THROWS_AS(multiscale_mel_loss(x, y, {}), std::runtime_error);
}

TEST_CASE("multiscale mel loss gradient w.r.t. the estimate passes finite differences") {
    std::vector<MelConfig> scales = {{64, 16, 20, 0.0, 0.0, 8000}};
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(mix_seed(44, seed));
        T x = sine_wave(128, 440.0, 8000, 0.4);
        T xh = randn<double>({128}, rng, 0.3);
        xh.set_requires_grad(true);
        std::vector<std::pair<std::string, T>> params = {{"xh", xh}};
        auto loss_fn = [&]() { return multiscale_mel_loss(x, xh, scales); };
        auto rep = check_gradients(params, loss_fn, rng, 8, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}
