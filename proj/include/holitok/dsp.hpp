#pragma once

// Spectral machinery: Hann STFT magnitudes, HTK-mel triangular filterbanks,
// and the multi-scale log-mel reconstruction loss. All differentiable w.r.t.
// the waveform; filterbanks and Fourier bases are constants.

#include <limits>

#include "holitok/ops.hpp"
#include "holitok/tensor.hpp"

namespace holitok {

struct MelConfig {
    int64_t fft_size = 256;
    int64_t hop = 64;
    int64_t n_mels = 40;
    double f_min = 0.0;
    double f_max = 0.0;  // 0 -> sample_rate/2
    int sample_rate = 8000;
};

inline std::vector<MelConfig> toy_mel_scales() {
    return {{64, 16, 20, 0.0, 0.0, 8000},
            {128, 32, 20, 0.0, 0.0, 8000},
            {256, 64, 40, 0.0, 0.0, 8000}};
}

inline std::vector<MelConfig> paper_mel_scales() {
    return {{1024, 256, 80, 0.0, 0.0, 48000},
            {2048, 512, 80, 0.0, 0.0, 48000},
            {4096, 1024, 80, 0.0, 0.0, 48000}};
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Periodic Hann window of length n.
inline std::vector<double> hann_window(int64_t n) {
    std::vector<double> w(n);
    for (int64_t i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * i / n));
    return w;
}

// Triangular mel filters on the HTK scale, row-major [n_mels, fft/2+1].
// Adjacent filters overlap; non-adjacent supports only touch at a point.
inline std::vector<double> mel_filterbank(const MelConfig& cfg) {
    int64_t bins = cfg.fft_size / 2 + 1;
    double f_max = cfg.f_max > 0 ? cfg.f_max : cfg.sample_rate / 2.0;
    double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(f_max);
    std::vector<double> edges(cfg.n_mels + 2);
    for (int64_t i = 0; i < cfg.n_mels + 2; ++i)
        edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
    std::vector<double> fb(cfg.n_mels * bins, 0.0);
    for (int64_t m = 0; m < cfg.n_mels; ++m) {
        double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
        for (int64_t k = 0; k < bins; ++k) {
            double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > lo && f < c)
                w = (f - lo) / (c - lo);
            else if (f >= c && f < hi)
                w = (hi - f) / (hi - c);
            fb[m * bins + k] = w;
        }
    }
    return fb;
}

// wave: [T] -> magnitudes [fft/2+1, frames]; frames = floor(T/hop)+1 with
// reflect-padded centered frames.
template <typename S>
Tensor<S> stft_magnitude(const Tensor<S>& wave, const MelConfig& cfg) {
    if (wave.rank() != 1) fail("stft_magnitude expects a mono waveform [T]");
    if (wave.dim(0) < cfg.fft_size)
        fail("waveform length " + std::to_string(wave.dim(0)) + " shorter than fft size " +
             std::to_string(cfg.fft_size));
    int64_t n = cfg.fft_size;
    int64_t bins = n / 2 + 1;
    Tensor<S> frames = frame_signal(wave, n, cfg.hop);  // [F, n]
    std::vector<double> hw = hann_window(n);
    Tensor<S> win = zeros<S>({n});
    for (int64_t i = 0; i < n; ++i) win.data()[i] = static_cast<S>(hw[i]);
    Tensor<S> windowed = mul_rowvec(frames, win);
    // real DFT as two matmuls against fixed bases
    Tensor<S> cos_basis = zeros<S>({n, bins});
    Tensor<S> sin_basis = zeros<S>({n, bins});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < bins; ++k) {
            double ang = 2.0 * 3.14159265358979323846 * i * k / n;
            cos_basis.data()[i * bins + k] = static_cast<S>(std::cos(ang));
            sin_basis.data()[i * bins + k] = static_cast<S>(-std::sin(ang));
        }
    Tensor<S> re = matmul(windowed, cos_basis);  // [F, bins]
    Tensor<S> im = matmul(windowed, sin_basis);
    return transpose(complex_magnitude(re, im));
}

// mag: [bins, frames] -> [n_mels, frames]
template <typename S>
Tensor<S> mel_project(const Tensor<S>& mag, const MelConfig& cfg) {
    int64_t bins = cfg.fft_size / 2 + 1;
    if (mag.rank() != 2 || mag.dim(0) != bins) fail("mel_project: magnitude bin count mismatch");
    std::vector<double> fb = mel_filterbank(cfg);
    Tensor<S> fbt = zeros<S>({cfg.n_mels, bins});
    for (size_t i = 0; i < fb.size(); ++i) fbt.data()[i] = static_cast<S>(fb[i]);
    return matmul(fbt, mag);
}

template <typename S>
Tensor<S> log_mel(const Tensor<S>& wave, const MelConfig& cfg) {
    Tensor<S> m = mel_project(stft_magnitude(wave, cfg), cfg);
    return log(clamp(m, static_cast<S>(1e-5), std::numeric_limits<S>::max()));
}

// Mean over scales of the mean absolute log-mel difference. The shorter
// waveform is zero-padded; a length gap beyond the largest hop is an error.
template <typename S>
Tensor<S> multiscale_mel_loss(const Tensor<S>& x, const Tensor<S>& x_hat,
                              const std::vector<MelConfig>& scales) {
    if (scales.empty()) fail("multiscale_mel_loss: empty scale list");
    int64_t la = x.dim(0), lb = x_hat.dim(0);
    int64_t max_hop = 0;
    for (const auto& s : scales) max_hop = std::max(max_hop, s.hop);
    if (std::abs(la - lb) > max_hop)
        fail("multiscale_mel_loss: length mismatch " + std::to_string(la) + " vs " +
             std::to_string(lb) + " exceeds one hop (" + std::to_string(max_hop) + ")");
    int64_t n = std::max(la, lb);
    Tensor<S> a = la == n ? x : pad_time(x, 0, n - la);
    Tensor<S> b = lb == n ? x_hat : pad_time(x_hat, 0, n - lb);
    Tensor<S> acc = zeros<S>({1});
    for (const auto& s : scales)
        acc = add(acc, mean(abs(sub(log_mel(a, s), log_mel(b, s)))));
    return mul_scalar(acc, static_cast<S>(1.0 / scales.size()));
}

}  // namespace holitok
