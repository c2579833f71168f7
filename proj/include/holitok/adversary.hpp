#pragma once

// Multi-period waveform discriminator and least-squares GAN losses, plus the
// feature-matching loss computed from the discriminator's intermediate
// activations. Each period-p sub-discriminator splits the waveform into p
// phase streams and runs a weight-shared strided conv stack over each, so it
// scores periodic structure at that period.

#include "holitok/nn.hpp"

namespace holitok {

template <typename S>
struct PeriodDiscriminator {
    int64_t period = 1;
    std::vector<Conv1dLayer<S>> convs;  // 1 -> widths..., kernel 5, stride 3
    Conv1dLayer<S> head;                // widths.back() -> 1, kernel 3

    PeriodDiscriminator() = default;
    PeriodDiscriminator(int64_t period_, const std::vector<int64_t>& widths, Rng& rng)
        : period(period_) {
        int64_t cin = 1;
        for (int64_t w : widths) {
            convs.push_back(Conv1dLayer<S>::causal(cin, w, 5, 3, 1, rng));
            cin = w;
        }
        head = Conv1dLayer<S>::causal(cin, 1, 3, 1, 1, rng);
    }

    // wave [T] (T a multiple of period) -> (score map [period, T_s],
    // per-layer feature maps, each phases-concatenated along channels)
    std::pair<Tensor<S>, std::vector<Tensor<S>>> forward(const Tensor<S>& wave) const {
        std::vector<std::vector<Tensor<S>>> taps(convs.size());
        std::vector<Tensor<S>> scores;
        Tensor<S> x2 = reshape(wave, {1, wave.dim(0)});
        for (int64_t ph = 0; ph < period; ++ph) {
            Tensor<S> h = phase_select(x2, period, ph);
            for (size_t li = 0; li < convs.size(); ++li) {
                h = leaky_relu(convs[li].forward(h), S(0.1));
                taps[li].push_back(h);
            }
            scores.push_back(head.forward(h));
        }
        std::vector<Tensor<S>> features;
        for (auto& t : taps) features.push_back(concat_rows<S>(t));
        return {concat_rows<S>(scores), features};
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(p + ".conv" + std::to_string(i), m);
        head.collect(p + ".head", m);
    }
};

template <typename S>
struct DiscriminatorBank {
    std::vector<PeriodDiscriminator<S>> subs;

    DiscriminatorBank() = default;
    DiscriminatorBank(const std::vector<int64_t>& periods, Rng& rng,
                      const std::vector<int64_t>& widths = {16, 32, 64}) {
        for (int64_t p : periods) subs.emplace_back(p, widths, rng);
    }

    // -> (one score map per period, one feature-map list per period)
    std::pair<std::vector<Tensor<S>>, std::vector<std::vector<Tensor<S>>>>
    forward(const Tensor<S>& wave) const {
        if (wave.rank() != 1 || wave.dim(0) < 1) fail("discriminator expects a non-empty mono waveform");
        std::vector<Tensor<S>> scores;
        std::vector<std::vector<Tensor<S>>> features;
        for (const auto& sub : subs) {
            int64_t pad = (sub.period - wave.dim(0) % sub.period) % sub.period;
            Tensor<S> w = pad > 0 ? pad_time(wave, 0, pad) : wave;
            auto [s, f] = sub.forward(w);
            scores.push_back(s);
            features.push_back(std::move(f));
        }
        return {scores, features};
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        for (size_t i = 0; i < subs.size(); ++i)
            subs[i].collect(p + ".period" + std::to_string(subs[i].period), m);
    }
    ParamMap<S> params() const {
        ParamMap<S> m;
        collect("disc", m);
        return m;
    }
};

inline std::vector<int64_t> toy_periods() { return {2, 3}; }
inline std::vector<int64_t> paper_periods() { return {2, 3, 5, 7, 11}; }

// Least-squares GAN objectives, averaged per score map and then across
// sub-discriminators: L_G = mean((fake-1)^2), L_D = mean((real-1)^2) +
// mean(fake^2). Returns (generator loss, discriminator loss).
template <typename S>
std::pair<Tensor<S>, Tensor<S>> gan_losses(const std::vector<Tensor<S>>& real_scores,
                                           const std::vector<Tensor<S>>& fake_scores) {
    if (real_scores.size() != fake_scores.size() || real_scores.empty())
        fail("gan_losses: real/fake score lists differ in length or are empty");
    Tensor<S> g = zeros<S>({1});
    Tensor<S> d = zeros<S>({1});
    for (size_t i = 0; i < real_scores.size(); ++i) {
        require_same_shape(real_scores[i], fake_scores[i], "gan_losses");
        g = add(g, mean(square(add_scalar(fake_scores[i], S(-1)))));
        d = add(d, add(mean(square(add_scalar(real_scores[i], S(-1)))),
                       mean(square(fake_scores[i]))));
    }
    S inv = S(1) / S(real_scores.size());
    return {mul_scalar(g, inv), mul_scalar(d, inv)};
}

// Mean absolute difference over matched feature maps, averaged over layers
// and then over sub-discriminators. Real features are treated as constants
// (stop-gradient), so this only shapes the generator.
template <typename S>
Tensor<S> feature_matching_loss(const std::vector<std::vector<Tensor<S>>>& real_features,
                                const std::vector<std::vector<Tensor<S>>>& fake_features) {
    if (real_features.size() != fake_features.size() || real_features.empty())
        fail("feature_matching_loss: sub-discriminator count mismatch");
    Tensor<S> total = zeros<S>({1});
    for (size_t i = 0; i < real_features.size(); ++i) {
        if (real_features[i].size() != fake_features[i].size() || real_features[i].empty())
            fail("feature_matching_loss: layer count mismatch in sub-discriminator " + std::to_string(i));
        Tensor<S> layer_acc = zeros<S>({1});
        for (size_t l = 0; l < real_features[i].size(); ++l) {
            require_same_shape(real_features[i][l], fake_features[i][l], "feature_matching_loss");
            layer_acc = add(layer_acc, mean(abs(sub(fake_features[i][l], real_features[i][l].detach()))));
        }
        total = add(total, mul_scalar(layer_acc, S(1) / S(real_features[i].size())));
    }
    return mul_scalar(total, S(1) / S(real_features.size()));
}

}  // namespace holitok
