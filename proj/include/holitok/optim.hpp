#pragma once

// AdamW with decoupled weight decay and global-norm gradient clipping, plus
// the two learning-rate schedules used by the trainers (exponential decay
// with a floor, and linear warmup into a cosine).

#include <cmath>

#include "holitok/nn.hpp"

namespace holitok {

struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-6;
    double weight_decay = 0.01;
    double clip_norm = 0.0;  // <= 0 disables clipping
};

inline OptimConfig tokenizer_optim_config() {
    OptimConfig c;
    c.beta1 = 0.8;
    c.beta2 = 0.99;
    c.clip_norm = 500.0;
    return c;
}

inline OptimConfig downstream_optim_config() {
    OptimConfig c;
    c.beta1 = 0.9;
    c.beta2 = 0.99;
    c.clip_norm = 2.0;
    return c;
}

template <typename S>
struct AdamW {
    OptimConfig cfg;
    int64_t step_count = 0;
    std::map<std::string, std::vector<double>> m1, m2;  // keyed like the params

    explicit AdamW(OptimConfig cfg_ = {}) : cfg(cfg_) {}

    // Scales all trainable grads so their global L2 norm is at most
    // cfg.clip_norm. Returns the pre-clip norm.
    double clip_gradients(ParamMap<S>& params) const {
        double sq = 0.0;
        for (auto& [name, p] : params) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            for (S g : p.grad()) sq += double(g) * double(g);
        }
        double norm = std::sqrt(sq);
        if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
            S scale = static_cast<S>(cfg.clip_norm / norm);
            for (auto& [name, p] : params) {
                if (!p.requires_grad() || !p.has_grad()) continue;
                for (S& g : p.grad()) g *= scale;
            }
        }
        return norm;
    }

    // One update over every trainable parameter; frozen parameters get no
    // moments and are left untouched. lr_override < 0 means use cfg.lr.
    void step(ParamMap<S>& params, double lr_override = -1.0) {
        double lr = lr_override >= 0.0 ? lr_override : cfg.lr;
        clip_gradients(params);
        ++step_count;
        double bc1 = 1.0 - std::pow(cfg.beta1, double(step_count));
        double bc2 = 1.0 - std::pow(cfg.beta2, double(step_count));
        for (auto& [name, p] : params) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            auto& g = p.grad();
            auto& v = p.values();
            auto& a = m1[name];
            auto& b = m2[name];
            if (a.empty()) {
                a.assign(v.size(), 0.0);
                b.assign(v.size(), 0.0);
            }
            for (size_t i = 0; i < v.size(); ++i) {
                double gi = double(g[i]);
                if (!std::isfinite(gi)) fail("non-finite gradient in '" + name + "' after clipping");
                a[i] = cfg.beta1 * a[i] + (1.0 - cfg.beta1) * gi;
                b[i] = cfg.beta2 * b[i] + (1.0 - cfg.beta2) * gi * gi;
                double mh = a[i] / bc1;
                double vh = b[i] / bc2;
                v[i] = static_cast<S>(double(v[i]) - lr * (mh / (std::sqrt(vh) + cfg.eps) +
                                                          cfg.weight_decay * double(v[i])));
            }
        }
    }
};

struct ScheduleConfig {
    bool cosine = false;      // false: exponential decay with a floor
    double lr0 = 1e-4;
    double gamma = 0.9999996;
    double floor = 1e-6;
    int64_t warmup = 5000;    // cosine mode only
    int64_t total = 100000;   // cosine mode only
    double min_lr = 1e-5;     // cosine mode only
};

inline double lr_schedule(int64_t step, const ScheduleConfig& cfg) {
    if (step < 0) fail("lr_schedule: negative step");
    if (!cfg.cosine) return std::max(cfg.lr0 * std::pow(cfg.gamma, double(step)), cfg.floor);
    if (cfg.warmup > 0 && step < cfg.warmup) return cfg.lr0 * double(step) / double(cfg.warmup);
    if (step >= cfg.total) return cfg.min_lr;
    double frac = double(step - cfg.warmup) / double(std::max<int64_t>(1, cfg.total - cfg.warmup));
    return cfg.min_lr + 0.5 * (cfg.lr0 - cfg.min_lr) * (1.0 + std::cos(frac * 3.14159265358979323846));
}

}  // namespace holitok
