#pragma once

// Central-difference gradient verification. Compares analytic gradients from
// backward() against (f(x+h) - f(x-h)) / 2h on a sampled subset of
// coordinates. Coordinates whose first comparison fails are retried at h/8
// and 8h (curvature vs roundoff) and the best agreement is kept.

#include <limits>
#include <string>
#include <vector>

#include "holitok/tensor.hpp"

namespace holitok {

struct GradCheckReport {
    bool pass = true;
    double max_err = 0.0;          // worst |analytic - numeric| after retries
    double max_rel = 0.0;          // the same, relative
    std::string worst;             // "tensor[idx]" of the worst coordinate
    int64_t coords_checked = 0;
};

// params: named leaf tensors (must have requires_grad). loss_fn: rebuilds the
// scalar loss from current parameter values on every call.
template <typename S, typename LossFn>
GradCheckReport check_gradients(const std::vector<std::pair<std::string, Tensor<S>>>& params,
                                LossFn&& loss_fn, Rng& rng,
                                int64_t max_coords_per_tensor = 6,
                                double tol = 1e-4, double abs_floor = 1e-7,
                                double base_h = 1e-5) {
    GradCheckReport rep;
    for (auto& [name, p] : params) {
        (void)name;
        if (!p.requires_grad()) fail("check_gradients: parameter without grad: " + name);
        const_cast<Tensor<S>&>(p).zero_grad();
    }
    S loss0;
    {
        Tensor<S> loss = loss_fn();
        loss.backward();
        loss0 = loss.item();
    }
    (void)loss0;
    std::vector<std::vector<S>> analytic;
    for (auto& [name, p] : params) analytic.push_back(p.grad());

    auto eval = [&]() -> double {
        NoGradGuard ng;
        return static_cast<double>(loss_fn().item());
    };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<S> p = params[pi].second;
        int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_tensor) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int64_t c = 0; c < max_coords_per_tensor; ++c) coords.push_back(rng.uniform_int(n));
        }
        for (int64_t i : coords) {
            double a = static_cast<double>(analytic[pi][i]);
            S orig = p.values()[i];
            double scale = std::max(1.0, std::fabs(static_cast<double>(orig)));
            double best_err = std::numeric_limits<double>::infinity();
            double best_fd = 0.0;
            for (double hm : {1.0, 0.125, 8.0}) {
                double h = base_h * scale * hm;
                p.values()[i] = orig + static_cast<S>(h);
                double fp = eval();
                p.values()[i] = orig - static_cast<S>(h);
                double fm = eval();
                p.values()[i] = orig;
                double fd = (fp - fm) / (2.0 * h);
                double err = std::fabs(a - fd);
                if (err < best_err) {
                    best_err = err;
                    best_fd = fd;
                }
                if (err <= tol * std::max(std::fabs(a), std::fabs(fd)) + abs_floor) break;
            }
            ++rep.coords_checked;
            double rel = best_err / std::max({std::fabs(a), std::fabs(best_fd), abs_floor});
            if (best_err > rep.max_err) {
                rep.max_err = best_err;
                rep.max_rel = rel;
                rep.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
            if (best_err > tol * std::max(std::fabs(a), std::fabs(best_fd)) + abs_floor)
                rep.pass = false;
        }
    }
    return rep;
}

}  // namespace holitok
