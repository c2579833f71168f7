#pragma once

// Structured ops on top of the core engine: 1-D convolutions, signal framing,
// row-wise softmax/cross-entropy, normalization, interpolation. Layout
// convention: waveform-like tensors are [C,T] (channel-major), sequence
// tensors are [T,D] (row per step).

#include "holitok/tensor.hpp"

namespace holitok {

inline int64_t conv_out_len(int64_t t, int64_t k, int64_t stride, int64_t dilation,
                            int64_t lpad, int64_t rpad) {
    return (t + lpad + rpad - dilation * (k - 1) - 1) / stride + 1;
}

// x: [Cin,T]  w: [Cout,Cin,K]  b: [Cout]  ->  [Cout,T']
// Explicit asymmetric padding; causal convs pass lpad = dilation*(K-1), rpad = 0.
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int64_t stride, int64_t dilation, int64_t lpad, int64_t rpad) {
    if (x.rank() != 2 || w.rank() != 3) fail("conv1d expects x [Cin,T], w [Cout,Cin,K]");
    int64_t cin = x.dim(0), t = x.dim(1);
    int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) fail("conv1d channel mismatch");
    if (b.numel() != cout) fail("conv1d bias mismatch");
    int64_t tout = conv_out_len(t, k, stride, dilation, lpad, rpad);
    if (tout <= 0) fail("conv1d: empty output (input too short)");
    Tensor<S> out = make_node<S>({cout, tout}, {x, w, b});
    const S* px = x.data();
    const S* pw = w.data();
    S* po = out.data();
    for (int64_t oc = 0; oc < cout; ++oc) {
        S bias = b.data()[oc];
        for (int64_t ot = 0; ot < tout; ++ot) po[oc * tout + ot] = bias;
        for (int64_t ic = 0; ic < cin; ++ic) {
            const S* xrow = px + ic * t;
            const S* wrow = pw + (oc * cin + ic) * k;
            for (int64_t kk = 0; kk < k; ++kk) {
                S wv = wrow[kk];
                if (wv == S(0)) continue;
                int64_t base = kk * dilation - lpad;
                for (int64_t ot = 0; ot < tout; ++ot) {
                    int64_t it = ot * stride + base;
                    if (it >= 0 && it < t) po[oc * tout + ot] += wv * xrow[it];
                }
            }
        }
    }
    finish(out, "conv1d",
           [xp = x.impl(), wp = w.impl(), bp = b.impl(), stride, dilation, lpad,
            cin, t, cout, k, tout](TensorImpl<S>& self) {
        const S* go = self.g.data();
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t oc = 0; oc < cout; ++oc) {
                S acc = S(0);
                for (int64_t ot = 0; ot < tout; ++ot) acc += go[oc * tout + ot];
                bp->g[oc] += acc;
            }
        }
        if (wp->requires_grad) {
            wp->ensure_grad();
            for (int64_t oc = 0; oc < cout; ++oc)
                for (int64_t ic = 0; ic < cin; ++ic)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        int64_t base = kk * dilation - lpad;
                        S acc = S(0);
                        for (int64_t ot = 0; ot < tout; ++ot) {
                            int64_t it = ot * stride + base;
                            if (it >= 0 && it < t) acc += go[oc * tout + ot] * xp->v[ic * t + it];
                        }
                        wp->g[(oc * cin + ic) * k + kk] += acc;
                    }
        }
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (int64_t oc = 0; oc < cout; ++oc)
                for (int64_t ic = 0; ic < cin; ++ic) {
                    const S* wrow = wp->v.data() + (oc * cin + ic) * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        S wv = wrow[kk];
                        if (wv == S(0)) continue;
                        int64_t base = kk * dilation - lpad;
                        for (int64_t ot = 0; ot < tout; ++ot) {
                            int64_t it = ot * stride + base;
                            if (it >= 0 && it < t) xp->g[ic * t + it] += wv * go[oc * tout + ot];
                        }
                    }
                }
        }
    });
    return out;
}

// Transposed conv for upsampling. x: [Cin,T], w: [Cin,Cout,K], stride s.
// Requires K >= s; the full output (T-1)*s + K is trimmed to exactly T*s
// so every output sample depends only on present-or-past input frames.
template <typename S>
Tensor<S> conv_transpose1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           int64_t stride) {
    if (x.rank() != 2 || w.rank() != 3) fail("conv_transpose1d expects x [Cin,T], w [Cin,Cout,K]");
    int64_t cin = x.dim(0), t = x.dim(1);
    int64_t cout = w.dim(1), k = w.dim(2);
    if (w.dim(0) != cin) fail("conv_transpose1d channel mismatch");
    if (b.numel() != cout) fail("conv_transpose1d bias mismatch");
    if (k < stride) fail("conv_transpose1d requires kernel >= stride");
    int64_t tout = t * stride;
    Tensor<S> out = make_node<S>({cout, tout}, {x, w, b});
    S* po = out.data();
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t ot = 0; ot < tout; ++ot) po[oc * tout + ot] = b.data()[oc];
    for (int64_t ic = 0; ic < cin; ++ic) {
        const S* xrow = x.data() + ic * t;
        for (int64_t oc = 0; oc < cout; ++oc) {
            const S* wrow = w.data() + (ic * cout + oc) * k;
            S* orow = po + oc * tout;
            for (int64_t it = 0; it < t; ++it) {
                S xv = xrow[it];
                int64_t base = it * stride;
                int64_t kmax = std::min(k, tout - base);
                for (int64_t kk = 0; kk < kmax; ++kk) orow[base + kk] += xv * wrow[kk];
            }
        }
    }
    finish(out, "conv_transpose1d",
           [xp = x.impl(), wp = w.impl(), bp = b.impl(), stride, cin, t, cout, k,
            tout](TensorImpl<S>& self) {
        const S* go = self.g.data();
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t oc = 0; oc < cout; ++oc) {
                S acc = S(0);
                for (int64_t ot = 0; ot < tout; ++ot) acc += go[oc * tout + ot];
                bp->g[oc] += acc;
            }
        }
        for (int64_t ic = 0; ic < cin; ++ic)
            for (int64_t oc = 0; oc < cout; ++oc) {
                const S* wrow = wp->v.data() + (ic * cout + oc) * k;
                const S* grow = go + oc * tout;
                for (int64_t it = 0; it < t; ++it) {
                    int64_t base = it * stride;
                    int64_t kmax = std::min(k, tout - base);
                    if (xp->requires_grad) {
                        S acc = S(0);
                        for (int64_t kk = 0; kk < kmax; ++kk) acc += wrow[kk] * grow[base + kk];
                        xp->ensure_grad();
                        xp->g[ic * t + it] += acc;
                    }
                    if (wp->requires_grad) {
                        wp->ensure_grad();
                        S xv = xp->v[ic * t + it];
                        S* wgrow = wp->g.data() + (ic * cout + oc) * k;
                        for (int64_t kk = 0; kk < kmax; ++kk) wgrow[kk] += xv * grow[base + kk];
                    }
                }
            }
    });
    return out;
}

// Periodic activation x + (1/(beta+eps)) * sin^2(alpha*x), with per-channel
// log-scale parameters. x: [C,T], log_alpha/log_beta: [C].
template <typename S>
Tensor<S> snake_beta(const Tensor<S>& x, const Tensor<S>& log_alpha, const Tensor<S>& log_beta) {
    if (x.rank() != 2 || log_alpha.numel() != x.dim(0) || log_beta.numel() != x.dim(0))
        fail("snake_beta shape mismatch");
    int64_t c = x.dim(0), t = x.dim(1);
    const S eps = S(1e-9);
    Tensor<S> out = make_node<S>({c, t}, {x, log_alpha, log_beta});
    for (int64_t ch = 0; ch < c; ++ch) {
        S alpha = std::exp(log_alpha.data()[ch]);
        S inv_beta = S(1) / (std::exp(log_beta.data()[ch]) + eps);
        for (int64_t i = 0; i < t; ++i) {
            S xv = x.data()[ch * t + i];
            S s = std::sin(alpha * xv);
            out.data()[ch * t + i] = xv + inv_beta * s * s;
        }
    }
    finish(out, "snake_beta",
           [xp = x.impl(), ap = log_alpha.impl(), bp = log_beta.impl(), c, t, eps](TensorImpl<S>& self) {
        for (int64_t ch = 0; ch < c; ++ch) {
            S alpha = std::exp(ap->v[ch]);
            S beta = std::exp(bp->v[ch]);
            S inv_beta = S(1) / (beta + eps);
            S acc_a = S(0), acc_b = S(0);
            for (int64_t i = 0; i < t; ++i) {
                S xv = xp->v[ch * t + i];
                S go = self.g[ch * t + i];
                S s = std::sin(alpha * xv);
                S cs = std::cos(alpha * xv);
                if (xp->requires_grad) {
                    xp->ensure_grad();
                    xp->g[ch * t + i] += go * (S(1) + inv_beta * S(2) * s * cs * alpha);
                }
                // d/d log_alpha = (2 s cos)(x*alpha)/beta ; d/d log_beta = -s^2 * beta/(beta+eps)^2
                acc_a += go * inv_beta * S(2) * s * cs * xv * alpha;
                acc_b += go * (-(s * s) * beta * inv_beta * inv_beta);
            }
            if (ap->requires_grad) {
                ap->ensure_grad();
                ap->g[ch] += acc_a;
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                bp->g[ch] += acc_b;
            }
        }
    });
    return out;
}

// Slices a mono signal [T] into overlapping frames [n_frames, win] with hop
// `hop`, reflect-padding win/2 on both sides (center alignment).
template <typename S>
Tensor<S> frame_signal(const Tensor<S>& x, int64_t win, int64_t hop) {
    if (x.rank() != 1) fail("frame_signal expects [T]");
    int64_t t = x.dim(0);
    if (t < 2) fail("frame_signal: signal too short");
    int64_t half = win / 2;
    int64_t n_frames = t / hop + 1;
    // reflect index into [0, t)
    auto reflect = [t](int64_t i) {
        while (i < 0 || i >= t) {
            if (i < 0) i = -i;
            if (i >= t) i = 2 * t - 2 - i;
        }
        return i;
    };
    Tensor<S> out = make_node<S>({n_frames, win}, {x});
    std::vector<int64_t> src(n_frames * win);
    for (int64_t f = 0; f < n_frames; ++f)
        for (int64_t j = 0; j < win; ++j) {
            int64_t i = reflect(f * hop - half + j);
            src[f * win + j] = i;
            out.data()[f * win + j] = x.data()[i];
        }
    finish(out, "frame_signal", [xp = x.impl(), src](TensorImpl<S>& self) {
        xp->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i) xp->g[src[i]] += self.g[i];
    });
    return out;
}

// sqrt(re^2 + im^2) elementwise, exact at zero; the gradient denominator is
// floored at eps so the subgradient at the origin is zero instead of NaN.
template <typename S>
Tensor<S> complex_magnitude(const Tensor<S>& re, const Tensor<S>& im, S eps = S(1e-12)) {
    require_same_shape(re, im, "complex_magnitude");
    Tensor<S> out = make_node<S>(re.shape(), {re, im});
    for (int64_t i = 0; i < out.numel(); ++i) {
        S a = re.data()[i], b = im.data()[i];
        out.data()[i] = std::sqrt(a * a + b * b);
    }
    finish(out, "complex_magnitude", [rp = re.impl(), ip = im.impl(), op = out.impl(), eps](TensorImpl<S>& self) {
        for (int64_t i = 0; i < self.numel(); ++i) {
            S inv = self.g[i] / std::max(op->v[i], eps);
            if (rp->requires_grad) {
                rp->ensure_grad();
                rp->g[i] += inv * rp->v[i];
            }
            if (ip->requires_grad) {
                ip->ensure_grad();
                ip->g[i] += inv * ip->v[i];
            }
        }
    });
    return out;
}

// Linear time interpolation of a [T,D] sequence to [T',D] with endpoints
// pinned (positions map via i * (T-1)/(T'-1)).
template <typename S>
Tensor<S> interp_linear_rows(const Tensor<S>& x, int64_t t_out) {
    if (x.rank() != 2) fail("interp_linear_rows expects [T,D]");
    int64_t t = x.dim(0), d = x.dim(1);
    if (t_out < 1) fail("interp_linear_rows: bad target length");
    Tensor<S> out = make_node<S>({t_out, d}, {x});
    std::vector<int64_t> i0(t_out), i1(t_out);
    std::vector<S> w1(t_out);
    for (int64_t i = 0; i < t_out; ++i) {
        double pos = (t_out == 1 || t == 1) ? 0.0
                                            : static_cast<double>(i) * (t - 1) / (t_out - 1);
        int64_t lo = static_cast<int64_t>(pos);
        if (lo >= t - 1) lo = t - 2 >= 0 ? t - 2 : 0;
        double frac = pos - lo;
        if (t == 1) { lo = 0; frac = 0.0; }
        i0[i] = lo;
        i1[i] = std::min<int64_t>(lo + 1, t - 1);
        w1[i] = static_cast<S>(frac);
        for (int64_t j = 0; j < d; ++j)
            out.data()[i * d + j] = (S(1) - w1[i]) * x.data()[i0[i] * d + j] + w1[i] * x.data()[i1[i] * d + j];
    }
    finish(out, "interp_linear_rows", [xp = x.impl(), i0, i1, w1, d](TensorImpl<S>& self) {
        xp->ensure_grad();
        int64_t t_out2 = self.shape[0];
        for (int64_t i = 0; i < t_out2; ++i)
            for (int64_t j = 0; j < d; ++j) {
                S go = self.g[i * d + j];
                xp->g[i0[i] * d + j] += (S(1) - w1[i]) * go;
                xp->g[i1[i] * d + j] += w1[i] * go;
            }
    });
    return out;
}

// Row-wise layer norm over [T,D] with learned gain/bias [D].
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                          S eps = S(1e-5)) {
    if (x.rank() != 2 || gain.numel() != x.dim(1) || bias.numel() != x.dim(1))
        fail("layer_norm_rows shape mismatch");
    int64_t t = x.dim(0), d = x.dim(1);
    Tensor<S> out = make_node<S>({t, d}, {x, gain, bias});
    std::vector<S> mu(t), inv_sd(t);
    for (int64_t i = 0; i < t; ++i) {
        S m = S(0);
        for (int64_t j = 0; j < d; ++j) m += x.data()[i * d + j];
        m /= S(d);
        S var = S(0);
        for (int64_t j = 0; j < d; ++j) {
            S c = x.data()[i * d + j] - m;
            var += c * c;
        }
        var /= S(d);
        mu[i] = m;
        inv_sd[i] = S(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) {
            S xhat = (x.data()[i * d + j] - m) * inv_sd[i];
            out.data()[i * d + j] = xhat * gain.data()[j] + bias.data()[j];
        }
    }
    finish(out, "layer_norm_rows",
           [xp = x.impl(), gp = gain.impl(), bp = bias.impl(), mu, inv_sd, t, d](TensorImpl<S>& self) {
        for (int64_t i = 0; i < t; ++i) {
            // per-row reductions of upstream grad against xhat
            S sum_g = S(0), sum_gx = S(0);
            for (int64_t j = 0; j < d; ++j) {
                S xhat = (xp->v[i * d + j] - mu[i]) * inv_sd[i];
                S gy = self.g[i * d + j] * gp->v[j];
                sum_g += gy;
                sum_gx += gy * xhat;
                if (gp->requires_grad) {
                    gp->ensure_grad();
                    gp->g[j] += self.g[i * d + j] * xhat;
                }
                if (bp->requires_grad) {
                    bp->ensure_grad();
                    bp->g[j] += self.g[i * d + j];
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                for (int64_t j = 0; j < d; ++j) {
                    S xhat = (xp->v[i * d + j] - mu[i]) * inv_sd[i];
                    S gy = self.g[i * d + j] * gp->v[j];
                    xp->g[i * d + j] += inv_sd[i] * (gy - sum_g / S(d) - xhat * sum_gx / S(d));
                }
            }
        }
    });
    return out;
}

// Numerically stable row-wise softmax over [T,D].
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    if (x.rank() != 2) fail("softmax_rows expects [T,D]");
    int64_t t = x.dim(0), d = x.dim(1);
    Tensor<S> out = make_node<S>({t, d}, {x});
    for (int64_t i = 0; i < t; ++i) {
        S mx = x.data()[i * d];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x.data()[i * d + j]);
        S z = S(0);
        for (int64_t j = 0; j < d; ++j) {
            S e = std::exp(x.data()[i * d + j] - mx);
            out.data()[i * d + j] = e;
            z += e;
        }
        for (int64_t j = 0; j < d; ++j) out.data()[i * d + j] /= z;
    }
    finish(out, "softmax_rows", [xp = x.impl(), op = out.impl(), t, d](TensorImpl<S>& self) {
        xp->ensure_grad();
        for (int64_t i = 0; i < t; ++i) {
            S dot = S(0);
            for (int64_t j = 0; j < d; ++j) dot += self.g[i * d + j] * op->v[i * d + j];
            for (int64_t j = 0; j < d; ++j)
                xp->g[i * d + j] += op->v[i * d + j] * (self.g[i * d + j] - dot);
        }
    });
    return out;
}

// Softmax over only the first counts[i] entries of each row; the rest are
// exactly zero in both value and gradient. This is the attention mask:
// masked positions carry no dependence at all, not just a small weight.
template <typename S>
Tensor<S> softmax_rows_masked(const Tensor<S>& x, const std::vector<int64_t>& counts) {
    if (x.rank() != 2 || static_cast<int64_t>(counts.size()) != x.dim(0))
        fail("softmax_rows_masked shape mismatch");
    int64_t t = x.dim(0), d = x.dim(1);
    for (int64_t c : counts)
        if (c < 1 || c > d) fail("softmax_rows_masked: bad count " + std::to_string(c));
    Tensor<S> out = make_node<S>({t, d}, {x});
    std::fill(out.data(), out.data() + out.numel(), S(0));
    for (int64_t i = 0; i < t; ++i) {
        int64_t c = counts[i];
        S mx = x.data()[i * d];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x.data()[i * d + j]);
        S z = S(0);
        for (int64_t j = 0; j < c; ++j) {
            S e = std::exp(x.data()[i * d + j] - mx);
            out.data()[i * d + j] = e;
            z += e;
        }
        for (int64_t j = 0; j < c; ++j) out.data()[i * d + j] /= z;
    }
    finish<S>(out, "softmax_rows_masked", [xp = x.impl(), op = out.impl(), counts, t, d](TensorImpl<S>& self) {
        xp->ensure_grad();
        for (int64_t i = 0; i < t; ++i) {
            int64_t c = counts[i];
            S dot = S(0);
            for (int64_t j = 0; j < c; ++j) dot += self.g[i * d + j] * op->v[i * d + j];
            for (int64_t j = 0; j < c; ++j)
                xp->g[i * d + j] += op->v[i * d + j] * (self.g[i * d + j] - dot);
        }
    });
    return out;
}

// Mean cross-entropy of logits [T,V] against integer targets. Rows with
// target < 0 are ignored (masked positions).
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits, const std::vector<int64_t>& targets) {
    if (logits.rank() != 2 || static_cast<int64_t>(targets.size()) != logits.dim(0))
        fail("cross_entropy_rows shape mismatch");
    int64_t t = logits.dim(0), v = logits.dim(1);
    int64_t active = 0;
    for (int64_t tv : targets) {
        if (tv >= v) fail("cross_entropy_rows: target out of range");
        if (tv >= 0) ++active;
    }
    if (active == 0) fail("cross_entropy_rows: all rows masked");
    Tensor<S> out = make_node<S>({1}, {logits});
    std::vector<S> probs(t * v);
    S loss = S(0);
    for (int64_t i = 0; i < t; ++i) {
        S mx = logits.data()[i * v];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, logits.data()[i * v + j]);
        S z = S(0);
        for (int64_t j = 0; j < v; ++j) {
            S e = std::exp(logits.data()[i * v + j] - mx);
            probs[i * v + j] = e;
            z += e;
        }
        for (int64_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        if (targets[i] >= 0) loss -= std::log(std::max(probs[i * v + targets[i]], S(1e-30)));
    }
    out.data()[0] = loss / S(active);
    finish(out, "cross_entropy_rows",
           [lp = logits.impl(), targets, probs, t, v, active](TensorImpl<S>& self) {
        lp->ensure_grad();
        S go = self.g[0] / S(active);
        for (int64_t i = 0; i < t; ++i) {
            if (targets[i] < 0) continue;
            for (int64_t j = 0; j < v; ++j) {
                S p = probs[i * v + j];
                lp->g[i * v + j] += go * (p - (j == targets[i] ? S(1) : S(0)));
            }
        }
    });
    return out;
}

// Mean binary cross-entropy with logits; targets in {0,1} given as floats.
template <typename S>
Tensor<S> bce_logits(const Tensor<S>& logits, const std::vector<S>& targets) {
    if (static_cast<int64_t>(targets.size()) != logits.numel()) fail("bce_logits length mismatch");
    int64_t n = logits.numel();
    Tensor<S> out = make_node<S>({1}, {logits});
    S loss = S(0);
    for (int64_t i = 0; i < n; ++i) {
        S x = logits.data()[i], y = targets[i];
        // log(1+exp(-|x|)) + max(x,0) - x*y, stable in both tails
        loss += std::log1p(std::exp(-std::fabs(x))) + std::max(x, S(0)) - x * y;
    }
    out.data()[0] = loss / S(n);
    finish(out, "bce_logits", [lp = logits.impl(), targets, n](TensorImpl<S>& self) {
        lp->ensure_grad();
        S go = self.g[0] / S(n);
        for (int64_t i = 0; i < n; ++i) {
            S sig = S(1) / (S(1) + std::exp(-lp->v[i]));
            lp->g[i] += go * (sig - targets[i]);
        }
    });
    return out;
}

}  // namespace holitok
