#pragma once

// Layer library on top of the engine: linear, conv wrappers, LSTM,
// multi-head attention, pre-norm transformer blocks. Every layer registers
// its parameters into a flat name → tensor map (dotted paths), which is what
// the optimizer, checkpointing, freezing, and hashing all operate on.
// Weights initialize uniform ±1/sqrt(fan_in); biases start at zero.

#include <map>

#include "holitok/ops.hpp"
#include "holitok/tensor.hpp"

namespace holitok {

template <typename S>
using ParamMap = std::map<std::string, Tensor<S>>;

template <typename S>
Tensor<S> init_weight(const Shape& shape, int64_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<S> w = rand_uniform<S>(shape, rng, -bound, bound);
    w.set_requires_grad(true);
    return w;
}

template <typename S>
Tensor<S> init_zero(const Shape& shape) {
    Tensor<S> t = zeros<S>(shape);
    t.set_requires_grad(true);
    return t;
}

// ---------------------------------------------------------------------------

template <typename S>
struct Linear {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng) : w(init_weight<S>({in, out}, in, rng)), b(init_zero<S>({out})) {}

    // x: [T, in] -> [T, out]
    Tensor<S> forward(const Tensor<S>& x) const { return add_rowvec(matmul(x, w), b); }

    void zero_init() {
        std::fill(w.values().begin(), w.values().end(), S(0));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".w", w);
        m.emplace(p + ".b", b);
    }
};

template <typename S>
struct Conv1dLayer {
    Tensor<S> w;  // [Cout, Cin, K]
    Tensor<S> b;  // [Cout]
    int64_t stride = 1, dilation = 1, lpad = 0, rpad = 0;

    Conv1dLayer() = default;
    Conv1dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t dilation_,
                int64_t lpad_, int64_t rpad_, Rng& rng)
        : w(init_weight<S>({cout, cin, k}, cin * k, rng)),
          b(init_zero<S>({cout})),
          stride(stride_), dilation(dilation_), lpad(lpad_), rpad(rpad_) {}

    // Strictly causal: left-pads the full receptive field, no right context.
    static Conv1dLayer causal(int64_t cin, int64_t cout, int64_t k, int64_t stride_,
                              int64_t dilation_, Rng& rng) {
        return Conv1dLayer(cin, cout, k, stride_, dilation_, dilation_ * (k - 1), 0, rng);
    }
    // Right-context conv: sees `ahead` future steps (the lookahead layers).
    static Conv1dLayer lookahead(int64_t cin, int64_t cout, int64_t k, int64_t ahead, Rng& rng) {
        return Conv1dLayer(cin, cout, k, 1, 1, k - 1 - ahead, ahead, rng);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return conv1d(x, w, b, stride, dilation, lpad, rpad);
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".w", w);
        m.emplace(p + ".b", b);
    }
};

template <typename S>
struct ConvT1dLayer {
    Tensor<S> w;  // [Cin, Cout, K]
    Tensor<S> b;  // [Cout]
    int64_t stride = 1;

    ConvT1dLayer() = default;
    ConvT1dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, Rng& rng)
        : w(init_weight<S>({cin, cout, k}, cin * k, rng)), b(init_zero<S>({cout})), stride(stride_) {}

    Tensor<S> forward(const Tensor<S>& x) const { return conv_transpose1d(x, w, b, stride); }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".w", w);
        m.emplace(p + ".b", b);
    }
};

// ---------------------------------------------------------------------------

// Unidirectional LSTM over [T, in] -> [T, hidden]; gate order (i, f, g, o).
template <typename S>
struct LSTMLayer {
    Tensor<S> w_ih;  // [in, 4H]
    Tensor<S> w_hh;  // [H, 4H]
    Tensor<S> b;     // [4H]
    int64_t hidden = 0;

    LSTMLayer() = default;
    LSTMLayer(int64_t in, int64_t hidden_, Rng& rng)
        : w_ih(init_weight<S>({in, 4 * hidden_}, in, rng)),
          w_hh(init_weight<S>({hidden_, 4 * hidden_}, hidden_, rng)),
          b(init_zero<S>({4 * hidden_})),
          hidden(hidden_) {}

    Tensor<S> forward(const Tensor<S>& x) const {
        int64_t t = x.dim(0);
        int64_t h = hidden;
        Tensor<S> xw = add_rowvec(matmul(x, w_ih), b);  // [T, 4H]
        Tensor<S> hs = zeros<S>({1, h});
        Tensor<S> cs = zeros<S>({1, h});
        std::vector<Tensor<S>> outs;
        outs.reserve(t);
        for (int64_t i = 0; i < t; ++i) {
            Tensor<S> gates = add(slice_rows(xw, i, 1), matmul(hs, w_hh));  // [1, 4H]
            Tensor<S> ig = sigmoid(slice_cols(gates, 0, h));
            Tensor<S> fg = sigmoid(slice_cols(gates, h, h));
            Tensor<S> gg = tanh(slice_cols(gates, 2 * h, h));
            Tensor<S> og = sigmoid(slice_cols(gates, 3 * h, h));
            cs = add(mul(fg, cs), mul(ig, gg));
            hs = mul(og, tanh(cs));
            outs.push_back(hs);
        }
        return concat_rows(outs);
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".w_ih", w_ih);
        m.emplace(p + ".w_hh", w_hh);
        m.emplace(p + ".b", b);
    }
};

// ---------------------------------------------------------------------------

// Multi-head attention. Queries come from x [T, D]; keys/values from ctx
// [Tc, D]. With `causal` set and ctx == x this is standard causal
// self-attention; masked positions contribute exactly nothing.
template <typename S>
struct MultiHeadAttention {
    Linear<S> q, k, v, o;
    int64_t heads = 1, dim = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(int64_t dim_, int64_t heads_, Rng& rng)
        : q(dim_, dim_, rng), k(dim_, dim_, rng), v(dim_, dim_, rng), o(dim_, dim_, rng),
          heads(heads_), dim(dim_) {
        if (dim_ % heads_ != 0) fail("attention dim not divisible by heads");
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& ctx, bool causal) const {
        int64_t t = x.dim(0);
        int64_t dh = dim / heads;
        Tensor<S> qq = q.forward(x);
        Tensor<S> kk = k.forward(ctx);
        Tensor<S> vv = v.forward(ctx);
        std::vector<int64_t> counts;
        if (causal) {
            if (ctx.dim(0) != t) fail("causal attention expects matching lengths");
            for (int64_t i = 0; i < t; ++i) counts.push_back(i + 1);
        }
        std::vector<Tensor<S>> outs;
        for (int64_t hd = 0; hd < heads; ++hd) {
            Tensor<S> qh = slice_cols(qq, hd * dh, dh);
            Tensor<S> kh = slice_cols(kk, hd * dh, dh);
            Tensor<S> vh = slice_cols(vv, hd * dh, dh);
            Tensor<S> scores = mul_scalar(matmul(qh, transpose(kh)),
                                          static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
            Tensor<S> p = causal ? softmax_rows_masked(scores, counts) : softmax_rows(scores);
            outs.push_back(matmul(p, vh));
        }
        return o.forward(concat_cols(outs));
    }
    Tensor<S> self_forward(const Tensor<S>& x, bool causal) const { return forward(x, x, causal); }

    void collect(const std::string& p, ParamMap<S>& m) const {
        q.collect(p + ".q", m);
        k.collect(p + ".k", m);
        v.collect(p + ".v", m);
        o.collect(p + ".o", m);
    }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename S>
struct TransformerBlock {
    Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
    MultiHeadAttention<S> attn;
    Linear<S> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(int64_t dim, int64_t heads, Rng& rng)
        : ln1_g(init_zero<S>({dim})), ln1_b(init_zero<S>({dim})),
          ln2_g(init_zero<S>({dim})), ln2_b(init_zero<S>({dim})),
          attn(dim, heads, rng), fc1(dim, 4 * dim, rng), fc2(4 * dim, dim, rng) {
        std::fill(ln1_g.values().begin(), ln1_g.values().end(), S(1));
        std::fill(ln2_g.values().begin(), ln2_g.values().end(), S(1));
    }

    Tensor<S> forward(const Tensor<S>& x, bool causal) const {
        Tensor<S> h = add(x, attn.self_forward(layer_norm_rows(x, ln1_g, ln1_b), causal));
        return add(h, fc2.forward(silu(fc1.forward(layer_norm_rows(h, ln2_g, ln2_b)))));
    }
    void collect(const std::string& p, ParamMap<S>& m) const {
        m.emplace(p + ".ln1.g", ln1_g);
        m.emplace(p + ".ln1.b", ln1_b);
        m.emplace(p + ".ln2.g", ln2_g);
        m.emplace(p + ".ln2.b", ln2_b);
        attn.collect(p + ".attn", m);
        fc1.collect(p + ".fc1", m);
        fc2.collect(p + ".fc2", m);
    }
};

// ---------------------------------------------------------------------------
// parameter-map utilities

template <typename S>
void set_trainable(ParamMap<S>& params, const std::string& prefix, bool trainable) {
    for (auto& [name, t] : params)
        if (name.rfind(prefix, 0) == 0) t.set_requires_grad(trainable);
}

template <typename S>
void zero_grads(ParamMap<S>& params) {
    for (auto& [name, t] : params) t.zero_grad();
}

// FNV-1a over the raw value bytes, in name order.
template <typename S>
uint64_t hash_params(const ParamMap<S>& params, const std::string& prefix = "") {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        mix(name.data(), name.size());
        mix(t.data(), t.numel() * sizeof(S));
    }
    return h;
}

template <typename S>
int64_t count_params(const ParamMap<S>& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

}  // namespace holitok
