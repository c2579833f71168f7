#pragma once

// Reverse-mode autodiff over a dynamically recorded graph. Each op computes
// its forward values eagerly and, when gradients are required, attaches a
// closure that scatters the output gradient into its parents. Scalars are
// templated so the same code path runs in 64-bit (verification) and 32-bit
// (training) precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "holitok/rng.hpp"

namespace holitok {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

// Thread-local gradient recording mode (RAII guard below).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> v;   // values
    std::vector<S> g;   // gradient accumulator, sized lazily
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorImpl<S>>> parents;
    std::function<void(TensorImpl<S>&)> backward;

    int64_t numel() const { return static_cast<int64_t>(v.size()); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), S(0));
    }
};

template <typename S>
inline void check_finite(const std::vector<S>& v, const char* where) {
    for (const S& x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            fail(std::string("non-finite value in ") + where);
    }
}

template <typename S>
class Tensor {
public:
    using impl_ptr = std::shared_ptr<TensorImpl<S>>;

    Tensor() = default;
    explicit Tensor(impl_ptr p) : p_(std::move(p)) {}

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int64_t dim(size_t i) const { return p_->shape[i]; }
    size_t rank() const { return p_->shape.size(); }
    int64_t numel() const { return p_->numel(); }

    std::vector<S>& values() { return p_->v; }
    const std::vector<S>& values() const { return p_->v; }
    S* data() { return p_->v.data(); }
    const S* data() const { return p_->v.data(); }

    std::vector<S>& grad() {
        p_->ensure_grad();
        return p_->g;
    }
    const std::vector<S>& grad() const {
        p_->ensure_grad();
        return p_->g;
    }
    // True once a gradient buffer exists; never allocates.
    bool has_grad() const { return !p_->g.empty(); }

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        p_->requires_grad = rg;
        return *this;
    }

    void zero_grad() { p_->g.assign(p_->v.size(), S(0)); }

    S item() const {
        if (numel() != 1) fail("item() on non-scalar tensor " + shape_str(shape()));
        return p_->v[0];
    }

    // Runs reverse-mode accumulation from this scalar.
    void backward() const {
        if (numel() != 1) fail("backward() requires a scalar, got " + shape_str(shape()));
        if (!p_->requires_grad) fail("backward() on a tensor that requires no grad");
        // topological order via iterative DFS
        std::vector<TensorImpl<S>*> order;
        std::unordered_set<TensorImpl<S>*> seen;
        std::vector<std::pair<TensorImpl<S>*, size_t>> stack;
        stack.emplace_back(p_.get(), 0);
        seen.insert(p_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorImpl<S>* par = node->parents[idx++].get();
                if (par->requires_grad && seen.insert(par).second)
                    stack.emplace_back(par, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        p_->ensure_grad();
        p_->g[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl<S>* node = *it;
            if (!node->backward) continue;
            node->ensure_grad();
            check_finite(node->g, "backward gradient");
            node->backward(*node);
        }
    }

    // Copy of values with no graph attached.
    Tensor detach() const {
        auto q = std::make_shared<TensorImpl<S>>();
        q->shape = p_->shape;
        q->v = p_->v;
        return Tensor(q);
    }

    impl_ptr impl() const { return p_; }

private:
    impl_ptr p_;
};

// ---------------------------------------------------------------------------
// creation

template <typename S>
Tensor<S> zeros(const Shape& shape) {
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v.assign(shape_numel(shape), S(0));
    return Tensor<S>(p);
}

template <typename S>
Tensor<S> full(const Shape& shape, S value) {
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v.assign(shape_numel(shape), value);
    return Tensor<S>(p);
}

template <typename S>
Tensor<S> from_values(const Shape& shape, std::vector<S> vals) {
    if (static_cast<int64_t>(vals.size()) != shape_numel(shape))
        fail("from_values: " + std::to_string(vals.size()) + " values for shape " + shape_str(shape));
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v = std::move(vals);
    check_finite(p->v, "from_values");
    return Tensor<S>(p);
}

template <typename S>
Tensor<S> scalar(S value) {
    return from_values<S>({1}, {value});
}

template <typename S>
Tensor<S> randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v.resize(shape_numel(shape));
    for (auto& x : p->v) x = static_cast<S>(rng.normal() * stddev);
    return Tensor<S>(p);
}

template <typename S>
Tensor<S> rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v.resize(shape_numel(shape));
    for (auto& x : p->v) x = static_cast<S>(rng.uniform(lo, hi));
    return Tensor<S>(p);
}

// ---------------------------------------------------------------------------
// op plumbing

// Allocates the result node and decides whether the graph edge is recorded.
template <typename S>
Tensor<S> make_node(const Shape& shape, std::initializer_list<Tensor<S>> parents) {
    auto p = std::make_shared<TensorImpl<S>>();
    p->shape = shape;
    p->v.resize(shape_numel(shape));
    if (grad_mode()) {
        for (const Tensor<S>& par : parents) {
            if (par.defined() && par.requires_grad()) {
                p->requires_grad = true;
                break;
            }
        }
        if (p->requires_grad)
            for (const Tensor<S>& par : parents)
                if (par.defined()) p->parents.push_back(par.impl());
    }
    return Tensor<S>(p);
}

// Public hook for custom ops (used by tests to install deliberately wrong
// backward rules as negative controls).
template <typename S>
Tensor<S> custom_op(const Shape& shape, std::vector<S> vals, std::initializer_list<Tensor<S>> parents,
                    std::function<void(TensorImpl<S>&)> backward) {
    Tensor<S> out = make_node<S>(shape, parents);
    out.values() = std::move(vals);
    check_finite(out.values(), "custom_op");
    if (out.requires_grad()) out.impl()->backward = std::move(backward);
    return out;
}

template <typename S, typename Fn>
inline void finish(Tensor<S>& out, const char* name, Fn&& backward) {
    check_finite(out.values(), name);
    if (out.requires_grad()) out.impl()->backward = std::forward<Fn>(backward);
}

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        fail(std::string("shape mismatch in ") + op + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// elementwise binary

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "add");
    Tensor<S> out = make_node<S>(a.shape(), {a, b});
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    finish(out, "add", [ap = a.impl(), bp = b.impl()](TensorImpl<S>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) bp->g[i] += self.g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "sub");
    Tensor<S> out = make_node<S>(a.shape(), {a, b});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    finish(out, "sub", [ap = a.impl(), bp = b.impl()](TensorImpl<S>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) bp->g[i] -= self.g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "mul");
    Tensor<S> out = make_node<S>(a.shape(), {a, b});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    finish(out, "mul", [ap = a.impl(), bp = b.impl()](TensorImpl<S>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i] * bp->v[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) bp->g[i] += self.g[i] * ap->v[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "div");
    Tensor<S> out = make_node<S>(a.shape(), {a, b});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    finish(out, "div", [ap = a.impl(), bp = b.impl()](TensorImpl<S>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i] / bp->v[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i)
                bp->g[i] -= self.g[i] * ap->v[i] / (bp->v[i] * bp->v[i]);
        }
    });
    return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = make_node<S>(a.shape(), {a});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + c;
    finish(out, "add_scalar", [ap = a.impl()](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i];
    });
    return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = make_node<S>(a.shape(), {a});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * c;
    finish(out, "mul_scalar", [ap = a.impl(), c](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i] * c;
    });
    return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
    return mul_scalar(a, S(-1));
}

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// elementwise unary

namespace detail {

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> unary_op(const Tensor<S>& a, const char* name, FwdFn fwd, BwdFn dydx) {
    Tensor<S> out = make_node<S>(a.shape(), {a});
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = fwd(a.data()[i]);
    finish<S>(out, name, [ap = a.impl(), outp = out.impl(), dydx](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i)
            ap->g[i] += self.g[i] * dydx(ap->v[i], outp->v[i]);
    });
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    return detail::unary_op(a, "exp", [](S x) { return std::exp(x); },
                            [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    return detail::unary_op(a, "log", [](S x) { return std::log(x); },
                            [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
    return detail::unary_op(a, "sqrt", [](S x) { return std::sqrt(x); },
                            [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
    return detail::unary_op(a, "square", [](S x) { return x * x; },
                            [](S x, S) { return S(2) * x; });
}

// |x| with subgradient 0 at x = 0
template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
    return detail::unary_op(a, "abs", [](S x) { return std::fabs(x); },
                            [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    return detail::unary_op(a, "tanh", [](S x) { return std::tanh(x); },
                            [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary_op(a, "sigmoid",
                            [](S x) { return S(1) / (S(1) + std::exp(-x)); },
                            [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
    Tensor<S> out = make_node<S>(a.shape(), {a});
    for (int64_t i = 0; i < out.numel(); ++i) {
        S x = a.data()[i];
        out.data()[i] = x >= S(0) ? x : slope * x;
    }
    finish(out, "leaky_relu", [ap = a.impl(), slope](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i)
            ap->g[i] += self.g[i] * (ap->v[i] >= S(0) ? S(1) : slope);
    });
    return out;
}

template <typename S>
Tensor<S> silu(const Tensor<S>& a) {
    return detail::unary_op(a, "silu",
                            [](S x) { return x / (S(1) + std::exp(-x)); },
                            [](S x, S) {
                                S s = S(1) / (S(1) + std::exp(-x));
                                return s * (S(1) + x * (S(1) - s));
                            });
}

// Hard clamp; gradient is zero outside [lo, hi].
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
    Tensor<S> out = make_node<S>(a.shape(), {a});
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = std::min(hi, std::max(lo, a.data()[i]));
    finish(out, "clamp", [ap = a.impl(), lo, hi](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i)
            if (ap->v[i] > lo && ap->v[i] < hi) ap->g[i] += self.g[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul / transpose / reshape

// a: [m,k]  b: [k,n]  ->  [m,n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = make_node<S>({m, n}, {a, b});
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    std::fill(po, po + m * n, S(0));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
            S av = pa[i * k + l];
            const S* brow = pb + l * n;
            S* orow = po + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    finish(out, "matmul", [ap = a.impl(), bp = b.impl(), m, k, n](TensorImpl<S>& self) {
        const S* go = self.g.data();
        if (ap->requires_grad) {
            ap->ensure_grad();
            // dA = dY * B^T
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    S acc = S(0);
                    const S* grow = go + i * n;
                    const S* brow = bp->v.data() + l * n;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ap->g[i * k + l] += acc;
                }
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            // dB = A^T * dY
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    S av = ap->v[i * k + l];
                    const S* grow = go + i * n;
                    S* brow = bp->g.data() + l * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
    return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2) fail("transpose expects rank 2, got " + shape_str(a.shape()));
    int64_t r = a.dim(0), c = a.dim(1);
    Tensor<S> out = make_node<S>({c, r}, {a});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
    finish(out, "transpose", [ap = a.impl(), r, c](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) ap->g[i * c + j] += self.g[j * r + i];
    });
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        fail("reshape numel mismatch: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor<S> out = make_node<S>(shape, {a});
    out.values() = a.values();
    finish(out, "reshape", [ap = a.impl()](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i) ap->g[i] += self.g[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = make_node<S>({1}, {a});
    S acc = S(0);
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    finish(out, "sum", [ap = a.impl()](TensorImpl<S>& self) {
        ap->ensure_grad();
        S go = self.g[0];
        for (auto& x : ap->g) x += go;
    });
    return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    int64_t n = a.numel();
    Tensor<S> out = make_node<S>({1}, {a});
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += a.data()[i];
    out.data()[0] = acc / S(n);
    finish(out, "mean", [ap = a.impl(), n](TensorImpl<S>& self) {
        ap->ensure_grad();
        S go = self.g[0] / S(n);
        for (auto& x : ap->g) x += go;
    });
    return out;
}

// a: [r,c], axis 0 -> [c], axis 1 -> [r]
template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis) {
    if (a.rank() != 2) fail("sum_axis expects rank 2");
    int64_t r = a.dim(0), c = a.dim(1);
    Shape out_shape = axis == 0 ? Shape{c} : Shape{r};
    Tensor<S> out = make_node<S>(out_shape, {a});
    std::fill(out.data(), out.data() + out.numel(), S(0));
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data()[axis == 0 ? j : i] += a.data()[i * c + j];
    finish(out, "sum_axis", [ap = a.impl(), r, c, axis](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) ap->g[i * c + j] += self.g[axis == 0 ? j : i];
    });
    return out;
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
    int64_t n = axis == 0 ? a.dim(0) : a.dim(1);
    return mul_scalar(sum_axis(a, axis), S(1) / S(n));
}

// ---------------------------------------------------------------------------
// shape surgery

// Concatenates rank-2 tensors along axis 0.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) fail("concat_rows: empty list");
    int64_t cols = parts[0].dim(1);
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols) fail("concat_rows: column mismatch");
        rows += p.dim(0);
    }
    auto node = std::make_shared<TensorImpl<S>>();
    node->shape = {rows, cols};
    node->v.resize(rows * cols);
    bool rg = false;
    if (grad_mode())
        for (const auto& p : parts) rg = rg || p.requires_grad();
    node->requires_grad = rg;
    if (rg)
        for (const auto& p : parts) node->parents.push_back(p.impl());
    int64_t off = 0;
    std::vector<int64_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p.data(), p.data() + p.numel(), node->v.data() + off);
        off += p.numel();
    }
    Tensor<S> out(node);
    std::vector<typename Tensor<S>::impl_ptr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    finish(out, "concat_rows", [impls, offsets](TensorImpl<S>& self) {
        for (size_t k = 0; k < impls.size(); ++k) {
            if (!impls[k]->requires_grad) continue;
            impls[k]->ensure_grad();
            for (int64_t i = 0; i < impls[k]->numel(); ++i)
                impls[k]->g[i] += self.g[offsets[k] + i];
        }
    });
    return out;
}

// Concatenates rank-2 tensors along axis 1.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) fail("concat_cols: empty list");
    int64_t rows = parts[0].dim(0);
    int64_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) fail("concat_cols: row mismatch");
        cols += p.dim(1);
    }
    auto node = std::make_shared<TensorImpl<S>>();
    node->shape = {rows, cols};
    node->v.resize(rows * cols);
    bool rg = false;
    if (grad_mode())
        for (const auto& p : parts) rg = rg || p.requires_grad();
    node->requires_grad = rg;
    if (rg)
        for (const auto& p : parts) node->parents.push_back(p.impl());
    std::vector<int64_t> offsets;
    std::vector<int64_t> widths;
    int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        widths.push_back(p.dim(1));
        for (int64_t i = 0; i < rows; ++i)
            std::copy(p.data() + i * p.dim(1), p.data() + (i + 1) * p.dim(1),
                      node->v.data() + i * cols + off);
        off += p.dim(1);
    }
    Tensor<S> out(node);
    std::vector<typename Tensor<S>::impl_ptr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    finish<S>(out, "concat_cols", [impls, offsets, widths, rows, cols](TensorImpl<S>& self) {
        for (size_t k = 0; k < impls.size(); ++k) {
            if (!impls[k]->requires_grad) continue;
            impls[k]->ensure_grad();
            int64_t w = widths[k];
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < w; ++j)
                    impls[k]->g[i * w + j] += self.g[i * cols + offsets[k] + j];
        }
    });
    return out;
}

// Row slice of a rank-2 tensor: rows [start, start+len).
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, int64_t start, int64_t len) {
    if (a.rank() != 2 || start < 0 || start + len > a.dim(0)) fail("slice_rows out of range");
    int64_t c = a.dim(1);
    Tensor<S> out = make_node<S>({len, c}, {a});
    std::copy(a.data() + start * c, a.data() + (start + len) * c, out.data());
    finish(out, "slice_rows", [ap = a.impl(), start, c](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < self.numel(); ++i) ap->g[start * c + i] += self.g[i];
    });
    return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, int64_t start, int64_t len) {
    if (a.rank() != 2 || start < 0 || start + len > a.dim(1)) fail("slice_cols out of range");
    int64_t r = a.dim(0), c = a.dim(1);
    Tensor<S> out = make_node<S>({r, len}, {a});
    for (int64_t i = 0; i < r; ++i)
        std::copy(a.data() + i * c + start, a.data() + i * c + start + len, out.data() + i * len);
    finish(out, "slice_cols", [ap = a.impl(), start, len, r, c](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < len; ++j) ap->g[i * c + start + j] += self.g[i * len + j];
    });
    return out;
}

// Pads the time (last) axis of a [C,T] or [T] tensor with zeros.
template <typename S>
Tensor<S> pad_time(const Tensor<S>& a, int64_t left, int64_t right) {
    if (left < 0 || right < 0) fail("pad_time: negative padding");
    Shape s = a.shape();
    int64_t t = s.back();
    int64_t channels = a.numel() / t;
    Shape out_shape = s;
    out_shape.back() = t + left + right;
    Tensor<S> out = make_node<S>(out_shape, {a});
    std::fill(out.data(), out.data() + out.numel(), S(0));
    for (int64_t c = 0; c < channels; ++c)
        std::copy(a.data() + c * t, a.data() + (c + 1) * t, out.data() + c * (t + left + right) + left);
    finish(out, "pad_time", [ap = a.impl(), left, t, channels](TensorImpl<S>& self) {
        ap->ensure_grad();
        int64_t tp = self.shape.back();
        for (int64_t c = 0; c < channels; ++c)
            for (int64_t i = 0; i < t; ++i) ap->g[c * t + i] += self.g[c * tp + left + i];
    });
    return out;
}

// x[c, phase::period] for sub-sampled phase streams.
template <typename S>
Tensor<S> phase_select(const Tensor<S>& a, int64_t period, int64_t phase) {
    if (a.rank() != 2) fail("phase_select expects [C,T]");
    if (period < 1 || phase < 0 || phase >= period) fail("phase_select: need 0 <= phase < period");
    int64_t c = a.dim(0), t = a.dim(1);
    int64_t tp = (t - phase + period - 1) / period;
    Tensor<S> out = make_node<S>({c, tp}, {a});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < tp; ++i) out.data()[ch * tp + i] = a.data()[ch * t + phase + i * period];
    finish(out, "phase_select", [ap = a.impl(), period, phase, c, t, tp](TensorImpl<S>& self) {
        ap->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < tp; ++i)
                ap->g[ch * t + phase + i * period] += self.g[ch * tp + i];
    });
    return out;
}

// Broadcast add of a row vector v[c] over x[r,c].
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0)) fail("add_rowvec shape mismatch");
    int64_t r = x.dim(0), c = x.dim(1);
    Tensor<S> out = make_node<S>({r, c}, {x, v});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + v.data()[j];
    finish(out, "add_rowvec", [xp = x.impl(), vp = v.impl(), r, c](TensorImpl<S>& self) {
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (int64_t i = 0; i < r * c; ++i) xp->g[i] += self.g[i];
        }
        if (vp->requires_grad) {
            vp->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) vp->g[j] += self.g[i * c + j];
        }
    });
    return out;
}

// Broadcast multiply of a row vector v[c] over x[r,c].
template <typename S>
Tensor<S> mul_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0)) fail("mul_rowvec shape mismatch");
    int64_t r = x.dim(0), c = x.dim(1);
    Tensor<S> out = make_node<S>({r, c}, {x, v});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] * v.data()[j];
    finish(out, "mul_rowvec", [xp = x.impl(), vp = v.impl(), r, c](TensorImpl<S>& self) {
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) xp->g[i * c + j] += self.g[i * c + j] * vp->v[j];
        }
        if (vp->requires_grad) {
            vp->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) vp->g[j] += self.g[i * c + j] * xp->v[i * c + j];
        }
    });
    return out;
}

// Rows of an embedding table: table[v,d], ids -> [n,d].
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<int64_t>& ids) {
    if (table.rank() != 2) fail("gather_rows expects [V,D] table");
    int64_t v = table.dim(0), d = table.dim(1);
    for (int64_t id : ids)
        if (id < 0 || id >= v) fail("gather_rows: id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    int64_t n = static_cast<int64_t>(ids.size());
    Tensor<S> out = make_node<S>({n, d}, {table});
    for (int64_t i = 0; i < n; ++i)
        std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d, out.data() + i * d);
    finish(out, "gather_rows", [tp = table.impl(), ids, d](TensorImpl<S>& self) {
        tp->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < d; ++j) tp->g[ids[i] * d + j] += self.g[i * d + j];
    });
    return out;
}

}  // namespace holitok
