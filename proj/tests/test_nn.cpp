// Layer library: FD gradients through LSTM and attention, causal masking
// probes, parameter collection/hash/freeze utilities.

#include "doctest.h"
#include "holitok/gradcheck.hpp"
#include "holitok/nn.hpp"

using namespace holitok;

namespace {
using T = Tensor<double>;
using Params = std::vector<std::pair<std::string, T>>;

Params named(const ParamMap<double>& m) {
    Params out;
    for (const auto& [k, v] : m) out.emplace_back(k, v);
    return out;
}
}  // namespace

TEST_CASE("linear layer gradient matches finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(51, seed));
        Linear<double> lin(3, 4, rng);
        T x = rand_uniform<double>({5, 3}, rng, -1, 1);
        x.set_requires_grad(true);
        ParamMap<double> pm;
        lin.collect("lin", pm);
        pm.emplace("x", x);
        auto loss_fn = [&]() { return mean(square(lin.forward(x))); };
        auto rep = check_gradients(named(pm), loss_fn, rng, 6, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("LSTM gradient matches finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(52, seed));
        LSTMLayer<double> lstm(3, 4, rng);
        T x = rand_uniform<double>({6, 3}, rng, -1, 1);
        x.set_requires_grad(true);
        ParamMap<double> pm;
        lstm.collect("lstm", pm);
        pm.emplace("x", x);
        auto loss_fn = [&]() { return mean(square(lstm.forward(x))); };
        auto rep = check_gradients(named(pm), loss_fn, rng, 5, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("LSTM is strictly causal") {
    Rng rng(53);
    NoGradGuard ng;
    LSTMLayer<double> lstm(2, 3, rng);
    T x = rand_uniform<double>({8, 2}, rng, -1, 1);
    T y0 = lstm.forward(x);
    for (int64_t p = 0; p < 8; ++p) {
        T xp = x.detach();
        xp.values()[p * 2] += 0.7;
        T y1 = lstm.forward(xp);
        for (int64_t t = 0; t < p; ++t)
            for (int64_t d = 0; d < 3; ++d)
                CHECK(y1.values()[t * 3 + d] == y0.values()[t * 3 + d]);
        bool tail_changed = false;
        for (int64_t t = p; t < 8; ++t)
            for (int64_t d = 0; d < 3; ++d)
                tail_changed = tail_changed || y1.values()[t * 3 + d] != y0.values()[t * 3 + d];
        CHECK(tail_changed);
    }
}

TEST_CASE("masked attention carries exactly zero dependence on future positions") {
    Rng rng(54);
    MultiHeadAttention<double> attn(8, 2, rng);
    T x = rand_uniform<double>({6, 8}, rng, -1, 1);
    x.set_requires_grad(true);
    // gradient of an early output w.r.t. later inputs must be identically zero
    T y = attn.self_forward(x, true);
    sum(square(slice_rows(y, 0, 3))).backward();
    for (int64_t t = 3; t < 6; ++t)
        for (int64_t d = 0; d < 8; ++d) CHECK(x.grad()[t * 8 + d] == 0.0);
    bool nonzero_past = false;
    for (int64_t t = 0; t < 3; ++t)
        for (int64_t d = 0; d < 8; ++d) nonzero_past = nonzero_past || x.grad()[t * 8 + d] != 0.0;
    CHECK(nonzero_past);
    // value-level probe
    NoGradGuard ng;
    T y0 = attn.self_forward(x, true);
    T xp = x.detach();
    xp.values()[5 * 8 + 2] += 1.0;
    T y1 = attn.self_forward(xp, true);
    for (int64_t t = 0; t < 5; ++t)
        for (int64_t d = 0; d < 8; ++d) CHECK(y1.values()[t * 8 + d] == y0.values()[t * 8 + d]);
}

TEST_CASE("attention and transformer block gradients match finite differences") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(mix_seed(55, seed));
        TransformerBlock<double> blk(8, 2, rng);
        T x = rand_uniform<double>({5, 8}, rng, -1, 1);
        x.set_requires_grad(true);
        ParamMap<double> pm;
        blk.collect("blk", pm);
        pm.emplace("x", x);
        auto loss_fn = [&]() { return mean(square(blk.forward(x, true))); };
        auto rep = check_gradients(named(pm), loss_fn, rng, 3, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("cross attention attends over a separate context") {
    Rng rng(56);
    MultiHeadAttention<double> attn(8, 2, rng);
    T x = rand_uniform<double>({3, 8}, rng, -1, 1);
    T ctx = rand_uniform<double>({7, 8}, rng, -1, 1);
    ctx.set_requires_grad(true);
    T y = attn.forward(x, ctx, false);
    CHECK(y.dim(0) == 3);
    CHECK(y.dim(1) == 8);
    mean(square(y)).backward();
    bool any = false;
    for (auto g : ctx.grad()) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("parameter maps: freeze by prefix, hash detects changes") {
    Rng rng(57);
    TransformerBlock<double> blk(8, 2, rng);
    LSTMLayer<double> lstm(4, 4, rng);
    ParamMap<double> pm;
    blk.collect("backbone.blk0", pm);
    lstm.collect("bottleneck.lstm0", pm);
    set_trainable(pm, "bottleneck.", false);
    CHECK_FALSE(pm.at("bottleneck.lstm0.w_ih").requires_grad());
    CHECK(pm.at("backbone.blk0.fc1.w").requires_grad());
    set_trainable(pm, "bottleneck.", true);
    CHECK(pm.at("bottleneck.lstm0.w_ih").requires_grad());

    uint64_t h0 = hash_params(pm);
    uint64_t h0_again = hash_params(pm);
    CHECK(h0 == h0_again);
    pm.at("backbone.blk0.fc1.w").values()[0] += 1e-7;
    CHECK(hash_params(pm) != h0);
    // prefix hash ignores the other subtree
    uint64_t hb = hash_params(pm, "bottleneck.");
    pm.at("backbone.blk0.fc1.w").values()[0] += 1.0;
    CHECK(hash_params(pm, "bottleneck.") == hb);
}
