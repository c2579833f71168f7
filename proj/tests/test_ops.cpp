// Convolution, framing, and interpolation ops: shape contracts, causal
// receptive fields probed sample-by-sample, and finite-difference gradients.

#include "doctest.h"
#include "holitok/gradcheck.hpp"
#include "holitok/ops.hpp"

using namespace holitok;

namespace {

using T = Tensor<double>;
using Params = std::vector<std::pair<std::string, T>>;

T leaf(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    T t = rand_uniform<double>(s, rng, lo, hi);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

TEST_CASE("conv1d output length follows the strided-conv formula") {
    Rng rng(21);
    for (int64_t t : {7, 16, 33})
        for (int64_t k : {1, 3, 4})
            for (int64_t s : {1, 2, 3})
                for (int64_t d : {1, 2}) {
                    int64_t lpad = d * (k - 1);
                    T x = rand_uniform<double>({2, t}, rng, -1, 1);
                    T w = rand_uniform<double>({3, 2, k}, rng, -1, 1);
                    T b = zeros<double>({3});
                    T y = conv1d(x, w, b, s, d, lpad, 0);
                    CHECK(y.dim(0) == 3);
                    CHECK(y.dim(1) == (t + lpad - d * (k - 1) - 1) / s + 1);
                }
}

TEST_CASE("causally padded conv1d never reads the future (exhaustive probe)") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(22, seed));
        int64_t k = 2 + rng.uniform_int(4), s = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(2);
        int64_t t = 24;
        NoGradGuard ng;
        T x = rand_uniform<double>({2, t}, rng, -1, 1);
        T w = rand_uniform<double>({2, 2, k}, rng, -1, 1);
        T b = rand_uniform<double>({2}, rng, -1, 1);
        T y0 = conv1d(x, w, b, s, d, d * (k - 1), 0);
        int64_t tout = y0.dim(1);
        for (int64_t p = 0; p < t; ++p) {
            T xp = x.detach();
            xp.values()[p] += 0.5;  // perturb channel 0, sample p
            T y1 = conv1d(xp, w, b, s, d, d * (k - 1), 0);
            for (int64_t oc = 0; oc < 2; ++oc)
                for (int64_t ot = 0; ot < tout; ++ot) {
                    bool changed = y1.values()[oc * tout + ot] != y0.values()[oc * tout + ot];
                    // output ot covers input samples <= ot*s
                    if (ot * s < p) CHECK_FALSE(changed);
                }
        }
    }
}

TEST_CASE("conv1d gradients match finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(23, seed));
        int64_t k = 1 + rng.uniform_int(5), s = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(2);
        T x = leaf({2, 14}, rng);
        T w = leaf({3, 2, k}, rng);
        T b = leaf({3}, rng);
        Params params = {{"x", x}, {"w", w}, {"b", b}};
        auto loss_fn = [&]() { return mean(square(conv1d(x, w, b, s, d, d * (k - 1), 0))); };
        auto rep = check_gradients(params, loss_fn, rng, 6, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("conv_transpose1d upsamples by exactly the stride and stays causal") {
    Rng rng(24);
    NoGradGuard ng;
    for (int64_t s : {2, 3, 4})
        for (int64_t k : {s, s + 1, 2 * s}) {
            int64_t t = 9;
            T x = rand_uniform<double>({2, t}, rng, -1, 1);
            T w = rand_uniform<double>({2, 3, k}, rng, -1, 1);
            T b = rand_uniform<double>({3}, rng, -1, 1);
            T y0 = conv_transpose1d(x, w, b, s);
            CHECK(y0.dim(0) == 3);
            CHECK(y0.dim(1) == t * s);
            // output sample ot only depends on input frames it with it*s <= ot
            for (int64_t p = 0; p < t; ++p) {
                T xp = x.detach();
                xp.values()[p] += 0.5;
                T y1 = conv_transpose1d(xp, w, b, s);
                for (int64_t oc = 0; oc < 3; ++oc)
                    for (int64_t ot = 0; ot < t * s; ++ot)
                        if (ot < p * s)
                            CHECK(y1.values()[oc * t * s + ot] == y0.values()[oc * t * s + ot]);
            }
        }
    CHECK_THROWS_WITH_AS(
        conv_transpose1d(rand_uniform<double>({1, 4}, rng, -1, 1),
                         rand_uniform<double>({1, 1, 2}, rng, -1, 1), zeros<double>({1}), 3),
        doctest::Contains("kernel >= stride"), std::runtime_error);
}

TEST_CASE("conv_transpose1d gradients match finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(25, seed));
        int64_t s = 2 + rng.uniform_int(3);
        int64_t k = s + rng.uniform_int(4);
        T x = leaf({2, 6}, rng);
        T w = leaf({2, 2, k}, rng);
        T b = leaf({2}, rng);
        Params params = {{"x", x}, {"w", w}, {"b", b}};
        auto loss_fn = [&]() { return mean(square(conv_transpose1d(x, w, b, s))); };
        auto rep = check_gradients(params, loss_fn, rng, 6, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("snake_beta value matches x + sin^2(alpha x)/beta and FD gradient") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(26, seed));
        T x = leaf({3, 5}, rng, -2.0, 2.0);
        T la = leaf({3}, rng, -0.5, 0.5);
        T lb = leaf({3}, rng, -0.5, 0.5);
        {
            NoGradGuard ng;
            T y = snake_beta(x, la, lb);
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t i = 0; i < 5; ++i) {
                    double alpha = std::exp(la.values()[c]);
                    double beta = std::exp(lb.values()[c]);
                    double s = std::sin(alpha * x.values()[c * 5 + i]);
                    double want = x.values()[c * 5 + i] + s * s / (beta + 1e-9);
                    CHECK(y.values()[c * 5 + i] == doctest::Approx(want).epsilon(1e-12));
                }
        }
        Params params = {{"x", x}, {"la", la}, {"lb", lb}};
        auto loss_fn = [&]() { return mean(square(snake_beta(x, la, lb))); };
        auto rep = check_gradients(params, loss_fn, rng, 8, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("snake_beta with log parameters at zero reduces to x + sin^2(x)") {
    NoGradGuard ng;
    T x = from_values<double>({1, 3}, {0.0, 0.5, -1.2});
    T z = zeros<double>({1});
    T y = snake_beta(x, z, z);
    for (int64_t i = 0; i < 3; ++i) {
        double s = std::sin(x.values()[i]);
        CHECK(y.values()[i] == doctest::Approx(x.values()[i] + s * s).epsilon(1e-9));
    }
}

TEST_CASE("frame_signal produces floor(len/hop)+1 centered frames with reflect padding") {
    Rng rng(27);
    {
        NoGradGuard ng;
        T x = from_values<double>({6}, {0, 1, 2, 3, 4, 5});
        T f = frame_signal(x, 4, 2);
        CHECK(f.dim(0) == 4);  // 6/2 + 1
        CHECK(f.dim(1) == 4);
        // frame 0 covers indices -2..1 -> reflect to 2,1,0,1
        CHECK(f.values()[0] == 2.0);
        CHECK(f.values()[1] == 1.0);
        CHECK(f.values()[2] == 0.0);
        CHECK(f.values()[3] == 1.0);
        // frame 2 covers 2..5 exactly
        CHECK(f.values()[2 * 4 + 0] == 2.0);
        CHECK(f.values()[2 * 4 + 3] == 5.0);
        // frame 3 covers 4..7 -> 4,5, reflect 4,3
        CHECK(f.values()[3 * 4 + 2] == 4.0);
        CHECK(f.values()[3 * 4 + 3] == 3.0);
    }
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng r2(mix_seed(27, seed));
        T x = leaf({32}, r2);
        Params params = {{"x", x}};
        auto loss_fn = [&]() { return mean(square(frame_signal(x, 8, 4))); };
        auto rep = check_gradients(params, loss_fn, r2, 6, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("complex magnitude is the Euclidean norm and FD-clean away from zero") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(28, seed));
        T re = leaf({3, 4}, rng, 0.2, 1.5);
        T im = leaf({3, 4}, rng, 0.2, 1.5);
        {
            NoGradGuard ng;
            T m = complex_magnitude(re, im);
            for (int64_t i = 0; i < 12; ++i) {
                double want = std::hypot(re.values()[i], im.values()[i]);
                CHECK(m.values()[i] == doctest::Approx(want).epsilon(1e-6));
            }
        }
        Params params = {{"re", re}, {"im", im}};
        auto loss_fn = [&]() { return mean(square(complex_magnitude(re, im))); };
        auto rep = check_gradients(params, loss_fn, rng, 6, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}

TEST_CASE("linear interpolation pins endpoints and matches FD") {
    {
        NoGradGuard ng;
        T x = from_values<double>({3, 1}, {1.0, 5.0, 2.0});
        T y = interp_linear_rows(x, 5);
        CHECK(y.values()[0] == 1.0);
        CHECK(y.values()[4] == 2.0);
        CHECK(y.values()[1] == doctest::Approx(3.0));   // position 0.5 between rows 0,1
        CHECK(y.values()[2] == doctest::Approx(5.0));   // exactly row 1
        CHECK(y.values()[3] == doctest::Approx(3.5));   // position 1.5 between rows 1,2
        T up = interp_linear_rows(x, 1);
        CHECK(up.values()[0] == 1.0);                   // degenerate target keeps the first row
        T single = interp_linear_rows(from_values<double>({1, 2}, {4.0, -4.0}), 3);
        for (int64_t i = 0; i < 3; ++i) CHECK(single.values()[i * 2] == 4.0);
    }
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(29, seed));
        int64_t t_in = 2 + rng.uniform_int(6), t_out = 2 + rng.uniform_int(9);
        T x = leaf({t_in, 3}, rng);
        Params params = {{"x", x}};
        auto loss_fn = [&]() { return mean(square(interp_linear_rows(x, t_out))); };
        auto rep = check_gradients(params, loss_fn, rng, 8, 1e-4);
        CHECK_MESSAGE(rep.pass, rep.worst, " err=", rep.max_err);
    }
}
