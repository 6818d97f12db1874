#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssdpose/autodiff.hpp"
#include "ssdpose/kernels.hpp"
#include "ssdpose/reference.hpp"
#include "ssdpose/tensor.hpp"
#include "testutil.hpp"

using namespace ssdpose;
using ad::Var;
using testutil::fd_check;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// independent oracle: dot products accumulated in double, loop order j-i-k
template <typename S>
Tensor<S> matmul_oracle(const Tensor<S>& a, const Tensor<S>& b) {
    const int64_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
    Tensor<S> out({M, N});
    for (int64_t j = 0; j < N; ++j) {
        for (int64_t i = 0; i < M; ++i) {
            double acc = 0.0;
            for (int64_t k = 0; k < K; ++k) {
                acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
            }
            out.at(i, j) = static_cast<S>(acc);
        }
    }
    return out;
}

// independent oracle: literal convolution sum with explicit zero padding
template <typename S>
Tensor<S> conv_oracle(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                      int64_t pad_left) {
    const int64_t T = x.shape[0], Ein = x.shape[1], k = w.shape[0], Eout = w.shape[2];
    Tensor<S> out({T, Eout});
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t o = 0; o < Eout; ++o) {
            double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
            for (int64_t tap = 0; tap < k; ++tap) {
                for (int64_t e = 0; e < Ein; ++e) {
                    const int64_t ts = t + tap - pad_left;
                    const double xv =
                        (ts >= 0 && ts < T) ? static_cast<double>(x.at(ts, e)) : 0.0;
                    acc += xv * static_cast<double>(w[(tap * Ein + e) * Eout + o]);
                }
            }
            out.at(t, o) = static_cast<S>(acc);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and projector") {
    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    Tensor<double> m({2, 2}, {1, 2, 3, 4});
    Tensor<double> out({2, 2});
    kern::matmul(eye.ptr(), m.ptr(), out.ptr(), 2, 2, 2);
    CHECK(out.data == std::vector<double>({1, 2, 3, 4}));

    Tensor<double> proj({2, 2}, {1, 0, 0, 0});
    Tensor<double> v({2, 1}, {5, 7});
    Tensor<double> pv({2, 1});
    kern::matmul(proj.ptr(), v.ptr(), pv.ptr(), 2, 2, 1);
    CHECK(pv.data == std::vector<double>({5, 0}));
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(42);
    auto a = random_tensor<double>({4, 3}, rng);
    auto b = random_tensor<double>({3, 2}, rng);
    Tensor<double> got({4, 2});
    kern::matmul(a.ptr(), b.ptr(), got.ptr(), 4, 3, 2);
    CHECK(max_abs_diff(got, matmul_oracle(a, b)) <= 1e-6);
}

TEST_CASE("parallel matmul agrees with serial reference on large shapes") {
    Rng rng(7);
    for (auto [M, K, N] : {std::tuple<int64_t, int64_t, int64_t>{96, 128, 385},
                           {33, 65, 17},
                           {1, 200, 1}}) {
        auto a = random_tensor<float>({M, K}, rng);
        auto b = random_tensor<float>({K, N}, rng);
        Tensor<float> got({M, N}), want({M, N});
        kern::matmul(a.ptr(), b.ptr(), got.ptr(), M, K, N);
        ref::matmul(a.ptr(), b.ptr(), want.ptr(), M, K, N);
        CHECK(testutil::rel_discrepancy(got, want) <= 1e-5);
    }
}

TEST_CASE("transposed matmul variants match explicit transposition") {
    Rng rng(11);
    const int64_t M = 9, K = 7, N = 5;
    auto a = random_tensor<double>({M, K}, rng);
    auto b = random_tensor<double>({M, N}, rng);

    // at_b: out[KxN] = a^T b
    Tensor<double> at({K, M});
    for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) at.at(k, i) = a.at(i, k);
    Tensor<double> want({K, N});
    kern::matmul(at.ptr(), b.ptr(), want.ptr(), K, M, N);
    Tensor<double> got({K, N});
    kern::matmul_at_b(a.ptr(), b.ptr(), got.ptr(), M, K, N);
    CHECK(max_abs_diff(got, want) <= 1e-12);

    // a_bt: out[MxK'] = a b'^T with b' of shape K' x K... use fresh operands
    auto c = random_tensor<double>({N, K}, rng);  // rows are the right factor's columns
    Tensor<double> ct({K, N});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t k = 0; k < K; ++k) ct.at(k, i) = c.at(i, k);
    Tensor<double> want2({M, N});
    Tensor<double> a2 = random_tensor<double>({M, K}, rng);
    kern::matmul(a2.ptr(), ct.ptr(), want2.ptr(), M, K, N);
    Tensor<double> got2({M, N});
    kern::matmul_a_bt(a2.ptr(), c.ptr(), got2.ptr(), M, K, N);
    CHECK(max_abs_diff(got2, want2) <= 1e-12);
}

TEST_CASE("conv1d: 1x1 identity kernel reproduces the input") {
    const int64_t T = 6, E = 3;
    Rng rng(3);
    auto x = random_tensor<double>({T, E}, rng);
    Tensor<double> w({1, E, E}, 0.0);
    for (int64_t e = 0; e < E; ++e) w[(0 * E + e) * E + e] = 1.0;
    Tensor<double> out({T, E});
    kern::conv1d<double>(x.ptr(), w.ptr(), nullptr, out.ptr(), T, E, E, 1, 0);
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("conv1d: impulse reproduces kernel taps centered at the impulse") {
    const int64_t T = 9, k = 5;
    Tensor<double> x({T, 1}, 0.0);
    x.at(4, 0) = 1.0;
    Tensor<double> w({k, 1, 1}, {0.1, 0.2, 0.3, 0.4, 0.5});
    Tensor<double> out({T, 1});
    kern::conv1d<double>(x.ptr(), w.ptr(), nullptr, out.ptr(), T, 1, 1, k, (k - 1) / 2);
    // out[t] = sum_tap x[t + tap - 2] w[tap]; impulse at 4 => out[4+2-tap]=w[tap]
    for (int64_t tap = 0; tap < k; ++tap) {
        CHECK(out.at(6 - tap, 0) == doctest::Approx(w[tap]).epsilon(1e-12));
    }
}

TEST_CASE("conv1d matches the direct-summation oracle, both paddings") {
    Rng rng(13);
    const int64_t T = 8, Ein = 4, Eout = 3, k = 5;
    auto x = random_tensor<double>({T, Ein}, rng);
    auto w = random_tensor<double>({k, Ein, Eout}, rng);
    auto bias = random_tensor<double>({Eout}, rng);
    for (int64_t pad_left : {k - 1, (k - 1) / 2}) {
        Tensor<double> got({T, Eout});
        kern::conv1d(x.ptr(), w.ptr(), bias.ptr(), got.ptr(), T, Ein, Eout, k, pad_left);
        CHECK(testutil::rel_discrepancy(got, conv_oracle(x, w, &bias, pad_left)) <= 1e-6);

        Tensor<double> serial({T, Eout});
        ref::conv1d(x.ptr(), w.ptr(), bias.ptr(), serial.ptr(), T, Ein, Eout, k, pad_left);
        CHECK(testutil::rel_discrepancy(got, serial) <= 1e-12);
    }
}

TEST_CASE("conv1d_time op rejects even kernels in same-padding mode") {
    Rng rng(1);
    auto x = Var<double>::constant(random_tensor<double>({4, 2}, rng));
    auto w = Var<double>::constant(random_tensor<double>({4, 2, 2}, rng));
    CHECK_THROWS_AS(ad::conv1d_time(x, w, Var<double>(), ad::ConvPad::kSame),
                    std::invalid_argument);
    CHECK_NOTHROW(ad::conv1d_time(x, w, Var<double>(), ad::ConvPad::kCausal));
}

TEST_CASE("depthwise causal conv matches reference and shifts causally") {
    Rng rng(17);
    const int64_t T = 10, E = 6, k = 4;
    auto x = random_tensor<double>({T, E}, rng);
    auto w = random_tensor<double>({k, E}, rng);
    Tensor<double> got({T, E}), want({T, E});
    kern::dwconv1d_causal<double>(x.ptr(), w.ptr(), nullptr, got.ptr(), T, E, k);
    ref::dwconv1d_causal<double>(x.ptr(), w.ptr(), nullptr, want.ptr(), T, E, k);
    CHECK(max_abs_diff(got, want) <= 1e-12);
    // causality: output at t=0 only sees x[0] through the last tap
    CHECK(got.at(0, 0) == doctest::Approx(x.at(0, 0) * w.at(k - 1, 0)).epsilon(1e-12));
}

TEST_CASE("layer_norm basics") {
    const int64_t E = 5;
    Tensor<double> gain({E}, 1.0), bias({E}, 0.0);
    Tensor<double> mean({1}), rstd({1});

    SUBCASE("constant row maps to zeros") {
        Tensor<double> x({1, E}, 3.7);
        Tensor<double> out({1, E});
        kern::layer_norm(x.ptr(), gain.ptr(), bias.ptr(), out.ptr(), mean.ptr(), rstd.ptr(),
                         1, E, 1e-5);
        for (auto v : out.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("already-normalized row is preserved as eps -> 0") {
        Tensor<double> x({1, 2}, {1.0, -1.0});
        Tensor<double> g2({2}, 1.0), b2({2}, 0.0), out({1, 2});
        kern::layer_norm(x.ptr(), g2.ptr(), b2.ptr(), out.ptr(), mean.ptr(), rstd.ptr(), 1,
                         2, 1e-12);
        CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(out.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));
    }
    SUBCASE("random row matches direct mean/var formula") {
        Rng rng(5);
        auto x = random_tensor<double>({1, E}, rng);
        auto g = random_tensor<double>({E}, rng);
        auto b = random_tensor<double>({E}, rng);
        Tensor<double> out({1, E});
        kern::layer_norm(x.ptr(), g.ptr(), b.ptr(), out.ptr(), mean.ptr(), rstd.ptr(), 1, E,
                         1e-5);
        double mu = 0, var = 0;
        for (auto v : x.data) mu += v;
        mu /= E;
        for (auto v : x.data) var += (v - mu) * (v - mu);
        var /= E;
        for (int64_t e = 0; e < E; ++e) {
            const double want = (x[e] - mu) / std::sqrt(var + 1e-5) * g[e] + b[e];
            CHECK(out[e] == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("silu values") {
    Tensor<double> x({3}, {0.0, 30.0, 1.0});
    Tensor<double> out({3});
    kern::silu(x.ptr(), out.ptr(), 3);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(30.0).epsilon(1e-9));  // asymptote
    CHECK(out[2] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("softmax rows normalize") {
    Rng rng(23);
    auto x = random_tensor<double>({4, 7}, rng, 3.0);
    Tensor<double> p({4, 7});
    kern::softmax_rows(x.ptr(), p.ptr(), 4, 7);
    for (int64_t r = 0; r < 4; ++r) {
        double s = 0;
        for (int64_t c = 0; c < 7; ++c) s += p.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor<double> one({1, 1}, {2.5});
    Tensor<double> po({1, 1});
    kern::softmax_rows(one.ptr(), po.ptr(), 1, 1);
    CHECK(po[0] == 1.0);
}

TEST_CASE("backward: loss = sum(W) gives all-ones gradient") {
    Rng rng(9);
    auto W = Var<double>::param(random_tensor<double>({3, 4}, rng));
    auto loss = ad::sum(W);
    ad::backward(loss);
    for (auto g : W.grad().data) CHECK(g == 1.0);
}

TEST_CASE("backward: |Wx|^2 matches central finite differences") {
    Rng rng(31);
    auto W = Var<double>::param(random_tensor<double>({4, 4}, rng));
    auto x = Var<double>::constant(random_tensor<double>({4, 1}, rng));
    auto loss_fn = [&] { return ad::sum_squares(ad::matmul(W, x)); };
    CHECK(fd_check<double>(W, loss_fn, rng, 16, 1e-5) <= 1e-4);
}

TEST_CASE("backward requires a scalar loss") {
    Rng rng(1);
    auto W = Var<double>::param(random_tensor<double>({2, 2}, rng));
    CHECK_THROWS_AS(ad::backward(ad::scale(W, 2.0)), std::invalid_argument);
}

TEST_CASE("finite-difference sweep over primitive ops") {
    Rng rng(77);
    const double tol = 1e-4;

    SUBCASE("add/sub/hadamard/scale") {
        auto a = Var<double>::param(random_tensor<double>({3, 5}, rng));
        auto b = Var<double>::param(random_tensor<double>({3, 5}, rng));
        auto f = [&] {
            auto t = ad::add(ad::hadamard(a, b), ad::scale(ad::sub(a, b), 0.7));
            return ad::sum_squares(t);
        };
        CHECK(fd_check<double>(a, f, rng, 10) <= tol);
        CHECK(fd_check<double>(b, f, rng, 10) <= tol);
    }
    SUBCASE("linear with bias") {
        auto x = Var<double>::param(random_tensor<double>({6, 3}, rng));
        auto W = Var<double>::param(random_tensor<double>({3, 4}, rng));
        auto bb = Var<double>::param(random_tensor<double>({4}, rng));
        auto f = [&] { return ad::sum_squares(ad::linear(x, W, bb)); };
        CHECK(fd_check<double>(x, f, rng, 10) <= tol);
        CHECK(fd_check<double>(W, f, rng, 10) <= tol);
        CHECK(fd_check<double>(bb, f, rng, 6) <= tol);
    }
    SUBCASE("silu softplus exp") {
        auto x = Var<double>::param(random_tensor<double>({4, 4}, rng));
        auto f = [&] {
            return ad::sum(ad::silu(ad::add(ad::softplus(x), ad::exp(ad::scale(x, 0.3)))));
        };
        CHECK(fd_check<double>(x, f, rng, 12) <= tol);
    }
    SUBCASE("layer_norm") {
        auto x = Var<double>::param(random_tensor<double>({5, 8}, rng));
        auto g = Var<double>::param(random_tensor<double>({8}, rng));
        auto b = Var<double>::param(random_tensor<double>({8}, rng));
        auto f = [&] { return ad::sum_squares(ad::layer_norm(x, g, b, 1e-5)); };
        CHECK(fd_check<double>(x, f, rng, 12) <= tol);
        CHECK(fd_check<double>(g, f, rng, 8) <= tol);
        CHECK(fd_check<double>(b, f, rng, 8) <= tol);
    }
    SUBCASE("conv1d both paddings") {
        auto x = Var<double>::param(random_tensor<double>({7, 3}, rng));
        auto w = Var<double>::param(random_tensor<double>({5, 3, 2}, rng));
        auto b = Var<double>::param(random_tensor<double>({2}, rng));
        for (auto pad : {ad::ConvPad::kCausal, ad::ConvPad::kSame}) {
            auto f = [&] { return ad::sum_squares(ad::conv1d_time(x, w, b, pad)); };
            CHECK(fd_check<double>(x, f, rng, 10) <= tol);
            CHECK(fd_check<double>(w, f, rng, 10) <= tol);
            CHECK(fd_check<double>(b, f, rng, 2) <= tol);
        }
    }
    SUBCASE("depthwise causal conv") {
        auto x = Var<double>::param(random_tensor<double>({7, 4}, rng));
        auto w = Var<double>::param(random_tensor<double>({4, 4}, rng));
        auto b = Var<double>::param(random_tensor<double>({4}, rng));
        auto f = [&] { return ad::sum_squares(ad::dwconv_causal(x, w, b)); };
        CHECK(fd_check<double>(x, f, rng, 10) <= tol);
        CHECK(fd_check<double>(w, f, rng, 10) <= tol);
    }
    SUBCASE("slice and concat") {
        auto x = Var<double>::param(random_tensor<double>({4, 6}, rng));
        auto f = [&] {
            auto a = ad::slice_cols(x, 0, 2);
            auto b = ad::slice_cols(x, 2, 6);
            auto c = ad::concat_cols<double>({b, a, a});
            return ad::sum_squares(c);
        };
        CHECK(fd_check<double>(x, f, rng, 12) <= tol);
    }
    SUBCASE("scalar parameter scaling") {
        auto x = Var<double>::param(random_tensor<double>({3, 3}, rng));
        auto s = Var<double>::param(Tensor<double>::scalar(0.8));
        auto f = [&] { return ad::sum_squares(ad::mul_scalar_param(x, s)); };
        CHECK(fd_check<double>(x, f, rng, 6) <= tol);
        CHECK(fd_check<double>(s, f, rng, 3) <= tol);
    }
    SUBCASE("group_norm_mean") {
        auto x = Var<double>::param(random_tensor<double>({4, 6}, rng));
        auto f = [&] { return ad::group_norm_mean(x, 3); };
        CHECK(fd_check<double>(x, f, rng, 12) <= tol);
    }
    SUBCASE("weighted_sum") {
        auto x = Var<double>::param(random_tensor<double>({2, 2}, rng));
        auto f = [&] {
            auto s1 = ad::sum(x);
            auto s2 = ad::sum_squares(x);
            return ad::weighted_sum<double>({s1, s2}, {1.0, 0.02});
        };
        CHECK(fd_check<double>(x, f, rng, 4) <= tol);
    }
}

TEST_CASE("non-finite results are trapped") {
    auto x = Var<double>::constant(Tensor<double>({1}, {1e308}));
    CHECK_THROWS_AS(ad::exp(x), NonFiniteError);
    auto y = Var<double>::constant(Tensor<double>({1}, {1e308}));
    CHECK_THROWS_AS(ad::hadamard(y, y), NonFiniteError);
}

TEST_CASE("ops are deterministic") {
    Rng r1(123), r2(123);
    auto a1 = random_tensor<float>({64, 64}, r1);
    auto a2 = random_tensor<float>({64, 64}, r2);
    CHECK(a1.data == a2.data);
    Tensor<float> o1({64, 64}), o2({64, 64});
    kern::matmul(a1.ptr(), a1.ptr(), o1.ptr(), 64, 64, 64);
    kern::matmul(a2.ptr(), a2.ptr(), o2.ptr(), 64, 64, 64);
    CHECK(o1.data == o2.data);
}

TEST_CASE("parameter store") {
    ad::ParameterStore<float> store;
    store.add("a", Tensor<float>({2, 3}, 1.f));
    store.add("b", Tensor<float>({4}, 2.f));
    CHECK_THROWS_AS(store.add("a", Tensor<float>({1}, 0.f)), std::invalid_argument);
    CHECK(store.total_parameters() == 10);
    std::vector<std::string> names;
    for (auto& [n, v] : store) names.push_back(n);
    CHECK(names == std::vector<std::string>({"a", "b"}));
}

TEST_CASE("adam: zero gradient and zero weight decay leave params unchanged") {
    ad::ParameterStore<double> store;
    auto p = store.add("w", Tensor<double>({3}, {1.0, -2.0, 3.0}));
    ad::AdamState<double> adam;
    adam.weight_decay = 0.0;
    adam.init(store);
    p.grad().fill(0.0);
    adam.step(store);
    CHECK(p.value().data == std::vector<double>({1.0, -2.0, 3.0}));
    CHECK(adam.step_count == 1);
}

TEST_CASE("adam: first step magnitude equals lr (bias-corrected closed form)") {
    ad::ParameterStore<double> store;
    auto p = store.add("w", Tensor<double>::scalar(0.5));
    ad::AdamState<double> adam;
    adam.learning_rate = 1e-3;
    adam.weight_decay = 0.0;
    adam.init(store);
    p.grad()[0] = 1.0;
    adam.step(store);
    // m_hat = g, v_hat = g^2 => delta = lr * g / (|g| + eps)
    const double expect = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
    CHECK(p.value()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam: quadratic bowl reaches 1e-6 within 2000 steps") {
    ad::ParameterStore<double> store;
    auto w = store.add("w", Tensor<double>::scalar(1.0));
    ad::AdamState<double> adam;
    adam.learning_rate = 0.05;
    adam.weight_decay = 0.0;
    adam.init(store);
    double best = 1e30;
    for (int it = 0; it < 2000; ++it) {
        store.zero_grad();
        auto loss = ad::sum_squares(w);
        ad::backward(loss);
        adam.step(store);
        best = std::min(best, loss.value()[0]);
        if (best < 1e-6) break;
    }
    CHECK(best < 1e-6);
}

TEST_CASE("gradient clipping caps the global norm") {
    ad::ParameterStore<double> store;
    auto a = store.add("a", Tensor<double>({2}, {0.0, 0.0}));
    a.grad() = Tensor<double>({2}, {3.0, 4.0});
    const double pre = ad::clip_grad_norm(store, 1.0);
    CHECK(pre == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(a.grad()[1] == doctest::Approx(0.8));
}
