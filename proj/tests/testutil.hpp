#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ssdpose/autodiff.hpp"
#include "ssdpose/tensor.hpp"

namespace testutil {

using ssdpose::Rng;
using ssdpose::Tensor;

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

template <typename S>
double max_abs(const Tensor<S>& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
    return m;
}

/// max |a-b| normalized by the largest magnitude in the reference
template <typename S>
double rel_discrepancy(const Tensor<S>& got, const Tensor<S>& ref) {
    const double scale = std::max(max_abs(ref), 1e-30);
    return max_abs_diff(got, ref) / scale;
}

template <typename S>
Tensor<S> random_tensor(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor<S> t(std::move(shape));
    rng.fill_normal(t, stddev);
    return t;
}

/// Central-difference check of d(loss)/d(leaf) on n_probe random coordinates.
/// Rebuilds the graph via loss_fn for every perturbation. Returns the max
/// relative error over the probed coordinates.
template <typename S>
double fd_check(ssdpose::ad::Var<S> leaf, const std::function<ssdpose::ad::Var<S>()>& loss_fn,
                Rng& rng, int n_probe, double h = 1e-5) {
    using ssdpose::ad::backward;
    leaf.node()->g().fill(S(0));
    auto loss = loss_fn();
    backward(loss);
    Tensor<S> analytic = leaf.grad();

    double worst = 0.0;
    auto& val = leaf.mutable_value();
    const int64_t n = val.numel();
    for (int probe = 0; probe < n_probe; ++probe) {
        const int64_t idx = rng.uniform_int(n);
        const S saved = val[idx];
        val[idx] = saved + static_cast<S>(h);
        const double lp = static_cast<double>(loss_fn().value()[0]);
        val[idx] = saved - static_cast<S>(h);
        const double lm = static_cast<double>(loss_fn().value()[0]);
        val[idx] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = static_cast<double>(analytic[idx]);
        const double denom = std::max(std::abs(fd), std::abs(an));
        if (denom < 1e-7) continue;  // both negligible
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

}  // namespace testutil
