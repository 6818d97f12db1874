#pragma once

#include <cmath>
#include <cstdint>

// Serial reference implementations, kept deliberately naive: direct summation
// in the textbook order, no parallelism, no reassociation. Tests check the
// OpenMP kernels against these; the benchmark target compares their speed.

namespace ssdpose::ref {

template <typename S>
void matmul(const S* a, const S* b, S* out, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            S acc = S(0);
            for (int64_t k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
            out[i * N + j] = acc;
        }
    }
}

template <typename S>
void conv1d(const S* x, const S* w, const S* bias, S* out, int64_t T, int64_t Ein,
            int64_t Eout, int64_t k, int64_t pad_left) {
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t o = 0; o < Eout; ++o) {
            S acc = bias ? bias[o] : S(0);
            for (int64_t tap = 0; tap < k; ++tap) {
                const int64_t ts = t + tap - pad_left;
                if (ts < 0 || ts >= T) continue;
                for (int64_t e = 0; e < Ein; ++e) {
                    acc += x[ts * Ein + e] * w[(tap * Ein + e) * Eout + o];
                }
            }
            out[t * Eout + o] = acc;
        }
    }
}

template <typename S>
void dwconv1d_causal(const S* x, const S* w, const S* bias, S* out, int64_t T,
                     int64_t E, int64_t k) {
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t e = 0; e < E; ++e) {
            S acc = bias ? bias[e] : S(0);
            for (int64_t tap = 0; tap < k; ++tap) {
                const int64_t ts = t + tap - (k - 1);
                if (ts < 0) continue;
                acc += x[ts * E + e] * w[tap * E + e];
            }
            out[t * E + e] = acc;
        }
    }
}

template <typename S>
void layer_norm(const S* x, const S* gain, const S* bias, S* out, int64_t R,
                int64_t E, S eps) {
    for (int64_t r = 0; r < R; ++r) {
        S mu = S(0);
        for (int64_t e = 0; e < E; ++e) mu += x[r * E + e];
        mu /= S(E);
        S var = S(0);
        for (int64_t e = 0; e < E; ++e) {
            const S d = x[r * E + e] - mu;
            var += d * d;
        }
        var /= S(E);
        const S rstd = S(1) / std::sqrt(var + eps);
        for (int64_t e = 0; e < E; ++e) {
            out[r * E + e] = (x[r * E + e] - mu) * rstd * gain[e] + bias[e];
        }
    }
}

template <typename S>
void softmax_rows(const S* x, S* out, int64_t R, int64_t C) {
    for (int64_t r = 0; r < R; ++r) {
        S mx = x[r * C];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[r * C + c]);
        S sum = S(0);
        for (int64_t c = 0; c < C; ++c) sum += std::exp(x[r * C + c] - mx);
        for (int64_t c = 0; c < C; ++c) out[r * C + c] = std::exp(x[r * C + c] - mx) / sum;
    }
}

}  // namespace ssdpose::ref
