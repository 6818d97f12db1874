#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "ssdpose/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// OpenMP-parallel kernels. Every output element is accumulated by exactly one
// logical unit of work in a fixed order, so results are bit-identical for any
// thread count. Serial reference versions live in reference.hpp.

namespace ssdpose::kern {

constexpr int64_t kParGrain = 1 << 14;  // skip omp dispatch below this many elements

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

/// out[MxN] = a[MxK] * b[KxN]   (+= when accumulate)
/// 4-row microkernel: each loaded row of b feeds four output rows.
template <typename S>
void matmul(const S* __restrict a, const S* __restrict b, S* __restrict out, int64_t M,
            int64_t K, int64_t N, bool accumulate = false) {
    const int64_t Mb = M / 4 * 4;
#pragma omp parallel for if (M * K * N >= kParGrain) schedule(static)
    for (int64_t i0 = 0; i0 < Mb; i0 += 4) {
        S* o0 = out + i0 * N;
        S* o1 = o0 + N;
        S* o2 = o1 + N;
        S* o3 = o2 + N;
        if (!accumulate) {
            for (int64_t j = 0; j < N; ++j) o0[j] = o1[j] = o2[j] = o3[j] = S(0);
        }
        const S* arow = a + i0 * K;
        for (int64_t k = 0; k < K; ++k) {
            const S a0 = arow[k];
            const S a1 = arow[K + k];
            const S a2 = arow[2 * K + k];
            const S a3 = arow[3 * K + k];
            const S* __restrict brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) {
                const S bv = brow[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
    }
    for (int64_t i = Mb; i < M; ++i) {
        S* orow = out + i * N;
        if (!accumulate) {
            for (int64_t j = 0; j < N; ++j) orow[j] = S(0);
        }
        const S* arow = a + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const S aik = arow[k];
            const S* __restrict brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    }
}

/// out[MxK] = a[MxN] * b[KxN]^T  (rows of b as the right factor's columns).
/// Blocked accumulator lanes vectorize the row dots; four dots share one pass
/// over the a row.
template <typename S>
void matmul_a_bt(const S* __restrict a, const S* __restrict b, S* __restrict out,
                 int64_t M, int64_t N, int64_t K, bool accumulate = false) {
    constexpr int64_t kLanes = 16;
    const int64_t Nb = N / kLanes * kLanes;
    const int64_t Kb = K / 4 * 4;
#pragma omp parallel for if (M * K * N >= kParGrain) schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        const S* arow = a + i * N;
        S* orow = out + i * K;
        for (int64_t k0 = 0; k0 < Kb; k0 += 4) {
            const S* __restrict b0 = b + k0 * N;
            const S* __restrict b1 = b0 + N;
            const S* __restrict b2 = b1 + N;
            const S* __restrict b3 = b2 + N;
            S l0[kLanes] = {}, l1[kLanes] = {}, l2[kLanes] = {}, l3[kLanes] = {};
            for (int64_t j = 0; j < Nb; j += kLanes) {
                for (int64_t w = 0; w < kLanes; ++w) {
                    const S av = arow[j + w];
                    l0[w] += av * b0[j + w];
                    l1[w] += av * b1[j + w];
                    l2[w] += av * b2[j + w];
                    l3[w] += av * b3[j + w];
                }
            }
            S acc[4] = {};
            for (int64_t w = 0; w < kLanes; ++w) {
                acc[0] += l0[w];
                acc[1] += l1[w];
                acc[2] += l2[w];
                acc[3] += l3[w];
            }
            for (int64_t j = Nb; j < N; ++j) {
                const S av = arow[j];
                acc[0] += av * b0[j];
                acc[1] += av * b1[j];
                acc[2] += av * b2[j];
                acc[3] += av * b3[j];
            }
            for (int q = 0; q < 4; ++q) {
                orow[k0 + q] = accumulate ? orow[k0 + q] + acc[q] : acc[q];
            }
        }
        for (int64_t k = Kb; k < K; ++k) {
            const S* __restrict brow = b + k * N;
            S lanes[kLanes] = {};
            for (int64_t j = 0; j < Nb; j += kLanes) {
                for (int64_t w = 0; w < kLanes; ++w) lanes[w] += arow[j + w] * brow[j + w];
            }
            S acc = S(0);
            for (int64_t w = 0; w < kLanes; ++w) acc += lanes[w];
            for (int64_t j = Nb; j < N; ++j) acc += arow[j] * brow[j];
            orow[k] = accumulate ? orow[k] + acc : acc;
        }
    }
}

/// out[KxN] = a[MxK]^T * b[MxN], four output rows per pass over b
template <typename S>
void matmul_at_b(const S* __restrict a, const S* __restrict b, S* __restrict out,
                 int64_t M, int64_t K, int64_t N, bool accumulate = false) {
    const int64_t Kb = K / 4 * 4;
#pragma omp parallel for if (M * K * N >= kParGrain) schedule(static)
    for (int64_t k0 = 0; k0 < Kb; k0 += 4) {
        S* o0 = out + k0 * N;
        S* o1 = o0 + N;
        S* o2 = o1 + N;
        S* o3 = o2 + N;
        if (!accumulate) {
            for (int64_t j = 0; j < N; ++j) o0[j] = o1[j] = o2[j] = o3[j] = S(0);
        }
        for (int64_t m = 0; m < M; ++m) {
            const S* ar = a + m * K + k0;
            const S a0 = ar[0], a1 = ar[1], a2 = ar[2], a3 = ar[3];
            const S* __restrict brow = b + m * N;
            for (int64_t j = 0; j < N; ++j) {
                const S bv = brow[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
    }
    for (int64_t k = Kb; k < K; ++k) {
        S* orow = out + k * N;
        if (!accumulate) {
            for (int64_t j = 0; j < N; ++j) orow[j] = S(0);
        }
        for (int64_t m = 0; m < M; ++m) {
            const S amk = a[m * K + k];
            const S* __restrict brow = b + m * N;
            for (int64_t j = 0; j < N; ++j) orow[j] += amk * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
void add(const S* a, const S* b, S* out, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename S>
void sub(const S* a, const S* b, S* out, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename S>
void hadamard(const S* a, const S* b, S* out, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename S>
void axpy(S alpha, const S* x, S* y, int64_t n) {  // y += alpha*x
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
void scale(const S* x, S alpha, S* out, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename S>
S sigmoid(S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                     : std::exp(x) / (S(1) + std::exp(x));
}

template <typename S>
void silu(const S* x, S* out, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * sigmoid(x[i]);
}

/// d/dx [x*sigma(x)] = sigma(x) * (1 + x*(1 - sigma(x)))
template <typename S>
void silu_backward(const S* x, const S* dy, S* dx_acc, int64_t n) {
#pragma omp parallel for if (n >= kParGrain) schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const S s = sigmoid(x[i]);
        dx_acc[i] += dy[i] * s * (S(1) + x[i] * (S(1) - s));
    }
}

template <typename S>
S softplus(S x) {
    // log(1+e^x), overflow-safe
    return x > S(20) ? x : std::log1p(std::exp(x));
}

template <typename S>
void softplus_fwd(const S* x, S* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = softplus(x[i]);
}

template <typename S>
void softplus_backward(const S* x, const S* dy, S* dx_acc, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx_acc[i] += dy[i] * sigmoid(x[i]);
}

// ---------------------------------------------------------------------------
// layer norm over the last axis of an R x E matrix
// ---------------------------------------------------------------------------

template <typename S>
void layer_norm(const S* x, const S* gain, const S* bias, S* out, S* mean_save,
                S* rstd_save, int64_t R, int64_t E, S eps) {
#pragma omp parallel for if (R * E >= kParGrain) schedule(static)
    for (int64_t r = 0; r < R; ++r) {
        const S* row = x + r * E;
        S mu = S(0);
        for (int64_t e = 0; e < E; ++e) mu += row[e];
        mu /= S(E);
        S var = S(0);
        for (int64_t e = 0; e < E; ++e) {
            const S d = row[e] - mu;
            var += d * d;
        }
        var /= S(E);
        const S rstd = S(1) / std::sqrt(var + eps);
        mean_save[r] = mu;
        rstd_save[r] = rstd;
        S* orow = out + r * E;
        for (int64_t e = 0; e < E; ++e) orow[e] = (row[e] - mu) * rstd * gain[e] + bias[e];
    }
}

template <typename S>
void layer_norm_backward(const S* x, const S* gain, const S* mean, const S* rstd,
                         const S* dy, S* dx_acc, S* dgain_acc, S* dbias_acc,
                         int64_t R, int64_t E) {
#pragma omp parallel for if (R * E >= kParGrain) schedule(static)
    for (int64_t r = 0; r < R; ++r) {
        const S* row = x + r * E;
        const S* dyr = dy + r * E;
        S* dxr = dx_acc + r * E;
        const S mu = mean[r];
        const S rs = rstd[r];
        S sum_dyg = S(0), sum_dyg_xhat = S(0);
        for (int64_t e = 0; e < E; ++e) {
            const S xhat = (row[e] - mu) * rs;
            const S g = dyr[e] * gain[e];
            sum_dyg += g;
            sum_dyg_xhat += g * xhat;
        }
        const S invE = S(1) / S(E);
        for (int64_t e = 0; e < E; ++e) {
            const S xhat = (row[e] - mu) * rs;
            dxr[e] += rs * (dyr[e] * gain[e] - invE * (sum_dyg + xhat * sum_dyg_xhat));
        }
    }
    // parameter grads: reduction over rows, fixed order
    for (int64_t r = 0; r < R; ++r) {
        const S* row = x + r * E;
        const S* dyr = dy + r * E;
        const S mu = mean[r];
        const S rs = rstd[r];
        for (int64_t e = 0; e < E; ++e) {
            dgain_acc[e] += dyr[e] * (row[e] - mu) * rs;
            dbias_acc[e] += dyr[e];
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution over time (rows). x: TxEin, w: k x Ein x Eout.
// pad_left = k-1 for causal, (k-1)/2 for same; boundaries are zero-padded.
// ---------------------------------------------------------------------------

template <typename S>
void conv1d(const S* x, const S* w, const S* bias, S* out, int64_t T, int64_t Ein,
            int64_t Eout, int64_t k, int64_t pad_left) {
#pragma omp parallel for if (T * Ein * Eout * k >= kParGrain) schedule(static)
    for (int64_t t = 0; t < T; ++t) {
        S* orow = out + t * Eout;
        for (int64_t o = 0; o < Eout; ++o) orow[o] = bias ? bias[o] : S(0);
        for (int64_t tap = 0; tap < k; ++tap) {
            const int64_t ts = t + tap - pad_left;
            if (ts < 0 || ts >= T) continue;
            const S* xrow = x + ts * Ein;
            const S* wtap = w + tap * Ein * Eout;
            for (int64_t e = 0; e < Ein; ++e) {
                const S xv = xrow[e];
                const S* wrow = wtap + e * Eout;
                for (int64_t o = 0; o < Eout; ++o) orow[o] += xv * wrow[o];
            }
        }
    }
}

template <typename S>
void conv1d_backward(const S* x, const S* w, const S* dy, S* dx_acc, S* dw_acc,
                     S* dbias_acc, int64_t T, int64_t Ein, int64_t Eout, int64_t k,
                     int64_t pad_left) {
    // dx: each input row gathers from the output rows that read it
#pragma omp parallel for if (T * Ein * Eout * k >= kParGrain) schedule(static)
    for (int64_t ts = 0; ts < T; ++ts) {
        S* dxrow = dx_acc + ts * Ein;
        for (int64_t tap = 0; tap < k; ++tap) {
            const int64_t t = ts - tap + pad_left;
            if (t < 0 || t >= T) continue;
            const S* dyrow = dy + t * Eout;
            const S* wtap = w + tap * Ein * Eout;
            for (int64_t e = 0; e < Ein; ++e) {
                const S* wrow = wtap + e * Eout;
                S acc = S(0);
                for (int64_t o = 0; o < Eout; ++o) acc += dyrow[o] * wrow[o];
                dxrow[e] += acc;
            }
        }
    }
#pragma omp parallel for if (k * Ein * Eout >= kParGrain) schedule(static) collapse(2)
    for (int64_t tap = 0; tap < k; ++tap) {
        for (int64_t e = 0; e < Ein; ++e) {
            S* dwrow = dw_acc + (tap * Ein + e) * Eout;
            for (int64_t t = 0; t < T; ++t) {
                const int64_t ts = t + tap - pad_left;
                if (ts < 0 || ts >= T) continue;
                const S xv = x[ts * Ein + e];
                const S* dyrow = dy + t * Eout;
                for (int64_t o = 0; o < Eout; ++o) dwrow[o] += xv * dyrow[o];
            }
        }
    }
    if (dbias_acc) {
        for (int64_t t = 0; t < T; ++t) {
            const S* dyrow = dy + t * Eout;
            for (int64_t o = 0; o < Eout; ++o) dbias_acc[o] += dyrow[o];
        }
    }
}

// depthwise causal conv: x TxE, w kxE (tap-major), out TxE
template <typename S>
void dwconv1d_causal(const S* x, const S* w, const S* bias, S* out, int64_t T,
                     int64_t E, int64_t k) {
#pragma omp parallel for if (T * E * k >= kParGrain) schedule(static)
    for (int64_t t = 0; t < T; ++t) {
        S* orow = out + t * E;
        for (int64_t e = 0; e < E; ++e) orow[e] = bias ? bias[e] : S(0);
        for (int64_t tap = 0; tap < k; ++tap) {
            const int64_t ts = t + tap - (k - 1);
            if (ts < 0) continue;
            const S* xrow = x + ts * E;
            const S* wrow = w + tap * E;
            for (int64_t e = 0; e < E; ++e) orow[e] += xrow[e] * wrow[e];
        }
    }
}

template <typename S>
void dwconv1d_causal_backward(const S* x, const S* w, const S* dy, S* dx_acc,
                              S* dw_acc, S* dbias_acc, int64_t T, int64_t E,
                              int64_t k) {
#pragma omp parallel for if (T * E * k >= kParGrain) schedule(static)
    for (int64_t ts = 0; ts < T; ++ts) {
        S* dxrow = dx_acc + ts * E;
        for (int64_t tap = 0; tap < k; ++tap) {
            const int64_t t = ts - tap + (k - 1);
            if (t >= T) continue;
            const S* dyrow = dy + t * E;
            const S* wrow = w + tap * E;
            for (int64_t e = 0; e < E; ++e) dxrow[e] += dyrow[e] * wrow[e];
        }
    }
    for (int64_t tap = 0; tap < k; ++tap) {
        S* dwrow = dw_acc + tap * E;
        for (int64_t t = 0; t < T; ++t) {
            const int64_t ts = t + tap - (k - 1);
            if (ts < 0) continue;
            const S* xrow = x + ts * E;
            const S* dyrow = dy + t * E;
            for (int64_t e = 0; e < E; ++e) dwrow[e] += xrow[e] * dyrow[e];
        }
    }
    if (dbias_acc) {
        for (int64_t t = 0; t < T; ++t) {
            const S* dyrow = dy + t * E;
            for (int64_t e = 0; e < E; ++e) dbias_acc[e] += dyrow[e];
        }
    }
}

// ---------------------------------------------------------------------------
// row-wise softmax on an R x C matrix
// ---------------------------------------------------------------------------

template <typename S>
void softmax_rows(const S* x, S* out, int64_t R, int64_t C) {
#pragma omp parallel for if (R * C >= kParGrain) schedule(static)
    for (int64_t r = 0; r < R; ++r) {
        const S* row = x + r * C;
        S* orow = out + r * C;
        S mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        S sum = S(0);
        for (int64_t c = 0; c < C; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        const S inv = S(1) / sum;
        for (int64_t c = 0; c < C; ++c) orow[c] *= inv;
    }
}

/// dx = p .* (dy - rowsum(dy .* p)); p is the softmax output
template <typename S>
void softmax_rows_backward(const S* p, const S* dy, S* dx_acc, int64_t R, int64_t C) {
#pragma omp parallel for if (R * C >= kParGrain) schedule(static)
    for (int64_t r = 0; r < R; ++r) {
        const S* prow = p + r * C;
        const S* dyrow = dy + r * C;
        S* dxrow = dx_acc + r * C;
        S dot = S(0);
        for (int64_t c = 0; c < C; ++c) dot += dyrow[c] * prow[c];
        for (int64_t c = 0; c < C; ++c) dxrow[c] += prow[c] * (dyrow[c] - dot);
    }
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
S sum(const S* x, int64_t n) {
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename S>
S sum_squares(const S* x, int64_t n) {
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

}  // namespace ssdpose::kern
