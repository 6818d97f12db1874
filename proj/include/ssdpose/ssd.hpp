#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ssdpose/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// State space sequence transformation y = SSM(A,B,C)(x) with three equivalent
// evaluation orders:
//
//   recurrent:  h_t = A_t h_{t-1} + B_t x_t^T,  y_t = C_t^T h_t        O(T N D)
//   dual:       y   = (F .* (C B^T)) x, F_ij = prod_{k=j+1..i} A_k     O(T^2 (N+D))
//   chunked:    dual inside fixed-size blocks, recurrent carry between  O(T Q (N+D))
//
// Scalar-A is the default; per-state diagonal A is supported by the recurrent
// path only. h_0 = 0.

namespace ssdpose::ssd {

template <typename S>
struct SsdInputs {
    Tensor<S> A;  // {T} scalar mode, {T,N} diagonal mode
    Tensor<S> B;  // {T,N}
    Tensor<S> C;  // {T,N}
    Tensor<S> x;  // {T,D}

    int64_t T() const { return x.shape[0]; }
    int64_t N() const { return B.shape[1]; }
    int64_t D() const { return x.shape[1]; }
    bool scalar_a() const { return A.ndim() == 1; }

    void validate() const {
        const int64_t t = T();
        if (B.ndim() != 2 || C.ndim() != 2 || x.ndim() != 2) {
            throw std::invalid_argument("ssd: B, C, x must be rank-2");
        }
        if (B.shape[0] != t || C.shape[0] != t || A.shape[0] != t) {
            throw std::invalid_argument("ssd: A, B, C, x disagree on sequence length");
        }
        if (C.shape[1] != N()) {
            throw std::invalid_argument("ssd: B and C disagree on state dimension");
        }
        if (A.ndim() == 2 && A.shape[1] != N()) {
            throw std::invalid_argument("ssd: diagonal A must be T x N");
        }
        if (A.ndim() > 2) {
            throw std::invalid_argument("ssd: A must be rank-1 (scalar) or rank-2 (diagonal)");
        }
    }
};

/// Decay matrix of the scalar-A dual form: lower triangular, exact unit
/// diagonal, F[i][j] = A[j+1]*...*A[i] for i > j.
template <typename S>
Tensor<S> build_F(const Tensor<S>& A) {
    if (A.ndim() != 1) throw std::invalid_argument("build_F: A must be a scalar sequence");
    const int64_t T = A.shape[0];
    if (T < 1) throw std::invalid_argument("build_F: T must be >= 1");
    Tensor<S> F({T, T}, S(0));
    for (int64_t i = 0; i < T; ++i) {
        S* row = F.ptr() + i * T;
        row[i] = S(1);
        S prod = S(1);
        for (int64_t j = i - 1; j >= 0; --j) {
            prod *= A[j + 1];
            row[j] = prod;
        }
    }
    return F;
}

namespace detail {

constexpr int kStateBlocks = 8;  // fixed logical split of D so results do not depend on thread count

// Shared by dual and chunked: rows [i0,i1) of the masked-Gram apply, reading
// inputs no earlier than j_lo.
template <typename S>
void dual_rows(const S* A, const S* B, const S* C, const S* x, S* y, int64_t N,
               int64_t D, int64_t j_lo, int64_t i0, int64_t i1) {
#pragma omp parallel for schedule(static)
    for (int64_t i = i0; i < i1; ++i) {
        const S* ci = C + i * N;
        S* yrow = y + i * D;
        for (int64_t d = 0; d < D; ++d) yrow[d] = S(0);
        S prod = S(1);
        for (int64_t j = i; j >= j_lo; --j) {
            if (j < i) prod *= A[j + 1];
            const S* bj = B + j * N;
            S dot = S(0);
            for (int64_t n = 0; n < N; ++n) dot += ci[n] * bj[n];
            const S coef = prod * dot;
            const S* xj = x + j * D;
            for (int64_t d = 0; d < D; ++d) yrow[d] += coef * xj[d];
        }
    }
}

}  // namespace detail

/// Linear-time recurrent evaluation. Parallel over fixed column blocks of the
/// hidden state; each block scans the full sequence independently.
template <typename S>
Tensor<S> ssd_recurrent(const SsdInputs<S>& in) {
    in.validate();
    const int64_t T = in.T(), N = in.N(), D = in.D();
    const bool scalar = in.scalar_a();
    Tensor<S> y({T, D});
    const S* A = in.A.ptr();
    const S* B = in.B.ptr();
    const S* C = in.C.ptr();
    const S* x = in.x.ptr();
    S* yp = y.ptr();

    const int64_t nblk = std::min<int64_t>(detail::kStateBlocks, D);
#pragma omp parallel for schedule(static)
    for (int64_t blk = 0; blk < nblk; ++blk) {
        const int64_t d0 = blk * D / nblk;
        const int64_t d1 = (blk + 1) * D / nblk;
        const int64_t W = d1 - d0;
        if (W <= 0) continue;
        std::vector<S> h(static_cast<size_t>(N * W), S(0));
        for (int64_t t = 0; t < T; ++t) {
            const S* bt = B + t * N;
            const S* ct = C + t * N;
            const S* xt = x + t * D + d0;
            S* yt = yp + t * D + d0;
            for (int64_t d = 0; d < W; ++d) yt[d] = S(0);
            const S at_scalar = scalar ? A[t] : S(0);
            for (int64_t n = 0; n < N; ++n) {
                const S a = scalar ? at_scalar : A[t * N + n];
                const S b = bt[n];
                const S c = ct[n];
                S* hrow = h.data() + n * W;
                for (int64_t d = 0; d < W; ++d) {
                    hrow[d] = a * hrow[d] + b * xt[d];
                    yt[d] += c * hrow[d];
                }
            }
        }
    }
    check_finite(y, "ssd_recurrent");
    return y;
}

/// Quadratic dual evaluation y = (F .* (C B^T)) x, fused per output row.
template <typename S>
Tensor<S> ssd_dual(const SsdInputs<S>& in) {
    in.validate();
    if (!in.scalar_a()) throw std::invalid_argument("ssd_dual: requires scalar-A inputs");
    const int64_t T = in.T();
    Tensor<S> y({T, in.D()});
    detail::dual_rows(in.A.ptr(), in.B.ptr(), in.C.ptr(), in.x.ptr(), y.ptr(), in.N(),
                      in.D(), 0, 0, T);
    check_finite(y, "ssd_dual");
    return y;
}

/// Block-decomposed evaluation: dual form inside chunks, state carry between.
template <typename S>
Tensor<S> ssd_chunked(const SsdInputs<S>& in, int64_t chunk) {
    in.validate();
    if (!in.scalar_a()) throw std::invalid_argument("ssd_chunked: requires scalar-A inputs");
    const int64_t T = in.T(), N = in.N(), D = in.D();
    if (chunk < 1 || chunk > T) throw std::invalid_argument("ssd_chunked: chunk out of range");
    const S* A = in.A.ptr();
    const S* B = in.B.ptr();
    const S* C = in.C.ptr();
    const S* x = in.x.ptr();
    Tensor<S> y({T, D});
    S* yp = y.ptr();

    std::vector<S> h(static_cast<size_t>(N * D), S(0));  // state after the previous chunk
    std::vector<S> dec(static_cast<size_t>(chunk));      // dec[t-s] = prod_{k=s..t} A_k

    for (int64_t s = 0; s < T; s += chunk) {
        const int64_t e = std::min(s + chunk, T);
        detail::dual_rows(A, B, C, x, yp, N, D, s, s, e);

        if (s > 0) {
            S run = S(1);
            for (int64_t t = s; t < e; ++t) {
                run *= A[t];
                dec[static_cast<size_t>(t - s)] = run;
            }
            // inter-chunk readout: y_t += dec_t * C_t^T h
#pragma omp parallel for schedule(static)
            for (int64_t t = s; t < e; ++t) {
                const S dt = dec[static_cast<size_t>(t - s)];
                const S* ct = C + t * N;
                S* yt = yp + t * D;
                for (int64_t n = 0; n < N; ++n) {
                    const S w = dt * ct[n];
                    const S* hrow = h.data() + n * D;
                    for (int64_t d = 0; d < D; ++d) yt[d] += w * hrow[d];
                }
            }
        }

        if (e < T) {
            // carry the state to the end of this chunk
            const int64_t nblk = std::min<int64_t>(detail::kStateBlocks, D);
#pragma omp parallel for schedule(static)
            for (int64_t blk = 0; blk < nblk; ++blk) {
                const int64_t d0 = blk * D / nblk;
                const int64_t d1 = (blk + 1) * D / nblk;
                if (d1 <= d0) continue;
                for (int64_t n = 0; n < N; ++n) {
                    S* hrow = h.data() + n * D;
                    for (int64_t t = s; t < e; ++t) {
                        const S a = A[t];
                        const S b = B[t * N + n];
                        const S* xt = x + t * D;
                        for (int64_t d = d0; d < d1; ++d) {
                            hrow[d] = a * hrow[d] + b * xt[d];
                        }
                    }
                }
            }
        }
    }
    check_finite(y, "ssd_chunked");
    return y;
}

template <typename S>
struct SsdGrads {
    Tensor<S> dA;
    Tensor<S> dB;
    Tensor<S> dC;
    Tensor<S> dx;
};

/// Reverse-mode gradients of the sequence transformation, derived from the
/// recurrence. Valid for whichever forward path produced y (they all compute
/// the same function).
template <typename S>
SsdGrads<S> ssd_backward(const SsdInputs<S>& in, const Tensor<S>& dy) {
    in.validate();
    const int64_t T = in.T(), N = in.N(), D = in.D();
    if (dy.shape != std::vector<int64_t>({T, D})) {
        throw std::invalid_argument("ssd_backward: dy must be T x D");
    }
    const bool scalar = in.scalar_a();
    const S* A = in.A.ptr();
    const S* B = in.B.ptr();
    const S* C = in.C.ptr();
    const S* x = in.x.ptr();
    const S* g = dy.ptr();

    // recompute the state trajectory; h_all[t] = h_t
    std::vector<S> h_all(static_cast<size_t>(T * N * D), S(0));
    {
        const int64_t nblk = std::min<int64_t>(detail::kStateBlocks, D);
#pragma omp parallel for schedule(static)
        for (int64_t blk = 0; blk < nblk; ++blk) {
            const int64_t d0 = blk * D / nblk;
            const int64_t d1 = (blk + 1) * D / nblk;
            if (d1 <= d0) continue;
            for (int64_t t = 0; t < T; ++t) {
                const S* prev = t ? h_all.data() + (t - 1) * N * D : nullptr;
                S* cur = h_all.data() + t * N * D;
                for (int64_t n = 0; n < N; ++n) {
                    const S a = scalar ? A[t] : A[t * N + n];
                    const S b = B[t * N + n];
                    const S* xt = x + t * D;
                    const S* prow = prev ? prev + n * D : nullptr;
                    S* crow = cur + n * D;
                    for (int64_t d = d0; d < d1; ++d) {
                        crow[d] = (prow ? a * prow[d] : S(0)) + b * xt[d];
                    }
                }
            }
        }
    }

    SsdGrads<S> out{Tensor<S>(in.A.shape), Tensor<S>({T, N}), Tensor<S>({T, N}),
                    Tensor<S>({T, D})};
    std::vector<S> gh(static_cast<size_t>(N * D), S(0));  // dL/dh_t, walked backward

    constexpr int64_t kLanes = 16;
    const int64_t Db = D / kLanes * kLanes;
    auto lane_dot = [Db](const S* __restrict u, const S* __restrict v, int64_t n) {
        S lanes[kLanes] = {};
        for (int64_t j = 0; j < Db && j < n; j += kLanes) {
            for (int64_t w = 0; w < kLanes; ++w) lanes[w] += u[j + w] * v[j + w];
        }
        S acc = S(0);
        for (int64_t w = 0; w < kLanes; ++w) acc += lanes[w];
        for (int64_t j = Db; j < n; ++j) acc += u[j] * v[j];
        return acc;
    };

    for (int64_t t = T - 1; t >= 0; --t) {
        const S* ct = C + t * N;
        const S* bt = B + t * N;
        const S* __restrict gt = g + t * D;
        const S* ht = h_all.data() + t * N * D;
        const S* hprev = t ? h_all.data() + (t - 1) * N * D : nullptr;
        S* dct = out.dC.ptr() + t * N;
        S* dbt = out.dB.ptr() + t * N;
        S* __restrict dxt = out.dx.ptr() + t * D;
        const S* __restrict xt = x + t * D;

        S da_scalar = S(0);
        for (int64_t n = 0; n < N; ++n) {
            S* __restrict ghrow = gh.data() + n * D;
            const S cn = ct[n];
            const S bn = bt[n];
            const S a = scalar ? A[t] : A[t * N + n];
            for (int64_t d = 0; d < D; ++d) ghrow[d] += cn * gt[d];  // readout
            dct[n] = lane_dot(ht + n * D, gt, D);
            dbt[n] = lane_dot(ghrow, xt, D);
            const S da_n = hprev ? lane_dot(ghrow, hprev + n * D, D) : S(0);
            if (scalar) {
                da_scalar += da_n;
            } else {
                out.dA.ptr()[t * N + n] = da_n;
            }
            for (int64_t d = 0; d < D; ++d) {
                dxt[d] += ghrow[d] * bn;
                ghrow[d] *= a;  // push through the decay
            }
        }
        if (scalar) out.dA.ptr()[t] = da_scalar;
    }
    return out;
}

}  // namespace ssdpose::ssd
