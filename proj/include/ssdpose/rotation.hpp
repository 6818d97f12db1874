#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

// 6D rotation encoding: the first two columns of a rotation matrix, stored
// column-major as (c0x, c0y, c0z, c1x, c1y, c1z). Decoding re-orthonormalizes
// with Gram-Schmidt and completes the third column by cross product.
// Matrices are row-major 3x3.

namespace ssdpose::rot {

constexpr double kDegenerateEps = 1e-8;

template <typename S>
void cross3(const S* a, const S* b, S* out) {
    out[0] = a[1] * b[2] - a[2] * b[1];
    out[1] = a[2] * b[0] - a[0] * b[2];
    out[2] = a[0] * b[1] - a[1] * b[0];
}

template <typename S>
S dot3(const S* a, const S* b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <typename S>
void rot6d_to_matrix(const S* r, S* R) {
    const S* a1 = r;
    const S* a2 = r + 3;
    const S n1 = std::sqrt(dot3(a1, a1));
    if (!(n1 > S(kDegenerateEps))) {
        throw std::invalid_argument("rot6d: first column is (near) zero");
    }
    S b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
    const S p = dot3(b1, a2);
    S u2[3] = {a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]};
    const S n2 = std::sqrt(dot3(u2, u2));
    if (!(n2 > S(kDegenerateEps))) {
        throw std::invalid_argument("rot6d: columns are (near) parallel");
    }
    S b2[3] = {u2[0] / n2, u2[1] / n2, u2[2] / n2};
    S b3[3];
    cross3(b1, b2, b3);
    for (int i = 0; i < 3; ++i) {
        R[3 * i + 0] = b1[i];
        R[3 * i + 1] = b2[i];
        R[3 * i + 2] = b3[i];
    }
}

template <typename S>
void matrix_to_rot6d(const S* R, S* r) {
    r[0] = R[0];
    r[1] = R[3];
    r[2] = R[6];
    r[3] = R[1];
    r[4] = R[4];
    r[5] = R[7];
}

/// Adjoint of rot6d_to_matrix: accumulates d(loss)/dr given d(loss)/dR.
template <typename S>
void rot6d_to_matrix_backward(const S* r, const S* dR, S* dr_acc) {
    const S* a1 = r;
    const S* a2 = r + 3;
    const S n1 = std::sqrt(dot3(a1, a1));
    S b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
    const S p = dot3(b1, a2);
    S u2[3] = {a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]};
    const S n2 = std::sqrt(dot3(u2, u2));
    S b2[3] = {u2[0] / n2, u2[1] / n2, u2[2] / n2};

    S gb1[3], gb2[3], gb3[3];
    for (int i = 0; i < 3; ++i) {
        gb1[i] = dR[3 * i + 0];
        gb2[i] = dR[3 * i + 1];
        gb3[i] = dR[3 * i + 2];
    }
    // b3 = b1 x b2
    S t[3];
    cross3(b2, gb3, t);
    for (int i = 0; i < 3; ++i) gb1[i] += t[i];
    cross3(gb3, b1, t);
    for (int i = 0; i < 3; ++i) gb2[i] += t[i];
    // b2 = u2 / |u2|
    const S d2 = dot3(b2, gb2);
    S gu2[3];
    for (int i = 0; i < 3; ++i) gu2[i] = (gb2[i] - d2 * b2[i]) / n2;
    // u2 = a2 - (b1.a2) b1
    const S bu = dot3(b1, gu2);
    S ga2[3];
    for (int i = 0; i < 3; ++i) ga2[i] = gu2[i] - bu * b1[i];
    for (int i = 0; i < 3; ++i) gb1[i] += -p * gu2[i] - bu * a2[i];
    // b1 = a1 / |a1|
    const S d1 = dot3(b1, gb1);
    for (int i = 0; i < 3; ++i) dr_acc[i] += (gb1[i] - d1 * b1[i]) / n1;
    for (int i = 0; i < 3; ++i) dr_acc[3 + i] += ga2[i];
}

template <typename S>
void axis_angle_to_matrix(const S* aa, S* R) {
    const S angle = std::sqrt(dot3(aa, aa));
    if (angle < S(1e-12)) {
        for (int i = 0; i < 9; ++i) R[i] = S(0);
        R[0] = R[4] = R[8] = S(1);
        return;
    }
    const S x = aa[0] / angle, y = aa[1] / angle, z = aa[2] / angle;
    const S c = std::cos(angle), s = std::sin(angle), C = S(1) - c;
    R[0] = c + x * x * C;
    R[1] = x * y * C - z * s;
    R[2] = x * z * C + y * s;
    R[3] = y * x * C + z * s;
    R[4] = c + y * y * C;
    R[5] = y * z * C - x * s;
    R[6] = z * x * C - y * s;
    R[7] = z * y * C + x * s;
    R[8] = c + z * z * C;
}

template <typename S>
void mat3_mul(const S* A, const S* B, S* C) {
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            C[3 * i + j] = A[3 * i + 0] * B[0 + j] + A[3 * i + 1] * B[3 + j] +
                           A[3 * i + 2] * B[6 + j];
        }
    }
}

/// C = A^T B
template <typename S>
void mat3_tmul(const S* A, const S* B, S* C) {
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            C[3 * i + j] = A[i] * B[j] + A[3 + i] * B[3 + j] + A[6 + i] * B[6 + j];
        }
    }
}

template <typename S>
void mat3_apply(const S* A, const S* v, S* out) {
    for (int i = 0; i < 3; ++i) {
        out[i] = A[3 * i] * v[0] + A[3 * i + 1] * v[1] + A[3 * i + 2] * v[2];
    }
}

/// Geodesic distance between two rotations in degrees. Uses the identity
/// |Ra - Rb|_F = 2*sqrt(2)*sin(theta/2), which keeps full precision at small
/// angles where acos((tr-1)/2) loses it.
template <typename S>
double geodesic_angle_deg(const S* Ra, const S* Rb) {
    double ss = 0;
    for (int i = 0; i < 9; ++i) {
        const double d = static_cast<double>(Ra[i]) - static_cast<double>(Rb[i]);
        ss += d * d;
    }
    const double s = std::min(1.0, std::sqrt(ss) / (2.0 * std::sqrt(2.0)));
    return 2.0 * std::asin(s) * 180.0 / 3.14159265358979323846;
}

}  // namespace ssdpose::rot
