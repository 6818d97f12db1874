#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ssdpose/autodiff.hpp"
#include "ssdpose/rotation.hpp"
#include "ssdpose/skeleton.hpp"
#include "ssdpose/tensor.hpp"

namespace ssdpose::body {

/// Per-frame 22-joint local rotations plus the root trajectory.
template <typename S>
struct PoseSequence {
    Tensor<S> rotations6d;       // {T, 22, 6}
    Tensor<S> root_translation;  // {T, 3}

    int64_t frames() const { return rotations6d.shape[0]; }

    static PoseSequence rest(int64_t T) {
        PoseSequence p;
        p.rotations6d = Tensor<S>({T, kNumJoints, 6});
        p.root_translation = Tensor<S>({T, 3});
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t j = 0; j < kNumJoints; ++j) {
                S* r = p.rotations6d.ptr() + (t * kNumJoints + j) * 6;
                r[0] = S(1);
                r[4] = S(1);
            }
        }
        return p;
    }

    template <typename T2>
    PoseSequence<T2> cast() const {
        PoseSequence<T2> out;
        out.rotations6d = rotations6d.template cast<T2>();
        out.root_translation = root_translation.template cast<T2>();
        return out;
    }
};

/// Decodes a {T, J, 6} (or {T, J*6}) buffer of 6D rotations into row-major
/// 3x3 matrices, {T*J, 9} flattened.
template <typename S>
Tensor<S> decode_rotations(const Tensor<S>& r6d) {
    const int64_t groups = r6d.numel() / 6;
    if (r6d.numel() % 6 != 0) throw std::invalid_argument("decode_rotations: length % 6 != 0");
    Tensor<S> mats({groups, 9});
    for (int64_t g = 0; g < groups; ++g) {
        rot::rot6d_to_matrix(r6d.ptr() + g * 6, mats.ptr() + g * 9);
    }
    return mats;
}

/// Forward kinematics on decoded matrices.
/// local: {T*J, 9}; trans: {T,3}. Fills positions {T, J, 3} and global
/// rotations {T*J, 9}.
template <typename S>
void fk_forward(const S* local, const S* trans, const Skeleton& skel, int64_t T, S* pos,
                S* glob) {
    skel.validate();
    const int64_t J = kNumJoints;
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < T; ++t) {
        const S* lt = local + t * J * 9;
        S* gt = glob + t * J * 9;
        S* pt = pos + t * J * 3;
        for (int64_t j = 0; j < J; ++j) {
            const int p = skel.parent[static_cast<size_t>(j)];
            if (p < 0) {
                for (int k = 0; k < 9; ++k) gt[k] = lt[k];
                pt[0] = trans[t * 3 + 0];
                pt[1] = trans[t * 3 + 1];
                pt[2] = trans[t * 3 + 2];
                continue;
            }
            const S off[3] = {static_cast<S>(skel.offset[static_cast<size_t>(j)][0]),
                              static_cast<S>(skel.offset[static_cast<size_t>(j)][1]),
                              static_cast<S>(skel.offset[static_cast<size_t>(j)][2])};
            rot::mat3_mul(gt + p * 9, lt + j * 9, gt + j * 9);
            S d[3];
            rot::mat3_apply(gt + p * 9, off, d);
            pt[j * 3 + 0] = pt[p * 3 + 0] + d[0];
            pt[j * 3 + 1] = pt[p * 3 + 1] + d[1];
            pt[j * 3 + 2] = pt[p * 3 + 2] + d[2];
        }
    }
}

template <typename S>
struct FkResult {
    Tensor<S> positions;  // {T, 22, 3}
    Tensor<S> globals;    // {T*22, 9}
};

template <typename S>
FkResult<S> forward_kinematics(const PoseSequence<S>& pose, const Skeleton& skel) {
    const int64_t T = pose.frames();
    Tensor<S> local = decode_rotations(pose.rotations6d);
    FkResult<S> out{Tensor<S>({T, kNumJoints, 3}), Tensor<S>({T * kNumJoints, 9})};
    fk_forward(local.ptr(), pose.root_translation.ptr(), skel, T, out.positions.ptr(),
               out.globals.ptr());
    check_finite(out.positions, "forward_kinematics");
    return out;
}

/// Adjoint of fk_forward w.r.t. the local rotation matrices and translation.
template <typename S>
void fk_backward(const S* local, const S* glob, const Skeleton& skel, int64_t T,
                 const S* dpos, S* dlocal_acc, S* dtrans_acc) {
    const int64_t J = kNumJoints;
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < T; ++t) {
        const S* lt = local + t * J * 9;
        const S* gt = glob + t * J * 9;
        const S* dp_in = dpos + t * J * 3;
        S* dl = dlocal_acc + t * J * 9;
        std::vector<S> dglob(static_cast<size_t>(J * 9), S(0));
        std::vector<S> dpt(static_cast<size_t>(J * 3));
        for (int64_t i = 0; i < J * 3; ++i) dpt[static_cast<size_t>(i)] = dp_in[i];

        for (int64_t j = J - 1; j >= 1; --j) {
            const int p = skel.parent[static_cast<size_t>(j)];
            const S off[3] = {static_cast<S>(skel.offset[static_cast<size_t>(j)][0]),
                              static_cast<S>(skel.offset[static_cast<size_t>(j)][1]),
                              static_cast<S>(skel.offset[static_cast<size_t>(j)][2])};
            // pos[j] = pos[p] + Rg[p] off
            for (int a = 0; a < 3; ++a) {
                dpt[static_cast<size_t>(p * 3 + a)] += dpt[static_cast<size_t>(j * 3 + a)];
                for (int b = 0; b < 3; ++b) {
                    dglob[static_cast<size_t>(p * 9 + 3 * a + b)] +=
                        dpt[static_cast<size_t>(j * 3 + a)] * off[b];
                }
            }
            // Rg[j] = Rg[p] Rl[j]  =>  dRg[p] += dRg[j] Rl[j]^T, dRl[j] += Rg[p]^T dRg[j]
            const S* dgj = dglob.data() + j * 9;
            S tmp[9];
            // dRg[j] * Rl[j]^T
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    tmp[3 * a + b] = dgj[3 * a + 0] * lt[j * 9 + 3 * b + 0] +
                                     dgj[3 * a + 1] * lt[j * 9 + 3 * b + 1] +
                                     dgj[3 * a + 2] * lt[j * 9 + 3 * b + 2];
                }
            }
            for (int k = 0; k < 9; ++k) dglob[static_cast<size_t>(p * 9 + k)] += tmp[k];
            rot::mat3_tmul(gt + p * 9, dgj, tmp);
            for (int k = 0; k < 9; ++k) dl[j * 9 + k] += tmp[k];
        }
        for (int k = 0; k < 9; ++k) dl[k] += dglob[static_cast<size_t>(k)];  // root: Rg = Rl
        if (dtrans_acc) {
            for (int a = 0; a < 3; ++a) dtrans_acc[t * 3 + a] += dpt[static_cast<size_t>(a)];
        }
    }
}

/// Sparse HMD observation synthesis: per frame, for head and both wrists,
/// global position, linear velocity, global 6D rotation and frame-to-frame
/// angular rotation in 6D, concatenated to 54 features. Frame 0 copies frame
/// 1's velocity features.
template <typename S>
Tensor<S> build_tracker_input(const PoseSequence<S>& pose, const Skeleton& skel, double fps) {
    const int64_t T = pose.frames();
    if (T < 2) throw std::invalid_argument("build_tracker_input: need at least 2 frames");
    auto fk = forward_kinematics(pose, skel);
    const auto& trackers = tracker_joints();

    Tensor<S> out({T, 54});
    for (int64_t t = 0; t < T; ++t) {
        for (size_t k = 0; k < trackers.size(); ++k) {
            const int j = trackers[k];
            S* f = out.ptr() + t * 54 + static_cast<int64_t>(k) * 18;
            const S* p = fk.positions.ptr() + (t * kNumJoints + j) * 3;
            f[0] = p[0];
            f[1] = p[1];
            f[2] = p[2];
            // velocities filled below (depend on the previous frame)
            rot::matrix_to_rot6d(fk.globals.ptr() + (t * kNumJoints + j) * 9, f + 6);
        }
    }
    for (int64_t t = 1; t < T; ++t) {
        for (size_t k = 0; k < trackers.size(); ++k) {
            const int j = trackers[k];
            S* f = out.ptr() + t * 54 + static_cast<int64_t>(k) * 18;
            const S* pc = fk.positions.ptr() + (t * kNumJoints + j) * 3;
            const S* pp = fk.positions.ptr() + ((t - 1) * kNumJoints + j) * 3;
            for (int a = 0; a < 3; ++a) f[3 + a] = (pc[a] - pp[a]) * static_cast<S>(fps);
            S rel[9];
            rot::mat3_tmul(fk.globals.ptr() + ((t - 1) * kNumJoints + j) * 9,
                           fk.globals.ptr() + (t * kNumJoints + j) * 9, rel);
            rot::matrix_to_rot6d(rel, f + 12);
        }
    }
    // frame 0 copies frame 1's velocity blocks
    for (size_t k = 0; k < trackers.size(); ++k) {
        S* f0 = out.ptr() + static_cast<int64_t>(k) * 18;
        const S* f1 = out.ptr() + 54 + static_cast<int64_t>(k) * 18;
        for (int a = 0; a < 3; ++a) f0[3 + a] = f1[3 + a];
        for (int a = 0; a < 6; ++a) f0[12 + a] = f1[12 + a];
    }
    check_finite(out, "build_tracker_input");
    return out;
}

}  // namespace ssdpose::body

// graph ops ------------------------------------------------------------------

namespace ssdpose::ad {

/// {T, J*6} 6D rotations -> {T, J*9} row-major rotation matrices.
template <typename S>
Var<S> rot6d_to_mats(const Var<S>& r6d) {
    const auto& v = r6d.value();
    if (v.ndim() != 2 || v.shape[1] % 6 != 0) {
        throw std::invalid_argument("rot6d_to_mats: expects {T, J*6}");
    }
    const int64_t T = v.shape[0], J = v.shape[1] / 6;
    Tensor<S> mats({T, J * 9});
    for (int64_t g = 0; g < T * J; ++g) {
        rot::rot6d_to_matrix(v.ptr() + g * 6, mats.ptr() + g * 9);
    }
    return detail::make_node<S>(std::move(mats), "rot6d_to_mats", {r6d.node()},
                                [T, J](Node<S>& n) {
                                    if (!n.parents[0]->requires_grad) return;
                                    const S* r = n.parents[0]->value.ptr();
                                    S* dr = n.parents[0]->g().ptr();
                                    const S* g = n.grad.ptr();
                                    for (int64_t i = 0; i < T * J; ++i) {
                                        rot::rot6d_to_matrix_backward(r + i * 6, g + i * 9,
                                                                      dr + i * 6);
                                    }
                                });
}

/// Forward kinematics as a graph op: positions {T, J*3} from local rotation
/// matrices {T, J*9} and root translation {T, 3}.
template <typename S>
Var<S> fk_positions(const Var<S>& mats, const Var<S>& trans, const body::Skeleton& skel) {
    const auto& mv = mats.value();
    const int64_t J = body::kNumJoints;
    if (mv.ndim() != 2 || mv.shape[1] != J * 9) {
        throw std::invalid_argument("fk_positions: expects {T, 22*9}");
    }
    const int64_t T = mv.shape[0];
    if (trans.value().shape != std::vector<int64_t>({T, 3})) {
        throw std::invalid_argument("fk_positions: translation must be {T, 3}");
    }
    Tensor<S> pos({T, J * 3});
    auto glob = std::make_shared<Tensor<S>>(std::vector<int64_t>{T * J, 9});
    body::fk_forward(mv.ptr(), trans.value().ptr(), skel, T, pos.ptr(), glob->ptr());
    return detail::make_node<S>(
        std::move(pos), "fk_positions", {mats.node(), trans.node()},
        [T, skel, glob](Node<S>& n) {
            Tensor<S> dlocal({T, body::kNumJoints * 9});
            Tensor<S> dtrans({T, 3});
            body::fk_backward(n.parents[0]->value.ptr(), glob->ptr(), skel, T, n.grad.ptr(),
                              dlocal.ptr(), dtrans.ptr());
            if (n.parents[0]->requires_grad) {
                kern::axpy(S(1), dlocal.ptr(), n.parents[0]->g().ptr(), dlocal.numel());
            }
            if (n.parents[1]->requires_grad) {
                kern::axpy(S(1), dtrans.ptr(), n.parents[1]->g().ptr(), dtrans.numel());
            }
        });
}

}  // namespace ssdpose::ad
