#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdpose/autodiff.hpp"
#include "ssdpose/kinematics.hpp"
#include "ssdpose/rotation.hpp"

// Training losses (local rotation, FK position, root orientation, all mean
// L2-of-residual) and the eight evaluation metrics.

namespace ssdpose::metrics {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.02;
};

struct LossBreakdown {
    double l_rot = 0.0;
    double l_pos = 0.0;
    double l_ori = 0.0;
    double total = 0.0;
};

template <typename S>
struct GraphLoss {
    ad::Var<S> total;
    LossBreakdown values;
};

/// Differentiable loss on predicted 6D rotations {T, 132}. FK runs on the
/// prediction with the ground-truth root trajectory. The rotation term covers
/// the non-root joints; the root's 6D residual is the orientation term.
template <typename S>
GraphLoss<S> loss_graph(const ad::Var<S>& pred6d, const body::PoseSequence<S>& gt,
                        const body::Skeleton& skel, const LossWeights& w) {
    const int64_t T = gt.frames();
    if (pred6d.value().shape != std::vector<int64_t>({T, 132})) {
        throw std::invalid_argument("loss: prediction/ground-truth length mismatch");
    }
    auto gt6d = ad::Var<S>::constant(Tensor<S>({T, 132}, gt.rotations6d.data));
    auto diff = ad::sub(pred6d, gt6d);
    auto l_rot = ad::group_norm_mean(ad::slice_cols(diff, 6, 132), 6);
    auto l_ori = ad::group_norm_mean(ad::slice_cols(diff, 0, 6), 6);

    auto gt_fk = body::forward_kinematics(gt, skel);
    auto gt_pos = ad::Var<S>::constant(
        Tensor<S>({T, body::kNumJoints * 3}, gt_fk.positions.data));
    auto trans = ad::Var<S>::constant(gt.root_translation);
    auto pred_pos = ad::fk_positions(ad::rot6d_to_mats(pred6d), trans, skel);
    auto l_pos = ad::group_norm_mean(ad::sub(pred_pos, gt_pos), 3);

    GraphLoss<S> out{
        ad::weighted_sum<S>({l_rot, l_pos, l_ori}, {w.alpha, w.beta, w.gamma}),
        LossBreakdown{static_cast<double>(l_rot.value()[0]),
                      static_cast<double>(l_pos.value()[0]),
                      static_cast<double>(l_ori.value()[0]), 0.0}};
    out.values.total = static_cast<double>(out.total.value()[0]);
    return out;
}

/// Value-only loss between two pose sequences (prediction uses its own root
/// trajectory for FK).
template <typename S>
LossBreakdown compute_loss(const body::PoseSequence<S>& pred, const body::PoseSequence<S>& gt,
                           const body::Skeleton& skel, const LossWeights& w) {
    if (pred.frames() != gt.frames()) {
        throw std::invalid_argument("compute_loss: length mismatch");
    }
    const int64_t T = gt.frames();
    ad::NoGradGuard<S> guard;
    auto pred6d = ad::Var<S>::constant(Tensor<S>({T, 132}, pred.rotations6d.data));
    auto gt6d = ad::Var<S>::constant(Tensor<S>({T, 132}, gt.rotations6d.data));
    auto diff = ad::sub(pred6d, gt6d);
    LossBreakdown out;
    out.l_rot = ad::group_norm_mean(ad::slice_cols(diff, 6, 132), 6).value()[0];
    out.l_ori = ad::group_norm_mean(ad::slice_cols(diff, 0, 6), 6).value()[0];
    auto pred_fk = body::forward_kinematics(pred, skel);
    auto gt_fk = body::forward_kinematics(gt, skel);
    auto pdiff = ad::sub(ad::Var<S>::constant(pred_fk.positions),
                         ad::Var<S>::constant(gt_fk.positions));
    out.l_pos = ad::group_norm_mean(pdiff, 3).value()[0];
    out.total = w.alpha * out.l_rot + w.beta * out.l_pos + w.gamma * out.l_ori;
    return out;
}

struct MetricReport {
    double mpjre = 0.0;    // degrees
    double mpjpe = 0.0;    // cm
    double mpjve = 0.0;    // cm/s
    double hand_pe = 0.0;  // cm
    double upper_pe = 0.0;
    double lower_pe = 0.0;
    double root_pe = 0.0;
    double jitter = 0.0;  // 10^2 m/s^3, of the prediction
};

namespace detail {

/// forward differences at the ends, central in the interior
inline void velocity(const std::vector<double>& pos, int64_t T, int64_t J, double fps,
                     std::vector<double>& vel) {
    vel.assign(pos.size(), 0.0);
    for (int64_t t = 0; t < T; ++t) {
        const int64_t lo = t == 0 ? 0 : t - 1;
        const int64_t hi = t == T - 1 ? T - 1 : t + 1;
        const double scale = fps / static_cast<double>(hi - lo);
        for (int64_t i = 0; i < J * 3; ++i) {
            vel[static_cast<size_t>(t * J * 3 + i)] =
                (pos[static_cast<size_t>(hi * J * 3 + i)] -
                 pos[static_cast<size_t>(lo * J * 3 + i)]) *
                scale;
        }
    }
}

/// mean norm of the forward third difference, scaled to 10^2 m/s^3
inline double jitter_of(const std::vector<double>& pos, int64_t T, int64_t J, double fps) {
    const double f3 = fps * fps * fps;
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t + 3 < T; ++t) {
        for (int64_t j = 0; j < J; ++j) {
            double ss = 0.0;
            for (int c = 0; c < 3; ++c) {
                const auto at = [&](int64_t tt) {
                    return pos[static_cast<size_t>((tt * J + j) * 3 + c)];
                };
                const double jerk = (at(t + 3) - 3 * at(t + 2) + 3 * at(t + 1) - at(t)) * f3;
                ss += jerk * jerk;
            }
            acc += std::sqrt(ss);
            ++count;
        }
    }
    return acc / static_cast<double>(count) / 100.0;
}

}  // namespace detail

/// The eight evaluation metrics for one prediction/ground-truth pair.
template <typename S>
MetricReport compute_metrics(const body::PoseSequence<S>& pred,
                             const body::PoseSequence<S>& gt, const body::Skeleton& skel,
                             double fps) {
    const int64_t T = gt.frames();
    const int64_t J = body::kNumJoints;
    if (pred.frames() != T) throw std::invalid_argument("compute_metrics: length mismatch");
    if (T < 4) throw std::invalid_argument("compute_metrics: need at least 4 frames");

    auto pd = pred.template cast<double>();
    auto gd = gt.template cast<double>();
    auto fk_p = body::forward_kinematics(pd, skel);
    auto fk_g = body::forward_kinematics(gd, skel);

    MetricReport r;

    // rotation error: geodesic angle between local rotations
    double rot_acc = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t j = 0; j < J; ++j) {
            double Rp[9], Rg[9];
            rot::rot6d_to_matrix(pd.rotations6d.ptr() + (t * J + j) * 6, Rp);
            rot::rot6d_to_matrix(gd.rotations6d.ptr() + (t * J + j) * 6, Rg);
            rot_acc += rot::geodesic_angle_deg(Rp, Rg);
        }
    }
    r.mpjre = rot_acc / static_cast<double>(T * J);

    // position errors in cm over joint subsets
    auto subset_pe = [&](const std::vector<int>& joints) {
        double acc = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            for (int j : joints) {
                double ss = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = fk_p.positions[(t * J + j) * 3 + c] -
                                     fk_g.positions[(t * J + j) * 3 + c];
                    ss += d * d;
                }
                acc += std::sqrt(ss);
            }
        }
        return acc / static_cast<double>(T * static_cast<int64_t>(joints.size())) * 100.0;
    };
    std::vector<int> all(J);
    for (int j = 0; j < J; ++j) all[static_cast<size_t>(j)] = j;
    r.mpjpe = subset_pe(all);
    r.hand_pe = subset_pe(body::hand_joints());
    r.upper_pe = subset_pe(body::upper_body_joints());
    r.lower_pe = subset_pe(body::lower_body_joints());
    r.root_pe = subset_pe(body::root_joints());

    // velocity error in cm/s
    std::vector<double> vp, vg;
    std::vector<double> pp(fk_p.positions.data.begin(), fk_p.positions.data.end());
    std::vector<double> pg(fk_g.positions.data.begin(), fk_g.positions.data.end());
    detail::velocity(pp, T, J, fps, vp);
    detail::velocity(pg, T, J, fps, vg);
    double vacc = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t j = 0; j < J; ++j) {
            double ss = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = vp[static_cast<size_t>((t * J + j) * 3 + c)] -
                                 vg[static_cast<size_t>((t * J + j) * 3 + c)];
                ss += d * d;
            }
            vacc += std::sqrt(ss);
        }
    }
    r.mpjve = vacc / static_cast<double>(T * J) * 100.0;

    r.jitter = detail::jitter_of(pp, T, J, fps);
    return r;
}

/// Jitter of a sequence on its own (the ground-truth row of result tables).
template <typename S>
double sequence_jitter(const body::PoseSequence<S>& pose, const body::Skeleton& skel,
                       double fps) {
    auto pd = pose.template cast<double>();
    auto fk = body::forward_kinematics(pd, skel);
    std::vector<double> pos(fk.positions.data.begin(), fk.positions.data.end());
    return detail::jitter_of(pos, pose.frames(), body::kNumJoints, fps);
}

// table-1 column order
inline std::string metric_csv_header() {
    return "MPJRE,MPJPE,MPJVE,HandPE,UpperPE,LowerPE,RootPE,Jitter";
}

inline std::string metric_csv_row(const MetricReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.mpjre,
                  r.mpjpe, r.mpjve, r.hand_pe, r.upper_pe, r.lower_pe, r.root_pe, r.jitter);
    return buf;
}

inline std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::string out;
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%-14s %8s %8s %8s %8s %8s %8s %8s %8s\n", "sequence",
                  "MPJRE", "MPJPE", "MPJVE", "HandPE", "UpperPE", "LowerPE", "RootPE",
                  "Jitter");
    out += buf;
    for (const auto& [label, r] : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%-14s %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f\n",
                      label.c_str(), r.mpjre, r.mpjpe, r.mpjve, r.hand_pe, r.upper_pe,
                      r.lower_pe, r.root_pe, r.jitter);
        out += buf;
    }
    return out;
}

}  // namespace ssdpose::metrics
