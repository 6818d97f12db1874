#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ssdpose/losses.hpp"
#include "testutil.hpp"

using namespace ssdpose;
using body::kNumJoints;
using body::PoseSequence;
using metrics::LossWeights;
using testutil::random_tensor;

namespace {

template <typename S>
PoseSequence<S> random_pose(int64_t T, Rng& rng, double amplitude = 1.0) {
    PoseSequence<S> p;
    p.rotations6d = Tensor<S>({T, kNumJoints, 6});
    p.root_translation = random_tensor<S>({T, 3}, rng, 0.3);
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t j = 0; j < kNumJoints; ++j) {
            S aa[3];
            for (auto& v : aa) v = static_cast<S>(amplitude * rng.normal());
            S R[9];
            rot::axis_angle_to_matrix(aa, R);
            rot::matrix_to_rot6d(R, p.rotations6d.ptr() + (t * kNumJoints + j) * 6);
        }
    }
    return p;
}

}  // namespace

TEST_CASE("loss: identical prediction costs nothing") {
    Rng rng(201);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(3, rng);
    auto b = metrics::compute_loss(gt, gt, skel, LossWeights{});
    CHECK(b.l_rot == 0.0);
    CHECK(b.l_pos == 0.0);
    CHECK(b.l_ori == 0.0);
    CHECK(b.total == 0.0);
}

TEST_CASE("loss: gamma masks a pure root-orientation encoding residual") {
    // scale the root 6D by 2: same decoded rotation, nonzero 6D residual
    Rng rng(203);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(2, rng);
    auto pred = gt;
    for (int64_t t = 0; t < 2; ++t) {
        for (int c = 0; c < 6; ++c) pred.rotations6d[t * kNumJoints * 6 + c] *= 2.0;
    }
    LossWeights w;
    w.gamma = 0.0;
    auto masked = metrics::compute_loss(pred, gt, skel, w);
    CHECK(masked.l_rot == 0.0);
    CHECK(masked.l_pos <= 1e-9);  // same decoded rotations
    CHECK(masked.total <= 1e-9);
    auto unmasked = metrics::compute_loss(pred, gt, skel, LossWeights{});
    CHECK(unmasked.l_ori > 0.1);
    CHECK(unmasked.total == doctest::Approx(0.02 * unmasked.l_ori).epsilon(1e-9));
}

TEST_CASE("loss: hand-built residuals match direct arithmetic") {
    Rng rng(205);
    auto skel = body::default_skeleton();
    const int64_t T = 1;
    auto gt = random_pose<double>(T, rng);

    SUBCASE("leaf-joint rotation residual feeds only l_rot") {
        auto pred = gt;
        const int leaf = 10;  // left foot: no children, own rotation moves nothing
        double d[6] = {0.03, -0.01, 0.02, 0.0, 0.04, -0.02};
        double norm = 0;
        for (int c = 0; c < 6; ++c) {
            pred.rotations6d[(0 * kNumJoints + leaf) * 6 + c] += d[c];
            norm += d[c] * d[c];
        }
        norm = std::sqrt(norm);
        auto b = metrics::compute_loss(pred, gt, skel, LossWeights{});
        CHECK(b.l_rot == doctest::Approx(norm / 21.0).epsilon(1e-9));
        CHECK(b.l_pos <= 1e-12);
        CHECK(b.l_ori == 0.0);
        CHECK(b.total == doctest::Approx(norm / 21.0).epsilon(1e-9));
    }
    SUBCASE("uniform translation offset feeds only l_pos") {
        auto pred = gt;
        pred.root_translation[0] += 0.05;  // +5 cm on x, every joint shifts equally
        auto b = metrics::compute_loss(pred, gt, skel, LossWeights{});
        CHECK(b.l_rot == 0.0);
        CHECK(b.l_ori == 0.0);
        CHECK(b.l_pos == doctest::Approx(0.05).epsilon(1e-9));
    }
}

TEST_CASE("loss: no spurious zeros under random perturbation") {
    Rng rng(207);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(2, rng);
    for (int rep = 0; rep < 10; ++rep) {
        auto pred = gt;
        const int64_t idx = rng.uniform_int(pred.rotations6d.numel());
        pred.rotations6d[idx] += 0.05;
        auto b = metrics::compute_loss(pred, gt, skel, LossWeights{});
        CHECK(b.total > 0.0);
    }
}

TEST_CASE("loss gradients pass finite differences through FK") {
    Rng rng(209);
    auto skel = body::default_skeleton();
    const int64_t T = 3;
    auto gt = random_pose<double>(T, rng, 0.7);
    auto start = random_pose<double>(T, rng, 0.7);
    auto pred = ad::Var<double>::param(Tensor<double>({T, 132}, start.rotations6d.data));
    auto f = [&] { return metrics::loss_graph(pred, gt, skel, LossWeights{}).total; };
    CHECK(testutil::fd_check<double>(pred, f, rng, 30, 1e-6) <= 1e-4);
}

TEST_CASE("metrics: identical prediction scores zero everywhere; jitter matches GT") {
    Rng rng(211);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(8, rng, 0.4);
    auto r = metrics::compute_metrics(gt, gt, skel, 60.0);
    CHECK(r.mpjre == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.mpjpe == 0.0);
    CHECK(r.mpjve == 0.0);
    CHECK(r.hand_pe == 0.0);
    CHECK(r.upper_pe == 0.0);
    CHECK(r.lower_pe == 0.0);
    CHECK(r.root_pe == 0.0);
    CHECK(r.jitter == metrics::sequence_jitter(gt, skel, 60.0));
}

TEST_CASE("metrics: constant-velocity motion has zero jitter") {
    auto skel = body::default_skeleton();
    const int64_t T = 12;
    auto gt = PoseSequence<double>::rest(T);
    for (int64_t t = 0; t < T; ++t) {
        gt.root_translation[t * 3 + 0] = 0.7 * static_cast<double>(t) / 60.0;
        gt.root_translation[t * 3 + 2] = -0.2 * static_cast<double>(t) / 60.0;
    }
    auto r = metrics::compute_metrics(gt, gt, skel, 60.0);
    CHECK(r.jitter <= 1e-9);
}

TEST_CASE("metrics: a uniform 1 cm offset is exactly 1 cm of position error") {
    Rng rng(213);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(6, rng, 0.3);
    auto pred = gt;
    for (int64_t t = 0; t < 6; ++t) pred.root_translation[t * 3 + 1] += 0.01;
    auto r = metrics::compute_metrics(pred, gt, skel, 60.0);
    CHECK(r.mpjpe == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.mpjve == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.hand_pe == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.upper_pe == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.lower_pe == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.root_pe == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.mpjre == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("metrics: sinusoid jitter matches the analytic third derivative within 2%") {
    auto skel = body::default_skeleton();
    const double fps = 60.0, freq = 2.0, amp = 0.08;
    const double omega = 2.0 * 3.14159265358979323846 * freq;
    const int64_t T = 240;
    auto gt = PoseSequence<double>::rest(T);
    for (int64_t t = 0; t < T; ++t) {
        gt.root_translation[t * 3 + 1] = amp * std::sin(omega * static_cast<double>(t) / fps);
    }
    auto r = metrics::compute_metrics(gt, gt, skel, fps);
    // |p'''| = amp w^3 |cos(w t)| sampled at the stencil centers
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t + 3 < T; ++t) {
        acc += amp * omega * omega * omega *
               std::abs(std::cos(omega * (static_cast<double>(t) + 1.5) / fps));
        ++count;
    }
    const double analytic = acc / static_cast<double>(count) / 100.0;
    CHECK(std::abs(r.jitter - analytic) / analytic <= 0.02);
}

TEST_CASE("metrics: position-type errors scale exactly with the error field") {
    Rng rng(217);
    auto skel = body::default_skeleton();
    auto gt = random_pose<double>(10, rng, 0.3);
    auto make_offset = [&](double s) {
        auto pred = gt;
        Rng r2(99);
        for (int64_t t = 0; t < 10; ++t) {
            for (int c = 0; c < 3; ++c) {
                pred.root_translation[t * 3 + c] += s * 0.01 * r2.normal();
            }
        }
        return metrics::compute_metrics(pred, gt, skel, 60.0);
    };
    auto r1 = make_offset(1.0);
    auto r3 = make_offset(3.0);
    CHECK(r3.mpjpe == doctest::Approx(3.0 * r1.mpjpe).epsilon(1e-9));
    CHECK(r3.mpjve == doctest::Approx(3.0 * r1.mpjve).epsilon(1e-9));
    CHECK(r3.hand_pe == doctest::Approx(3.0 * r1.hand_pe).epsilon(1e-9));
    CHECK(r3.root_pe == doctest::Approx(3.0 * r1.root_pe).epsilon(1e-9));
}

TEST_CASE("metrics: too-short sequences and length mismatches are rejected") {
    Rng rng(219);
    auto skel = body::default_skeleton();
    auto a = random_pose<double>(3, rng);
    CHECK_THROWS_AS(metrics::compute_metrics(a, a, skel, 60.0), std::invalid_argument);
    auto b = random_pose<double>(4, rng);
    auto c = random_pose<double>(5, rng);
    CHECK_THROWS_AS(metrics::compute_metrics(b, c, skel, 60.0), std::invalid_argument);
    CHECK_THROWS_AS(metrics::compute_loss(b, c, skel, LossWeights{}), std::invalid_argument);
}

TEST_CASE("metric serialization: CSV row and aligned table follow the column order") {
    metrics::MetricReport r;
    r.mpjre = 2.41;
    r.mpjpe = 3.15;
    r.mpjve = 19.32;
    r.hand_pe = 1.17;
    r.upper_pe = 1.34;
    r.lower_pe = 5.78;
    r.root_pe = 2.82;
    r.jitter = 8.19;
    CHECK(metrics::metric_csv_header() == "MPJRE,MPJPE,MPJVE,HandPE,UpperPE,LowerPE,RootPE,Jitter");
    CHECK(metrics::metric_csv_row(r) == "2.41,3.15,19.32,1.17,1.34,5.78,2.82,8.19");
    auto table = metrics::metric_table({{"aggregate", r}});
    CHECK(table.find("MPJRE") < table.find("MPJPE"));
    CHECK(table.find("RootPE") < table.find("Jitter"));
    CHECK(table.find("aggregate") != std::string::npos);
}
