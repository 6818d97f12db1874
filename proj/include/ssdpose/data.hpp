#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdpose/io.hpp"
#include "ssdpose/kinematics.hpp"
#include "ssdpose/rotation.hpp"
#include "ssdpose/tensor.hpp"

// Motion sequence container format, the deterministic synthetic motion
// generator used in place of a mocap corpus, and fixed-length windowing.

namespace ssdpose::data {

inline constexpr char kMotionMagic[4] = {'S', 'S', 'D', 'M'};
inline constexpr uint32_t kMotionVersion = 1;

struct MotionHeader {
    uint32_t version = kMotionVersion;
    uint32_t num_frames = 0;
    float fps = 60.0f;
    uint32_t num_joints = body::kNumJoints;
};

template <typename S>
void write_motion(const std::string& path, const body::PoseSequence<S>& pose, double fps) {
    io::Writer w(path);
    w.bytes(kMotionMagic, 4);
    w.u32(kMotionVersion);
    w.u32(static_cast<uint32_t>(pose.frames()));
    w.f32(static_cast<float>(fps));
    w.u32(static_cast<uint32_t>(body::kNumJoints));
    for (int64_t i = 0; i < pose.rotations6d.numel(); ++i) {
        w.f32(static_cast<float>(pose.rotations6d[i]));
    }
    for (int64_t i = 0; i < pose.root_translation.numel(); ++i) {
        w.f32(static_cast<float>(pose.root_translation[i]));
    }
}

inline MotionHeader read_motion_header(io::Reader& r) {
    r.expect_magic(kMotionMagic, "motion file");
    MotionHeader h;
    h.version = r.u32();
    if (h.version != kMotionVersion) {
        throw io::FileError(io::FileError::Kind::kBadVersion,
                            "motion file: unsupported version " + std::to_string(h.version));
    }
    h.num_frames = r.u32();
    h.fps = r.f32();
    h.num_joints = r.u32();
    if (h.num_joints != body::kNumJoints) {
        throw io::FileError(io::FileError::Kind::kMalformed,
                            "motion file: expected 22 joints, found " +
                                std::to_string(h.num_joints));
    }
    return h;
}

inline MotionHeader read_motion_header(const std::string& path) {
    io::Reader r(path);
    return read_motion_header(r);
}

template <typename S>
body::PoseSequence<S> read_motion(const std::string& path, double* fps_out = nullptr) {
    io::Reader r(path);
    const MotionHeader h = read_motion_header(r);
    const int64_t T = h.num_frames;
    body::PoseSequence<S> pose;
    pose.rotations6d = Tensor<S>({T, body::kNumJoints, 6});
    pose.root_translation = Tensor<S>({T, 3});
    for (int64_t i = 0; i < pose.rotations6d.numel(); ++i) {
        pose.rotations6d[i] = static_cast<S>(r.f32());
    }
    for (int64_t i = 0; i < pose.root_translation.numel(); ++i) {
        pose.root_translation[i] = static_cast<S>(r.f32());
    }
    if (!r.at_eof()) {
        throw io::FileError(io::FileError::Kind::kMalformed,
                            "motion file: trailing bytes after payload");
    }
    if (fps_out) *fps_out = h.fps;
    return pose;
}

inline std::string describe_motion_header(const MotionHeader& h) {
    std::ostringstream s;
    s << "motion file: version " << h.version << ", frames " << h.num_frames << ", fps "
      << h.fps << ", joints " << h.num_joints;
    return s.str();
}

// ---------------------------------------------------------------------------
// synthetic motion
// ---------------------------------------------------------------------------

struct SynthConfig {
    uint64_t seed = 0;
    int64_t num_sequences = 8;
    int64_t frames_per_sequence = 480;
    double fps = 60.0;
    int max_harmonics = 3;
    double amplitude_scale = 0.5;   // radians of joint swing
    double root_speed_scale = 0.6;  // m/s of root drift

    void validate() const {
        if (num_sequences < 1 || frames_per_sequence < 2) {
            throw std::invalid_argument("synth: need >= 1 sequence and >= 2 frames");
        }
        if (max_harmonics < 1 || fps <= 0) {
            throw std::invalid_argument("synth: harmonics and fps must be positive");
        }
        if (amplitude_scale < 0 || root_speed_scale < 0) {
            throw std::invalid_argument("synth: scales must be non-negative");
        }
    }
};

/// One band-limited articulated sequence: per joint, the rotation vector is a
/// sum of sinusoids below 3 Hz; the root drifts along slow sinusoids. Fully
/// determined by (config, index).
template <typename S>
body::PoseSequence<S> generate_sequence(const SynthConfig& cfg, int64_t index) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).split(static_cast<uint64_t>(index) + 1);
    const int64_t T = cfg.frames_per_sequence;
    const int H = cfg.max_harmonics;

    body::PoseSequence<S> pose;
    pose.rotations6d = Tensor<S>({T, body::kNumJoints, 6});
    pose.root_translation = Tensor<S>({T, 3});

    struct Harmonic {
        double amp, freq, phase;
    };
    std::vector<Harmonic> h(static_cast<size_t>(H));

    for (int64_t j = 0; j < body::kNumJoints; ++j) {
        // the root swings less so the body stays roughly upright
        const double joint_mult = (j == 0 ? 0.3 : rng.uniform(0.4, 1.0)) * cfg.amplitude_scale;
        double axis_amp[3];
        for (auto& a : axis_amp) a = rng.uniform(0.3, 1.0);
        std::vector<std::array<Harmonic, 3>> harmonics(static_cast<size_t>(H));
        for (int k = 0; k < H; ++k) {
            for (int c = 0; c < 3; ++c) {
                harmonics[static_cast<size_t>(k)][static_cast<size_t>(c)] = {
                    joint_mult * axis_amp[c] * rng.uniform(0.3, 1.0) / (H * (k + 1)),
                    rng.uniform(0.2, 3.0), rng.uniform(0.0, 2.0 * 3.14159265358979323846)};
            }
        }
        for (int64_t t = 0; t < T; ++t) {
            const double time = static_cast<double>(t) / cfg.fps;
            double aa[3] = {0, 0, 0};
            for (int k = 0; k < H; ++k) {
                for (int c = 0; c < 3; ++c) {
                    const auto& hh = harmonics[static_cast<size_t>(k)][static_cast<size_t>(c)];
                    aa[c] += hh.amp *
                             std::sin(2.0 * 3.14159265358979323846 * hh.freq * time + hh.phase);
                }
            }
            double R[9], r6[6];
            rot::axis_angle_to_matrix(aa, R);
            rot::matrix_to_rot6d(R, r6);
            S* dst = pose.rotations6d.ptr() + (t * body::kNumJoints + j) * 6;
            for (int c = 0; c < 6; ++c) dst[c] = static_cast<S>(r6[c]);
        }
    }

    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < H; ++k) {
            h[static_cast<size_t>(k)] = {rng.uniform(0.2, 1.0), rng.uniform(0.05, 0.8),
                                         rng.uniform(0.0, 2.0 * 3.14159265358979323846)};
        }
        for (int64_t t = 0; t < T; ++t) {
            const double time = static_cast<double>(t) / cfg.fps;
            double x = c == 1 ? 0.9 : 0.0;  // standing height offset
            for (int k = 0; k < H; ++k) {
                const auto& hh = h[static_cast<size_t>(k)];
                // amplitude chosen so the speed amplitude is ~root_speed_scale
                const double amp = cfg.root_speed_scale * hh.amp /
                                   (2.0 * 3.14159265358979323846 * hh.freq * H);
                x += amp * std::sin(2.0 * 3.14159265358979323846 * hh.freq * time + hh.phase);
            }
            pose.root_translation[t * 3 + c] = static_cast<S>(x);
        }
    }
    return pose;
}

template <typename S>
std::vector<body::PoseSequence<S>> generate_motion(const SynthConfig& cfg) {
    std::vector<body::PoseSequence<S>> out;
    out.reserve(static_cast<size_t>(cfg.num_sequences));
    for (int64_t i = 0; i < cfg.num_sequences; ++i) {
        out.push_back(generate_sequence<S>(cfg, i));
    }
    return out;
}

// ---------------------------------------------------------------------------
// windowing and splits
// ---------------------------------------------------------------------------

struct Window {
    int64_t sequence = 0;
    int64_t start = 0;
};

inline std::vector<Window> window_dataset(const std::vector<int64_t>& lengths, int64_t T,
                                          int64_t stride) {
    if (stride < 1) throw std::invalid_argument("windowing: stride must be >= 1");
    if (T < 1) throw std::invalid_argument("windowing: window length must be >= 1");
    std::vector<Window> out;
    for (size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] < T) {
            throw std::invalid_argument("windowing: sequence " + std::to_string(i) +
                                        " has " + std::to_string(lengths[i]) +
                                        " frames, shorter than the window length " +
                                        std::to_string(T));
        }
        for (int64_t s = 0; s + T <= lengths[i]; s += stride) {
            out.push_back({static_cast<int64_t>(i), s});
        }
    }
    return out;
}

/// Copies rows [start, start+len) of a row-major {R, C} tensor.
template <typename S>
Tensor<S> slice_rows_copy(const Tensor<S>& t, int64_t start, int64_t len) {
    const int64_t C = t.numel() / t.shape[0];
    Tensor<S> out({len, C});
    std::copy(t.ptr() + start * C, t.ptr() + (start + len) * C, out.ptr());
    return out;
}

struct Split {
    std::vector<int64_t> train, test;
};

/// 90/10 split by whole sequences under a seeded shuffle.
inline Split split_sequences(int64_t n, uint64_t seed) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed ^ 0x5b1cd0a8f3e6d921ULL);
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(i + 1);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    const int64_t ntrain = n <= 1 ? n : std::max<int64_t>(1, (n * 9) / 10);
    Split s;
    s.train.assign(order.begin(), order.begin() + ntrain);
    s.test.assign(order.begin() + ntrain, order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

}  // namespace ssdpose::data
