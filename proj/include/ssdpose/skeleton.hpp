#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// 22-joint kinematic tree in SMPL body-joint order (fingers excluded).
// Joint 0 is the root; parents precede children, so a plain forward walk is a
// valid topological order.

namespace ssdpose::body {

constexpr int kNumJoints = 22;

constexpr int kPelvis = 0;
constexpr int kHead = 15;
constexpr int kLeftWrist = 20;
constexpr int kRightWrist = 21;

inline const std::array<int, 3>& tracker_joints() {
    static const std::array<int, 3> j{kHead, kLeftWrist, kRightWrist};
    return j;
}

inline const std::vector<int>& lower_body_joints() {
    static const std::vector<int> j{1, 2, 4, 5, 7, 8, 10, 11};  // hips, knees, ankles, feet
    return j;
}

inline const std::vector<int>& upper_body_joints() {
    static const std::vector<int> j{3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21};
    return j;
}

inline const std::vector<int>& hand_joints() {
    static const std::vector<int> j{kLeftWrist, kRightWrist};
    return j;
}

inline const std::vector<int>& root_joints() {
    static const std::vector<int> j{kPelvis};
    return j;
}

struct Skeleton {
    std::array<int, kNumJoints> parent{};
    std::array<std::array<double, 3>, kNumJoints> offset{};
    std::array<std::string, kNumJoints> name{};

    void validate() const {
        if (parent[0] != -1) {
            throw std::invalid_argument("skeleton: joint 0 must be the root (parent -1)");
        }
        for (int j = 1; j < kNumJoints; ++j) {
            if (parent[j] < 0 || parent[j] >= j) {
                throw std::invalid_argument(
                    "skeleton: parents must form a tree with parent[j] < j (joint " +
                    std::to_string(j) + ")");
            }
        }
    }

    double bone_length(int j) const {
        const auto& o = offset[static_cast<size_t>(j)];
        return std::sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
    }
};

/// Synthetic humanoid with plausible bone lengths, y-up, meters.
inline Skeleton default_skeleton() {
    Skeleton s;
    struct J {
        const char* name;
        int parent;
        double x, y, z;
    };
    static const J table[kNumJoints] = {
        {"pelvis", -1, 0.00, 0.00, 0.00},
        {"left_hip", 0, 0.09, -0.07, -0.01},
        {"right_hip", 0, -0.09, -0.07, -0.01},
        {"spine1", 0, 0.00, 0.11, -0.01},
        {"left_knee", 1, 0.02, -0.45, 0.00},
        {"right_knee", 2, -0.02, -0.45, 0.00},
        {"spine2", 3, 0.00, 0.13, 0.01},
        {"left_ankle", 4, -0.01, -0.43, -0.02},
        {"right_ankle", 5, 0.01, -0.43, -0.02},
        {"spine3", 6, 0.00, 0.06, 0.01},
        {"left_foot", 7, 0.02, -0.06, 0.13},
        {"right_foot", 8, -0.02, -0.06, 0.13},
        {"neck", 9, 0.00, 0.22, -0.03},
        {"left_collar", 9, 0.08, 0.12, -0.02},
        {"right_collar", 9, -0.08, 0.12, -0.02},
        {"head", 12, 0.00, 0.09, 0.02},
        {"left_shoulder", 13, 0.11, 0.03, -0.01},
        {"right_shoulder", 14, -0.11, 0.03, -0.01},
        {"left_elbow", 16, 0.27, 0.00, -0.01},
        {"right_elbow", 17, -0.27, 0.00, -0.01},
        {"left_wrist", 18, 0.26, 0.00, 0.00},
        {"right_wrist", 19, -0.26, 0.00, 0.00},
    };
    for (int j = 0; j < kNumJoints; ++j) {
        s.name[j] = table[j].name;
        s.parent[j] = table[j].parent;
        s.offset[j] = {table[j].x, table[j].y, table[j].z};
    }
    s.validate();
    return s;
}

inline void save_skeleton(const Skeleton& s, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open skeleton file for writing: " + path);
    f << "ssdpose-skeleton v1\n";
    for (int j = 0; j < kNumJoints; ++j) {
        f << "joint " << s.name[j] << " " << s.parent[j] << " " << s.offset[j][0] << " "
          << s.offset[j][1] << " " << s.offset[j][2] << "\n";
    }
}

inline Skeleton load_skeleton(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open skeleton file: " + path);
    std::string header;
    std::getline(f, header);
    if (header != "ssdpose-skeleton v1") {
        throw std::runtime_error("skeleton file: unsupported header '" + header + "'");
    }
    Skeleton s;
    int j = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (j >= kNumJoints) throw std::runtime_error("skeleton file: too many joints");
        std::istringstream ls(line);
        std::string tag;
        ls >> tag >> s.name[j] >> s.parent[j] >> s.offset[j][0] >> s.offset[j][1] >>
            s.offset[j][2];
        if (tag != "joint" || !ls) {
            throw std::runtime_error("skeleton file: malformed line '" + line + "'");
        }
        ++j;
    }
    if (j != kNumJoints) throw std::runtime_error("skeleton file: expected 22 joints");
    s.validate();
    return s;
}

}  // namespace ssdpose::body
