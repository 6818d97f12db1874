#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdpose/data.hpp"
#include "ssdpose/losses.hpp"
#include "ssdpose/model.hpp"

// Training configuration, schedule, loop, and whole-sequence prediction.

namespace ssdpose::train {

struct RunConfig {
    net::ModelConfig model;
    int64_t batch_size = 16;
    double lr_initial = 3e-4;
    double lr_after_decay = 3e-5;
    int64_t decay_at_iteration = 2000;  // paper-scale runs decay at 200000
    bool lr_ramp = false;               // false: step schedule; true: linear ramp to the end
    double weight_decay = 1e-5;
    int64_t max_iterations = 3000;
    uint64_t seed = 0;
    int64_t window_stride = 16;
    int64_t log_interval = 50;
    int64_t checkpoint_interval = 500;
    double grad_clip = 1.0;
    std::string data_dir;
    std::string checkpoint_path = "checkpoint.ssdc";
    std::string report_path;
    std::string resume_path;

    void validate() const {
        model.validate();
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (lr_after_decay > lr_initial) {
            throw std::invalid_argument("config: lr_after_decay must not exceed lr_initial");
        }
        if (max_iterations < 0 || decay_at_iteration < 0) {
            throw std::invalid_argument("config: iteration counts must be non-negative");
        }
        if (!data_dir.empty() && (data_dir == checkpoint_path || data_dir == report_path)) {
            throw std::invalid_argument("config: data, checkpoint, and report paths must differ");
        }
        if (!report_path.empty() && report_path == checkpoint_path) {
            throw std::invalid_argument("config: checkpoint and report paths must differ");
        }
    }

    double lr_at(int64_t iteration) const {
        if (iteration < decay_at_iteration) return lr_initial;
        if (!lr_ramp) return lr_after_decay;
        const int64_t span = std::max<int64_t>(1, max_iterations - decay_at_iteration);
        const double f = std::min(1.0, static_cast<double>(iteration - decay_at_iteration) /
                                           static_cast<double>(span));
        return lr_initial + f * (lr_after_decay - lr_initial);
    }
};

// key=value config text; unknown keys are an error so typos do not pass silently
inline void apply_config_kv(RunConfig& rc, const std::string& key, const std::string& value) {
    auto i64 = [&] { return std::stoll(value); };
    auto f64 = [&] { return std::stod(value); };
    if (key == "T") rc.model.T = i64();
    else if (key == "E") rc.model.E = i64();
    else if (key == "I") rc.model.I = i64();
    else if (key == "heads") rc.model.heads = i64();
    else if (key == "ffn_hidden") rc.model.ffn_hidden = i64();
    else if (key == "N_state") rc.model.N_state = i64();
    else if (key == "conv_k") rc.model.conv_k = i64();
    else if (key == "ssd_chunk") rc.model.ssd_chunk = i64();
    else if (key == "batch_size") rc.batch_size = i64();
    else if (key == "lr_initial") rc.lr_initial = f64();
    else if (key == "lr_after_decay") rc.lr_after_decay = f64();
    else if (key == "decay_at_iteration") rc.decay_at_iteration = i64();
    else if (key == "lr_ramp") rc.lr_ramp = i64() != 0;
    else if (key == "weight_decay") rc.weight_decay = f64();
    else if (key == "max_iterations") rc.max_iterations = i64();
    else if (key == "seed") rc.seed = static_cast<uint64_t>(i64());
    else if (key == "window_stride") rc.window_stride = i64();
    else if (key == "log_interval") rc.log_interval = i64();
    else if (key == "checkpoint_interval") rc.checkpoint_interval = i64();
    else if (key == "grad_clip") rc.grad_clip = f64();
    else if (key == "data_dir") rc.data_dir = value;
    else if (key == "checkpoint") rc.checkpoint_path = value;
    else if (key == "report") rc.report_path = value;
    else if (key == "resume") rc.resume_path = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline void load_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config file: " + path);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: malformed line '" + line + "'");
        }
        apply_config_kv(rc, line.substr(0, eq), line.substr(eq + 1));
    }
}

struct TrainingLogEntry {
    int64_t iteration = 0;
    double total = 0, l_rot = 0, l_pos = 0, l_ori = 0;
    double wall_time_s = 0;
};

struct TrainingLog {
    std::vector<TrainingLogEntry> entries;

    void append(const TrainingLogEntry& e) {
        if (!entries.empty() && e.iteration <= entries.back().iteration) {
            throw std::logic_error("training log iterations must increase");
        }
        entries.push_back(e);
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write training log: " + path);
        f << "iteration,total,l_rot,l_pos,l_ori,wall_time_s\n";
        char buf[256];
        for (const auto& e : entries) {
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                          static_cast<long long>(e.iteration), e.total, e.l_rot, e.l_pos,
                          e.l_ori, e.wall_time_s);
            f << buf;
        }
    }
};

/// A sequence with its tracker features and flattened targets precomputed.
template <typename S>
struct PreparedSequence {
    Tensor<S> features;     // {F, 54}
    Tensor<S> rotations;    // {F, 132}
    Tensor<S> translation;  // {F, 3}
    int64_t frames = 0;
};

template <typename S>
PreparedSequence<S> prepare_sequence(const body::PoseSequence<S>& pose,
                                     const body::Skeleton& skel, double fps) {
    PreparedSequence<S> out;
    out.frames = pose.frames();
    out.features = body::build_tracker_input(pose, skel, fps);
    out.rotations = Tensor<S>({out.frames, 132}, pose.rotations6d.data);
    out.translation = pose.root_translation;
    return out;
}

template <typename S>
body::PoseSequence<S> window_pose(const PreparedSequence<S>& seq, int64_t start, int64_t T) {
    body::PoseSequence<S> gt;
    auto rot = data::slice_rows_copy(seq.rotations, start, T);
    gt.rotations6d = Tensor<S>({T, body::kNumJoints, 6}, std::move(rot.data));
    gt.root_translation = data::slice_rows_copy(seq.translation, start, T);
    return gt;
}

template <typename S>
struct TrainOutcome {
    int64_t next_iteration = 0;
    TrainingLog log;
};

/// Runs the optimization loop. `stop_check`, when set, is polled every
/// log_interval iterations and may end training early (used by overfit-style
/// runs that stop at a target metric).
template <typename S>
TrainOutcome<S> train_loop(const RunConfig& rc, net::PoseNetwork<S>& model,
                           ad::AdamState<S>& adam,
                           const std::vector<PreparedSequence<S>>& trainset,
                           const body::Skeleton& skel, int64_t start_iteration,
                           std::ostream& out,
                           const std::function<bool(int64_t)>& stop_check = {}) {
    rc.validate();
    if (trainset.empty()) throw std::invalid_argument("train: no training sequences");
    std::vector<int64_t> lengths;
    for (const auto& s : trainset) lengths.push_back(s.frames);
    const auto windows = data::window_dataset(lengths, rc.model.T, rc.window_stride);

    adam.weight_decay = rc.weight_decay;
    metrics::LossWeights weights;

    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // forces a shuffle on first use
    int64_t epoch = 0;
    Rng shuffle_rng(rc.seed ^ 0xd1b54a32d192ed03ULL);

    const auto t0 = std::chrono::steady_clock::now();
    TrainOutcome<S> outcome;
    outcome.next_iteration = start_iteration;

    double acc_total = 0, acc_rot = 0, acc_pos = 0, acc_ori = 0;
    int64_t acc_n = 0;

    for (int64_t it = start_iteration; it < rc.max_iterations; ++it) {
        model.params().zero_grad();
        double btotal = 0, brot = 0, bpos = 0, bori = 0;
        for (int64_t b = 0; b < rc.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1],
                              order[static_cast<size_t>(shuffle_rng.uniform_int(
                                  static_cast<int64_t>(i)))]);
                }
                cursor = 0;
                ++epoch;
            }
            const auto& w = windows[order[cursor++]];
            const auto& seq = trainset[static_cast<size_t>(w.sequence)];
            auto input = ad::Var<S>::constant(data::slice_rows_copy(seq.features, w.start,
                                                                    rc.model.T));
            auto gt = window_pose(seq, w.start, rc.model.T);
            auto pred = model.forward(input);
            auto loss = metrics::loss_graph(pred, gt, skel, weights);
            // mean over the batch: scale each sample's contribution
            ad::backward(ad::scale(loss.total, 1.0 / static_cast<double>(rc.batch_size)));
            btotal += loss.values.total;
            brot += loss.values.l_rot;
            bpos += loss.values.l_pos;
            bori += loss.values.l_ori;
        }
        const double inv = 1.0 / static_cast<double>(rc.batch_size);
        btotal *= inv;
        brot *= inv;
        bpos *= inv;
        bori *= inv;
        if (!std::isfinite(btotal)) {
            throw NonFiniteError("training diverged: non-finite loss at iteration " +
                                 std::to_string(it));
        }

        ad::clip_grad_norm(model.params(), rc.grad_clip);
        adam.learning_rate = rc.lr_at(it);
        adam.step(model.params());

        acc_total += btotal;
        acc_rot += brot;
        acc_pos += bpos;
        acc_ori += bori;
        ++acc_n;
        outcome.next_iteration = it + 1;

        const bool at_log = (it + 1) % rc.log_interval == 0 || it + 1 == rc.max_iterations;
        if (at_log) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            TrainingLogEntry e{it + 1, acc_total / acc_n, acc_rot / acc_n, acc_pos / acc_n,
                               acc_ori / acc_n, elapsed};
            outcome.log.append(e);
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "iter %6lld  loss %.6f  rot %.6f  pos %.6f  ori %.6f  lr %.2e  "
                          "%.1fs\n",
                          static_cast<long long>(e.iteration), e.total, e.l_rot, e.l_pos,
                          e.l_ori, rc.lr_at(it), elapsed);
            out << buf << std::flush;
            acc_total = acc_rot = acc_pos = acc_ori = 0;
            acc_n = 0;
            if (stop_check && stop_check(it + 1)) break;
        }
        if (rc.checkpoint_interval > 0 && (it + 1) % rc.checkpoint_interval == 0 &&
            !rc.checkpoint_path.empty()) {
            net::CheckpointMeta meta;
            meta.iteration = it + 1;
            net::save_checkpoint(rc.checkpoint_path, model, meta, &adam);
        }
    }
    return outcome;
}

/// Whole-sequence prediction by tiling fixed-length windows; the final window
/// is re-aligned to the sequence end and overwrites the overlap. The predicted
/// pose carries the ground-truth root trajectory.
template <typename S>
body::PoseSequence<S> predict_sequence(net::PoseNetwork<S>& model,
                                       const PreparedSequence<S>& seq) {
    const int64_t T = model.config().T;
    const int64_t F = seq.frames;
    if (F < T) {
        throw std::invalid_argument("predict: sequence has " + std::to_string(F) +
                                    " frames, shorter than the model window " +
                                    std::to_string(T));
    }
    body::PoseSequence<S> out;
    out.rotations6d = Tensor<S>({F, body::kNumJoints, 6});
    out.root_translation = seq.translation;

    std::vector<int64_t> starts;
    for (int64_t s = 0; s + T <= F; s += T) starts.push_back(s);
    if (starts.back() + T < F) starts.push_back(F - T);
    for (int64_t s : starts) {
        auto input = ad::Var<S>::constant(data::slice_rows_copy(seq.features, s, T));
        ad::NoGradGuard<S> guard;
        auto pred = model.forward(input);
        std::copy(pred.value().data.begin(), pred.value().data.end(),
                  out.rotations6d.ptr() + s * body::kNumJoints * 6);
    }
    return out;
}

}  // namespace ssdpose::train
