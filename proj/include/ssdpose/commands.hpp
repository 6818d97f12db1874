#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "ssdpose/data.hpp"
#include "ssdpose/losses.hpp"
#include "ssdpose/model.hpp"
#include "ssdpose/ssd.hpp"
#include "ssdpose/train.hpp"

// Subcommand implementations behind the CLI. They throw on failure; the CLI
// entry point maps exception classes to exit codes.

namespace ssdpose::cmd {

namespace fs = std::filesystem;

inline std::vector<std::string> list_motion_files(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw std::invalid_argument("not a data directory: " + dir);
    }
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ssdm") {
            files.push_back(e.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::invalid_argument("no .ssdm motion files in " + dir);
    return files;
}

template <typename S>
struct Dataset {
    std::vector<body::PoseSequence<S>> sequences;
    double fps = 60.0;
};

template <typename S>
Dataset<S> load_dataset(const std::string& dir) {
    Dataset<S> ds;
    bool first = true;
    for (const auto& f : list_motion_files(dir)) {
        double fps = 0;
        ds.sequences.push_back(data::read_motion<S>(f, &fps));
        if (first) {
            ds.fps = fps;
            first = false;
        } else if (fps != ds.fps) {
            throw std::invalid_argument("dataset mixes frame rates: " + f);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    data::SynthConfig synth;
    std::string out_dir = "data";
};

inline void cmd_gen_data(const GenDataArgs& args, std::ostream& out) {
    args.synth.validate();
    fs::create_directories(args.out_dir);
    for (int64_t i = 0; i < args.synth.num_sequences; ++i) {
        auto pose = data::generate_sequence<float>(args.synth, i);
        char name[64];
        std::snprintf(name, sizeof(name), "seq_%04lld.ssdm", static_cast<long long>(i));
        const std::string path = (fs::path(args.out_dir) / name).string();
        data::write_motion(path, pose, args.synth.fps);
        out << path << ": " << args.synth.frames_per_sequence << " frames\n";
    }
    out << "wrote " << args.synth.num_sequences << " sequences to " << args.out_dir << "\n";
}

// ---------------------------------------------------------------------------

template <typename S>
void cmd_train(const train::RunConfig& rc, std::ostream& out) {
    rc.validate();
    if (rc.data_dir.empty()) {
        throw std::invalid_argument("train: no data directory (use --data or a config file)");
    }
    auto ds = load_dataset<S>(rc.data_dir);
    const auto split = data::split_sequences(static_cast<int64_t>(ds.sequences.size()), rc.seed);
    auto skel = body::default_skeleton();

    std::vector<train::PreparedSequence<S>> trainset;
    for (int64_t i : split.train) {
        trainset.push_back(
            train::prepare_sequence(ds.sequences[static_cast<size_t>(i)], skel, ds.fps));
    }
    out << "dataset: " << ds.sequences.size() << " sequences (" << split.train.size()
        << " train / " << split.test.size() << " test), fps " << ds.fps << "\n";

    int64_t start_iteration = 0;
    ad::AdamState<S> adam;
    std::unique_ptr<net::PoseNetwork<S>> model;
    if (!rc.resume_path.empty()) {
        net::CheckpointMeta meta;
        model = std::make_unique<net::PoseNetwork<S>>(
            net::load_checkpoint<S>(rc.resume_path, &meta, &adam));
        start_iteration = meta.iteration;
        out << "resumed from " << rc.resume_path << " at iteration " << start_iteration
            << "\n";
    } else {
        model = std::make_unique<net::PoseNetwork<S>>(rc.model, rc.seed);
        adam.init(model->params());
    }
    out << "model parameters: " << model->count_parameters() << "\n";

    auto outcome = train::train_loop(rc, *model, adam, trainset, skel, start_iteration, out);

    net::CheckpointMeta meta;
    meta.iteration = outcome.next_iteration;
    net::save_checkpoint(rc.checkpoint_path, *model, meta, &adam);
    out << "checkpoint written to " << rc.checkpoint_path << "\n";
    if (!rc.report_path.empty()) {
        outcome.log.write_csv(rc.report_path);
        out << "training log written to " << rc.report_path << "\n";
    }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data_dir;
    uint64_t seed = 0;           // selects the same split as training
    std::string split = "test";  // train | test | all
    std::string csv_path;
    bool bypass_model = false;   // evaluate ground truth against itself
};

template <typename S>
struct EvalResult {
    std::vector<std::pair<std::string, metrics::MetricReport>> rows;  // per sequence
    metrics::MetricReport aggregate;
    double gt_jitter = 0;
};

template <typename S>
EvalResult<S> run_eval(const EvalArgs& args) {
    auto ds = load_dataset<S>(args.data_dir);
    const int64_t n = static_cast<int64_t>(ds.sequences.size());
    const auto split = data::split_sequences(n, args.seed);
    std::vector<int64_t> pick;
    if (args.split == "train") pick = split.train;
    else if (args.split == "test") pick = split.test;
    else if (args.split == "all") {
        pick.resize(static_cast<size_t>(n));
        std::iota(pick.begin(), pick.end(), 0);
    } else {
        throw std::invalid_argument("eval: unknown split '" + args.split + "'");
    }
    if (pick.empty()) throw std::invalid_argument("eval: selected split is empty");

    auto skel = body::default_skeleton();
    std::unique_ptr<net::PoseNetwork<S>> model;
    if (!args.bypass_model) {
        model = std::make_unique<net::PoseNetwork<S>>(net::load_checkpoint<S>(args.checkpoint));
    }

    EvalResult<S> res;
    metrics::MetricReport sum;
    double gt_jitter_sum = 0;
    for (int64_t i : pick) {
        const auto& gt = ds.sequences[static_cast<size_t>(i)];
        metrics::MetricReport r;
        if (args.bypass_model) {
            r = metrics::compute_metrics(gt, gt, skel, ds.fps);
        } else {
            auto prepared = train::prepare_sequence(gt, skel, ds.fps);
            auto pred = train::predict_sequence(*model, prepared);
            r = metrics::compute_metrics(pred, gt, skel, ds.fps);
        }
        gt_jitter_sum += metrics::sequence_jitter(gt, skel, ds.fps);
        char label[32];
        std::snprintf(label, sizeof(label), "seq_%04lld", static_cast<long long>(i));
        res.rows.emplace_back(label, r);
        sum.mpjre += r.mpjre;
        sum.mpjpe += r.mpjpe;
        sum.mpjve += r.mpjve;
        sum.hand_pe += r.hand_pe;
        sum.upper_pe += r.upper_pe;
        sum.lower_pe += r.lower_pe;
        sum.root_pe += r.root_pe;
        sum.jitter += r.jitter;
    }
    const double inv = 1.0 / static_cast<double>(res.rows.size());
    res.aggregate = {sum.mpjre * inv,   sum.mpjpe * inv,   sum.mpjve * inv,
                     sum.hand_pe * inv, sum.upper_pe * inv, sum.lower_pe * inv,
                     sum.root_pe * inv, sum.jitter * inv};
    res.gt_jitter = gt_jitter_sum * inv;
    return res;
}

template <typename S>
void cmd_eval(const EvalArgs& args, std::ostream& out) {
    auto res = run_eval<S>(args);
    auto rows = res.rows;
    rows.emplace_back("aggregate", res.aggregate);
    metrics::MetricReport gt_row;
    gt_row.jitter = res.gt_jitter;
    rows.emplace_back("GT", gt_row);
    out << metrics::metric_table(rows);

    if (!args.csv_path.empty()) {
        std::ofstream f(args.csv_path);
        if (!f) throw std::runtime_error("cannot write csv: " + args.csv_path);
        f << "sequence," << metrics::metric_csv_header() << "\n";
        for (const auto& [label, r] : rows) f << label << "," << metrics::metric_csv_row(r) << "\n";
        out << "csv written to " << args.csv_path << "\n";
    }
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint;
    std::string input;
    std::string output;
    int64_t start = 0;
};

template <typename S>
void cmd_infer(const InferArgs& args, std::ostream& out) {
    auto model = net::load_checkpoint<S>(args.checkpoint);
    double fps = 0;
    auto gt = data::read_motion<S>(args.input, &fps);
    const int64_t T = model.config().T;
    if (args.start < 0 || args.start + T > gt.frames()) {
        throw std::invalid_argument("infer: window out of range");
    }
    auto skel = body::default_skeleton();
    auto prepared = train::prepare_sequence(gt, skel, fps);
    auto input = ad::Var<S>::constant(
        data::slice_rows_copy(prepared.features, args.start, T));
    ad::NoGradGuard<S> guard;
    auto pred6d = model.forward(input).value();

    body::PoseSequence<S> pose;
    pose.rotations6d = Tensor<S>({T, body::kNumJoints, 6}, std::move(pred6d.data));
    pose.root_translation = data::slice_rows_copy(prepared.translation, args.start, T);
    data::write_motion(args.output, pose, fps);
    out << "wrote " << T << " predicted frames to " << args.output << "\n";
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::vector<int64_t> T_list{128, 256, 512, 1024, 2048, 4096};
    int64_t N = 16;
    int64_t D = 16;
    int64_t chunk = 64;
    int repeats = 5;
    uint64_t seed = 0;
    std::string csv_path;
};

struct BenchRow {
    std::string path;
    int64_t T, N, D;
    int64_t wall_time_ns;
};

struct BenchSummary {
    std::vector<BenchRow> rows;
    double exp_recurrent = 0, exp_dual = 0, exp_chunked = 0;
};

/// Least-squares slope of log(time) against log(T).
inline double fit_exponent(const std::vector<std::pair<int64_t, int64_t>>& t_ns) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(t_ns.size());
    for (const auto& [T, ns] : t_ns) {
        const double x = std::log(static_cast<double>(T));
        const double y = std::log(static_cast<double>(ns));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

template <typename S>
BenchSummary run_bench_ssd(const BenchArgs& args, std::ostream& out) {
    BenchSummary summary;
    std::vector<std::pair<int64_t, int64_t>> rec, dual, chk;
    for (int64_t T : args.T_list) {
        Rng rng(args.seed ^ static_cast<uint64_t>(T));
        ssd::SsdInputs<S> in;
        in.A = Tensor<S>({T});
        rng.fill_uniform(in.A, 0.05, 1.0);
        in.B = Tensor<S>({T, args.N});
        in.C = Tensor<S>({T, args.N});
        in.x = Tensor<S>({T, args.D});
        rng.fill_normal(in.B);
        rng.fill_normal(in.C);
        rng.fill_normal(in.x);

        // guard: all three paths must agree before we time anything
        {
            auto yr = ssd::ssd_recurrent(in);
            auto yd = ssd::ssd_dual(in);
            auto yc = ssd::ssd_chunked(in, std::min<int64_t>(args.chunk, T));
            double scale = 1e-30, derr = 0, cerr = 0;
            for (int64_t i = 0; i < yr.numel(); ++i) {
                scale = std::max(scale, std::abs(static_cast<double>(yr[i])));
            }
            for (int64_t i = 0; i < yr.numel(); ++i) {
                derr = std::max(derr, std::abs(static_cast<double>(yd[i]) - yr[i]) / scale);
                cerr = std::max(cerr, std::abs(static_cast<double>(yc[i]) - yr[i]) / scale);
            }
            const double tol = sizeof(S) == 4 ? 1e-4 : 1e-9;
            if (derr > tol || cerr > tol) {
                throw std::logic_error("bench: paths disagree before timing (T=" +
                                       std::to_string(T) + ")");
            }
        }

        auto time_path = [&](auto&& fn) {
            int64_t best = INT64_MAX;
            for (int r = 0; r < args.repeats; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                auto y = fn();
                const auto t1 = std::chrono::steady_clock::now();
                (void)y;
                best = std::min(
                    best,
                    std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            }
            return best;
        };
        const int64_t t_rec = time_path([&] { return ssd::ssd_recurrent(in); });
        const int64_t t_dual = time_path([&] { return ssd::ssd_dual(in); });
        const int64_t t_chk =
            time_path([&] { return ssd::ssd_chunked(in, std::min<int64_t>(args.chunk, T)); });
        summary.rows.push_back({"recurrent", T, args.N, args.D, t_rec});
        summary.rows.push_back({"dual", T, args.N, args.D, t_dual});
        summary.rows.push_back({"chunked", T, args.N, args.D, t_chk});
        rec.emplace_back(T, t_rec);
        dual.emplace_back(T, t_dual);
        chk.emplace_back(T, t_chk);
        out << "T=" << T << " recurrent " << t_rec << " ns, dual " << t_dual
            << " ns, chunked " << t_chk << " ns\n";
    }
    summary.exp_recurrent = fit_exponent(rec);
    summary.exp_dual = fit_exponent(dual);
    summary.exp_chunked = fit_exponent(chk);
    return summary;
}

template <typename S>
void cmd_bench_ssd(const BenchArgs& args, std::ostream& out) {
    auto summary = run_bench_ssd<S>(args, out);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "fitted exponents: recurrent %.3f, dual %.3f, chunked %.3f\n",
                  summary.exp_recurrent, summary.exp_dual, summary.exp_chunked);
    out << buf;
    if (!args.csv_path.empty()) {
        std::ofstream f(args.csv_path);
        if (!f) throw std::runtime_error("cannot write csv: " + args.csv_path);
        f << "path,T,N,D,wall_time_ns\n";
        for (const auto& r : summary.rows) {
            f << r.path << "," << r.T << "," << r.N << "," << r.D << "," << r.wall_time_ns
              << "\n";
        }
        std::snprintf(buf, sizeof(buf), "# exponent recurrent %.6f\n", summary.exp_recurrent);
        f << buf;
        std::snprintf(buf, sizeof(buf), "# exponent dual %.6f\n", summary.exp_dual);
        f << buf;
        std::snprintf(buf, sizeof(buf), "# exponent chunked %.6f\n", summary.exp_chunked);
        f << buf;
        out << "csv written to " << args.csv_path << "\n";
    }
}

// ---------------------------------------------------------------------------

inline void cmd_params(const net::ModelConfig& cfg, std::ostream& out) {
    net::PoseNetwork<float> model(cfg, 0);
    out << "total parameters: " << model.count_parameters() << "\n";
    for (const auto& [module, count] : net::parameter_breakdown(model.params())) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "  %-16s %12lld\n", module.c_str(),
                      static_cast<long long>(count));
        out << buf;
    }
}

// ---------------------------------------------------------------------------

inline void cmd_dump(const std::vector<std::string>& paths, std::ostream& out) {
    for (const auto& path : paths) {
        char magic[4];
        {
            io::Reader probe(path);
            probe.bytes(magic, 4);
        }
        if (std::memcmp(magic, data::kMotionMagic, 4) == 0) {
            auto h = data::read_motion_header(path);
            out << path << ": " << data::describe_motion_header(h) << "\n";
        } else if (std::memcmp(magic, net::kCheckpointMagic, 4) == 0) {
            auto loaded = net::read_checkpoint<float>(path);
            out << path << ": checkpoint, iteration " << loaded.meta.iteration << ", "
                << loaded.blobs.size() << " blobs, config {E=" << loaded.config.E
                << ", I=" << loaded.config.I << ", T=" << loaded.config.T << "}\n";
        } else {
            throw io::FileError(io::FileError::Kind::kBadMagic,
                                path + ": not a motion or checkpoint file");
        }
    }
}

}  // namespace ssdpose::cmd
