#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>

#include "ssdpose/commands.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Command-line front end: data generation, training, evaluation, single-window
// inference, SSD benchmarking, parameter reporting, and file inspection.
// Exit codes: 0 ok, 1 user error, 2 internal error.

namespace {

using namespace ssdpose;

void apply_thread_cap() {
#ifdef _OPENMP
    if (const char* env = std::getenv("SSDP_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(std::min(n, omp_get_max_threads()));
    }
#endif
}

void add_model_flags(CLI::App* app, net::ModelConfig& m) {
    app->add_option("--T", m.T, "window length in frames");
    app->add_option("--E", m.E, "latent feature width");
    app->add_option("--I", m.I, "number of encoder blocks");
    app->add_option("--heads", m.heads, "attention heads");
    app->add_option("--ffn-hidden", m.ffn_hidden, "FFN hidden width (0 = 4E)");
    app->add_option("--N-state", m.N_state, "SSD state dimension");
    app->add_option("--conv-k", m.conv_k, "PSSB causal conv width");
    app->add_option("--ssd-chunk", m.ssd_chunk, "SSD chunk size on the training path");
}

template <typename Fn>
int dispatch_precision(const std::string& precision, Fn&& fn) {
    if (precision == "f32") return fn(float{});
    if (precision == "f64") return fn(double{});
    throw CLI::ValidationError("--precision must be f32 or f64");
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"state space duality pose estimation"};
    app.require_subcommand(1);

    // the config file, when present, seeds the defaults; explicit flags win
    std::string config_file_early;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) config_file_early = argv[i + 1];
        else if (a.rfind("--config=", 0) == 0) config_file_early = a.substr(9);
    }

    // gen-data ---------------------------------------------------------------
    cmd::GenDataArgs gen;
    auto* sc_gen = app.add_subcommand("gen-data", "generate synthetic motion files");
    sc_gen->add_option("--out", gen.out_dir, "output directory")->capture_default_str();
    sc_gen->add_option("--seed", gen.synth.seed, "generator seed");
    sc_gen->add_option("--sequences", gen.synth.num_sequences, "number of sequences");
    sc_gen->add_option("--frames", gen.synth.frames_per_sequence, "frames per sequence");
    sc_gen->add_option("--fps", gen.synth.fps, "frame rate");
    sc_gen->add_option("--harmonics", gen.synth.max_harmonics, "sinusoids per joint axis");
    sc_gen->add_option("--amplitude", gen.synth.amplitude_scale, "joint swing scale, radians");
    sc_gen->add_option("--root-speed", gen.synth.root_speed_scale, "root drift scale, m/s");

    // train -------------------------------------------------------------------
    train::RunConfig rc;
    std::string train_config_file, train_precision = "f32";
    if (!config_file_early.empty()) train::load_config_file(rc, config_file_early);
    auto* sc_train = app.add_subcommand("train", "train a model");
    sc_train->add_option("--config", train_config_file, "key=value config file");
    add_model_flags(sc_train, rc.model);
    sc_train->add_option("--data", rc.data_dir, "motion data directory");
    sc_train->add_option("--checkpoint", rc.checkpoint_path, "checkpoint path")
        ->capture_default_str();
    sc_train->add_option("--report", rc.report_path, "training log CSV path");
    sc_train->add_option("--resume", rc.resume_path, "checkpoint to resume from");
    sc_train->add_option("--batch", rc.batch_size, "batch size");
    sc_train->add_option("--iters", rc.max_iterations, "total iterations");
    sc_train->add_option("--lr", rc.lr_initial, "initial learning rate");
    sc_train->add_option("--lr-after", rc.lr_after_decay, "post-decay learning rate");
    sc_train->add_option("--decay-at", rc.decay_at_iteration, "decay iteration");
    sc_train->add_flag("--lr-ramp", rc.lr_ramp, "ramp to the final rate instead of stepping");
    sc_train->add_option("--weight-decay", rc.weight_decay, "decoupled weight decay");
    sc_train->add_option("--seed", rc.seed, "training seed");
    sc_train->add_option("--stride", rc.window_stride, "training window stride");
    sc_train->add_option("--log-interval", rc.log_interval, "iterations between log rows");
    sc_train->add_option("--checkpoint-interval", rc.checkpoint_interval,
                         "iterations between checkpoints");
    sc_train->add_option("--grad-clip", rc.grad_clip, "global gradient norm cap");
    sc_train->add_option("--precision", train_precision, "f32 or f64")->capture_default_str();

    // eval ---------------------------------------------------------------------
    cmd::EvalArgs ev;
    std::string eval_precision = "f32";
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    sc_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint path");
    sc_eval->add_option("--data", ev.data_dir, "motion data directory")->required();
    sc_eval->add_option("--seed", ev.seed, "split seed (must match training)");
    sc_eval->add_option("--split", ev.split, "train | test | all")->capture_default_str();
    sc_eval->add_option("--csv", ev.csv_path, "write metric rows to this CSV");
    sc_eval->add_flag("--bypass-model", ev.bypass_model,
                      "score the ground truth against itself");
    sc_eval->add_option("--precision", eval_precision, "f32 or f64")->capture_default_str();

    // infer ---------------------------------------------------------------------
    cmd::InferArgs inf;
    std::string infer_precision = "f32";
    auto* sc_infer = app.add_subcommand("infer", "predict one window from a motion file");
    sc_infer->add_option("--checkpoint", inf.checkpoint, "checkpoint path")->required();
    sc_infer->add_option("--input", inf.input, "input motion file")->required();
    sc_infer->add_option("--output", inf.output, "output motion file")->required();
    sc_infer->add_option("--start", inf.start, "window start frame");
    sc_infer->add_option("--precision", infer_precision, "f32 or f64")->capture_default_str();

    // bench-ssd -------------------------------------------------------------------
    cmd::BenchArgs bench;
    std::string bench_precision = "f32";
    std::string bench_T = "128,256,512,1024,2048,4096";
    auto* sc_bench = app.add_subcommand("bench-ssd", "time the SSD evaluation paths");
    sc_bench->add_option("--T", bench_T, "comma-separated sequence lengths")
        ->capture_default_str();
    sc_bench->add_option("--N", bench.N, "state dimension")->capture_default_str();
    sc_bench->add_option("--D", bench.D, "channel dimension")->capture_default_str();
    sc_bench->add_option("--chunk", bench.chunk, "chunk size")->capture_default_str();
    sc_bench->add_option("--repeats", bench.repeats, "timing repeats")->capture_default_str();
    sc_bench->add_option("--seed", bench.seed, "input seed");
    sc_bench->add_option("--csv", bench.csv_path, "write timing rows to this CSV");
    sc_bench->add_option("--precision", bench_precision, "f32 or f64")->capture_default_str();

    // params ---------------------------------------------------------------------
    net::ModelConfig params_cfg;
    auto* sc_params = app.add_subcommand("params", "report the trainable parameter count");
    add_model_flags(sc_params, params_cfg);

    // dump -----------------------------------------------------------------------
    std::vector<std::string> dump_paths;
    auto* sc_dump = app.add_subcommand("dump", "print motion/checkpoint file headers");
    sc_dump->add_option("files", dump_paths, "files to inspect")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sc_gen) {
            cmd::cmd_gen_data(gen, std::cout);
        } else if (*sc_train) {
            dispatch_precision(train_precision, [&](auto tag) {
                using S = decltype(tag);
                cmd::cmd_train<S>(rc, std::cout);
                return 0;
            });
        } else if (*sc_eval) {
            dispatch_precision(eval_precision, [&](auto tag) {
                using S = decltype(tag);
                cmd::cmd_eval<S>(ev, std::cout);
                return 0;
            });
        } else if (*sc_infer) {
            dispatch_precision(infer_precision, [&](auto tag) {
                using S = decltype(tag);
                cmd::cmd_infer<S>(inf, std::cout);
                return 0;
            });
        } else if (*sc_bench) {
            bench.T_list.clear();
            std::stringstream ss(bench_T);
            std::string tok;
            while (std::getline(ss, tok, ',')) bench.T_list.push_back(std::stoll(tok));
            if (bench.T_list.empty()) throw std::invalid_argument("bench: empty --T list");
            dispatch_precision(bench_precision, [&](auto tag) {
                using S = decltype(tag);
                cmd::cmd_bench_ssd<S>(bench, std::cout);
                return 0;
            });
        } else if (*sc_params) {
            cmd::cmd_params(params_cfg, std::cout);
        } else if (*sc_dump) {
            cmd::cmd_dump(dump_paths, std::cout);
        }
    } catch (const ssdpose::NonFiniteError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ssdpose::io::FileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
