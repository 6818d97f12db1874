#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdpose/autodiff.hpp"
#include "ssdpose/io.hpp"
#include "ssdpose/tensor.hpp"

// The pose estimation network: a linear base feature extractor, a stack of
// state-space attention encoder blocks (each a pose state space block followed
// by an attention module), and a frequency-aware decoder emitting per-frame
// 22-joint 6D rotations.

namespace ssdpose::net {

struct ModelConfig {
    int64_t T = 96;          // window length, frames
    int64_t C_in = 54;       // tracker feature width
    int64_t E = 256;         // latent width
    int64_t I = 4;           // encoder blocks
    int64_t heads = 8;       // attention heads
    int64_t ffn_hidden = 0;  // 0 -> 4E
    int64_t N_state = 256;   // SSD state dimension
    int64_t conv_k = 4;      // PSSB causal conv width
    int64_t S_out = 132;     // 22 joints x 6
    int64_t ssd_chunk = 32;  // chunk size used by the training/inference path

    int64_t e_inner() const { return 2 * E; }
    int64_t ffn() const { return ffn_hidden > 0 ? ffn_hidden : 4 * E; }

    void validate() const {
        if (I < 1) throw std::invalid_argument("config: need at least one encoder block");
        if (E < 1 || heads < 1 || E % heads != 0) {
            throw std::invalid_argument("config: E must be a positive multiple of heads");
        }
        if (C_in != 54) throw std::invalid_argument("config: input width must be 54");
        if (S_out != 132) throw std::invalid_argument("config: output width must be 132");
        if (T < 1 || N_state < 1 || conv_k < 1) {
            throw std::invalid_argument("config: T, N_state, conv_k must be positive");
        }
    }

    std::string to_text() const {
        std::ostringstream s;
        s << "T=" << T << "\nC_in=" << C_in << "\nE=" << E << "\nI=" << I
          << "\nheads=" << heads << "\nffn_hidden=" << ffn_hidden << "\nN_state=" << N_state
          << "\nconv_k=" << conv_k << "\nS_out=" << S_out << "\nssd_chunk=" << ssd_chunk
          << "\n";
        return s.str();
    }

    static ModelConfig from_text(const std::string& text) {
        ModelConfig c;
        std::istringstream in(text);
        std::string line;
        std::map<std::string, int64_t*> fields = {
            {"T", &c.T},           {"C_in", &c.C_in},       {"E", &c.E},
            {"I", &c.I},           {"heads", &c.heads},     {"ffn_hidden", &c.ffn_hidden},
            {"N_state", &c.N_state}, {"conv_k", &c.conv_k}, {"S_out", &c.S_out},
            {"ssd_chunk", &c.ssd_chunk}};
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto it = fields.find(line.substr(0, eq));
            if (it != fields.end()) *it->second = std::stoll(line.substr(eq + 1));
        }
        return c;
    }
};

template <typename S>
class PoseNetwork {
public:
    PoseNetwork(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        init_params(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ad::ParameterStore<S>& params() { return params_; }
    const ad::ParameterStore<S>& params() const { return params_; }
    int64_t count_parameters() const { return params_.total_parameters(); }

    /// V0 = n W + b
    ad::Var<S> bfe(const ad::Var<S>& n) {
        if (n.value().ndim() != 2 || n.value().shape[1] != cfg_.C_in) {
            throw std::invalid_argument("bfe: input must be {T, 54}");
        }
        return ad::linear(n, params_.at("bfe.weight"), params_.at("bfe.bias"));
    }

    ad::Var<S> pssb(const ad::Var<S>& v, int block) {
        const std::string p = prefix(block) + ".pssb.";
        const int64_t Ei = cfg_.e_inner(), N = cfg_.N_state;
        auto ln = ad::layer_norm(v, params_.at(p + "ln_in.gain"), params_.at(p + "ln_in.bias"),
                                 S(1e-5));
        auto proj = ad::linear(ln, params_.at(p + "in_proj.weight"),
                               params_.at(p + "in_proj.bias"));
        auto stream = ad::slice_cols(proj, 0, Ei + 2 * N);
        auto delta = ad::slice_cols(proj, Ei + 2 * N, Ei + 2 * N + 1);
        auto cs = ad::silu(ad::dwconv_causal(stream, params_.at(p + "conv.weight"),
                                             params_.at(p + "conv.bias")));
        auto y1 = ad::slice_cols(cs, 0, Ei);
        auto Bm = ad::slice_cols(cs, Ei, Ei + N);
        auto Cm = ad::slice_cols(cs, Ei + N, Ei + 2 * N);

        auto ssm_in = ad::add(y1, ad::linear(ln, params_.at(p + "add_proj.weight"),
                                             params_.at(p + "add_proj.bias")));
        // A_t = exp(-softplus(a) * softplus(delta_t)), in (0,1)
        auto rate = ad::softplus(params_.at(p + "a_log"));
        auto decay = ad::exp(ad::neg(ad::mul_scalar_param(ad::softplus(delta), rate)));
        auto a_seq = ad::reshape(decay, {v.value().shape[0]});

        auto y2 = ad::ssd_scan(a_seq, Bm, Cm, ssm_in, cfg_.ssd_chunk);
        auto y3 = ad::silu(ad::linear(ln, params_.at(p + "gate_proj.weight"),
                                      params_.at(p + "gate_proj.bias")));
        auto gated = ad::layer_norm(ad::hadamard(y2, y3), params_.at(p + "ln_out.gain"),
                                    params_.at(p + "ln_out.bias"), S(1e-5));
        auto out = ad::linear(gated, params_.at(p + "out_proj.weight"),
                              params_.at(p + "out_proj.bias"));
        return ad::add(out, v);
    }

    ad::Var<S> attention_module(const ad::Var<S>& y, int block) {
        const std::string p = prefix(block);
        auto attn_in = ad::layer_norm(y, params_.at(p + ".attn.ln.gain"),
                                      params_.at(p + ".attn.ln.bias"), S(1e-5));
        auto att = ad::multi_head_attention(
            attn_in, params_.at(p + ".attn.wq.weight"), params_.at(p + ".attn.wq.bias"),
            params_.at(p + ".attn.wk.weight"), params_.at(p + ".attn.wk.bias"),
            params_.at(p + ".attn.wv.weight"), params_.at(p + ".attn.wv.bias"),
            params_.at(p + ".attn.wo.weight"), params_.at(p + ".attn.wo.bias"), cfg_.heads);
        auto x1 = ad::add(y, att);
        auto ffn_in = ad::layer_norm(x1, params_.at(p + ".ffn.ln.gain"),
                                     params_.at(p + ".ffn.ln.bias"), S(1e-5));
        auto h = ad::silu(ad::linear(ffn_in, params_.at(p + ".ffn.fc1.weight"),
                                     params_.at(p + ".ffn.fc1.bias")));
        auto h2 = ad::linear(h, params_.at(p + ".ffn.fc2.weight"),
                             params_.at(p + ".ffn.fc2.bias"));
        return ad::add(x1, h2);
    }

    /// f1 = X; f2 = SiLU(conv1x1(X)) .* X; f3 = SiLU(conv1x5(X)) + X; concat
    ad::Var<S> fafe(const ad::Var<S>& xm) {
        auto f2 = ad::hadamard(
            ad::silu(ad::conv1d_time(xm, params_.at("fad.fafe.conv1.weight"), ad::Var<S>(),
                                     ad::ConvPad::kSame)),
            xm);
        auto f3 = ad::add(
            ad::silu(ad::conv1d_time(xm, params_.at("fad.fafe.conv5.weight"), ad::Var<S>(),
                                     ad::ConvPad::kSame)),
            xm);
        return ad::concat_cols<S>({xm, f2, f3});
    }

    ad::Var<S> fad(const ad::Var<S>& vI) {
        auto xm = ad::layer_norm(vI, params_.at("fad.ln_in.gain"),
                                 params_.at("fad.ln_in.bias"), S(1e-5));
        auto f = fafe(xm);
        auto fn = ad::layer_norm(f, params_.at("fad.ln_out.gain"),
                                 params_.at("fad.ln_out.bias"), S(1e-5));
        return ad::linear(fn, params_.at("fad.out.weight"), params_.at("fad.out.bias"));
    }

    /// input {T, 54} -> 6D rotations {T, 132}. Frame order is injected with a
    /// learned positional embedding; attention alone is permutation-equivariant.
    ad::Var<S> forward(const ad::Var<S>& n) {
        auto v = ad::add(bfe(n), params_.at("pos_embedding"));
        for (int i = 0; i < cfg_.I; ++i) {
            v = attention_module(pssb(v, i), i);
        }
        return fad(v);
    }

    Tensor<S> infer(const Tensor<S>& input) {
        ad::NoGradGuard<S> guard;
        return forward(ad::Var<S>::constant(input)).value();
    }

private:
    static std::string prefix(int block) { return "ssae" + std::to_string(block); }

    ad::Var<S> add_linear(Rng& rng, const std::string& name, int64_t in, int64_t out,
                          bool bias = true) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Tensor<S> w({in, out});
        rng.fill_uniform(w, -bound, bound);
        auto v = params_.add(name + ".weight", std::move(w));
        if (bias) {
            Tensor<S> b({out});
            rng.fill_uniform(b, -bound, bound);
            params_.add(name + ".bias", std::move(b));
        }
        return v;
    }

    void add_layer_norm(const std::string& name, int64_t width) {
        params_.add(name + ".gain", Tensor<S>({width}, S(1)));
        params_.add(name + ".bias", Tensor<S>({width}, S(0)));
    }

    void init_params(Rng& rng) {
        const int64_t E = cfg_.E, Ei = cfg_.e_inner(), N = cfg_.N_state, k = cfg_.conv_k;
        add_linear(rng, "bfe", cfg_.C_in, E);
        Tensor<S> pos({cfg_.T, E});
        rng.fill_uniform(pos, -0.02, 0.02);
        params_.add("pos_embedding", std::move(pos));

        for (int i = 0; i < cfg_.I; ++i) {
            const std::string p = prefix(i) + ".pssb.";
            add_layer_norm(p + "ln_in", E);
            add_linear(rng, p + "in_proj", E, Ei + 2 * N + 1);
            {
                // steer the dt channel toward slow decay at init
                Tensor<S>& b = params_.at(p + "in_proj.bias").mutable_value();
                b[Ei + 2 * N] = S(-2);
            }
            const double cb = 1.0 / std::sqrt(static_cast<double>(k));
            Tensor<S> cw({k, Ei + 2 * N});
            rng.fill_uniform(cw, -cb, cb);
            params_.add(p + "conv.weight", std::move(cw));
            Tensor<S> cbias({Ei + 2 * N});
            rng.fill_uniform(cbias, -cb, cb);
            params_.add(p + "conv.bias", std::move(cbias));
            params_.add(p + "a_log",
                        Tensor<S>::scalar(static_cast<S>(std::log(std::exp(0.5) - 1.0))));
            add_linear(rng, p + "add_proj", E, Ei);
            add_linear(rng, p + "gate_proj", E, Ei);
            add_layer_norm(p + "ln_out", Ei);
            add_linear(rng, p + "out_proj", Ei, E);

            const std::string a = prefix(i);
            add_layer_norm(a + ".attn.ln", E);
            add_linear(rng, a + ".attn.wq", E, E);
            add_linear(rng, a + ".attn.wk", E, E);
            add_linear(rng, a + ".attn.wv", E, E);
            add_linear(rng, a + ".attn.wo", E, E);
            add_layer_norm(a + ".ffn.ln", E);
            add_linear(rng, a + ".ffn.fc1", E, cfg_.ffn());
            add_linear(rng, a + ".ffn.fc2", cfg_.ffn(), E);
        }

        add_layer_norm("fad.ln_in", E);
        {
            const double b1 = 1.0 / std::sqrt(static_cast<double>(E));
            Tensor<S> c1({1, E, E});
            rng.fill_uniform(c1, -b1, b1);
            params_.add("fad.fafe.conv1.weight", std::move(c1));
            const double b5 = 1.0 / std::sqrt(static_cast<double>(5 * E));
            Tensor<S> c5({5, E, E});
            rng.fill_uniform(c5, -b5, b5);
            params_.add("fad.fafe.conv5.weight", std::move(c5));
        }
        add_layer_norm("fad.ln_out", 3 * E);
        {
            // small final weights and identity-rotation bias: the decoder starts
            // out emitting near-rest poses, which keeps the 6D decode and FK
            // well-conditioned from the first iteration
            Tensor<S> w({3 * E, cfg_.S_out});
            rng.fill_uniform(w, -0.01, 0.01);
            params_.add("fad.out.weight", std::move(w));
            Tensor<S> b({cfg_.S_out});
            for (int64_t j = 0; j < cfg_.S_out / 6; ++j) {
                b[j * 6 + 0] = S(1);
                b[j * 6 + 4] = S(1);
            }
            params_.add("fad.out.bias", std::move(b));
        }
    }

    ModelConfig cfg_;
    ad::ParameterStore<S> params_;
};

/// Per-module breakdown of the trainable parameter count, keyed by the
/// top-level name component.
template <typename S>
std::vector<std::pair<std::string, int64_t>> parameter_breakdown(
    const ad::ParameterStore<S>& params) {
    std::vector<std::pair<std::string, int64_t>> out;
    auto bucket = [&](const std::string& key) -> int64_t& {
        for (auto& [k, v] : out) {
            if (k == key) return v;
        }
        out.emplace_back(key, 0);
        return out.back().second;
    };
    for (const auto& [name, v] : params) {
        const auto dot = name.find('.');
        bucket(dot == std::string::npos ? name : name.substr(0, dot)) += v.value().numel();
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint format: 'SSDC' | version | config header text | named fp32 blobs.
// Optimizer moments ride along as 'adam.m.<name>' / 'adam.v.<name>' blobs so
// training can resume exactly.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    int64_t iteration = 0;
    int64_t adam_step = 0;
    bool has_adam = false;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'D', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const PoseNetwork<S>& model,
                     const CheckpointMeta& meta, const ad::AdamState<S>* adam = nullptr) {
    io::Writer w(path);
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    std::string header = model.config().to_text();
    header += "iteration=" + std::to_string(meta.iteration) + "\n";
    header += "adam_step=" + std::to_string(adam ? adam->step_count : meta.adam_step) + "\n";
    header += std::string("has_adam=") + (adam ? "1" : "0") + "\n";
    w.str(header);

    const auto& params = model.params();
    const uint32_t nparams = static_cast<uint32_t>(params.size());
    w.u32(adam ? nparams * 3 : nparams);
    auto write_blob = [&](const std::string& name, const Tensor<S>& t) {
        w.str(name);
        w.u32(static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) w.u32(static_cast<uint32_t>(t.shape[i]));
        for (int64_t i = 0; i < t.numel(); ++i) w.f32(static_cast<float>(t[i]));
    };
    for (const auto& [name, v] : params) write_blob(name, v.value());
    if (adam) {
        size_t i = 0;
        for (const auto& [name, v] : params) {
            write_blob("adam.m." + name, adam->m[i]);
            write_blob("adam.v." + name, adam->v[i]);
            ++i;
        }
    }
}

template <typename S>
struct LoadedCheckpoint {
    ModelConfig config;
    CheckpointMeta meta;
    std::vector<std::pair<std::string, Tensor<S>>> blobs;
};

template <typename S>
LoadedCheckpoint<S> read_checkpoint(const std::string& path) {
    io::Reader r(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw io::FileError(io::FileError::Kind::kBadVersion,
                            "checkpoint: unsupported version " + std::to_string(version));
    }
    LoadedCheckpoint<S> out;
    const std::string header = r.str();
    out.config = ModelConfig::from_text(header);
    {
        std::istringstream in(header);
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "iteration") out.meta.iteration = std::stoll(val);
            if (key == "adam_step") out.meta.adam_step = std::stoll(val);
            if (key == "has_adam") out.meta.has_adam = val == "1";
        }
    }
    const uint32_t nblobs = r.u32();
    for (uint32_t b = 0; b < nblobs; ++b) {
        const std::string name = r.str();
        const uint32_t ndim = r.u32();
        if (ndim > 8) throw io::FileError(io::FileError::Kind::kMalformed, "blob rank out of range");
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = r.u32();
            numel *= shape[d];
        }
        Tensor<S> t(shape);
        for (int64_t i = 0; i < numel; ++i) t[i] = static_cast<S>(r.f32());
        out.blobs.emplace_back(name, std::move(t));
    }
    return out;
}

/// Rebuilds a model (and optionally the optimizer state) from a checkpoint.
template <typename S>
PoseNetwork<S> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr,
                               ad::AdamState<S>* adam_out = nullptr) {
    auto loaded = read_checkpoint<S>(path);
    PoseNetwork<S> model(loaded.config, /*seed=*/0);
    size_t applied = 0;
    if (adam_out) adam_out->init(model.params());
    auto& params = model.params();
    for (auto& [name, tensor] : loaded.blobs) {
        if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
            if (!adam_out) continue;
            const bool is_m = name[5] == 'm';
            const std::string pname = name.substr(7);
            if (!params.contains(pname)) {
                throw io::FileError(io::FileError::Kind::kMalformed,
                                    "checkpoint: optimizer blob for unknown parameter " + pname);
            }
            size_t idx = 0;
            for (const auto& [n2, v2] : params) {
                if (n2 == pname) break;
                ++idx;
            }
            auto& dst = is_m ? adam_out->m[idx] : adam_out->v[idx];
            if (dst.shape != tensor.shape) {
                throw io::FileError(io::FileError::Kind::kMalformed,
                                    "checkpoint: optimizer blob shape mismatch for " + pname);
            }
            dst = std::move(tensor);
            continue;
        }
        if (!params.contains(name)) {
            throw io::FileError(io::FileError::Kind::kMalformed,
                                "checkpoint: unknown parameter blob " + name);
        }
        auto& p = params.at(name);
        if (p.value().shape != tensor.shape) {
            throw io::FileError(io::FileError::Kind::kMalformed,
                                "checkpoint: shape mismatch for " + name + " (file " +
                                    shape_str(tensor.shape) + ", model " +
                                    shape_str(p.value().shape) + ")");
        }
        p.mutable_value() = std::move(tensor);
        ++applied;
    }
    if (applied != params.size()) {
        throw io::FileError(io::FileError::Kind::kMalformed,
                            "checkpoint: missing parameter blobs");
    }
    if (meta_out) *meta_out = loaded.meta;
    if (adam_out) adam_out->step_count = loaded.meta.adam_step;
    return model;
}

}  // namespace ssdpose::net
