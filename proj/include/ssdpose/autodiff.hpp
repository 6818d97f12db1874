#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssdpose/kernels.hpp"
#include "ssdpose/ssd.hpp"
#include "ssdpose/tensor.hpp"

// Reverse-mode autodiff over whole-tensor ops. Each forward op appends one
// node holding its value, its parents, and a closure that pulls the node's
// gradient into the parents' gradients. Graphs are built per forward pass and
// dropped afterwards; parameters are long-lived leaf nodes.

namespace ssdpose::ad {

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backward_fn;
    const char* op = "leaf";

    Tensor<S>& g() {
        if (grad.data.empty()) grad = Tensor<S>(value.shape);
        return grad;
    }
};

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
inline thread_local bool grad_enabled_v = true;

/// Scoped "no graph" switch for inference-only forwards.
template <typename S>
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled_v<S>) { grad_enabled_v<S> = false; }
    ~NoGradGuard() { grad_enabled_v<S> = prev; }
};

template <typename S>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<S> n) : n_(std::move(n)) {}

    static Var constant(Tensor<S> v) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(v);
        return Var(n);
    }

    static Var param(Tensor<S> v) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(v);
        n->requires_grad = true;
        return Var(n);
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor<S>& value() const { return n_->value; }
    Tensor<S>& mutable_value() { return n_->value; }
    Tensor<S>& grad() { return n_->g(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    NodePtr<S> node() const { return n_; }

private:
    NodePtr<S> n_;
};

namespace detail {

template <typename S>
Var<S> make_node(Tensor<S> value, const char* op, std::vector<NodePtr<S>> parents,
                 std::function<void(Node<S>&)> backward) {
    check_finite(value, op);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->op = op;
    bool req = false;
    if (grad_enabled_v<S>) {
        for (const auto& p : parents) req = req || (p && p->requires_grad);
    }
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return Var<S>(n);
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
    if (a.value().shape != b.value().shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.value().shape) + " vs " +
                                    shape_str(b.value().shape));
    }
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar loss into every reachable
/// parameter's grad.
template <typename S>
void backward(const Var<S>& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (!loss.requires_grad()) return;

    // iterative post-order DFS
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->g()[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward_fn && !n->grad.data.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<S> out(a.value().shape);
    kern::add(a.value().ptr(), b.value().ptr(), out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "add", {a.node(), b.node()},
                                [](Node<S>& n) {
                                    const int64_t m = n.value.numel();
                                    for (int i = 0; i < 2; ++i) {
                                        if (n.parents[i]->requires_grad) {
                                            kern::axpy(S(1), n.grad.ptr(),
                                                       n.parents[i]->g().ptr(), m);
                                        }
                                    }
                                });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<S> out(a.value().shape);
    kern::sub(a.value().ptr(), b.value().ptr(), out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "sub", {a.node(), b.node()},
                                [](Node<S>& n) {
                                    const int64_t m = n.value.numel();
                                    if (n.parents[0]->requires_grad)
                                        kern::axpy(S(1), n.grad.ptr(), n.parents[0]->g().ptr(), m);
                                    if (n.parents[1]->requires_grad)
                                        kern::axpy(S(-1), n.grad.ptr(), n.parents[1]->g().ptr(), m);
                                });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
    detail::require_same_shape(a, b, "hadamard");
    Tensor<S> out(a.value().shape);
    kern::hadamard(a.value().ptr(), b.value().ptr(), out.ptr(), out.numel());
    return detail::make_node<S>(
        std::move(out), "hadamard", {a.node(), b.node()}, [](Node<S>& n) {
            const int64_t m = n.value.numel();
            const S* g = n.grad.ptr();
            if (n.parents[0]->requires_grad) {
                S* da = n.parents[0]->g().ptr();
                const S* bv = n.parents[1]->value.ptr();
                for (int64_t i = 0; i < m; ++i) da[i] += g[i] * bv[i];
            }
            if (n.parents[1]->requires_grad) {
                S* db = n.parents[1]->g().ptr();
                const S* av = n.parents[0]->value.ptr();
                for (int64_t i = 0; i < m; ++i) db[i] += g[i] * av[i];
            }
        });
}

template <typename S>
Var<S> scale(const Var<S>& a, double c) {
    Tensor<S> out(a.value().shape);
    kern::scale(a.value().ptr(), static_cast<S>(c), out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "scale", {a.node()}, [c](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            kern::axpy(static_cast<S>(c), n.grad.ptr(), n.parents[0]->g().ptr(),
                       n.value.numel());
        }
    });
}

/// y = s * x with a trainable 1-element scale s.
template <typename S>
Var<S> mul_scalar_param(const Var<S>& x, const Var<S>& s) {
    if (s.value().numel() != 1) throw std::invalid_argument("mul_scalar_param: s must be scalar");
    Tensor<S> out(x.value().shape);
    kern::scale(x.value().ptr(), s.value()[0], out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "mul_scalar_param", {x.node(), s.node()},
                                [](Node<S>& n) {
                                    const int64_t m = n.value.numel();
                                    const S* g = n.grad.ptr();
                                    if (n.parents[0]->requires_grad) {
                                        kern::axpy(n.parents[1]->value[0], g,
                                                   n.parents[0]->g().ptr(), m);
                                    }
                                    if (n.parents[1]->requires_grad) {
                                        const S* xv = n.parents[0]->value.ptr();
                                        S acc = S(0);
                                        for (int64_t i = 0; i < m; ++i) acc += g[i] * xv[i];
                                        n.parents[1]->g()[0] += acc;
                                    }
                                });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) +
                                    " x " + shape_str(bv.shape));
    }
    const int64_t M = av.shape[0], K = av.shape[1], N = bv.shape[1];
    Tensor<S> out({M, N});
    kern::matmul(av.ptr(), bv.ptr(), out.ptr(), M, K, N);
    return detail::make_node<S>(
        std::move(out), "matmul", {a.node(), b.node()}, [M, K, N](Node<S>& n) {
            const S* g = n.grad.ptr();
            if (n.parents[0]->requires_grad) {
                kern::matmul_a_bt(g, n.parents[1]->value.ptr(), n.parents[0]->g().ptr(),
                                  M, N, K, /*accumulate=*/true);
            }
            if (n.parents[1]->requires_grad) {
                kern::matmul_at_b(n.parents[0]->value.ptr(), g, n.parents[1]->g().ptr(),
                                  M, K, N, /*accumulate=*/true);
            }
        });
}

/// y = x W + b, x: RxIn, W: InxOut, b: Out (optional, pass undefined Var)
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& W, const Var<S>& b) {
    const auto& xv = x.value();
    const auto& wv = W.value();
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.shape[1] != wv.shape[0]) {
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(xv.shape) +
                                    " x " + shape_str(wv.shape));
    }
    const int64_t R = xv.shape[0], In = xv.shape[1], Out = wv.shape[1];
    Tensor<S> out({R, Out});
    kern::matmul(xv.ptr(), wv.ptr(), out.ptr(), R, In, Out);
    if (b.defined()) {
        if (b.value().numel() != Out) throw std::invalid_argument("linear: bias size mismatch");
        const S* bp = b.value().ptr();
        S* op = out.ptr();
        for (int64_t r = 0; r < R; ++r) {
            for (int64_t o = 0; o < Out; ++o) op[r * Out + o] += bp[o];
        }
    }
    std::vector<NodePtr<S>> parents = {x.node(), W.node()};
    if (b.defined()) parents.push_back(b.node());
    return detail::make_node<S>(
        std::move(out), "linear", std::move(parents), [R, In, Out](Node<S>& n) {
            const S* g = n.grad.ptr();
            if (n.parents[0]->requires_grad) {
                kern::matmul_a_bt(g, n.parents[1]->value.ptr(), n.parents[0]->g().ptr(),
                                  R, Out, In, true);
            }
            if (n.parents[1]->requires_grad) {
                kern::matmul_at_b(n.parents[0]->value.ptr(), g, n.parents[1]->g().ptr(),
                                  R, In, Out, true);
            }
            if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
                S* db = n.parents[2]->g().ptr();
                for (int64_t r = 0; r < R; ++r) {
                    for (int64_t o = 0; o < Out; ++o) db[o] += g[r * Out + o];
                }
            }
        });
}

template <typename S>
Var<S> silu(const Var<S>& x) {
    Tensor<S> out(x.value().shape);
    kern::silu(x.value().ptr(), out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "silu", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            kern::silu_backward(n.parents[0]->value.ptr(), n.grad.ptr(),
                                n.parents[0]->g().ptr(), n.value.numel());
        }
    });
}

template <typename S>
Var<S> softplus(const Var<S>& x) {
    Tensor<S> out(x.value().shape);
    kern::softplus_fwd(x.value().ptr(), out.ptr(), out.numel());
    return detail::make_node<S>(std::move(out), "softplus", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            kern::softplus_backward(n.parents[0]->value.ptr(), n.grad.ptr(),
                                    n.parents[0]->g().ptr(), n.value.numel());
        }
    });
}

template <typename S>
Var<S> exp(const Var<S>& x) {
    Tensor<S> out(x.value().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x.value()[i]);
    return detail::make_node<S>(std::move(out), "exp", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            S* dx = n.parents[0]->g().ptr();
            const S* g = n.grad.ptr();
            const S* y = n.value.ptr();
            for (int64_t i = 0; i < n.value.numel(); ++i) dx[i] += g[i] * y[i];
        }
    });
}

template <typename S>
Var<S> neg(const Var<S>& x) {
    return scale(x, -1.0);
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps) {
    const auto& xv = x.value();
    if (xv.ndim() != 2) throw std::invalid_argument("layer_norm: expects a 2-D input");
    const int64_t R = xv.shape[0], E = xv.shape[1];
    if (E < 1) throw std::invalid_argument("layer_norm: feature dim must be >= 1");
    if (gain.value().numel() != E || bias.value().numel() != E) {
        throw std::invalid_argument("layer_norm: gain/bias size mismatch");
    }
    Tensor<S> out({R, E});
    auto mean = std::make_shared<Tensor<S>>(std::vector<int64_t>{R});
    auto rstd = std::make_shared<Tensor<S>>(std::vector<int64_t>{R});
    kern::layer_norm(xv.ptr(), gain.value().ptr(), bias.value().ptr(), out.ptr(),
                     mean->ptr(), rstd->ptr(), R, E, eps);
    return detail::make_node<S>(
        std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
        [R, E, mean, rstd](Node<S>& n) {
            Tensor<S> dgain({E}), dbias({E}), dx({R, E});
            kern::layer_norm_backward(n.parents[0]->value.ptr(), n.parents[1]->value.ptr(),
                                      mean->ptr(), rstd->ptr(), n.grad.ptr(), dx.ptr(),
                                      dgain.ptr(), dbias.ptr(), R, E);
            if (n.parents[0]->requires_grad)
                kern::axpy(S(1), dx.ptr(), n.parents[0]->g().ptr(), R * E);
            if (n.parents[1]->requires_grad)
                kern::axpy(S(1), dgain.ptr(), n.parents[1]->g().ptr(), E);
            if (n.parents[2]->requires_grad)
                kern::axpy(S(1), dbias.ptr(), n.parents[2]->g().ptr(), E);
        });
}

enum class ConvPad { kCausal, kSame };

/// Full 1-D convolution over time. x: TxEin, w: k x Ein x Eout, bias optional.
template <typename S>
Var<S> conv1d_time(const Var<S>& x, const Var<S>& w, const Var<S>& bias, ConvPad pad) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.ndim() != 2 || wv.ndim() != 3 || wv.shape[1] != xv.shape[1]) {
        throw std::invalid_argument("conv1d_time: incompatible shapes");
    }
    const int64_t T = xv.shape[0], Ein = xv.shape[1], k = wv.shape[0], Eout = wv.shape[2];
    if (pad == ConvPad::kSame && k % 2 == 0) {
        throw std::invalid_argument("conv1d_time: same-padding requires odd kernel width");
    }
    const int64_t pad_left = pad == ConvPad::kCausal ? k - 1 : (k - 1) / 2;
    Tensor<S> out({T, Eout});
    kern::conv1d(xv.ptr(), wv.ptr(), bias.defined() ? bias.value().ptr() : nullptr,
                 out.ptr(), T, Ein, Eout, k, pad_left);
    std::vector<NodePtr<S>> parents = {x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    return detail::make_node<S>(
        std::move(out), "conv1d_time", std::move(parents),
        [T, Ein, Eout, k, pad_left](Node<S>& n) {
            Tensor<S> dx({T, Ein}), dw({k, Ein, Eout});
            Tensor<S> dbias;
            const bool has_bias = n.parents.size() > 2;
            if (has_bias) dbias = Tensor<S>({Eout});
            kern::conv1d_backward(n.parents[0]->value.ptr(), n.parents[1]->value.ptr(),
                                  n.grad.ptr(), dx.ptr(), dw.ptr(),
                                  has_bias ? dbias.ptr() : nullptr, T, Ein, Eout, k,
                                  pad_left);
            if (n.parents[0]->requires_grad)
                kern::axpy(S(1), dx.ptr(), n.parents[0]->g().ptr(), T * Ein);
            if (n.parents[1]->requires_grad)
                kern::axpy(S(1), dw.ptr(), n.parents[1]->g().ptr(), k * Ein * Eout);
            if (has_bias && n.parents[2]->requires_grad)
                kern::axpy(S(1), dbias.ptr(), n.parents[2]->g().ptr(), Eout);
        });
}

/// Depthwise causal conv. x: TxE, w: kxE.
template <typename S>
Var<S> dwconv_causal(const Var<S>& x, const Var<S>& w, const Var<S>& bias) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.ndim() != 2 || wv.ndim() != 2 || wv.shape[1] != xv.shape[1]) {
        throw std::invalid_argument("dwconv_causal: incompatible shapes");
    }
    const int64_t T = xv.shape[0], E = xv.shape[1], k = wv.shape[0];
    Tensor<S> out({T, E});
    kern::dwconv1d_causal(xv.ptr(), wv.ptr(), bias.defined() ? bias.value().ptr() : nullptr,
                          out.ptr(), T, E, k);
    std::vector<NodePtr<S>> parents = {x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    return detail::make_node<S>(
        std::move(out), "dwconv_causal", std::move(parents), [T, E, k](Node<S>& n) {
            Tensor<S> dx({T, E}), dw({k, E});
            Tensor<S> dbias;
            const bool has_bias = n.parents.size() > 2;
            if (has_bias) dbias = Tensor<S>({E});
            kern::dwconv1d_causal_backward(n.parents[0]->value.ptr(),
                                           n.parents[1]->value.ptr(), n.grad.ptr(),
                                           dx.ptr(), dw.ptr(),
                                           has_bias ? dbias.ptr() : nullptr, T, E, k);
            if (n.parents[0]->requires_grad)
                kern::axpy(S(1), dx.ptr(), n.parents[0]->g().ptr(), T * E);
            if (n.parents[1]->requires_grad)
                kern::axpy(S(1), dw.ptr(), n.parents[1]->g().ptr(), k * E);
            if (has_bias && n.parents[2]->requires_grad)
                kern::axpy(S(1), dbias.ptr(), n.parents[2]->g().ptr(), E);
        });
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, int64_t c0, int64_t c1) {
    const auto& xv = x.value();
    if (xv.ndim() != 2 || c0 < 0 || c1 > xv.shape[1] || c0 >= c1) {
        throw std::invalid_argument("slice_cols: bad range");
    }
    const int64_t R = xv.shape[0], C = xv.shape[1], W = c1 - c0;
    Tensor<S> out({R, W});
    for (int64_t r = 0; r < R; ++r) {
        const S* src = xv.ptr() + r * C + c0;
        S* dst = out.ptr() + r * W;
        for (int64_t c = 0; c < W; ++c) dst[c] = src[c];
    }
    return detail::make_node<S>(std::move(out), "slice_cols", {x.node()},
                                [R, C, W, c0](Node<S>& n) {
                                    if (!n.parents[0]->requires_grad) return;
                                    S* dx = n.parents[0]->g().ptr();
                                    const S* g = n.grad.ptr();
                                    for (int64_t r = 0; r < R; ++r) {
                                        for (int64_t c = 0; c < W; ++c) {
                                            dx[r * C + c0 + c] += g[r * W + c];
                                        }
                                    }
                                });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t R = parts[0].value().shape[0];
    int64_t Ctot = 0;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().shape[0] != R) {
            throw std::invalid_argument("concat_cols: row mismatch");
        }
        widths.push_back(p.value().shape[1]);
        Ctot += widths.back();
    }
    Tensor<S> out({R, Ctot});
    int64_t off = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
        const auto& pv = parts[i].value();
        for (int64_t r = 0; r < R; ++r) {
            const S* src = pv.ptr() + r * widths[i];
            S* dst = out.ptr() + r * Ctot + off;
            for (int64_t c = 0; c < widths[i]; ++c) dst[c] = src[c];
        }
        off += widths[i];
    }
    std::vector<NodePtr<S>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    return detail::make_node<S>(
        std::move(out), "concat_cols", std::move(parents), [R, Ctot, widths](Node<S>& n) {
            const S* g = n.grad.ptr();
            int64_t off = 0;
            for (size_t i = 0; i < n.parents.size(); ++i) {
                const int64_t w = widths[i];
                if (n.parents[i]->requires_grad) {
                    S* dp = n.parents[i]->g().ptr();
                    for (int64_t r = 0; r < R; ++r) {
                        for (int64_t c = 0; c < w; ++c) dp[r * w + c] += g[r * Ctot + off + c];
                    }
                }
                off += w;
            }
        });
}

template <typename S>
Var<S> reshape(const Var<S>& x, std::vector<int64_t> shape) {
    Tensor<S> out(shape, x.value().data);
    return detail::make_node<S>(std::move(out), "reshape", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            kern::axpy(S(1), n.grad.ptr(), n.parents[0]->g().ptr(), n.value.numel());
        }
    });
}

/// Fused SSD sequence transformation (scalar-A). a: {T}, B,C: {T,N}, x: {T,D}.
template <typename S>
Var<S> ssd_scan(const Var<S>& a, const Var<S>& B, const Var<S>& C, const Var<S>& x,
                int64_t chunk = 32) {
    ssd::SsdInputs<S> in{a.value(), B.value(), C.value(), x.value()};
    in.validate();
    const int64_t T = in.T();
    Tensor<S> y = chunk >= T ? ssd::ssd_dual(in) : ssd::ssd_chunked(in, std::max<int64_t>(1, chunk));
    return detail::make_node<S>(
        std::move(y), "ssd_scan", {a.node(), B.node(), C.node(), x.node()},
        [](Node<S>& n) {
            ssd::SsdInputs<S> in{n.parents[0]->value, n.parents[1]->value,
                                 n.parents[2]->value, n.parents[3]->value};
            auto grads = ssd::ssd_backward(in, n.grad);
            if (n.parents[0]->requires_grad)
                kern::axpy(S(1), grads.dA.ptr(), n.parents[0]->g().ptr(), grads.dA.numel());
            if (n.parents[1]->requires_grad)
                kern::axpy(S(1), grads.dB.ptr(), n.parents[1]->g().ptr(), grads.dB.numel());
            if (n.parents[2]->requires_grad)
                kern::axpy(S(1), grads.dC.ptr(), n.parents[2]->g().ptr(), grads.dC.numel());
            if (n.parents[3]->requires_grad)
                kern::axpy(S(1), grads.dx.ptr(), n.parents[3]->g().ptr(), grads.dx.numel());
        });
}

/// Fused bidirectional multi-head self-attention with output projection.
/// x: TxE; weights are ExE, biases E. Softmax probabilities are kept for the
/// backward pass.
template <typename S>
Var<S> multi_head_attention(const Var<S>& x, const Var<S>& wq, const Var<S>& bq,
                            const Var<S>& wk, const Var<S>& bk, const Var<S>& wv,
                            const Var<S>& bv, const Var<S>& wo, const Var<S>& bo,
                            int64_t heads) {
    const auto& xv = x.value();
    const int64_t T = xv.shape[0], E = xv.shape[1];
    if (E % heads != 0) throw std::invalid_argument("attention: E not divisible by heads");
    const int64_t dh = E / heads;
    const S scale_f = S(1) / std::sqrt(static_cast<S>(dh));

    auto q = std::make_shared<Tensor<S>>(std::vector<int64_t>{T, E});
    auto k = std::make_shared<Tensor<S>>(std::vector<int64_t>{T, E});
    auto v = std::make_shared<Tensor<S>>(std::vector<int64_t>{T, E});
    auto probs = std::make_shared<Tensor<S>>(std::vector<int64_t>{heads, T, T});
    auto ctx = std::make_shared<Tensor<S>>(std::vector<int64_t>{T, E});

    auto project = [&](const Var<S>& w, const Var<S>& b, Tensor<S>& dst) {
        kern::matmul(xv.ptr(), w.value().ptr(), dst.ptr(), T, E, E);
        const S* bp = b.value().ptr();
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t e = 0; e < E; ++e) dst.ptr()[t * E + e] += bp[e];
        }
    };
    project(wq, bq, *q);
    project(wk, bk, *k);
    project(wv, bv, *v);

    // per head: probs_h = softmax(Q_h K_h^T / sqrt(dh)); ctx_h = probs_h V_h
    std::vector<S> scores(static_cast<size_t>(T * T));
    for (int64_t h = 0; h < heads; ++h) {
        const int64_t off = h * dh;
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
        for (int64_t i = 0; i < T; ++i) {
            const S* qi = q->ptr() + i * E + off;
            for (int64_t j = 0; j < T; ++j) {
                const S* kj = k->ptr() + j * E + off;
                S acc = S(0);
                for (int64_t d = 0; d < dh; ++d) acc += qi[d] * kj[d];
                scores[static_cast<size_t>(i * T + j)] = acc * scale_f;
            }
        }
        S* ph = probs->ptr() + h * T * T;
        kern::softmax_rows(scores.data(), ph, T, T);
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
        for (int64_t i = 0; i < T; ++i) {
            S* ci = ctx->ptr() + i * E + off;
            for (int64_t d = 0; d < dh; ++d) ci[d] = S(0);
            const S* pi = ph + i * T;
            for (int64_t j = 0; j < T; ++j) {
                const S pij = pi[j];
                const S* vj = v->ptr() + j * E + off;
                for (int64_t d = 0; d < dh; ++d) ci[d] += pij * vj[d];
            }
        }
    }

    Tensor<S> out({T, E});
    kern::matmul(ctx->ptr(), wo.value().ptr(), out.ptr(), T, E, E);
    {
        const S* bp = bo.value().ptr();
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t e = 0; e < E; ++e) out.ptr()[t * E + e] += bp[e];
        }
    }

    return detail::make_node<S>(
        std::move(out), "attention",
        {x.node(), wq.node(), bq.node(), wk.node(), bk.node(), wv.node(), bv.node(),
         wo.node(), bo.node()},
        [T, E, heads, dh, scale_f, q, k, v, probs, ctx](Node<S>& n) {
            const S* g = n.grad.ptr();
            auto& xn = *n.parents[0];
            const S* xp = xn.value.ptr();

            // output projection
            Tensor<S> dctx({T, E});
            kern::matmul_a_bt(g, n.parents[7]->value.ptr(), dctx.ptr(), T, E, E);
            if (n.parents[7]->requires_grad) {
                kern::matmul_at_b(ctx->ptr(), g, n.parents[7]->g().ptr(), T, E, E, true);
            }
            if (n.parents[8]->requires_grad) {
                S* dbo = n.parents[8]->g().ptr();
                for (int64_t t = 0; t < T; ++t)
                    for (int64_t e = 0; e < E; ++e) dbo[e] += g[t * E + e];
            }

            Tensor<S> dq({T, E}), dk({T, E}), dv({T, E});
            std::vector<S> dprob(static_cast<size_t>(T * T));
            std::vector<S> dscore(static_cast<size_t>(T * T), S(0));
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t off = h * dh;
                const S* ph = probs->ptr() + h * T * T;
                // dprobs = dctx_h V_h^T ; dV_h = probs^T dctx_h
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
                for (int64_t i = 0; i < T; ++i) {
                    const S* gi = dctx.ptr() + i * E + off;
                    for (int64_t j = 0; j < T; ++j) {
                        const S* vj = v->ptr() + j * E + off;
                        S acc = S(0);
                        for (int64_t d = 0; d < dh; ++d) acc += gi[d] * vj[d];
                        dprob[static_cast<size_t>(i * T + j)] = acc;
                    }
                }
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
                for (int64_t j = 0; j < T; ++j) {
                    S* dvj = dv.ptr() + j * E + off;
                    for (int64_t d = 0; d < dh; ++d) dvj[d] = S(0);
                    for (int64_t i = 0; i < T; ++i) {
                        const S pij = ph[i * T + j];
                        const S* gi = dctx.ptr() + i * E + off;
                        for (int64_t d = 0; d < dh; ++d) dvj[d] += pij * gi[d];
                    }
                }
                std::fill(dscore.begin(), dscore.end(), S(0));
                kern::softmax_rows_backward(ph, dprob.data(), dscore.data(), T, T);
                // dQ_h = dS K_h * scale ; dK_h = dS^T Q_h * scale
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
                for (int64_t i = 0; i < T; ++i) {
                    S* dqi = dq.ptr() + i * E + off;
                    for (int64_t d = 0; d < dh; ++d) dqi[d] = S(0);
                    const S* dsi = dscore.data() + i * T;
                    for (int64_t j = 0; j < T; ++j) {
                        const S w = dsi[j] * scale_f;
                        const S* kj = k->ptr() + j * E + off;
                        for (int64_t d = 0; d < dh; ++d) dqi[d] += w * kj[d];
                    }
                }
#pragma omp parallel for if (T * T * dh >= kern::kParGrain) schedule(static)
                for (int64_t j = 0; j < T; ++j) {
                    S* dkj = dk.ptr() + j * E + off;
                    for (int64_t d = 0; d < dh; ++d) dkj[d] = S(0);
                    for (int64_t i = 0; i < T; ++i) {
                        const S w = dscore[static_cast<size_t>(i * T + j)] * scale_f;
                        const S* qi = q->ptr() + i * E + off;
                        for (int64_t d = 0; d < dh; ++d) dkj[d] += w * qi[d];
                    }
                }
            }

            // back through the three input projections
            auto proj_backward = [&](const Tensor<S>& dproj, size_t wi, size_t bi) {
                if (n.parents[wi]->requires_grad) {
                    kern::matmul_at_b(xp, dproj.ptr(), n.parents[wi]->g().ptr(), T, E, E,
                                      true);
                }
                if (n.parents[bi]->requires_grad) {
                    S* db = n.parents[bi]->g().ptr();
                    for (int64_t t = 0; t < T; ++t)
                        for (int64_t e = 0; e < E; ++e) db[e] += dproj.ptr()[t * E + e];
                }
                if (xn.requires_grad) {
                    kern::matmul_a_bt(dproj.ptr(), n.parents[wi]->value.ptr(), xn.g().ptr(),
                                      T, E, E, true);
                }
            };
            proj_backward(dq, 1, 2);
            proj_backward(dk, 3, 4);
            proj_backward(dv, 5, 6);
        });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& x) {
    Tensor<S> out = Tensor<S>::scalar(kern::sum(x.value().ptr(), x.value().numel()));
    return detail::make_node<S>(std::move(out), "sum", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            S* dx = n.parents[0]->g().ptr();
            const S g = n.grad[0];
            for (int64_t i = 0; i < n.parents[0]->value.numel(); ++i) dx[i] += g;
        }
    });
}

template <typename S>
Var<S> sum_squares(const Var<S>& x) {
    Tensor<S> out = Tensor<S>::scalar(kern::sum_squares(x.value().ptr(), x.value().numel()));
    return detail::make_node<S>(std::move(out), "sum_squares", {x.node()}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            S* dx = n.parents[0]->g().ptr();
            const S* xv = n.parents[0]->value.ptr();
            const S g = n.grad[0];
            for (int64_t i = 0; i < n.parents[0]->value.numel(); ++i) {
                dx[i] += S(2) * g * xv[i];
            }
        }
    });
}

/// Mean of L2 norms taken over consecutive groups of `group` entries along the
/// last axis (rows x groups of them). Subgradient 0 at exactly-zero groups.
template <typename S>
Var<S> group_norm_mean(const Var<S>& x, int64_t group) {
    const auto& xv = x.value();
    const int64_t total = xv.numel();
    if (group < 1 || total % group != 0) {
        throw std::invalid_argument("group_norm_mean: group does not divide element count");
    }
    const int64_t ngroups = total / group;
    S acc = S(0);
    for (int64_t gidx = 0; gidx < ngroups; ++gidx) {
        S ss = S(0);
        const S* p = xv.ptr() + gidx * group;
        for (int64_t i = 0; i < group; ++i) ss += p[i] * p[i];
        acc += std::sqrt(ss);
    }
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(ngroups));
    return detail::make_node<S>(
        std::move(out), "group_norm_mean", {x.node()}, [group, ngroups](Node<S>& n) {
            if (!n.parents[0]->requires_grad) return;
            const S* xv = n.parents[0]->value.ptr();
            S* dx = n.parents[0]->g().ptr();
            const S g = n.grad[0] / static_cast<S>(ngroups);
            for (int64_t gidx = 0; gidx < ngroups; ++gidx) {
                const S* p = xv + gidx * group;
                S ss = S(0);
                for (int64_t i = 0; i < group; ++i) ss += p[i] * p[i];
                const S norm = std::sqrt(ss);
                if (norm <= S(0)) continue;
                S* d = dx + gidx * group;
                for (int64_t i = 0; i < group; ++i) d[i] += g * p[i] / norm;
            }
        });
}

/// total = sum_i weights[i] * scalars[i]
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& scalars, const std::vector<double>& weights) {
    if (scalars.size() != weights.size() || scalars.empty()) {
        throw std::invalid_argument("weighted_sum: size mismatch");
    }
    S acc = S(0);
    std::vector<NodePtr<S>> parents;
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].value().numel() != 1) {
            throw std::invalid_argument("weighted_sum: inputs must be scalars");
        }
        acc += static_cast<S>(weights[i]) * scalars[i].value()[0];
        parents.push_back(scalars[i].node());
    }
    return detail::make_node<S>(Tensor<S>::scalar(acc), "weighted_sum", std::move(parents),
                                [weights](Node<S>& n) {
                                    for (size_t i = 0; i < n.parents.size(); ++i) {
                                        if (n.parents[i]->requires_grad) {
                                            n.parents[i]->g()[0] +=
                                                static_cast<S>(weights[i]) * n.grad[0];
                                        }
                                    }
                                });
}

// ---------------------------------------------------------------------------
// parameters and optimizer
// ---------------------------------------------------------------------------

template <typename S>
class ParameterStore {
public:
    Var<S> add(const std::string& name, Tensor<S> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Var<S> v = Var<S>::param(std::move(init));
        index_[name] = items_.size();
        items_.emplace_back(name, v);
        return v;
    }

    Var<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return items_[it->second].second;
    }

    const Var<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return items_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    // deterministic insertion-order iteration
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    size_t size() const { return items_.size(); }
    std::pair<std::string, Var<S>>& item(size_t i) { return items_[i]; }

    int64_t total_parameters() const {
        int64_t n = 0;
        for (const auto& [name, v] : items_) n += v.value().numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, v] : items_) v.node()->g().fill(S(0));
    }

private:
    std::vector<std::pair<std::string, Var<S>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

/// Adam with decoupled weight decay.
template <typename S>
struct AdamState {
    double learning_rate = 3e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<Tensor<S>> m, v;

    void init(const ParameterStore<S>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, p] : params) {
            m.emplace_back(p.value().shape);
            v.emplace_back(p.value().shape);
        }
        step_count = 0;
    }

    void step(ParameterStore<S>& params) {
        if (m.size() != params.size()) throw std::logic_error("adam: state not initialized");
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& [name, pvar] = params.item(i);
            Tensor<S>& p = pvar.mutable_value();
            const Tensor<S>& g = pvar.grad();
            if (g.shape != p.shape) throw std::logic_error("adam: grad shape mismatch for " + name);
            S* mp = m[i].ptr();
            S* vp = v[i].ptr();
            S* pp = p.ptr();
            const S* gp = g.ptr();
            const int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                mp[j] = static_cast<S>(beta1 * mp[j] + (1.0 - beta1) * gp[j]);
                vp[j] = static_cast<S>(beta2 * vp[j] + (1.0 - beta2) * gp[j] * gp[j]);
                const double mhat = mp[j] / bc1;
                const double vhat = vp[j] / bc2;
                pp[j] -= static_cast<S>(learning_rate * (mhat / (std::sqrt(vhat) + eps) +
                                                         weight_decay * pp[j]));
            }
            check_finite(p, "adam_step");
        }
    }
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename S>
double clip_grad_norm(ParameterStore<S>& params, double max_norm) {
    double ss = 0.0;
    for (auto& [name, p] : params) {
        const Tensor<S>& g = p.grad();
        for (int64_t i = 0; i < g.numel(); ++i) ss += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(ss);
    if (norm > max_norm && norm > 0.0) {
        const S s = static_cast<S>(max_norm / norm);
        for (auto& [name, p] : params) {
            Tensor<S>& g = p.grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
        }
    }
    return norm;
}

}  // namespace ssdpose::ad
