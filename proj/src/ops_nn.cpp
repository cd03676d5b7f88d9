#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sleepyco/tensor.hpp"

#include "fastmath.hpp"

namespace sleepyco {

namespace {

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

void ensure_grad(TensorNode* n) {
    if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), 0.0);
}

void attach(const Tensor& out, const char* op, std::initializer_list<Tensor> inputs,
            std::function<void(TensorNode&)> bw) {
    TensorNode* n = out.node();
    n->is_leaf = false;
    n->op = op;
    if (!n->requires_grad) return;
    for (const Tensor& t : inputs)
        if (t.defined()) n->inputs.push_back(t.shared_node());
    n->backward_fn = std::move(bw);
}

}  // namespace

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (si.empty() || sw.size() != 2)
        throw std::invalid_argument("linear: need input [...,D_in], weight [D_in,D_out]");
    const std::size_t din = sw[0], dout = sw[1];
    if (si.back() != din)
        throw std::invalid_argument("linear: input last extent " +
                                    std::to_string(si.back()) +
                                    " != weight D_in " + std::to_string(din));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.ndim() != 1 || bias.shape()[0] != dout))
        throw std::invalid_argument("linear: bias must have shape [D_out]");
    const std::size_t rows = input.size() / din;

    Shape out_shape(si.begin(), si.end() - 1);
    out_shape.push_back(dout);
    std::vector<double> out(rows * dout, 0.0);
    {
        const double* pi = input.data().data();
        const double* pw = weight.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            double* orow = out.data() + r * dout;
            if (has_bias) std::memcpy(orow, bias.data().data(), dout * sizeof(double));
            const double* irow = pi + r * din;
            for (std::size_t k = 0; k < din; ++k) {
                const double a = irow[k];
                const double* wrow = pw + k * dout;
                for (std::size_t j = 0; j < dout; ++j) orow[j] += a * wrow[j];
            }
        }
    }
    bool rg = input.requires_grad() || weight.requires_grad() ||
              (has_bias && bias.requires_grad());
    Tensor res(make_node(std::move(out_shape), std::move(out), rg));
    attach(res, "linear", {input, weight, bias},
           [rows, din, dout, has_bias](TensorNode& self) {
               TensorNode* ni = self.inputs[0].get();
               TensorNode* nw = self.inputs[1].get();
               TensorNode* nb = has_bias ? self.inputs[2].get() : nullptr;
               const double* g = self.grad.data();
               if (ni->requires_grad) {
                   ensure_grad(ni);
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* grow = g + r * dout;
                       double* dirow = ni->grad.data() + r * din;
                       for (std::size_t k = 0; k < din; ++k)
                           dirow[k] += fm_dot(grow, nw->data.data() + k * dout, dout);
                   }
               }
               if (nw->requires_grad) {
                   ensure_grad(nw);
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* grow = g + r * dout;
                       const double* irow = ni->data.data() + r * din;
                       for (std::size_t k = 0; k < din; ++k) {
                           const double a = irow[k];
                           double* dwrow = nw->grad.data() + k * dout;
                           for (std::size_t j = 0; j < dout; ++j)
                               dwrow[j] += a * grow[j];
                       }
                   }
               }
               if (nb && nb->requires_grad) {
                   ensure_grad(nb);
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* grow = g + r * dout;
                       for (std::size_t j = 0; j < dout; ++j) nb->grad[j] += grow[j];
                   }
               }
           });
    return res;
}

// ---------------------------------------------------------------------------
// conv1d
// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (si.size() != 3 || sw.size() != 3)
        throw std::invalid_argument(
            "conv1d: need input [B,C_in,T] and weight [C_out,C_in,K]");
    const std::size_t B = si[0], Cin = si[1], T = si[2];
    const std::size_t Cout = sw[0], K = sw[2];
    if (sw[1] != Cin)
        throw std::invalid_argument("conv1d: input has " + std::to_string(Cin) +
                                    " channels but weight expects " +
                                    std::to_string(sw[1]));
    if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
    if (K > T + 2 * padding)
        throw std::invalid_argument("conv1d: kernel wider than padded input");
    if (!bias.defined() || bias.ndim() != 1 || bias.shape()[0] != Cout)
        throw std::invalid_argument("conv1d: bias must have shape [C_out]");
    const std::size_t To = (T + 2 * padding - K) / stride + 1;

    std::vector<double> out(B * Cout * To);
    const double* px = input.data().data();
    const double* pw = weight.data().data();
    const double* pb = bias.data().data();
    const long pad = static_cast<long>(padding);
    const long Tl = static_cast<long>(T);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < Cout; ++co) {
            double* orow = out.data() + (b * Cout + co) * To;
            std::fill(orow, orow + To, pb[co]);
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xrow = px + (b * Cin + ci) * T;
                const double* wrow = pw + (co * Cin + ci) * K;
                for (std::size_t k = 0; k < K; ++k) {
                    const double w = wrow[k];
                    if (w == 0.0) continue;
                    const long off = static_cast<long>(k) - pad;
                    if (stride == 1) {
                        const long t0 = std::max(0L, -off);
                        const long t1 = std::min(static_cast<long>(To), Tl - off);
                        const double* xs = xrow + off;
                        for (long t = t0; t < t1; ++t) orow[t] += w * xs[t];
                    } else {
                        for (std::size_t t = 0; t < To; ++t) {
                            const long xi = static_cast<long>(t * stride) + off;
                            if (xi >= 0 && xi < Tl) orow[t] += w * xrow[xi];
                        }
                    }
                }
            }
        }
    }
    bool rg = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    Tensor res(make_node({B, Cout, To}, std::move(out), rg));
    attach(res, "conv1d", {input, weight, bias},
           [B, Cin, Cout, T, K, To, stride, padding](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               TensorNode* nw = self.inputs[1].get();
               TensorNode* nb = self.inputs[2].get();
               const double* g = self.grad.data();
               const long pad = static_cast<long>(padding);
               const long Tl = static_cast<long>(T);
               if (nx->requires_grad) {
                   ensure_grad(nx);
                   for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t co = 0; co < Cout; ++co) {
                           const double* grow = g + (b * Cout + co) * To;
                           for (std::size_t ci = 0; ci < Cin; ++ci) {
                               double* dxrow = nx->grad.data() + (b * Cin + ci) * T;
                               const double* wrow = nw->data.data() + (co * Cin + ci) * K;
                               for (std::size_t k = 0; k < K; ++k) {
                                   const double w = wrow[k];
                                   if (w == 0.0) continue;
                                   const long off = static_cast<long>(k) - pad;
                                   if (stride == 1) {
                                       const long t0 = std::max(0L, -off);
                                       const long t1 =
                                           std::min(static_cast<long>(To), Tl - off);
                                       double* dxs = dxrow + off;
                                       for (long t = t0; t < t1; ++t)
                                           dxs[t] += w * grow[t];
                                   } else {
                                       for (std::size_t t = 0; t < To; ++t) {
                                           const long xi =
                                               static_cast<long>(t * stride) + off;
                                           if (xi >= 0 && xi < Tl)
                                               dxrow[xi] += w * grow[t];
                                       }
                                   }
                               }
                           }
                       }
               }
               if (nw->requires_grad) {
                   ensure_grad(nw);
                   for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t co = 0; co < Cout; ++co) {
                           const double* grow = g + (b * Cout + co) * To;
                           for (std::size_t ci = 0; ci < Cin; ++ci) {
                               const double* xrow = nx->data.data() + (b * Cin + ci) * T;
                               double* dwrow = nw->grad.data() + (co * Cin + ci) * K;
                               for (std::size_t k = 0; k < K; ++k) {
                                   const long off = static_cast<long>(k) - pad;
                                   double acc = 0.0;
                                   if (stride == 1) {
                                       const long t0 = std::max(0L, -off);
                                       const long t1 =
                                           std::min(static_cast<long>(To), Tl - off);
                                       if (t1 > t0)
                                           acc = fm_dot(xrow + off + t0, grow + t0,
                                                        static_cast<std::size_t>(t1 - t0));
                                   } else {
                                       for (std::size_t t = 0; t < To; ++t) {
                                           const long xi =
                                               static_cast<long>(t * stride) + off;
                                           if (xi >= 0 && xi < Tl)
                                               acc += xrow[xi] * grow[t];
                                       }
                                   }
                                   dwrow[k] += acc;
                               }
                           }
                       }
               }
               if (nb->requires_grad) {
                   ensure_grad(nb);
                   for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t co = 0; co < Cout; ++co) {
                           const double* grow = g + (b * Cout + co) * To;
                           double acc = 0.0;
                           for (std::size_t t = 0; t < To; ++t) acc += grow[t];
                           nb->grad[co] += acc;
                       }
               }
           });
    return res;
}

// ---------------------------------------------------------------------------
// maxpool1d_ceil
// ---------------------------------------------------------------------------

Tensor maxpool1d_ceil(const Tensor& input, std::size_t window) {
    const Shape& si = input.shape();
    if (si.size() != 3) throw std::invalid_argument("maxpool1d_ceil: need [B,C,T]");
    if (window < 1) throw std::invalid_argument("maxpool1d_ceil: window must be >= 1");
    const std::size_t B = si[0], C = si[1], T = si[2];
    if (T == 0) throw std::invalid_argument("maxpool1d_ceil: empty time axis");
    const std::size_t To = (T + window - 1) / window;

    std::vector<double> out(B * C * To);
    std::vector<std::size_t> argmax(B * C * To);
    const double* px = input.data().data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xrow = px + bc * T;
        for (std::size_t j = 0; j < To; ++j) {
            const std::size_t lo = j * window;
            const std::size_t hi = std::min(T, lo + window);
            std::size_t best = lo;
            double bv = xrow[lo];
            for (std::size_t t = lo + 1; t < hi; ++t)
                if (xrow[t] > bv) {  // strict: first occurrence wins ties
                    bv = xrow[t];
                    best = t;
                }
            out[bc * To + j] = bv;
            argmax[bc * To + j] = bc * T + best;
        }
    }
    Tensor res(make_node({B, C, To}, std::move(out), input.requires_grad()));
    attach(res, "maxpool1d_ceil", {input},
           [argmax = std::move(argmax)](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               if (!nx->requires_grad) return;
               ensure_grad(nx);
               for (std::size_t i = 0; i < self.data.size(); ++i)
                   nx->grad[argmax[i]] += self.grad[i];
           });
    return res;
}

// ---------------------------------------------------------------------------
// batchnorm1d
// ---------------------------------------------------------------------------

Tensor batchnorm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode) {
    const Shape& si = input.shape();
    if (si.size() != 3) throw std::invalid_argument("batchnorm1d: need [B,C,T]");
    const std::size_t B = si[0], C = si[1], T = si[2];
    if (gamma.size() != C || beta.size() != C)
        throw std::invalid_argument("batchnorm1d: gamma/beta must have shape [C]");
    const std::size_t N = B * T;

    std::vector<double> mu(C), istd(C);
    if (mode == Mode::Train) {
        if (N < 2)
            throw std::invalid_argument(
                "batchnorm1d: train mode needs at least 2 samples per channel");
        const double* px = input.data().data();
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xrow = px + (b * C + c) * T;
                for (std::size_t t = 0; t < T; ++t) s += xrow[t];
            }
            const double m = s / static_cast<double>(N);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xrow = px + (b * C + c) * T;
                for (std::size_t t = 0; t < T; ++t) {
                    const double d = xrow[t] - m;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(N);
            mu[c] = m;
            istd[c] = 1.0 / std::sqrt(var + state.eps);
            // running stats use the unbiased variance, matching the usual
            // train/eval convention
            const double var_unbiased = v / static_cast<double>(N - 1);
            if (state.running_mean.size() != C) {
                state.running_mean.assign(C, 0.0);
                state.running_var.assign(C, 1.0);
            }
            state.running_mean[c] =
                (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                                   state.momentum * var_unbiased;
        }
        state.initialized = true;
    } else {
        if (!state.initialized)
            throw std::runtime_error(
                "batchnorm1d: eval mode with uninitialized running statistics");
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = state.running_mean[c];
            istd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    std::vector<double> out(input.size());
    {
        const double* px = input.data().data();
        const double* pg = gamma.data().data();
        const double* pbta = beta.data().data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double* xrow = px + (b * C + c) * T;
                double* orow = out.data() + (b * C + c) * T;
                const double m = mu[c], is = istd[c], gm = pg[c], bt = pbta[c];
                for (std::size_t t = 0; t < T; ++t)
                    orow[t] = gm * (xrow[t] - m) * is + bt;
            }
    }
    bool rg = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor res(make_node(si, std::move(out), rg));
    const bool train = mode == Mode::Train;
    attach(res, "batchnorm1d", {input, gamma, beta},
           [B, C, T, N, mu, istd, train](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               TensorNode* ng = self.inputs[1].get();
               TensorNode* nb = self.inputs[2].get();
               const double* g = self.grad.data();
               const double* px = nx->data.data();
               const double* pg = ng->data.data();
               const bool need_x = nx->requires_grad;
               if (need_x) ensure_grad(nx);
               if (ng->requires_grad) ensure_grad(ng);
               if (nb->requires_grad) ensure_grad(nb);
               for (std::size_t c = 0; c < C; ++c) {
                   const double m = mu[c], is = istd[c];
                   double sum_dy = 0.0, sum_dy_xh = 0.0;
                   for (std::size_t b = 0; b < B; ++b) {
                       const double* grow = g + (b * C + c) * T;
                       const double* xrow = px + (b * C + c) * T;
                       for (std::size_t t = 0; t < T; ++t) {
                           sum_dy += grow[t];
                           sum_dy_xh += grow[t] * (xrow[t] - m) * is;
                       }
                   }
                   if (ng->requires_grad) ng->grad[c] += sum_dy_xh;
                   if (nb->requires_grad) nb->grad[c] += sum_dy;
                   if (!need_x) continue;
                   const double gm = pg[c];
                   if (train) {
                       const double inv_n = 1.0 / static_cast<double>(N);
                       const double mean_dy = sum_dy * inv_n;
                       const double mean_dy_xh = sum_dy_xh * inv_n;
                       for (std::size_t b = 0; b < B; ++b) {
                           const double* grow = g + (b * C + c) * T;
                           const double* xrow = px + (b * C + c) * T;
                           double* dxrow = nx->grad.data() + (b * C + c) * T;
                           for (std::size_t t = 0; t < T; ++t) {
                               const double xh = (xrow[t] - m) * is;
                               dxrow[t] += gm * is *
                                           (grow[t] - mean_dy - xh * mean_dy_xh);
                           }
                       }
                   } else {
                       for (std::size_t b = 0; b < B; ++b) {
                           const double* grow = g + (b * C + c) * T;
                           double* dxrow = nx->grad.data() + (b * C + c) * T;
                           for (std::size_t t = 0; t < T; ++t)
                               dxrow[t] += gm * is * grow[t];
                       }
                   }
               }
           });
    return res;
}

// ---------------------------------------------------------------------------
// prelu
// ---------------------------------------------------------------------------

Tensor prelu(const Tensor& input, const Tensor& alpha, std::size_t axis) {
    const Shape& si = input.shape();
    if (axis >= si.size()) throw std::invalid_argument("prelu: axis out of range");
    const std::size_t C = si[axis];
    if (alpha.size() != C)
        throw std::invalid_argument("prelu: alpha must have one slope per channel (" +
                                    std::to_string(C) + "), got " +
                                    std::to_string(alpha.size()));
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < si.size(); ++i) inner *= si[i];

    std::vector<double> out(input.size());
    const double* px = input.data().data();
    const double* pa = alpha.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = px[i];
        out[i] = x >= 0.0 ? x : pa[(i / inner) % C] * x;
    }
    bool rg = input.requires_grad() || alpha.requires_grad();
    Tensor res(make_node(si, std::move(out), rg));
    attach(res, "prelu", {input, alpha}, [C, inner](TensorNode& self) {
        TensorNode* nx = self.inputs[0].get();
        TensorNode* na = self.inputs[1].get();
        const double* g = self.grad.data();
        const bool need_x = nx->requires_grad, need_a = na->requires_grad;
        if (need_x) ensure_grad(nx);
        if (need_a) ensure_grad(na);
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double x = nx->data[i];
            const std::size_t c = (i / inner) % C;
            if (x >= 0.0) {
                if (need_x) nx->grad[i] += g[i];
            } else {
                if (need_x) nx->grad[i] += g[i] * na->data[c];
                if (need_a) na->grad[c] += g[i] * x;
            }
        }
    });
    return res;
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    const Shape& si = input.shape();
    if (si.empty()) throw std::invalid_argument("layer_norm: rank must be >= 1");
    const std::size_t D = si.back();
    if (D < 2) throw std::invalid_argument("layer_norm: last extent must be >= 2");
    if (gamma.size() != D || beta.size() != D)
        throw std::invalid_argument("layer_norm: gamma/beta must have shape [D]");
    const std::size_t rows = input.size() / D;

    std::vector<double> out(input.size());
    std::vector<double> mu(rows), istd(rows);
    {
        const double* px = input.data().data();
        const double* pg = gamma.data().data();
        const double* pb = beta.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = px + r * D;
            double s = 0.0;
            for (std::size_t d = 0; d < D; ++d) s += x[d];
            const double m = s / static_cast<double>(D);
            double v = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double dd = x[d] - m;
                v += dd * dd;
            }
            const double is = 1.0 / std::sqrt(v / static_cast<double>(D) + eps);
            mu[r] = m;
            istd[r] = is;
            double* o = out.data() + r * D;
            for (std::size_t d = 0; d < D; ++d)
                o[d] = pg[d] * (x[d] - m) * is + pb[d];
        }
    }
    bool rg = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor res(make_node(si, std::move(out), rg));
    attach(res, "layer_norm", {input, gamma, beta},
           [rows, D, mu = std::move(mu), istd = std::move(istd)](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               TensorNode* ng = self.inputs[1].get();
               TensorNode* nb = self.inputs[2].get();
               const double* g = self.grad.data();
               const double* px = nx->data.data();
               const double* pg = ng->data.data();
               const bool need_x = nx->requires_grad;
               if (need_x) ensure_grad(nx);
               if (ng->requires_grad) ensure_grad(ng);
               if (nb->requires_grad) ensure_grad(nb);
               for (std::size_t r = 0; r < rows; ++r) {
                   const double* grow = g + r * D;
                   const double* x = px + r * D;
                   const double m = mu[r], is = istd[r];
                   double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                   for (std::size_t d = 0; d < D; ++d) {
                       const double xh = (x[d] - m) * is;
                       const double dxh = grow[d] * pg[d];
                       sum_dxh += dxh;
                       sum_dxh_xh += dxh * xh;
                       if (ng->requires_grad) ng->grad[d] += grow[d] * xh;
                       if (nb->requires_grad) nb->grad[d] += grow[d];
                   }
                   if (!need_x) continue;
                   const double mean_dxh = sum_dxh / static_cast<double>(D);
                   const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(D);
                   double* dx = nx->grad.data() + r * D;
                   for (std::size_t d = 0; d < D; ++d) {
                       const double xh = (x[d] - m) * is;
                       dx[d] += is * (grow[d] * pg[d] - mean_dxh - xh * mean_dxh_xh);
                   }
               }
           });
    return res;
}

// ---------------------------------------------------------------------------
// softmax / log_softmax
// ---------------------------------------------------------------------------

namespace {

struct AxisPlan {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisPlan plan_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw std::invalid_argument(std::string(op) + ": axis out of range");
    AxisPlan p;
    for (std::size_t i = 0; i < axis; ++i) p.outer *= s[i];
    p.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) p.inner *= s[i];
    return p;
}

}  // namespace

Tensor softmax(const Tensor& input, std::size_t axis) {
    AxisPlan p = plan_axis(input.shape(), axis, "softmax");
    std::vector<double> out(input.size());
    const double* px = input.data().data();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t in = 0; in < p.inner; ++in) {
            const std::size_t base = o * p.n * p.inner + in;
            double mx = px[base];
            for (std::size_t j = 1; j < p.n; ++j)
                mx = std::max(mx, px[base + j * p.inner]);
            double denom = 0.0;
            for (std::size_t j = 0; j < p.n; ++j) {
                const double e = std::exp(px[base + j * p.inner] - mx);
                out[base + j * p.inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t j = 0; j < p.n; ++j) out[base + j * p.inner] *= inv;
        }
    Tensor res(make_node(input.shape(), std::move(out), input.requires_grad()));
    attach(res, "softmax", {input}, [p](TensorNode& self) {
        TensorNode* nx = self.inputs[0].get();
        if (!nx->requires_grad) return;
        ensure_grad(nx);
        const double* g = self.grad.data();
        const double* y = self.data.data();
        for (std::size_t o = 0; o < p.outer; ++o)
            for (std::size_t in = 0; in < p.inner; ++in) {
                const std::size_t base = o * p.n * p.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < p.n; ++j) {
                    const std::size_t i = base + j * p.inner;
                    dot += g[i] * y[i];
                }
                for (std::size_t j = 0; j < p.n; ++j) {
                    const std::size_t i = base + j * p.inner;
                    nx->grad[i] += y[i] * (g[i] - dot);
                }
            }
    });
    return res;
}

Tensor log_softmax(const Tensor& input, std::size_t axis) {
    AxisPlan p = plan_axis(input.shape(), axis, "log_softmax");
    std::vector<double> out(input.size());
    const double* px = input.data().data();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t in = 0; in < p.inner; ++in) {
            const std::size_t base = o * p.n * p.inner + in;
            double mx = px[base];
            for (std::size_t j = 1; j < p.n; ++j)
                mx = std::max(mx, px[base + j * p.inner]);
            double denom = 0.0;
            for (std::size_t j = 0; j < p.n; ++j)
                denom += std::exp(px[base + j * p.inner] - mx);
            const double lse = mx + std::log(denom);
            for (std::size_t j = 0; j < p.n; ++j) {
                const std::size_t i = base + j * p.inner;
                out[i] = px[i] - lse;
            }
        }
    Tensor res(make_node(input.shape(), std::move(out), input.requires_grad()));
    attach(res, "log_softmax", {input}, [p](TensorNode& self) {
        TensorNode* nx = self.inputs[0].get();
        if (!nx->requires_grad) return;
        ensure_grad(nx);
        const double* g = self.grad.data();
        const double* y = self.data.data();
        for (std::size_t o = 0; o < p.outer; ++o)
            for (std::size_t in = 0; in < p.inner; ++in) {
                const std::size_t base = o * p.n * p.inner + in;
                double gsum = 0.0;
                for (std::size_t j = 0; j < p.n; ++j) gsum += g[base + j * p.inner];
                for (std::size_t j = 0; j < p.n; ++j) {
                    const std::size_t i = base + j * p.inner;
                    nx->grad[i] += g[i] - std::exp(y[i]) * gsum;
                }
            }
    });
    return res;
}

// ---------------------------------------------------------------------------
// l2_normalize_rows
// ---------------------------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& input) {
    const Shape& si = input.shape();
    if (si.size() != 2) throw std::invalid_argument("l2_normalize_rows: need [N,D]");
    const std::size_t N = si[0], D = si[1];
    std::vector<double> out(input.size());
    std::vector<double> norms(N);
    const double* px = input.data().data();
    for (std::size_t r = 0; r < N; ++r) {
        const double* x = px + r * D;
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += x[d] * x[d];
        const double norm = std::sqrt(s);
        if (norm == 0.0)
            throw std::runtime_error("l2_normalize_rows: row " + std::to_string(r) +
                                     " is the zero vector");
        norms[r] = norm;
        double* o = out.data() + r * D;
        const double inv = 1.0 / norm;
        for (std::size_t d = 0; d < D; ++d) o[d] = x[d] * inv;
    }
    Tensor res(make_node(si, std::move(out), input.requires_grad()));
    attach(res, "l2_normalize_rows", {input},
           [N, D, norms = std::move(norms)](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               if (!nx->requires_grad) return;
               ensure_grad(nx);
               const double* g = self.grad.data();
               const double* y = self.data.data();
               for (std::size_t r = 0; r < N; ++r) {
                   const double* grow = g + r * D;
                   const double* yrow = y + r * D;
                   double dot = 0.0;
                   for (std::size_t d = 0; d < D; ++d) dot += grow[d] * yrow[d];
                   const double inv = 1.0 / norms[r];
                   double* dx = nx->grad.data() + r * D;
                   for (std::size_t d = 0; d < D; ++d)
                       dx[d] += (grow[d] - yrow[d] * dot) * inv;
               }
           });
    return res;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& input, double rate, RngStream& rng, Mode mode) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (mode == Mode::Eval || rate == 0.0) return input;
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    std::vector<std::uint8_t> mask(input.size());
    std::vector<double> out(input.size());
    const double* px = input.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < keep ? 1 : 0;
        out[i] = mask[i] ? px[i] * scale : 0.0;
    }
    Tensor res(make_node(input.shape(), std::move(out), input.requires_grad()));
    attach(res, "dropout", {input},
           [scale, mask = std::move(mask)](TensorNode& self) {
               TensorNode* nx = self.inputs[0].get();
               if (!nx->requires_grad) return;
               ensure_grad(nx);
               for (std::size_t i = 0; i < self.data.size(); ++i)
                   if (mask[i]) nx->grad[i] += self.grad[i] * scale;
           });
    return res;
}

// ---------------------------------------------------------------------------
// attention_core
// ---------------------------------------------------------------------------

namespace {

// Per-row dropout mask regenerated identically in forward and backward; a
// splitmix counter stream keeps regeneration cheap.
inline void fill_keep_mask(std::vector<std::uint8_t>& keep, double keep_prob,
                           std::uint64_t key, std::size_t bh, std::size_t t) {
    std::uint64_t state = derive_key(key, bh, t);
    for (auto& m : keep) {
        const double u =
            static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
        m = u < keep_prob ? 1 : 0;
    }
}

}  // namespace

namespace {

// [T, D] row-major -> [D, T]
void transpose_td(const double* src, double* dst, std::size_t T, std::size_t D) {
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) dst[d * T + t] = src[t * D + d];
}

// One softmax-score row: s_j = scale * q . k_j, with Kt transposed [Dh, Tk]
// so every pass streams contiguously.
inline void attention_score_row(const double* qrow, const double* Kt,
                                std::size_t Tk, std::size_t Dh, double scale,
                                double* s) {
    std::fill(s, s + Tk, 0.0);
    for (std::size_t d = 0; d < Dh; ++d)
        fm_axpy(qrow[d] * scale, Kt + d * Tk, s, Tk);
}

}  // namespace

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      double scale, double dropout_rate, Mode mode,
                      std::uint64_t dropout_key) {
    const Shape& sq = q.shape();
    const Shape& sk = k.shape();
    const Shape& sv = v.shape();
    if (sq.size() != 4 || sk.size() != 4 || sv.size() != 4)
        throw std::invalid_argument("attention_core: need [B,H,T,Dh] tensors");
    if (sk != sv || sq[0] != sk[0] || sq[1] != sk[1] || sq[3] != sk[3])
        throw std::invalid_argument("attention_core: q/k/v shapes inconsistent");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("attention_core: dropout must be in [0,1)");
    const std::size_t BH = sq[0] * sq[1];
    const std::size_t Tq = sq[2], Tk = sk[2], Dh = sq[3];
    const bool drop = mode == Mode::Train && dropout_rate > 0.0;
    const double keep_prob = 1.0 - dropout_rate;
    const double keep_scale = 1.0 / keep_prob;

    std::vector<double> out(BH * Tq * Dh, 0.0);
    std::vector<double> row_max(BH * Tq), row_denom(BH * Tq);
    std::vector<double> kt(Dh * Tk), srow(Tk);
    std::vector<std::uint8_t> keep(drop ? Tk : 0);
    {
        const double* pq = q.data().data();
        const double* pk = k.data().data();
        const double* pv = v.data().data();
        for (std::size_t bh = 0; bh < BH; ++bh) {
            const double* Q = pq + bh * Tq * Dh;
            const double* V = pv + bh * Tk * Dh;
            transpose_td(pk + bh * Tk * Dh, kt.data(), Tk, Dh);
            for (std::size_t t = 0; t < Tq; ++t) {
                attention_score_row(Q + t * Dh, kt.data(), Tk, Dh, scale,
                                    srow.data());
                const double mx = fm_max(srow.data(), Tk);
                for (std::size_t j = 0; j < Tk; ++j) srow[j] -= mx;
                exp_inplace(srow.data(), Tk);
                const double denom = fm_sum(srow.data(), Tk);
                row_max[bh * Tq + t] = mx;
                row_denom[bh * Tq + t] = denom;
                if (drop) {
                    fill_keep_mask(keep, keep_prob, dropout_key, bh, t);
                    for (std::size_t j = 0; j < Tk; ++j)
                        srow[j] = keep[j] ? srow[j] * keep_scale : 0.0;
                }
                const double inv = 1.0 / denom;
                double* orow = out.data() + (bh * Tq + t) * Dh;
                std::fill(orow, orow + Dh, 0.0);
                fm_weighted_rows(srow.data(), V, Tk, Dh, orow);
                for (std::size_t d = 0; d < Dh; ++d) orow[d] *= inv;
            }
        }
    }
    bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
    Tensor res(make_node(sq, std::move(out), rg));
    attach(res, "attention_core", {q, k, v},
           [BH, Tq, Tk, Dh, scale, drop, keep_prob, keep_scale, dropout_key,
            row_max = std::move(row_max),
            row_denom = std::move(row_denom)](TensorNode& self) {
               TensorNode* nq = self.inputs[0].get();
               TensorNode* nk = self.inputs[1].get();
               TensorNode* nv = self.inputs[2].get();
               const bool need_q = nq->requires_grad;
               const bool need_k = nk->requires_grad;
               const bool need_v = nv->requires_grad;
               if (need_q) ensure_grad(nq);
               if (need_k) ensure_grad(nk);
               if (need_v) ensure_grad(nv);
               const double* g = self.grad.data();
               std::vector<double> kt(Dh * Tk), vt(Dh * Tk);
               std::vector<double> dkt(need_k ? Dh * Tk : 0);
               std::vector<double> dvt(need_v ? Dh * Tk : 0);
               std::vector<double> p(Tk), dp(Tk), ds(Tk);
               std::vector<std::uint8_t> keep(drop ? Tk : 0);
               for (std::size_t bh = 0; bh < BH; ++bh) {
                   const double* Q = nq->data.data() + bh * Tq * Dh;
                   transpose_td(nk->data.data() + bh * Tk * Dh, kt.data(), Tk, Dh);
                   transpose_td(nv->data.data() + bh * Tk * Dh, vt.data(), Tk, Dh);
                   if (need_k) std::fill(dkt.begin(), dkt.end(), 0.0);
                   if (need_v) std::fill(dvt.begin(), dvt.end(), 0.0);
                   for (std::size_t t = 0; t < Tq; ++t) {
                       const double* qrow = Q + t * Dh;
                       const double* grow = g + (bh * Tq + t) * Dh;
                       const double mx = row_max[bh * Tq + t];
                       const double inv = 1.0 / row_denom[bh * Tq + t];
                       // rebuild the softmax row from the saved max/denominator
                       attention_score_row(qrow, kt.data(), Tk, Dh, scale, p.data());
                       for (std::size_t j = 0; j < Tk; ++j) p[j] -= mx;
                       exp_inplace(p.data(), Tk);
                       for (std::size_t j = 0; j < Tk; ++j) p[j] *= inv;
                       if (drop) fill_keep_mask(keep, keep_prob, dropout_key, bh, t);

                       // dL/d(pre-dropout probability)
                       std::fill(dp.begin(), dp.end(), 0.0);
                       for (std::size_t d = 0; d < Dh; ++d)
                           fm_axpy(grow[d], vt.data() + d * Tk, dp.data(), Tk);
                       if (need_v) {
                           const double* pdrop = p.data();
                           if (drop) {
                               for (std::size_t j = 0; j < Tk; ++j)
                                   ds[j] = keep[j] ? p[j] * keep_scale : 0.0;
                               pdrop = ds.data();  // reused as scratch here
                           }
                           for (std::size_t d = 0; d < Dh; ++d)
                               fm_axpy(grow[d], pdrop, dvt.data() + d * Tk, Tk);
                       }
                       if (drop)
                           for (std::size_t j = 0; j < Tk; ++j)
                               dp[j] = keep[j] ? dp[j] * keep_scale : 0.0;
                       const double dot = fm_dot(dp.data(), p.data(), Tk);
                       for (std::size_t j = 0; j < Tk; ++j)
                           ds[j] = p[j] * (dp[j] - dot) * scale;
                       if (need_q) {
                           double* dqrow = nq->grad.data() + (bh * Tq + t) * Dh;
                           const double* K = nk->data.data() + bh * Tk * Dh;
                           fm_weighted_rows(ds.data(), K, Tk, Dh, dqrow);
                       }
                       if (need_k) {
                           for (std::size_t d = 0; d < Dh; ++d)
                               fm_axpy(qrow[d], ds.data(), dkt.data() + d * Tk, Tk);
                       }
                   }
                   if (need_k) {
                       double* dk = nk->grad.data() + bh * Tk * Dh;
                       for (std::size_t d = 0; d < Dh; ++d)
                           for (std::size_t j = 0; j < Tk; ++j)
                               dk[j * Dh + d] += dkt[d * Tk + j];
                   }
                   if (need_v) {
                       double* dv = nv->grad.data() + bh * Tk * Dh;
                       for (std::size_t d = 0; d < Dh; ++d)
                           for (std::size_t j = 0; j < Tk; ++j)
                               dv[j * Dh + d] += dvt[d * Tk + j];
                   }
               }
           });
    return res;
}

}  // namespace sleepyco
