#include "sleepyco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace sleepyco {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

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

bool any_requires(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Marks `out` as produced by `op` from `inputs` and attaches the backward
// closure, but only when a gradient can ever flow; otherwise the graph edge
// is dropped so upstream activations can be freed eagerly.
void attach(const Tensor& out, const char* op, std::initializer_list<Tensor> inputs,
            std::function<void(TensorNode&)> bw) {
    TensorNode* n = out.node();
    n->is_leaf = false;
    n->op = op;
    if (!n->requires_grad) return;
    for (const Tensor& t : inputs) n->inputs.push_back(t.shared_node());
    n->backward_fn = std::move(bw);
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

struct BinPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;  // per-out-dim strides; 0 when broadcast
    std::size_t n = 0;
    bool same_shape = false;
};

BinPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    BinPlan p;
    if (a == b) {
        p.out = a;
        p.n = shape_numel(a);
        p.same_shape = true;
        return p;
    }
    const std::size_t nd = std::max(a.size(), b.size());
    p.out.resize(nd);
    Shape ae(nd, 1), be(nd, 1);
    std::copy(a.begin(), a.end(), ae.begin() + (nd - a.size()));
    std::copy(b.begin(), b.end(), be.begin() + (nd - b.size()));
    for (std::size_t i = 0; i < nd; ++i) {
        if (ae[i] != be[i] && ae[i] != 1 && be[i] != 1)
            throw std::invalid_argument(std::string(op) + ": shapes " +
                                        shape_str(a) + " and " + shape_str(b) +
                                        " are not broadcastable");
        p.out[i] = std::max(ae[i], be[i]);
    }
    auto sa_full = row_major_strides(ae);
    auto sb_full = row_major_strides(be);
    p.sa.resize(nd);
    p.sb.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        p.sa[i] = ae[i] == 1 ? 0 : sa_full[i];
        p.sb[i] = be[i] == 1 ? 0 : sb_full[i];
    }
    p.n = shape_numel(p.out);
    return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast iteration space.
template <class F>
void broadcast_for_each(const BinPlan& p, F&& f) {
    if (p.same_shape) {
        for (std::size_t i = 0; i < p.n; ++i) f(i, i, i);
        return;
    }
    const std::size_t nd = p.out.size();
    std::vector<std::size_t> coord(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < p.n; ++io) {
        f(io, ia, ib);
        for (std::size_t d = nd; d-- > 0;) {
            ++coord[d];
            ia += p.sa[d];
            ib += p.sb[d];
            if (coord[d] < p.out[d]) break;
            ia -= p.sa[d] * p.out[d];
            ib -= p.sb[d] * p.out[d];
            coord[d] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
    BinPlan p = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<double> out(p.n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    switch (kind) {
        case BinOp::Add:
            broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                out[io] = pa[ia] + pb[ib];
            });
            break;
        case BinOp::Sub:
            broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                out[io] = pa[ia] - pb[ib];
            });
            break;
        case BinOp::Mul:
            broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                out[io] = pa[ia] * pb[ib];
            });
            break;
    }
    Tensor res(make_node(p.out, std::move(out), any_requires({&a, &b})));
    attach(res, name, {a, b}, [p, kind](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        TensorNode* nb = self.inputs[1].get();
        const double* g = self.grad.data();
        const bool need_a = na->requires_grad;
        const bool need_b = nb->requires_grad;
        if (need_a) ensure_grad(na);
        if (need_b) ensure_grad(nb);
        switch (kind) {
            case BinOp::Add:
                broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                    if (need_a) na->grad[ia] += g[io];
                    if (need_b) nb->grad[ib] += g[io];
                });
                break;
            case BinOp::Sub:
                broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                    if (need_a) na->grad[ia] += g[io];
                    if (need_b) nb->grad[ib] -= g[io];
                });
                break;
            case BinOp::Mul:
                broadcast_for_each(p, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                    if (need_a) na->grad[ia] += g[io] * nb->data[ib];
                    if (need_b) nb->grad[ib] += g[io] * na->data[ia];
                });
                break;
        }
    });
    return res;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dfd) {
    std::vector<double> out(a.size());
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
    Tensor res(make_node(a.shape(), std::move(out), a.requires_grad()));
    attach(res, name, {a}, [dfd](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        if (!na->requires_grad) return;
        ensure_grad(na);
        for (std::size_t i = 0; i < self.data.size(); ++i)
            na->grad[i] += self.grad[i] * dfd(na->data[i], self.data[i]);
    });
    return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0),
                            requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value),
                            requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                    " does not match data length " +
                                    std::to_string(data.size()));
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_node(Shape{}, std::vector<double>{value}, requires_grad));
}

Tensor Tensor::randn(Shape shape, RngStream& rng, double stddev,
                     bool requires_grad) {
    std::size_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& v : d) v = stddev * rng.normal();
    return Tensor(make_node(std::move(shape), std::move(d), requires_grad));
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty())
        throw std::runtime_error("tensor has no gradient (run backward first)");
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty())
        throw std::runtime_error("tensor has no gradient (run backward first)");
    return node_->grad;
}

void Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (!v) node_->grad.clear();
}

double Tensor::item() const {
    if (node_->data.size() != 1)
        throw std::invalid_argument("item(): tensor of shape " +
                                    shape_str(node_->shape) + " is not scalar");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != node_->shape.size())
        throw std::invalid_argument("at(): rank mismatch");
    std::size_t off = 0;
    std::size_t d = 0;
    for (std::size_t i : idx) {
        if (i >= node_->shape[d]) throw std::out_of_range("at(): index out of range");
        off = off * node_->shape[d] + i;
        ++d;
    }
    return node_->data[off];
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // nothing reachable requires grad

    // Post-order DFS restricted to grad-requiring nodes.
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            TensorNode* in = f.node->inputs[f.next_input++].get();
            if (in->requires_grad && !seen.count(in)) {
                seen.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    // Leaf gradients accumulate across backward calls; intermediate gradients
    // belong to this call only.
    for (TensorNode* n : topo) {
        if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
    }
    ensure_grad(loss.node());
    loss.node()->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "add_scalar", [c](double x) { return x + c; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "mul_scalar", [c](double x) { return x * c; },
        [c](double, double) { return c; });
}

Tensor pow_scalar(const Tensor& a, double p) {
    return unary_op(
        a, "pow_scalar", [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                    " as " + shape_str(new_shape));
    Tensor res(make_node(std::move(new_shape), a.data(), a.requires_grad()));
    attach(res, "reshape", {a}, [](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        if (!na->requires_grad) return;
        ensure_grad(na);
        for (std::size_t i = 0; i < self.data.size(); ++i)
            na->grad[i] += self.grad[i];
    });
    return res;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    const Shape& s = a.shape();
    if (axes.size() != s.size())
        throw std::invalid_argument("permute: axes rank mismatch");
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= s.size())
            throw std::invalid_argument("permute: axis out of range");
        out_shape[i] = s[axes[i]];
    }
    auto in_strides = row_major_strides(s);
    // stride of the input axis that feeds each output dim
    std::vector<std::size_t> step(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) step[i] = in_strides[axes[i]];

    const std::size_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data().data();
    const std::size_t nd = out_shape.size();
    std::vector<std::size_t> coord(nd, 0);
    std::size_t ii = 0;
    for (std::size_t io = 0; io < n; ++io) {
        out[io] = pa[ii];
        for (std::size_t d = nd; d-- > 0;) {
            ++coord[d];
            ii += step[d];
            if (coord[d] < out_shape[d]) break;
            ii -= step[d] * out_shape[d];
            coord[d] = 0;
        }
    }
    Tensor res(make_node(out_shape, std::move(out), a.requires_grad()));
    attach(res, "permute", {a}, [out_shape, step](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        if (!na->requires_grad) return;
        ensure_grad(na);
        const std::size_t nd = out_shape.size();
        std::vector<std::size_t> coord(nd, 0);
        std::size_t ii = 0;
        for (std::size_t io = 0; io < self.data.size(); ++io) {
            na->grad[ii] += self.grad[io];
            for (std::size_t d = nd; d-- > 0;) {
                ++coord[d];
                ii += step[d];
                if (coord[d] < out_shape[d]) break;
                ii -= step[d] * out_shape[d];
                coord[d] = 0;
            }
        }
    });
    return res;
}

Tensor transpose_last2(const Tensor& a) {
    std::vector<std::size_t> axes(a.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    if (axes.size() < 2)
        throw std::invalid_argument("transpose_last2: rank must be >= 2");
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace {

struct ReducePlan {
    Shape out_shape;                 // possibly keepdims form
    std::vector<std::size_t> out_stride_per_in_dim;  // 0 for reduced dims
    std::size_t count = 1;           // number of elements folded per output
};

ReducePlan plan_reduce(const Shape& in, std::vector<std::size_t> axes,
                       bool keepdims) {
    ReducePlan p;
    std::vector<bool> reduced(in.size(), false);
    if (axes.empty()) {
        reduced.assign(in.size(), true);
    } else {
        for (auto a : axes) {
            if (a >= in.size())
                throw std::invalid_argument("reduce: axis out of range");
            reduced[a] = true;
        }
    }
    Shape kept(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        kept[i] = reduced[i] ? 1 : in[i];
        if (reduced[i]) p.count *= in[i];
    }
    auto kept_strides = row_major_strides(kept);
    p.out_stride_per_in_dim.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        p.out_stride_per_in_dim[i] = reduced[i] ? 0 : kept_strides[i];
    if (keepdims) {
        p.out_shape = kept;
    } else {
        for (std::size_t i = 0; i < in.size(); ++i)
            if (!reduced[i]) p.out_shape.push_back(in[i]);
    }
    return p;
}

template <class F>
void reduce_for_each(const Shape& in, const std::vector<std::size_t>& ostride,
                     F&& f) {
    const std::size_t nd = in.size();
    const std::size_t n = shape_numel(in);
    std::vector<std::size_t> coord(nd, 0);
    std::size_t io = 0;
    for (std::size_t ii = 0; ii < n; ++ii) {
        f(ii, io);
        for (std::size_t d = nd; d-- > 0;) {
            ++coord[d];
            io += ostride[d];
            if (coord[d] < in[d]) break;
            io -= ostride[d] * in[d];
            coord[d] = 0;
        }
    }
}

Tensor reduce_impl(const Tensor& a, std::vector<std::size_t> axes, bool keepdims,
                   bool take_mean) {
    ReducePlan p = plan_reduce(a.shape(), axes, keepdims);
    const double scale = take_mean ? 1.0 / static_cast<double>(p.count) : 1.0;
    std::vector<double> out(shape_numel(p.out_shape), 0.0);
    const double* pa = a.data().data();
    reduce_for_each(a.shape(), p.out_stride_per_in_dim,
                    [&](std::size_t ii, std::size_t io) { out[io] += pa[ii]; });
    if (take_mean)
        for (auto& v : out) v *= scale;
    Tensor res(make_node(p.out_shape, std::move(out), a.requires_grad()));
    const char* name = take_mean ? "mean" : "sum";
    Shape in_shape = a.shape();
    auto ostride = p.out_stride_per_in_dim;
    attach(res, name, {a}, [in_shape, ostride, scale](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        if (!na->requires_grad) return;
        ensure_grad(na);
        const double* g = self.grad.data();
        reduce_for_each(in_shape, ostride, [&](std::size_t ii, std::size_t io) {
            na->grad[ii] += g[io] * scale;
        });
    });
    return res;
}

}  // namespace

Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
    return reduce_impl(a, std::move(axes), keepdims, false);
}

Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
    return reduce_impl(a, std::move(axes), keepdims, true);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.size() != sb.size())
        throw std::invalid_argument("matmul: ranks must match and be >= 2, got " +
                                    shape_str(sa) + " x " + shape_str(sb));
    for (std::size_t i = 0; i + 2 < sa.size(); ++i)
        if (sa[i] != sb[i])
            throw std::invalid_argument("matmul: leading dims differ: " +
                                        shape_str(sa) + " x " + shape_str(sb));
    const std::size_t M = sa[sa.size() - 2];
    const std::size_t K = sa[sa.size() - 1];
    const std::size_t N = sb[sb.size() - 1];
    if (sb[sb.size() - 2] != K)
        throw std::invalid_argument("matmul: inner dims differ: " +
                                    shape_str(sa) + " x " + shape_str(sb));
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<double> out(batch * M * N, 0.0);
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        for (std::size_t s = 0; s < batch; ++s) {
            const double* A = pa + s * M * K;
            const double* B = pb + s * K * N;
            double* C = out.data() + s * M * N;
            for (std::size_t m = 0; m < M; ++m) {
                double* Crow = C + m * N;
                for (std::size_t k = 0; k < K; ++k) {
                    const double av = A[m * K + k];
                    const double* Brow = B + k * N;
                    for (std::size_t n = 0; n < N; ++n) Crow[n] += av * Brow[n];
                }
            }
        }
    }
    Tensor res(make_node(std::move(out_shape), std::move(out),
                         any_requires({&a, &b})));
    attach(res, "matmul", {a, b}, [batch, M, K, N](TensorNode& self) {
        TensorNode* na = self.inputs[0].get();
        TensorNode* nb = self.inputs[1].get();
        const double* g = self.grad.data();
        if (na->requires_grad) {
            ensure_grad(na);
            for (std::size_t s = 0; s < batch; ++s) {
                const double* G = g + s * M * N;
                const double* B = nb->data.data() + s * K * N;
                double* dA = na->grad.data() + s * M * K;
                for (std::size_t m = 0; m < M; ++m) {
                    const double* Grow = G + m * N;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double* Brow = B + k * N;
                        double acc = 0.0;
                        for (std::size_t n = 0; n < N; ++n) acc += Grow[n] * Brow[n];
                        dA[m * K + k] += acc;
                    }
                }
            }
        }
        if (nb->requires_grad) {
            ensure_grad(nb);
            for (std::size_t s = 0; s < batch; ++s) {
                const double* G = g + s * M * N;
                const double* A = na->data.data() + s * M * K;
                double* dB = nb->grad.data() + s * K * N;
                for (std::size_t m = 0; m < M; ++m) {
                    const double* Grow = G + m * N;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double av = A[m * K + k];
                        double* dBrow = dB + k * N;
                        for (std::size_t n = 0; n < N; ++n) dBrow[n] += av * Grow[n];
                    }
                }
            }
        }
    });
    return res;
}

}  // namespace sleepyco
