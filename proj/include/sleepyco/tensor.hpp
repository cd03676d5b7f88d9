#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sleepyco/rng.hpp"

namespace sleepyco {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward_fn;
};

// Dense f64 tensor, row-major, participating in a dynamic reverse-mode graph.
// Value-semantics handle over a shared node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void clear_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v);

    double item() const;                       // scalar tensors only
    double at(std::initializer_list<std::size_t> idx) const;

    TensorNode* node() const { return node_.get(); }
    std::shared_ptr<TensorNode> shared_node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Gradients of leaf
// tensors accumulate across calls; intermediates are recomputed per call.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------
// Binary ops broadcast numpy-style: shapes are right-aligned and extents must
// match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor pow_scalar(const Tensor& a, double p);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor transpose_last2(const Tensor& a);

// Empty `axes` reduces over everything (to a scalar).
Tensor sum(const Tensor& a, std::vector<std::size_t> axes = {},
           bool keepdims = false);
Tensor mean(const Tensor& a, std::vector<std::size_t> axes = {},
            bool keepdims = false);

// Batched matrix product: [..., M, K] x [..., K, N] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// neural-net ops
// ---------------------------------------------------------------------------
// Affine map over the last axis: input [..., D_in], weight [D_in, D_out],
// optional bias [D_out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// 1-D cross-correlation: input [B, C_in, T], weight [C_out, C_in, K],
// bias [C_out]. T' = floor((T + 2*padding - K)/stride) + 1.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

// Non-overlapping max pooling with ceiling semantics: a trailing partial
// window pools over its available samples. Gradient goes to the first
// maximal element of each window.
Tensor maxpool1d_ceil(const Tensor& input, std::size_t window);

enum class Mode { Train, Eval };

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    bool initialized = false;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Per-channel normalization of [B, C, T] over batch and time.
Tensor batchnorm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode);

// y = x for x >= 0 else alpha*x, with one slope per extent of `axis`.
Tensor prelu(const Tensor& input, const Tensor& alpha, std::size_t axis);

// Normalizes over the last axis, then applies the affine transform.
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor softmax(const Tensor& input, std::size_t axis);
Tensor log_softmax(const Tensor& input, std::size_t axis);

// Rows of a [N, D] tensor scaled to unit Euclidean norm. Zero rows rejected.
Tensor l2_normalize_rows(const Tensor& input);

// Inverted dropout; identity in eval mode. The mask is drawn from `rng`.
Tensor dropout(const Tensor& input, double rate, RngStream& rng, Mode mode);

// Streaming scaled-dot-product attention over [B, H, T, Dh] q/k/v. Softmax
// rows are never materialized for the whole tensor (memory stays O(T*Dh));
// the backward pass recomputes them per row. Optional dropout on the
// attention weights is regenerated from `dropout_key` in the backward pass.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      double scale, double dropout_rate, Mode mode,
                      std::uint64_t dropout_key);

}  // namespace sleepyco
