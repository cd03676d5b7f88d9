#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sleepyco/optim.hpp"
#include "sleepyco/rng.hpp"
#include "sleepyco/tensor.hpp"

namespace sleepyco {

// Reference to a non-trainable state vector (e.g. batch-norm running stats)
// that belongs in checkpoints.
struct BufferRef {
    std::string name;
    std::vector<double>* data;
    Shape shape;
    bool* init_flag = nullptr;  // set true when loaded from a checkpoint
};

inline double prelu_gain(double slope = 0.25) {
    return std::sqrt(2.0 / (1.0 + slope * slope));
}

// Fan-in scaled normal initializer.
inline Tensor kaiming_normal(Shape shape, std::size_t fan_in, double gain,
                             RngStream& rng) {
    const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
    return Tensor::randn(std::move(shape), rng, stddev, true);
}

class Conv1dLayer {
public:
    Parameter weight, bias;
    std::size_t stride = 1, padding = 0;

    Conv1dLayer() = default;
    Conv1dLayer(const std::string& prefix, std::size_t c_in, std::size_t c_out,
                std::size_t k, std::size_t stride_, std::size_t padding_,
                RngStream& rng, double gain = prelu_gain()) {
        weight = {kaiming_normal({c_out, c_in, k}, c_in * k, gain, rng),
                  prefix + ".weight"};
        bias = {Tensor::zeros({c_out}, true), prefix + ".bias"};
        stride = stride_;
        padding = padding_;
    }

    Tensor forward(const Tensor& x) const {
        return conv1d(x, weight.tensor, bias.tensor, stride, padding);
    }

    void params(std::vector<Parameter*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

class LinearLayer {
public:
    Parameter weight, bias;
    bool has_bias = true;

    LinearLayer() = default;
    LinearLayer(const std::string& prefix, std::size_t d_in, std::size_t d_out,
                RngStream& rng, bool with_bias = true, double gain = prelu_gain()) {
        weight = {kaiming_normal({d_in, d_out}, d_in, gain, rng), prefix + ".weight"};
        has_bias = with_bias;
        if (with_bias) bias = {Tensor::zeros({d_out}, true), prefix + ".bias"};
    }

    Tensor forward(const Tensor& x) const {
        return linear(x, weight.tensor, has_bias ? bias.tensor : Tensor());
    }

    void params(std::vector<Parameter*>& out) {
        out.push_back(&weight);
        if (has_bias) out.push_back(&bias);
    }
};

class BatchNorm1dLayer {
public:
    Parameter gamma, beta;
    BatchNormState state;
    std::string prefix;

    BatchNorm1dLayer() = default;
    BatchNorm1dLayer(const std::string& prefix_, std::size_t c, double eps,
                     double momentum) {
        prefix = prefix_;
        gamma = {Tensor::full({c}, 1.0, true), prefix + ".gamma"};
        beta = {Tensor::zeros({c}, true), prefix + ".beta"};
        state.eps = eps;
        state.momentum = momentum;
        state.running_mean.assign(c, 0.0);
        state.running_var.assign(c, 1.0);
    }

    Tensor forward(const Tensor& x, Mode mode) {
        return batchnorm1d(x, gamma.tensor, beta.tensor, state, mode);
    }

    void params(std::vector<Parameter*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    void buffers(std::vector<BufferRef>& out) {
        const Shape c{gamma.tensor.size()};
        out.push_back({prefix + ".running_mean", &state.running_mean, c,
                       &state.initialized});
        out.push_back({prefix + ".running_var", &state.running_var, c,
                       &state.initialized});
    }
};

class PReLULayer {
public:
    Parameter alpha;
    std::size_t axis = 1;

    PReLULayer() = default;
    PReLULayer(const std::string& prefix, std::size_t c, std::size_t axis_,
               double init_slope = 0.25) {
        alpha = {Tensor::full({c}, init_slope, true), prefix + ".alpha"};
        axis = axis_;
    }

    Tensor forward(const Tensor& x) const { return prelu(x, alpha.tensor, axis); }

    void params(std::vector<Parameter*>& out) { out.push_back(&alpha); }
};

class LayerNormLayer {
public:
    Parameter gamma, beta;
    double eps = 1e-5;

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& prefix, std::size_t d) {
        gamma = {Tensor::full({d}, 1.0, true), prefix + ".gamma"};
        beta = {Tensor::zeros({d}, true), prefix + ".beta"};
    }

    Tensor forward(const Tensor& x) const {
        return layer_norm(x, gamma.tensor, beta.tensor, eps);
    }

    void params(std::vector<Parameter*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// Squeeze-and-excitation: global average over time, bottleneck MLP, sigmoid
// gate applied per channel.
class SEBlock {
public:
    LinearLayer fc1, fc2;

    SEBlock() = default;
    SEBlock(const std::string& prefix, std::size_t c, std::size_t reduction,
            RngStream& rng) {
        const std::size_t hidden = std::max<std::size_t>(1, c / reduction);
        fc1 = LinearLayer(prefix + ".fc1", c, hidden, rng, true, std::sqrt(2.0));
        fc2 = LinearLayer(prefix + ".fc2", hidden, c, rng, true, 1.0);
    }

    Tensor forward(const Tensor& u) const {
        const Shape& s = u.shape();  // [B, C, T]
        Tensor squeezed = mean(u, {2});                       // [B, C]
        Tensor gate = sigmoid(fc2.forward(relu(fc1.forward(squeezed))));
        return mul(u, reshape(gate, {s[0], s[1], 1}));
    }

    void params(std::vector<Parameter*>& out) {
        fc1.params(out);
        fc2.params(out);
    }
};

}  // namespace sleepyco
