#pragma once

#include <string>
#include <vector>

#include "sleepyco/tensor.hpp"

namespace sleepyco {

// A named trainable tensor. Frozen parameters receive no gradient and are
// never updated by the optimizer.
struct Parameter {
    Tensor tensor;
    std::string name;
    bool frozen = false;

    void freeze() {
        frozen = true;
        tensor.set_requires_grad(false);
    }
    void unfreeze() {
        frozen = false;
        tensor.set_requires_grad(true);
    }
};

struct AdamState {
    long step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    double eta = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
};

// Standard Adam with bias correction. The L2 term is added to the gradient
// before the moment updates. A NaN gradient is rejected with the offending
// parameter's name.
void adam_step(std::vector<Parameter*>& params, AdamState& state);

void zero_grads(std::vector<Parameter*>& params);

}  // namespace sleepyco
