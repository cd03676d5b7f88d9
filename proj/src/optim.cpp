#include "sleepyco/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sleepyco {

void adam_step(std::vector<Parameter*>& params, AdamState& state) {
    if (state.first_moment.size() != params.size()) {
        state.first_moment.assign(params.size(), {});
        state.second_moment.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(params[i]->tensor.size(), 0.0);
            state.second_moment[i].assign(params[i]->tensor.size(), 0.0);
        }
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (p.frozen) continue;
        if (!p.tensor.has_grad()) continue;  // untouched by this loss
        auto& w = p.tensor.data();
        auto& g = p.tensor.node()->grad;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != w.size())
            throw std::runtime_error("adam_step: moment size mismatch for " + p.name);
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (std::isnan(g[j]))
                throw std::runtime_error("adam_step: NaN gradient in parameter " +
                                         p.name);
            const double gj = g[j] + state.weight_decay * w[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= state.eta * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void zero_grads(std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->tensor.clear_grad();
}

}  // namespace sleepyco
