#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sleepyco/tensor.hpp"

namespace sleepyco {

// Central finite-difference verification of reverse-mode gradients. The
// numeric side re-evaluates the forward closure with perturbed copies of the
// inputs, never touching the recorded graph.
struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
    int instances = 0;
};

// `build` must construct a scalar loss from the given leaf tensors. Returns
// the worst relative error over all input elements.
double finite_diff_check(const std::function<Tensor(std::vector<Tensor>&)>& build,
                         std::vector<Tensor> inputs, double h = 1e-5);

// Runs the full per-op suite (every differentiable op plus the composed
// losses) on `instances` random small cases each.
std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed, int instances,
                                                double tolerance = 1e-4);

}  // namespace sleepyco
