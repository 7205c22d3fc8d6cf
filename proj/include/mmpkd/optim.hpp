#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmpkd/tensor.hpp"

namespace mmpkd::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Moments are allocated lazily on the first step
// and keyed by parameter position, so the parameter list must not change
// between steps.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    // Applies one update and zeroes the gradients. Throws std::invalid_argument
    // naming the first parameter without a gradient.
    void step();

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_ = 0;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `x` is copied into a fresh leaf; `f` must return a single-element tensor.
double finite_difference_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

}  // namespace mmpkd::nn
