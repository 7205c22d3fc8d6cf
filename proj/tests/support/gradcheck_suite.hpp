#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmpkd::testing {

struct GradcheckResult {
    std::string name;
    int instances = 0;
    double max_rel_error = 0.0;
};

// Central finite-difference checks for every differentiable primitive, each
// wrapped as sum(op(inputs) * R) for a fixed random R.
std::vector<GradcheckResult> run_primitive_gradchecks(int instances, double step, std::uint64_t seed);

// Image -> ViT -> sigmoid -> distillation loss, checked with respect to
// several parameter tensors of a tiny student.
std::vector<GradcheckResult> run_composition_gradchecks(int instances, double step, std::uint64_t seed);

}  // namespace mmpkd::testing
