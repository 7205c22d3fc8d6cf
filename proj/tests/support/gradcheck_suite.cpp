#include "gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "mmpkd/optim.hpp"
#include "mmpkd/rng.hpp"
#include "mmpkd/distill.hpp"
#include "mmpkd/tensor.hpp"
#include "mmpkd/vit.hpp"

namespace mmpkd::testing {

using namespace mmpkd::nn;

namespace {

Tensor rand_t(Rng& rng, Shape shape, double lo = -1.5, double hi = 1.5) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(d));
}

struct Case {
    std::string name;
    // Builds the input to perturb plus the scalar function of it.
    std::function<std::pair<Tensor, ScalarFn>(Rng&)> make;
};

std::vector<Case> primitive_cases() {
    std::vector<Case> cases;
    auto unary = [&](std::string name, Shape shape, std::function<Tensor(const Tensor&)> op, double lo = -1.5,
                     double hi = 1.5) {
        cases.push_back({std::move(name), [shape, op, lo, hi](Rng& rng) {
                             auto x = rand_t(rng, shape, lo, hi);
                             auto w = rand_t(rng, op(x).shape());
                             ScalarFn f = [op, w](const Tensor& t) { return sum(mul(op(t), w)); };
                             return std::pair{x, f};
                         }});
    };
    // binary: perturb one operand, hold the other fixed
    auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
        cases.push_back({name + "/lhs", [sa, sb, op](Rng& rng) {
                             auto a = rand_t(rng, sa);
                             auto b = rand_t(rng, sb);
                             auto w = rand_t(rng, op(a, b).shape());
                             ScalarFn f = [op, b, w](const Tensor& t) { return sum(mul(op(t, b), w)); };
                             return std::pair{a, f};
                         }});
        cases.push_back({name + "/rhs", [sa, sb, op](Rng& rng) {
                             auto a = rand_t(rng, sa);
                             auto b = rand_t(rng, sb);
                             auto w = rand_t(rng, op(a, b).shape());
                             ScalarFn f = [op, a, w](const Tensor& t) { return sum(mul(op(a, t), w)); };
                             return std::pair{b, f};
                         }});
    };

    binary("matmul", {3, 4}, {4, 2}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
    binary("bmm", {2, 3, 4}, {2, 4, 3}, [](const Tensor& a, const Tensor& b) { return bmm(a, b); });
    binary("bmm_t", {2, 3, 4}, {2, 5, 4}, [](const Tensor& a, const Tensor& b) { return bmm(a, b, true); });
    binary("add", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
    binary("add_broadcast", {2, 3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
    binary("sub", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    binary("mul", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    binary("mul_broadcast", {5, 4}, {4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    unary("scale", {3, 3}, [](const Tensor& x) { return scale(x, -0.7); });
    unary("gelu", {4, 5}, [](const Tensor& x) { return gelu(x); }, -3.0, 3.0);
    unary("sigmoid", {4, 5}, [](const Tensor& x) { return sigmoid(x); }, -4.0, 4.0);
    unary("softmax", {3, 6}, [](const Tensor& x) { return softmax(x); }, -3.0, 3.0);
    unary("reshape", {2, 6}, [](const Tensor& x) { return reshape(x, {3, 4}); });
    unary("permute", {2, 3, 4}, [](const Tensor& x) { return permute(x, {2, 0, 1}); });
    unary("transpose", {3, 5}, [](const Tensor& x) { return transpose(x); });
    unary("slice", {3, 5, 2}, [](const Tensor& x) { return slice(x, 1, 1, 4); });
    unary("broadcast_to", {1, 4}, [](const Tensor& x) { return broadcast_to(x, {3, 2, 4}); });
    unary("sum", {3, 4}, [](const Tensor& x) { return sum(x); });
    unary("mean", {3, 4}, [](const Tensor& x) { return mean(x); });
    binary("concat", {2, 3}, {2, 2}, [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); });

    for (int which = 0; which < 3; ++which) {
        static const char* names[] = {"layer_norm/x", "layer_norm/gamma", "layer_norm/beta"};
        cases.push_back({names[which], [which](Rng& rng) {
                             auto x = rand_t(rng, {4, 6});
                             auto g = rand_t(rng, {6}, 0.5, 1.5);
                             auto b = rand_t(rng, {6});
                             auto w = rand_t(rng, {4, 6});
                             ScalarFn f = [=](const Tensor& t) {
                                 const Tensor& xx = which == 0 ? t : x;
                                 const Tensor& gg = which == 1 ? t : g;
                                 const Tensor& bb = which == 2 ? t : b;
                                 return sum(mul(layer_norm(xx, gg, bb, 1e-5), w));
                             };
                             return std::pair{which == 0 ? x : which == 1 ? g : b, f};
                         }});
    }
    cases.push_back({"binary_cross_entropy", [](Rng& rng) {
                         auto p = rand_t(rng, {3, 4}, 0.05, 0.95);
                         auto t = rand_t(rng, {3, 4}, 0.0, 1.0);
                         ScalarFn f = [t](const Tensor& x) { return binary_cross_entropy(x, t); };
                         return std::pair{p, f};
                     }});
    return cases;
}

}  // namespace

std::vector<GradcheckResult> run_primitive_gradchecks(int instances, double step, std::uint64_t seed) {
    std::vector<GradcheckResult> out;
    for (const auto& c : primitive_cases()) {
        Rng rng = Rng::derive(seed, c.name);
        GradcheckResult r{c.name, 0, 0.0};
        for (int i = 0; i < instances; ++i) {
            auto [x, f] = c.make(rng);
            r.max_rel_error = std::max(r.max_rel_error, finite_difference_check(f, x, step));
            ++r.instances;
        }
        out.push_back(r);
    }
    return out;
}

std::vector<GradcheckResult> run_composition_gradchecks(int instances, double step, std::uint64_t seed) {
    student::VitConfig cfg;
    cfg.image_height = cfg.image_width = 8;
    cfg.patch = 4;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 32;
    cfg.init_std = 0.3;  // large enough that every path carries gradient
    cfg.zero_head = false;
    const std::vector<std::string> targets{"patch_embed.weight", "cls_token",           "pos_embed",
                                           "blocks.0.norm1.weight", "blocks.0.attn.qkv.weight", "blocks.1.attn.proj.bias",
                                           "blocks.1.mlp.fc1.weight", "norm.bias",          "head.weight"};
    std::vector<GradcheckResult> out;
    for (const auto& target : targets) out.push_back({"vit->distill_loss/" + target, 0, 0.0});

    Rng rng = Rng::derive(seed, "composition");
    for (int inst = 0; inst < instances; ++inst) {
        const student::StudentViT model(cfg, rng.next_u64());
        const std::size_t batch = 3;
        std::vector<Image> images(batch, Image(8, 8));
        std::vector<double> hard(batch), soft(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            for (auto& v : images[b].values) v = rng.uniform();
            hard[b] = static_cast<double>(rng.integer(0, 1));
            soft[b] = rng.uniform(0.05, 0.95);
        }
        const double lambda = rng.uniform();
        std::vector<const Image*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);
        const auto& names = model.parameters();

        for (std::size_t t = 0; t < targets.size(); ++t) {
            std::size_t idx = 0;
            while (names[idx].name() != targets[t]) ++idx;
            ScalarFn f = [&, idx](const Tensor& x) {
                std::vector<Tensor> params = model.parameters();
                params[idx] = x;
                const auto r = model.forward(std::span<const Tensor>(params), std::span<const Image* const>(ptrs));
                return distill::compute_distill_loss(hard, soft, sigmoid(r.logits), lambda);
            };
            out[t].max_rel_error = std::max(out[t].max_rel_error, finite_difference_check(f, names[idx], step));
            ++out[t].instances;
        }
    }
    return out;
}

}  // namespace mmpkd::testing
