#include <doctest.h>

#include <cmath>
#include <functional>

#include "gradcheck_suite.hpp"
#include "mmpkd/optim.hpp"
#include "mmpkd/rng.hpp"
#include "mmpkd/tensor.hpp"

using namespace mmpkd;
using namespace mmpkd::nn;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.normal() * scale;
    return Tensor::from_data(std::move(shape), std::move(d));
}

}  // namespace

TEST_CASE("matmul by identity returns the operand") {
    Rng rng(1);
    auto a = random_tensor(rng, {3, 3});
    auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto c = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(c.at(i) == a.at(i));
}

TEST_CASE("shape mismatch names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2, 3)") != std::string::npos);
        CHECK(msg.find("(4, 5)") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("layer norm of a constant row is zero before scale and shift") {
    auto x = Tensor::full({2, 5}, 3.25);
    auto g = Tensor::full({5}, 1.0);
    auto b = Tensor::zeros({5});
    auto y = layer_norm(x, g, b, 1e-5);
    for (double v : y.data()) CHECK(v == 0.0);
    CHECK_THROWS(layer_norm(x, g, b, 0.0));
}

TEST_CASE("gelu values") {
    CHECK(gelu_scalar(0.0) == 0.0);
    // reference values from a 30-digit erf evaluation
    CHECK(gelu_scalar(1.5) == doctest::Approx(1.39978919809671290).epsilon(1e-15));
    CHECK(gelu_scalar(-1.5) == doctest::Approx(-0.10021080190328710).epsilon(1e-14));
    CHECK(gelu_scalar(1.5) - gelu_scalar(-1.5) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("sigmoid") {
    CHECK(sigmoid_scalar(0.0) == 0.5);
    CHECK(std::abs(sigmoid_scalar(2.0) - 0.880797077977882444) < 1e-15);
    const double tiny = sigmoid_scalar(-745.0);
    CHECK(std::isfinite(tiny));
    CHECK(tiny > 0.0);
    CHECK(tiny <= 1e-300);
    CHECK(sigmoid_scalar(1000.0) == 1.0);
    CHECK(std::isfinite(sigmoid_scalar(-1000.0)));

    SUBCASE("complement symmetry") {
        Rng rng(7);
        for (int i = 0; i < 500; ++i) {
            const double z = rng.uniform(-50.0, 50.0);
            CHECK(std::abs(sigmoid_scalar(z) + sigmoid_scalar(-z) - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("binary cross entropy") {
    auto bce = [](double p, double t) {
        return binary_cross_entropy(Tensor::scalar(p), Tensor::scalar(t)).item();
    };
    CHECK(std::abs(bce(0.5, 0.5) - 0.693147180559945309) < 1e-15);
    CHECK(std::abs(bce(0.9, 1.0) - 0.105360515657826301) < 1e-15);
    CHECK(bce(1.0 - kProbEps, 1.0 - kProbEps) < 2e-6);
    const double t = 0.3;
    CHECK(std::abs(bce(t, t) - (-(t * std::log(t) + (1 - t) * std::log(1 - t)))) < 1e-15);
    CHECK_THROWS_AS(bce(0.5, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(bce(0.5, -0.1), std::invalid_argument);

    SUBCASE("cross-entropy dominates entropy") {
        Rng rng(11);
        for (int i = 0; i < 1000; ++i) {
            const double p = rng.uniform(0.001, 0.999);
            const double q = rng.uniform(0.0, 1.0);
            CHECK(bce(p, q) >= bce(q, q) - 1e-12);
        }
    }
}

TEST_CASE("backward on simple losses") {
    Rng rng(3);
    auto w = random_tensor(rng, {4, 3});
    w.set_requires_grad(true);
    sum(w).backward();
    for (double g : w.grad()) CHECK(g == 1.0);

    w.zero_grad();
    scale(sum(mul(w, w)), 0.5).backward();
    for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == doctest::Approx(w.at(i)).epsilon(1e-15));

    SUBCASE("repeated backward accumulates") {
        auto v = Tensor::from_data({2}, {1.0, 2.0}, true);
        auto loss = sum(scale(v, 3.0));
        loss.backward();
        loss.backward();
        CHECK(v.grad()[0] == 6.0);
        CHECK(v.grad()[1] == 6.0);
    }

    CHECK_THROWS_AS(w.backward(), ShapeError);
}

TEST_CASE("every primitive passes the finite-difference check") {
    const auto results = testing::run_primitive_gradchecks(20, 1e-5, 20240601);
    for (const auto& r : results) {
        CAPTURE(r.name);
        CHECK(r.instances >= 20);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("image to distillation loss passes the finite-difference check") {
    const auto results = testing::run_composition_gradchecks(20, 1e-5, 77);
    for (const auto& r : results) {
        CAPTURE(r.name);
        CHECK(r.instances >= 20);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("finite-difference harness") {
    Rng rng(5);
    auto x = random_tensor(rng, {3, 4});
    CHECK(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-5) < 1e-10);

    SUBCASE("BCE(sigmoid(matmul)) chain") {
        auto a = random_tensor(rng, {4, 4});
        auto target = Tensor::from_data({4, 4}, [&] {
            std::vector<double> t(16);
            for (auto& v : t) v = rng.uniform();
            return t;
        }());
        auto f = [&](const Tensor& w) { return binary_cross_entropy(sigmoid(matmul(a, w)), target); };
        CHECK(finite_difference_check(f, random_tensor(rng, {4, 4}), 1e-5) < 1e-6);
    }

    SUBCASE("detects a corrupted gradient") {
        // x^2 summed, with the backward pass inflated by 10%.
        auto bad_square = [](const Tensor& t) {
            std::vector<double> out(t.numel());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i) * t.at(i);
            auto sq = Tensor::make_result(t.shape(), std::move(out), {t}, [](Node& o) {
                auto& g = o.parents[0]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.1 * 2.0 * o.parents[0]->data[i] * o.grad[i];
            });
            return sum(sq);
        };
        auto probe = Tensor::from_data({3}, {1.0, -2.0, 0.5});
        CHECK(finite_difference_check(bad_square, probe, 1e-5) > 1e-2);
    }

    CHECK_THROWS(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-2));
    CHECK_THROWS(finite_difference_check([](const Tensor& t) { return scale(sum(t), std::nan("")); }, x, 1e-5));
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        auto p = Tensor::from_data({3}, {0.1, -0.2, 0.3}, true, "w");
        Adam opt({p});
        p.zero_grad();
        opt.step();
        CHECK(p.at(0) == 0.1);
        CHECK(p.at(1) == -0.2);
        CHECK(p.at(2) == 0.3);
        CHECK(opt.step_count() == 1);
    }
    SUBCASE("first step with unit gradient moves by the learning rate") {
        auto p = Tensor::from_data({1}, {1.0}, true, "w");
        Adam opt({p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
        p.mutable_grad()[0] = 1.0;
        opt.step();
        // mhat = 1, vhat = 1 -> delta = lr / (1 + eps)
        CHECK(p.at(0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(p.grad()[0] == 0.0);
    }
    SUBCASE("missing gradient names the parameter") {
        auto p = Tensor::from_data({1}, {1.0}, true, "encoder.weight");
        Adam opt({p});
        try {
            opt.step();
            FAIL("expected throw");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("encoder.weight") != std::string::npos);
        }
    }
    SUBCASE("identical seeds give bitwise-identical trajectories") {
        auto run = [] {
            Rng rng(42);
            auto w = random_tensor(rng, {5, 2});
            w.set_requires_grad(true);
            auto x = random_tensor(rng, {8, 5});
            auto y = Tensor::from_data({8, 2}, std::vector<double>(16, 1.0));
            Adam opt({w}, AdamConfig{0.05});
            for (int i = 0; i < 25; ++i) {
                binary_cross_entropy(sigmoid(matmul(x, w)), y).backward();
                opt.step();
            }
            return std::vector<double>(w.data().begin(), w.data().end());
        };
        CHECK(run() == run());
    }
}
