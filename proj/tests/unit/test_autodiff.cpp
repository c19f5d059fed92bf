#include <gtest/gtest.h>

#include <cmath>

#include "partaff/adam.hpp"
#include "partaff/autodiff.hpp"
#include "partaff/error.hpp"
#include "partaff/gradcheck.hpp"
#include "partaff/gradcheck_suite.hpp"
#include "partaff/rng.hpp"

using namespace partaff;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, RejectsNonFiniteUnlessScratch) {
    EXPECT_THROW(Tensor({2}, {1.0, NAN}), DomainError);
    EXPECT_THROW(Tensor({1}, {INFINITY}), DomainError);
    EXPECT_NO_THROW(Tensor::scratch({1}, {NAN}));
    EXPECT_FALSE(Tensor::scratch({1}, {NAN}).all_finite());
}

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    EXPECT_EQ(Tensor::zeros({2, 0}).size(), 0u);
}

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
    Tape tape;
    const auto y = softmax(tape.constant(Tensor::zeros({1, 3})));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y.value()[i], 1.0 / 3.0);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
    Rng rng(3);
    Tape tape;
    const auto y = softmax(tape.constant(random_tensor(rng, {50, 7}, -30.0, 30.0)));
    for (std::size_t r = 0; r < 50; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            EXPECT_GE(y.value()[r * 7 + c], 0.0);
            s += y.value()[r * 7 + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Autodiff, ReluAtNegativeHasZeroValueAndGradient) {
    Tape tape;
    const auto x = tape.parameter(Tensor::scalar(-2.0));
    const auto y = relu(x);
    EXPECT_EQ(y.value().item(), 0.0);
    EXPECT_EQ(tape.backward(sum(y))[0].item(), 0.0);
}

TEST(Autodiff, MatmulMatchesTripleLoop) {
    Rng rng(11);
    const Tensor a = random_tensor(rng, {3, 3});
    const Tensor b = random_tensor(rng, {3, 3});
    Tape tape;
    const auto c = matmul(tape.constant(a), tape.constant(b));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
            EXPECT_NEAR(c.value()[i * 3 + j], acc, 1e-15);
        }
    }
}

TEST(Autodiff, MatmulShapeMismatch) {
    Tape tape;
    EXPECT_THROW(matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({2, 3}))), ShapeError);
    EXPECT_THROW(add(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({2}))), ShapeError);
}

TEST(Autodiff, LogOfNonPositiveIsAnError) {
    Tape tape;
    EXPECT_THROW(log(tape.constant(Tensor({2}, {1.0, 0.0}))), DomainError);
    EXPECT_THROW(log(tape.constant(Tensor({1}, {-1.0}))), DomainError);
}

TEST(Autodiff, SquareGradient) {
    Tape tape;
    const auto x = tape.parameter(Tensor::scalar(3.0));
    const auto g = tape.backward(sum(mul(x, x)));
    EXPECT_DOUBLE_EQ(g[0].item(), 6.0);
}

TEST(Autodiff, ConstantInParameterGivesExactZero) {
    Tape tape;
    const auto x = tape.parameter(Tensor({2}, {1.0, 2.0}));
    const auto unused = tape.parameter(Tensor({3}, {4.0, 5.0, 6.0}));
    const auto g = tape.backward(sum(exp(x)));
    for (double v : g[1].data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(tape.grad(unused).size(), 3u);
}

TEST(Autodiff, NonParameterLeavesUntouched) {
    Tape tape;
    const auto c = tape.constant(Tensor({2}, {1.0, 2.0}));
    const auto x = tape.parameter(Tensor({2}, {0.5, 0.5}));
    tape.backward(sum(mul(c, x)));
    const Tensor gc = tape.grad(c);
    for (double v : gc.data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, BackwardRequiresScalarAndFreshTape) {
    Tape tape;
    const auto x = tape.parameter(Tensor({2}, {1.0, 2.0}));
    EXPECT_THROW(tape.backward(x), ShapeError);
    const auto loss = sum(x);
    tape.backward(loss);
    EXPECT_TRUE(tape.consumed());
    EXPECT_THROW(tape.backward(loss), ValidationError);
}

TEST(Autodiff, MixingTapesIsRejected) {
    Tape a, b;
    EXPECT_THROW(add(a.constant(Tensor::scalar(1)), b.constant(Tensor::scalar(1))), ValidationError);
}

TEST(Autodiff, MseLinearSystemMatchesFiniteDifferences) {
    Rng rng(5);
    const Tensor x = random_tensor(rng, {4, 4});
    const Tensor y = random_tensor(rng, {4, 4});
    ScalarFn fn = [x, y](Tape& tape, std::span<const Var> p) {
        return mse(matmul(p[0], tape.constant(x)), tape.constant(y));
    };
    const auto report = finite_diff_check(fn, {random_tensor(rng, {4, 4})});
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Autodiff, IdenticalOpsAreBitIdentical) {
    auto run = [] {
        Rng rng(9);
        Tape tape;
        const auto w = tape.parameter(random_tensor(rng, {6, 5}));
        const auto x = tape.constant(random_tensor(rng, {10, 6}));
        const auto loss = mean(softplus(matmul(x, w)));
        return std::make_pair(loss.value(), tape.backward(loss)[0]);
    };
    const auto a = run();
    const auto b = run();
    EXPECT_TRUE(a.first.bit_equal(b.first));
    EXPECT_TRUE(a.second.bit_equal(b.second));
}

TEST(GradCheck, EveryPrimitivePasses) {
    for (const auto& c : run_gradcheck_suite(1)) {
        EXPECT_TRUE(c.report.passed) << c.name << " max rel err " << c.report.max_rel_error;
        EXPECT_LT(c.report.max_rel_error, 1e-6) << c.name;
        EXPECT_GT(c.report.checked, 0u) << c.name;
    }
}

TEST(GradCheck, ReluKinkIsExcluded) {
    ScalarFn fn = [](Tape&, std::span<const Var> p) { return sum(relu(p[0])); };
    const auto report = finite_diff_check(fn, {Tensor({3}, {0.0, 1.0, -1.0})});
    EXPECT_EQ(report.skipped_kinks, 1u);
    EXPECT_EQ(report.checked, 2u);
    EXPECT_TRUE(report.passed);
}

TEST(GradCheck, ComposedMlpLoss) {
    Rng rng(21);
    const Tensor x = random_tensor(rng, {8, 5});
    const Tensor y = random_tensor(rng, {8, 2}, 0.0, 1.0);
    ScalarFn fn = [x, y](Tape& tape, std::span<const Var> p) {
        const auto h = relu(add(matmul(tape.constant(x), p[0]), p[1]));
        return mse(sigmoid(add(matmul(h, p[2]), p[3])), tape.constant(y));
    };
    const auto report = finite_diff_check(
        fn, {random_tensor(rng, {5, 6}), random_tensor(rng, {6}), random_tensor(rng, {6, 2}), random_tensor(rng, {2})});
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(GradCheck, DetectsNondeterminism) {
    auto counter = std::make_shared<int>(0);
    ScalarFn fn = [counter](Tape& tape, std::span<const Var> p) {
        return sum(mul(p[0], tape.constant(Tensor::scalar(static_cast<double>(++*counter)))));
    };
    EXPECT_THROW(finite_diff_check(fn, {Tensor({1}, {1.0})}), ValidationError);
}

TEST(GradCheck, ReportsWrongGradient) {
    // Forward x^2, backward claims 3x.
    ScalarFn fn = [](Tape& tape, std::span<const Var> p) {
        const Tensor x = p[0].value();
        const Var y = tape.record(Tensor({1}, {x[0] * x[0]}), {p[0]},
                                  [x](std::span<const double> g, std::span<std::vector<double>*> gi) {
                                      (*gi[0])[0] += g[0] * 3.0 * x[0];
                                  });
        return sum(y);
    };
    EXPECT_FALSE(finite_diff_check(fn, {Tensor({1}, {0.7})}).passed);
}

TEST(Adam, ZeroGradientLeavesParams) {
    std::vector<Tensor> p{Tensor({2}, {1.5, -2.0})};
    AdamState s(0.1);
    adam_step(p, {Tensor::zeros({2})}, s);
    EXPECT_EQ(p[0][0], 1.5);
    EXPECT_EQ(p[0][1], -2.0);
    EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
    std::vector<Tensor> p{Tensor::scalar(0.0)};
    AdamState s(0.1);
    adam_step(p, {Tensor::scalar(1.0)}, s);
    // m_hat = 1, v_hat = 1: update = -lr / (1 + eps).
    EXPECT_NEAR(p[0].item(), -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ShapeMismatch) {
    std::vector<Tensor> p{Tensor::zeros({2})};
    AdamState s;
    EXPECT_THROW(adam_step(p, {Tensor::zeros({3})}, s), ShapeError);
    adam_step(p, {Tensor::zeros({2})}, s);
    std::vector<Tensor> q{Tensor::zeros({3})};
    EXPECT_THROW(adam_step(q, {Tensor::zeros({3})}, s), ShapeError);
}

TEST(Adam, QuadraticMatchesReferenceRun) {
    // Recorded once from an independent scalar implementation of Adam
    // (beta1 0.9, beta2 0.999, eps 1e-8) on f(x) = x^2 from x = 1, lr 0.3.
    const double reference[10] = {0.7000000015,         0.4072838529773544,   0.13196164968669466,
                                  -0.11019312353401028, -0.3002138289130758,  -0.4243935679520326,
                                  -0.4814898378431188,  -0.4805254998373202,  -0.4342789197339118,
                                  -0.3553281536638256};
    std::vector<Tensor> p{Tensor::scalar(1.0)};
    AdamState s(0.3);
    for (int k = 0; k < 10; ++k) {
        Tape tape;
        const auto x = tape.parameter(p[0]);
        adam_step(p, tape.backward(sum(mul(x, x))), s);
        EXPECT_NEAR(p[0].item(), reference[k], 1e-12) << "step " << k + 1;
    }
    EXPECT_EQ(s.step, 10);
    EXPECT_LT(std::abs(p[0].item()), 1.0);
    EXPECT_LT(std::abs(reference[3]), std::abs(reference[0]));
}
