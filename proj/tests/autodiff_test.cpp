#include "folio/autodiff.hpp"
#include "folio/error.hpp"
#include "folio/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace folio;
using namespace folio::ad;

namespace {

Tensor random_vector(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::vector(std::move(v));
}

}  // namespace

TEST(Tensor, RejectsShapeDataMismatch) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.at(1, 2), 6.0);
    EXPECT_EQ(m.shape_string(), "[2x3]");
}

TEST(Forward, ExpOfZeroIsOne) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({0.0}));
    EXPECT_EQ(exp(x).value()[0], 1.0);
}

TEST(Forward, SoftmaxOfConstantIsUniform) {
    for (double c : {-700.0, -3.0, 0.0, 2.5, 800.0}) {
        Tape t;
        const Var x = t.leaf(Tensor::vector({c, c, c}));
        const Tensor y = softmax(x).value();
        for (double v : y.data()) {
            EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
        }
    }
}

TEST(Forward, VarianceUsesPopulationNormalization) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1.0, 2.0, 3.0}));
    EXPECT_NEAR(variance(x).value().item(), 2.0 / 3.0, 1e-15);
}

TEST(Forward, ShapeMismatchNamesOpAndShapes) {
    Tape t;
    const Var a = t.leaf(Tensor::vector({1, 2, 3}));
    const Var b = t.leaf(Tensor::vector({1, 2}));
    try {
        (void)add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[3]"), std::string::npos);
        EXPECT_NE(msg.find("[2]"), std::string::npos);
    }
    const Var m = t.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    EXPECT_THROW((void)matvec(m, a), ShapeError);
}

TEST(Forward, DomainErrors) {
    Tape t;
    const Var a = t.leaf(Tensor::vector({1, 2}));
    const Var z = t.leaf(Tensor::vector({1, 0}));
    EXPECT_THROW((void)div(a, z), DomainError);
    const Var neg = t.leaf(Tensor::vector({-1.0}));
    EXPECT_THROW((void)sqrt(neg), DomainError);
}

TEST(Forward, SignAndIndicators) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({-2.0, 0.0, 3.0}));
    EXPECT_EQ(sign(x).value().values(), (std::vector<double>{-1.0, 0.0, 1.0}));
    const Var th = t.constant(Tensor::scalar(0.0));
    EXPECT_EQ(indicator_greater(x, th).value().values(), (std::vector<double>{0, 0, 1}));
    EXPECT_EQ(indicator_less(x, th).value().values(), (std::vector<double>{1, 0, 0}));
}

TEST(Backward, SumGivesOnes) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1, -2, 3, 0.5, 7}));
    const Gradients g = t.backward(sum(x));
    EXPECT_EQ(g[x].values(), std::vector<double>(5, 1.0));
}

TEST(Backward, SoftmaxJacobianRow) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({0.0, 0.0}));
    const Gradients g = t.backward(index(softmax(x), 0));
    EXPECT_NEAR(g[x][0], 0.25, 1e-15);
    EXPECT_NEAR(g[x][1], -0.25, 1e-15);
}

TEST(Backward, AbsSubgradient) {
    for (double v : {3.0, -3.0}) {
        Tape t;
        const Var x = t.leaf(Tensor::scalar(v));
        EXPECT_EQ(t.backward(abs(x))[x].item(), v > 0 ? 1.0 : -1.0);
    }
}

TEST(Backward, StraightThroughOpsHaveZeroPartials) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({-1.5, 0.5, 2.0}));
    const Var th = t.leaf(Tensor::scalar(0.1));
    const Var out = sum(sign(x) + indicator_greater(x, th) + indicator_less(x, th));
    const Gradients g = t.backward(out);
    EXPECT_EQ(g[x].values(), std::vector<double>(3, 0.0));
    EXPECT_EQ(g[th].item(), 0.0);
}

TEST(Backward, RejectsNonScalarOutput) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW((void)t.backward(exp(x)), ContractError);
}

TEST(Backward, DisconnectedLeafGetsExactZero) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1, 2}));
    const Var unused = t.leaf(Tensor::vector({4, 5, 6}));
    const Var out = sum(exp(x));
    const Gradients g = t.backward(out);
    EXPECT_EQ(g[unused].values(), std::vector<double>(3, 0.0));

    // Perturbing the disconnected input changes nothing after replay.
    const double before = out.value().item();
    t.set_value(unused, Tensor::vector({-9, 9, 0}));
    t.refresh();
    EXPECT_EQ(out.value().item(), before);
}

TEST(Tape, ReplayIsBitIdentical) {
    Rng rng(3);
    Tape t;
    const Var x = t.leaf(random_vector(rng, 8));
    const Var m = t.leaf(Tensor::matrix(3, 8, random_vector(rng, 24).values()));
    const Var y = softmax(tanh(matvec(m, x)));
    const Var out = variance(y) + mean(sigmoid_shifted(abs(x), 0.3));
    const auto replayed = t.replay();
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(replayed[i], t.node(i).value) << "node " << i;
    }
    // Topological order: parents precede children.
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t p : t.node(i).parents) {
            EXPECT_LT(p, i);
        }
    }
    (void)out;
}

TEST(Tape, SetValueRefreshMatchesFreshRecording) {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1.0, 2.0}));
    const Var out = sum(exp(x) * x);
    t.set_value(x, Tensor::vector({0.5, -1.0}));
    t.refresh();
    Tape fresh;
    const Var x2 = fresh.leaf(Tensor::vector({0.5, -1.0}));
    EXPECT_EQ(out.value(), sum(exp(x2) * x2).value());
}

TEST(GradCheck, SumOfSoftmaxHasZeroGradient) {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor x = random_vector(rng, 4);
        Tape t;
        const Var v = t.leaf(x);
        const Tensor g = t.backward(sum(softmax(v)))[v];
        for (double gi : g.data()) {
            EXPECT_NEAR(gi, 0.0, 1e-15);
        }
    }
}

TEST(GradCheck, EveryDifferentiableOpMatchesCentralDifferences) {
    Rng rng(5);
    const Tensor weights = random_vector(rng, 6);
    const Tensor mat = Tensor::matrix(6, 6, random_vector(rng, 36).values());
    // Each f maps a length-6 vector to a scalar through one op under test.
    const std::vector<std::pair<const char*, std::function<Var(Tape&, const Var&)>>> cases = {
        {"add/sub/mul/div",
         [&](Tape& t, const Var& x) {
             const Var w = t.constant(weights);
             return sum((x + w) * (x - w) / (exp(x) + 1.0));
         }},
        {"matvec", [&](Tape& t, const Var& x) { return dot(matvec(t.constant(mat), x), x); }},
        {"abs/exp", [&](Tape& t, const Var& x) { return dot(exp(abs(x) * 0.5), t.constant(weights)); }},
        {"sigmoid_shifted",
         [&](Tape& t, const Var& x) { return dot(sigmoid_shifted(x, 1.7), t.constant(weights)); }},
        {"tanh", [&](Tape& t, const Var& x) { return dot(tanh(x), t.constant(weights)); }},
        {"softmax", [&](Tape& t, const Var& x) { return dot(softmax(x), t.constant(weights)); }},
        {"softmax-rows",
         [&](Tape& t, const Var& x) {
             const Var rows = reshape(x, {2, 3});
             return dot(reshape(softmax(rows), {6}), t.constant(weights));
         }},
        {"mean/variance/sqrt", [](Tape&, const Var& x) { return mean(x) / sqrt(variance(x)); }},
        {"maximum",
         [&](Tape& t, const Var& x) { return dot(maximum(x, t.constant(weights)), x); }},
        {"index/slice/stack",
         [](Tape&, const Var& x) {
             const Var parts[] = {index(x, 4), slice(x, 1, 2), index(x, 0)};
             const Var s = stack(parts);
             return dot(s, s);
         }},
        {"outer/outer_sub/row_sum/broadcast_rows",
         [&](Tape& t, const Var& x) {
             const Var spread = row_sum(abs(outer_sub(x, x)));
             const Var lam = outer(t.constant(weights), x) - broadcast_rows(spread, 6);
             return sum(softmax(lam) * t.constant(mat));
         }},
    };
    for (const auto& [name, f] : cases) {
        for (int rep = 0; rep < 10; ++rep) {
            const Tensor x = random_vector(rng, 6);
            EXPECT_LT(grad_check(f, x), 1e-4) << name;
        }
    }
}

TEST(GradCheck, SignOnPathOnlyPerturbsMagnitudes) {
    Rng rng(9);
    auto f = [](Tape&, const Var& x) { return sum(sign(x) * softmax(abs(x)) * x); };
    for (int rep = 0; rep < 20; ++rep) {
        EXPECT_LT(grad_check(f, random_vector(rng, 5)), 1e-4);
    }
    // A coordinate within eps of zero is skipped rather than straddled.
    const Tensor near_zero = Tensor::vector({1.0, 5e-6, -0.7});
    EXPECT_LT(grad_check(f, near_zero), 1e-4);
}

// The analytic gradient of sum(softmax(x)) is exactly zero, but the central
// difference sees f(x+h) - f(x-h) at the level of one ulp of 1.0, i.e.
// |central| <= 2^-52 / (2 eps). Against the 1e-8 floor that is ~1e-3, so the
// check is bounded by rounding noise here rather than by 1e-6.
TEST(GradCheck, SumOfSoftmaxDiscrepancyIsRoundingNoise) {
    Rng rng(11);
    const double eps = 1e-5;
    const double noise_floor = std::ldexp(1.0, -52) / (2.0 * eps) / 1e-8;
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor x = random_vector(rng, 4);
        const double err =
            grad_check([](Tape&, const Var& v) { return sum(softmax(v)); }, x, {eps, true});
        EXPECT_LE(err, 2.0 * noise_floor);
    }
}
