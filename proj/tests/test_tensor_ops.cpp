#include "test_util.hpp"

#include "tljd/grad_check.hpp"
#include "tljd/ops.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace tljd;
using testutil::random_matrix;

TEST(Tensor, RejectsZeroDimensionAndLengthMismatch)
{
    EXPECT_THROW(Tensor({2, 0}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
}

TEST(ParamStore, NamesUniqueAndZeroGrads)
{
    ParamStore s(3);
    s.add_uniform("w", {2, 3}, 3);
    EXPECT_THROW(s.add_constant("w", {1, 1}, 0.0), ConfigError);
    EXPECT_THROW(s.add_constant("has space", {1, 1}, 0.0), ConfigError);
    s.grad("w").fill(2.0);
    s.zero_grads();
    for (double g : s.grad("w").data())
        EXPECT_EQ(g, 0.0);
    EXPECT_EQ(s.grad("w").shape(), s.value("w").shape());
    for (double v : s.value("w").data())
        EXPECT_LE(std::fabs(v), 1.0 / std::sqrt(3.0));
}

TEST(ForwardBackward, IdentityMatmulSum)
{
    ParamStore s;
    s.add("x", Tensor::column({1.0, 2.0}));
    const double loss = forward_backward(s, [](Tape& t) {
        Var w = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
        return sum(matmul(w, t.param("x")));
    });
    EXPECT_EQ(loss, 3.0);
    EXPECT_EQ(s.grad("x")[0], 1.0);
    EXPECT_EQ(s.grad("x")[1], 1.0);
}

TEST(ForwardBackward, SquaredErrorHandDerivative)
{
    ParamStore s;
    s.add("w", Tensor::scalar(0.0));
    const double loss = forward_backward(s, [](Tape& t) {
        Var pred = scale(t.param("w"), 1.0);
        return mean(square(sub(pred, t.constant(Tensor::scalar(2.0)))));
    });
    EXPECT_EQ(loss, 4.0);
    EXPECT_EQ(s.grad("w").item(), -4.0);
}

TEST(ForwardBackward, LogOfNonPositiveIsDomainError)
{
    ParamStore s;
    s.add("w", Tensor::row({1.0, -0.5}));
    try {
        evaluate_graph(s, [](Tape& t) { return sum(log(t.param("w"))); });
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
    }
}

TEST(ForwardBackward, ShapeErrorNamesBothShapes)
{
    Tape t;
    Var a = t.constant(Tensor::matrix(2, 3));
    Var b = t.constant(Tensor::matrix(2, 2));
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2x2]"), std::string::npos) << msg;
    }
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(ForwardBackward, MixedGraphMatchesFiniteDifferences)
{
    ParamStore s(11);
    s.add("p", Tensor::row({0.3, -0.7, 1.1, 0.4, -0.2}));
    auto fn = [](Tape& t) {
        Var p = t.param("p");
        Var r = relu(p);
        Var e = exp(scale(p, 0.5));
        Var l = log(add_scalar(square(p), 1.0));
        Var sm = softmax(add(mul(r, e), l), 1);
        Var w = t.constant(Tensor::row({1.0, -2.0, 3.0, 0.5, 1.5}));
        return sum(mul(sm, w));
    };
    const auto report = grad_check(fn, s, 1e-4);
    EXPECT_TRUE(report.passed()) << report.max_rel_error;
    EXPECT_EQ(report.params.front().checked, 5u);
}

TEST(Softmax, Examples)
{
    Tape t;
    Var u = softmax(t.constant(Tensor::row({0, 0, 0, 0})), 1);
    for (double v : u.value().data())
        EXPECT_DOUBLE_EQ(v, 0.25);
    Var a = softmax(t.constant(Tensor::row({std::log(1.0), std::log(3.0)})), 1);
    EXPECT_NEAR(a.value()[0], 0.25, 1e-15);
    EXPECT_NEAR(a.value()[1], 0.75, 1e-15);
}

TEST(Softmax, RandomVectorMatchesDirectFormulaAndShiftInvariant)
{
    std::mt19937_64 rng(5);
    Tensor x = random_matrix(rng, 1, 7, -3, 3);
    Tape t;
    const Tensor y = softmax(t.constant(x), 1).value();
    double denom = 0.0;
    for (double v : x.data())
        denom += std::exp(v);
    double total = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_NEAR(y[i], std::exp(x[i]) / denom, 1e-12);
        EXPECT_GT(y[i], 0.0);
        total += y[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    Tensor shifted = x;
    for (double& v : shifted.data())
        v += 123.0;
    const Tensor ys = softmax(t.constant(shifted), 1).value();
    for (std::size_t i = 0; i < 7; ++i)
        EXPECT_NEAR(ys[i], y[i], 1e-12);
}

TEST(Softmax, ColumnAxisSumsToOne)
{
    std::mt19937_64 rng(6);
    Tape t;
    const Tensor y = softmax(t.constant(random_matrix(rng, 5, 3, -50, 50)), 0).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < 5; ++r)
            s += y(r, c);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(LayerNorm, Examples)
{
    Tape t;
    Var g4 = t.constant(Tensor::row({1, 1, 1, 1}));
    Var b4 = t.constant(Tensor::row({0, 0, 0, 0}));
    const Tensor flat = layer_norm(t.constant(Tensor::row({1, 1, 1, 1})), g4, b4, 1e-5).value();
    for (double v : flat.data())
        EXPECT_EQ(v, 0.0);
    Var g2 = t.constant(Tensor::row({1, 1}));
    Var b2 = t.constant(Tensor::row({0, 0}));
    const Tensor two = layer_norm(t.constant(Tensor::row({0, 2})), g2, b2, 0.0).value();
    EXPECT_DOUBLE_EQ(two[0], -1.0);
    EXPECT_DOUBLE_EQ(two[1], 1.0);
}

TEST(LayerNorm, RandomRowsHaveZeroMeanUnitVariance)
{
    std::mt19937_64 rng(8);
    Tape t;
    Var g = t.constant(Tensor::row(std::vector<double>(6, 1.0)));
    Var b = t.constant(Tensor::row(std::vector<double>(6, 0.0)));
    const Tensor y = layer_norm(t.constant(random_matrix(rng, 3, 6, -4, 4)), g, b, 1e-12).value();
    for (std::size_t r = 0; r < 3; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 6; ++c)
            mu += y(r, c);
        mu /= 6.0;
        for (std::size_t c = 0; c < 6; ++c)
            var += (y(r, c) - mu) * (y(r, c) - mu);
        EXPECT_LT(std::fabs(mu), 1e-10);
        EXPECT_NEAR(var / 6.0, 1.0, 1e-9);
    }
}

TEST(LayerNorm, AxisOfLengthOneIsRejected)
{
    Tape t;
    Var one = t.constant(Tensor::row({1.0}));
    EXPECT_THROW(layer_norm(t.constant(Tensor::matrix(3, 1)), one, one, 1e-5), ShapeError);
}

TEST(ExpLog, RoundTripAboveOne)
{
    std::mt19937_64 rng(9);
    Tape t;
    Tensor x = random_matrix(rng, 4, 5, 1.0, 20.0);
    const Tensor y = exp(log(t.constant(x))).value();
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_NEAR(y[i], x[i], 1e-12 * x[i]);
}

TEST(Primitives, PureFunctionsAreBitIdentical)
{
    std::mt19937_64 rng(10);
    const Tensor a = random_matrix(rng, 3, 4);
    const Tensor b = random_matrix(rng, 4, 2);
    auto run = [&] {
        Tape t;
        return softmax(matmul(relu(t.constant(a)), t.constant(b)), 1).value();
    };
    EXPECT_EQ(run(), run());
}

TEST(Tape, RewindDiscardsNodesOnNonRecordingTape)
{
    ParamStore s;
    s.add("w", Tensor::row({1.0, 2.0}));
    Tape t(&s, false);
    Var w = t.param("w");
    const std::size_t mark = t.node_count();
    sum(exp(w));
    EXPECT_GT(t.node_count(), mark);
    t.rewind(mark);
    EXPECT_EQ(t.node_count(), mark);
    EXPECT_DOUBLE_EQ(sum(w).value().item(), 3.0);
    Tape rec(&s, true);
    EXPECT_THROW(rec.rewind(0), StateError);
}

// Per-primitive gradient checks: each graph reduces the primitive's output
// against fixed random weights so every output element carries gradient.

namespace {

void expect_gradients_match(ParamStore& s, const std::function<Var(Tape&)>& op, std::uint64_t seed)
{
    Shape out_shape;
    {
        Tape probe(&s, false);
        out_shape = op(probe).value().shape();
    }
    std::mt19937_64 rng(seed);
    const Tensor weights = random_matrix(rng, out_shape[0], out_shape.size() > 1 ? out_shape[1] : 1);
    auto fn = [&](Tape& t) { return sum(mul(op(t), t.constant(weights))); };
    const auto report = grad_check(fn, s, 1e-4);
    EXPECT_TRUE(report.passed()) << "max rel error " << report.max_rel_error;
    for (const auto& pc : report.params)
        EXPECT_GT(pc.checked, 0u) << pc.name;
}

struct Fixture {
    ParamStore s{1};
    std::mt19937_64 rng{17};

    void add(const std::string& name, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0)
    {
        s.add(name, random_matrix(rng, r, c, lo, hi));
    }
};

} // namespace

TEST(GradCheck, BinaryPrimitives)
{
    Fixture f;
    f.add("a", 3, 4);
    f.add("b", 4, 2);
    f.add("c", 3, 4);
    f.add("d", 2, 4);
    f.add("rb", 1, 4);
    f.add("cb", 3, 1);
    expect_gradients_match(f.s, [](Tape& t) { return matmul(t.param("a"), t.param("b")); }, 1);
    expect_gradients_match(f.s, [](Tape& t) { return matmul_nt(t.param("a"), t.param("d")); }, 2);
    expect_gradients_match(f.s, [](Tape& t) { return add(t.param("a"), t.param("c")); }, 3);
    expect_gradients_match(f.s, [](Tape& t) { return sub(t.param("a"), t.param("c")); }, 4);
    expect_gradients_match(f.s, [](Tape& t) { return mul(t.param("a"), t.param("c")); }, 5);
    expect_gradients_match(f.s, [](Tape& t) { return add_row_bias(t.param("a"), t.param("rb")); }, 6);
    expect_gradients_match(f.s, [](Tape& t) { return add_col_bias(t.param("a"), t.param("cb")); }, 7);
    expect_gradients_match(f.s, [](Tape& t) { return scale_rows(t.param("a"), t.param("cb")); }, 8);
    expect_gradients_match(f.s, [](Tape& t) { return lerp_scalars(sum(t.param("a")), 0.3, mean(t.param("c")), 0.7); },
                           9);
}

TEST(GradCheck, ElementwisePrimitives)
{
    Fixture f;
    f.add("a", 3, 4);
    f.add("pos", 3, 4, 0.5, 3.0);
    expect_gradients_match(f.s, [](Tape& t) { return scale(t.param("a"), -1.7); }, 1);
    expect_gradients_match(f.s, [](Tape& t) { return add_scalar(t.param("a"), 2.0); }, 2);
    expect_gradients_match(f.s, [](Tape& t) { return relu(t.param("a")); }, 3);
    expect_gradients_match(f.s, [](Tape& t) { return exp(t.param("a")); }, 4);
    expect_gradients_match(f.s, [](Tape& t) { return log(t.param("pos")); }, 5);
    expect_gradients_match(f.s, [](Tape& t) { return square(t.param("a")); }, 6);
    expect_gradients_match(f.s, [](Tape& t) { return abs(t.param("a")); }, 7);
}

TEST(GradCheck, NormalizationAndReductions)
{
    Fixture f;
    f.add("a", 3, 5, -2, 2);
    f.add("w", 3, 5, 0.0, 1.0);
    f.add("g", 1, 5);
    f.add("b", 1, 5);
    expect_gradients_match(f.s, [](Tape& t) { return softmax(t.param("a"), 1); }, 1);
    expect_gradients_match(f.s, [](Tape& t) { return softmax(t.param("a"), 0); }, 2);
    expect_gradients_match(f.s, [](Tape& t) { return logsumexp_rows(t.param("a")); }, 3);
    expect_gradients_match(
        f.s, [](Tape& t) { return log_weighted_sum_exp_rows(softmax(t.param("w"), 1), t.param("a")); }, 4);
    expect_gradients_match(f.s, [](Tape& t) { return log_weighted_mean_exp_rows(t.param("w"), t.param("a")); }, 8);
    expect_gradients_match(f.s,
                           [](Tape& t) { return layer_norm(t.param("a"), t.param("g"), t.param("b"), 1e-5); }, 5);
    expect_gradients_match(f.s, [](Tape& t) { return sum(t.param("a")); }, 6);
    expect_gradients_match(f.s, [](Tape& t) { return mean(t.param("a")); }, 7);
}

TEST(GradCheck, StructuralPrimitives)
{
    Fixture f;
    f.add("a", 3, 4);
    f.add("b", 2, 4);
    f.add("c", 3, 2);
    expect_gradients_match(f.s, [](Tape& t) { return concat_rows({t.param("a"), t.param("b")}); }, 1);
    expect_gradients_match(f.s, [](Tape& t) { return concat_cols({t.param("a"), t.param("c")}); }, 2);
    expect_gradients_match(f.s, [](Tape& t) { return slice_rows(t.param("a"), 1, 2); }, 3);
    expect_gradients_match(f.s, [](Tape& t) { return slice_cols(t.param("a"), 1, 2); }, 4);
    expect_gradients_match(f.s, [](Tape& t) { return gather_rows(t.param("a"), {2, 0, 2}); }, 5);
    expect_gradients_match(f.s, [](Tape& t) { return transpose(t.param("a")); }, 6);
}

TEST(GradCheck, LinearModelIsExactToRoundoff)
{
    ParamStore s(2);
    s.add("w", Tensor::column({0.5, -1.5, 2.0}));
    const Tensor x = Tensor::matrix(2, 3, {1, 2, 3, -1, 0.5, 4});
    const auto report =
        grad_check([&](Tape& t) { return sum(matmul(t.constant(x), t.param("w"))); }, s, 1e-9);
    EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, ReluAtExactlyZeroIsExcludedNotFailed)
{
    ParamStore s;
    s.add("w", Tensor::row({0.0, 1.0}));
    const auto report = grad_check([](Tape& t) { return sum(relu(t.param("w"))); }, s, 1e-4);
    EXPECT_TRUE(report.passed());
    EXPECT_EQ(report.excluded, 1u);
    EXPECT_EQ(report.params.front().checked, 1u);
}

TEST(GradCheck, NonDeterministicGraphIsDetected)
{
    ParamStore s;
    s.add("w", Tensor::scalar(1.0));
    int calls = 0;
    auto fn = [&](Tape& t) { return add_scalar(t.param("w"), static_cast<double>(calls++)); };
    EXPECT_THROW(grad_check(fn, s, 1e-4), DeterminismError);
}

TEST(LogWeightedMeanExp, MatchesNaiveFormAndIsExactForEqualExponents)
{
    Tape t;
    const Tensor w = Tensor::matrix(2, 3, {0.2, 0.3, 0.1, 1.0, 2.0, 5.0});
    const Tensor z = Tensor::matrix(2, 3, {-1.0, 0.5, 2.0, -3.0, -3.0, -3.0});
    const Tensor out = log_weighted_mean_exp_rows(t.constant(w), t.constant(z)).value();
    for (std::size_t i = 0; i < 2; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            num += w(i, j) * std::exp(z(i, j));
            den += w(i, j);
        }
        EXPECT_NEAR(out[i], std::log(num / den), 1e-14);
    }
    EXPECT_EQ(out[1], -3.0);
    const double third = 1.0 / 3.0;
    const Tensor probs = Tensor::row({third, third, third});
    EXPECT_EQ(log_weighted_mean_exp_rows(t.constant(probs), t.constant(Tensor::matrix(1, 3))).value()[0], 0.0);
}
