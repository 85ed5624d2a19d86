#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "avmae/tensor.hpp"
#include "test_util.hpp"

using namespace avmae;
using testutil::finite_difference_grad;
using testutil::max_rel_error;
using testutil::random_tensor;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Tensor id = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_vector({2, 2}, {3, -1, 2, 5});
    Tensor c = matmul(id, a);
    for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c.at(i), a.at(i));
}

TEST(Matmul, HandComputedProduct) {
    Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_vector({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(c.at(0), 3.0);
    EXPECT_DOUBLE_EQ(c.at(1), 7.0);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
    Tensor z = Tensor::zeros({3, 3});
    Rng rng(7);
    Tensor a = random_tensor({3, 2}, rng);
    Tensor c = matmul(z, a);
    for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
    }
}

TEST(Elementwise, SoftmaxOfZerosIsUniform) {
    Tensor x = Tensor::zeros({1, 3});
    Tensor p = softmax(x);
    for (size_t j = 0; j < 3; ++j) EXPECT_NEAR(p.at(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Elementwise, LayernormOfConstantRowIsZero) {
    Tensor x = Tensor::full({2, 5}, 3.7);
    Tensor y = layernorm(x, 1e-6);
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Elementwise, GeluAtZeroIsZero) {
    Tensor x = Tensor::zeros({1, 1});
    EXPECT_DOUBLE_EQ(gelu(x).at(0), 0.0);
}

TEST(Elementwise, NonFiniteInputIsNumericError) {
    Tensor x = Tensor::from_vector({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    Tensor y = Tensor::zeros({1, 2});
    EXPECT_THROW(add(x, y), NumericError);
    EXPECT_THROW(mul(x, y), NumericError);
    EXPECT_THROW(gelu(x), NumericError);
    EXPECT_THROW(layernorm(x, 1e-6), NumericError);
    EXPECT_THROW(softmax(x), NumericError);
    Tensor inf = Tensor::from_vector({1, 1}, {std::numeric_limits<double>::infinity()});
    EXPECT_THROW(gelu(inf), NumericError);
}

TEST(Elementwise, SoftmaxRowsSumToOne) {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({7, 11}, rng, -20.0, 20.0);
        Tensor p = softmax(x);
        for (size_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Elementwise, LayernormRowStatistics) {
    Rng rng(5);
    Tensor x = random_tensor({8, 64}, rng);
    Tensor y = layernorm(x, 1e-12);
    const size_t d = y.cols();
    for (size_t i = 0; i < y.rows(); ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += y.at(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= static_cast<double>(d);
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_LT(std::abs(var - 1.0), 1e-8);
    }
}

TEST(Backward, SumGivesOnes) {
    Rng rng(1);
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(x);
    backward(loss);
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresAnalytic) {
    Tensor x = Tensor::from_vector({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(mul(x, x));
    backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, MatmulChainMatchesFiniteDifferences) {
    Rng rng(42);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor c = random_tensor({5, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    c.set_requires_grad(true);

    auto forward = [&]() { return sum(matmul(matmul(a, b), c)).value(); };

    {
        Tape tape;
        Tensor loss = sum(matmul(matmul(a, b), c));
        backward(loss);
    }
    for (Tensor* t : {&a, &b, &c}) {
        auto fd = finite_difference_grad(forward, *t, 1e-5);
        EXPECT_LT(max_rel_error(t->grad(), fd), 1e-6);
    }
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor x = Tensor::zeros({2, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = scale(x, 2.0);
    EXPECT_THROW(backward(y), ContractError);
}

TEST(Backward, EmptyTapeIsContractError) {
    Tensor x = Tensor::zeros({1});
    x.set_requires_grad(true);
    Tape tape;
    EXPECT_THROW(backward(x), ContractError);
}

TEST(Tape, EntriesAreTopologicallyOrdered) {
    Rng rng(9);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape tape;
    Tensor c = matmul(a, b);
    Tensor d = add(c, b);
    Tensor e = gelu(d);
    backward(mean(e));
    for (const auto& entry : tape.entries()) {
        for (uint64_t in_id : entry.in_ids) {
            EXPECT_LT(in_id, entry.out_id);
        }
    }
}

TEST(Tape, NestedTapesRejected) {
    Tape tape;
    EXPECT_THROW(Tape inner, ContractError);
}

TEST(Forward, DeterministicGivenIdenticalInputs) {
    Rng rng(77);
    Tensor x = random_tensor({6, 6}, rng);
    Tensor y1 = softmax(matmul(gelu(x), transpose(x)));
    Tensor y2 = softmax(matmul(gelu(x), transpose(x)));
    for (size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1.at(i), y2.at(i));
}

// ---------------------------------------------------------------------------
// Finite-difference property test across every differentiable op: central
// differences with h=1e-5 at fp64 agree with backward() within relative
// error 1e-4 on random inputs in [-1,1], over 20 seeds.
// ---------------------------------------------------------------------------

namespace {

struct OpCase {
    const char* name;
    std::vector<Shape> input_shapes;
    std::function<Tensor(const std::vector<Tensor>&)> apply;
    double lo = -1.0;
    double hi = 1.0;
};

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    cases.push_back({"matmul", {{3, 4}, {4, 2}},
                     [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }});
    cases.push_back({"matmul_nt", {{3, 4}, {5, 4}},
                     [](const std::vector<Tensor>& in) { return matmul_nt(in[0], in[1]); }});
    cases.push_back({"add", {{2, 5}, {2, 5}},
                     [](const std::vector<Tensor>& in) { return add(in[0], in[1]); }});
    cases.push_back({"sub", {{2, 5}, {2, 5}},
                     [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }});
    cases.push_back({"mul", {{2, 5}, {2, 5}},
                     [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }});
    cases.push_back({"mul_aliased", {{2, 5}},
                     [](const std::vector<Tensor>& in) { return mul(in[0], in[0]); }});
    cases.push_back({"scale", {{3, 3}},
                     [](const std::vector<Tensor>& in) { return scale(in[0], -1.7); }});
    cases.push_back({"add_rowvector", {{4, 3}, {3}},
                     [](const std::vector<Tensor>& in) { return add_rowvector(in[0], in[1]); }});
    cases.push_back({"mul_rowvector", {{4, 3}, {3}},
                     [](const std::vector<Tensor>& in) { return mul_rowvector(in[0], in[1]); }});
    cases.push_back({"gelu", {{3, 4}},
                     [](const std::vector<Tensor>& in) { return gelu(in[0]); }});
    cases.push_back({"layernorm", {{3, 6}},
                     [](const std::vector<Tensor>& in) { return layernorm(in[0], 1e-6); }});
    cases.push_back({"softmax_rows", {{3, 5}},
                     [](const std::vector<Tensor>& in) { return softmax(in[0], 1); }});
    cases.push_back({"softmax_cols", {{3, 5}},
                     [](const std::vector<Tensor>& in) { return softmax(in[0], 0); }});
    cases.push_back({"log", {{2, 4}},
                     [](const std::vector<Tensor>& in) { return avmae::log(in[0]); },
                     0.5, 1.5});
    cases.push_back({"transpose", {{3, 4}},
                     [](const std::vector<Tensor>& in) { return transpose(in[0]); }});
    cases.push_back({"reshape", {{3, 4}},
                     [](const std::vector<Tensor>& in) { return reshape(in[0], {2, 6}); }});
    cases.push_back({"concat_rows", {{2, 3}, {4, 3}},
                     [](const std::vector<Tensor>& in) { return concat_rows({in[0], in[1]}); }});
    cases.push_back({"concat_cols", {{3, 2}, {3, 4}},
                     [](const std::vector<Tensor>& in) { return concat_cols({in[0], in[1]}); }});
    cases.push_back({"slice_rows", {{5, 3}},
                     [](const std::vector<Tensor>& in) { return slice_rows(in[0], 1, 3); }});
    cases.push_back({"slice_cols", {{3, 6}},
                     [](const std::vector<Tensor>& in) { return slice_cols(in[0], 2, 3); }});
    cases.push_back({"gather_rows_with_duplicates", {{4, 3}},
                     [](const std::vector<Tensor>& in) {
                         return gather_rows(in[0], {2, 0, 2, 3});
                     }});
    cases.push_back({"pick", {{3, 4}},
                     [](const std::vector<Tensor>& in) {
                         return pick(in[0], {0, 1, 2, 1}, {3, 0, 2, 0});
                     }});
    cases.push_back({"sum", {{3, 4}},
                     [](const std::vector<Tensor>& in) { return sum(in[0]); }});
    cases.push_back({"mean", {{3, 4}},
                     [](const std::vector<Tensor>& in) { return mean(in[0]); }});
    cases.push_back({"mean_rows", {{5, 3}},
                     [](const std::vector<Tensor>& in) { return mean_rows(in[0]); }});
    cases.push_back({"l2_normalize_rows", {{4, 5}},
                     [](const std::vector<Tensor>& in) { return l2_normalize_rows(in[0]); }});
    return cases;
}

}  // namespace

TEST(GradientProperty, EveryOpMatchesFiniteDifferencesOver20Seeds) {
    for (const OpCase& oc : op_cases()) {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed * 1000 + 17);
            std::vector<Tensor> inputs;
            for (const Shape& s : oc.input_shapes) {
                inputs.push_back(random_tensor(s, rng, oc.lo, oc.hi));
            }
            // Weighted sum makes every output element matter distinctly.
            Tensor w;
            {
                Tensor probe = oc.apply(inputs);
                w = random_tensor(probe.shape(), rng, 0.5, 1.5);
            }
            auto forward = [&]() { return sum(mul(oc.apply(inputs), w)).value(); };
            for (Tensor& in : inputs) in.set_requires_grad(true);
            {
                Tape tape;
                backward(sum(mul(oc.apply(inputs), w)));
            }
            for (size_t k = 0; k < inputs.size(); ++k) {
                auto fd = finite_difference_grad(forward, inputs[k], 1e-5);
                const double err = max_rel_error(inputs[k].grad(), fd);
                EXPECT_LT(err, 1e-4) << oc.name << " input " << k << " seed " << seed;
                inputs[k].zero_grad();
            }
        }
    }
}

TEST(GradientProperty, GradAccumulatesAcrossBackwardCalls) {
    Tensor x = Tensor::from_vector({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    {
        Tape tape;
        backward(sum(x));
    }
    {
        Tape tape;
        backward(sum(x));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}
