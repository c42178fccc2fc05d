#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fd_check.hpp"
#include "picodiff/ops.hpp"
#include "picodiff/rng.hpp"
#include "picodiff/tensor.hpp"

using namespace picodiff;
using picodiff::testutil::fd_check;

namespace {

Tensor randn(std::vector<int> shape, uint64_t stream, float stddev = 1.0f) {
    Philox rng(99, stream);
    return Tensor::randn(std::move(shape), rng, stddev);
}

// Projects a tensor to a scalar against a fixed random direction so every
// element's gradient is well scaled.
Tensor project(const Tensor& t, uint64_t stream) {
    Tensor dir = randn(t.shape(), stream);
    return sum_all(mul(t, dir));
}

}  // namespace

TEST(Matmul, IdentityAndSmallCases) {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(eye, a);
    EXPECT_EQ(0, memcmp(r.data(), a.data(), 4 * sizeof(float)));

    Tensor perm = Tensor::from({2, 2}, {0, 1, 1, 0});
    Tensor r2 = matmul(a, perm);
    EXPECT_FLOAT_EQ(r2.data()[0], 2);
    EXPECT_FLOAT_EQ(r2.data()[1], 1);
    EXPECT_FLOAT_EQ(r2.data()[2], 4);
    EXPECT_FLOAT_EQ(r2.data()[3], 3);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x2]"), std::string::npos);
    }
}

// grad of sum(a*b) w.r.t. a equals ones * b^T, and both agree with central
// finite differences.
TEST(Matmul, GradientOfSumMatchesOnesBt) {
    Tensor a = randn({4, 3}, 1);
    Tensor b = randn({3, 5}, 2);
    a.set_requires_grad(true);
    {
        TapeScope scope;
        Tensor loss = sum_all(matmul(a, b));
        backward(loss);
    }
    // expected: (ones[4x5] * b^T)[i,j] = sum_n b[j, n]
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            double expect = 0.0;
            for (int n = 0; n < 5; ++n) expect += b.data()[j * 5 + n];
            EXPECT_NEAR(a.grad()[i * 3 + j], expect, 1e-4);
        }
    }
    auto res = fd_check([&] { return sum_all(matmul(a, b)); }, a);
    EXPECT_LT(res.rel_err, 1e-3);
}

TEST(Matmul, FiniteDifferenceBothOperands) {
    Tensor a = randn({5, 4}, 3).set_requires_grad(true);
    Tensor b = randn({4, 6}, 4).set_requires_grad(true);
    auto loss = [&] { return project(matmul(a, b), 5); };
    EXPECT_LT(fd_check(loss, a).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, b).rel_err, 1e-3);
}

TEST(Conv2d, OneByOneKernelIsPerPixelLinearMap) {
    Tensor x = randn({1, 1, 4, 4}, 6);
    Tensor w = Tensor::from({1, 1, 1, 1}, {2.0f});
    Tensor y = conv2d(x, w, Tensor(), 1, 0);
    for (int i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(y.data()[i], 2.0f * x.data()[i]);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
    Tensor x = randn({2, 3, 5, 5}, 7);
    Tensor w = Tensor::zeros({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) w.data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0f;
    Tensor y = conv2d(x, w, Tensor(), 1, 1);
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, ChannelMismatchThrows) {
    Tensor x = Tensor::zeros({1, 3, 8, 8});
    Tensor w = Tensor::zeros({5, 4, 3, 3});
    EXPECT_THROW(conv2d(x, w, Tensor(), 1, 1), ShapeError);
}

// Spec-sized case: random 4x3x8x8 input, 5x3x3x3 kernel.
TEST(Conv2d, FiniteDifference) {
    Tensor x = randn({4, 3, 8, 8}, 8).set_requires_grad(true);
    Tensor w = randn({5, 3, 3, 3}, 9, 0.3f).set_requires_grad(true);
    Tensor b = randn({5}, 10, 0.1f).set_requires_grad(true);
    auto loss = [&] { return project(conv2d(x, w, b, 1, 1), 11); };
    EXPECT_LT(fd_check(loss, x, 1e-3f, 48).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, w, 1e-3f, 48).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, b, 1e-3f, 8).rel_err, 1e-3);
}

TEST(Conv2d, StridedFiniteDifference) {
    Tensor x = randn({2, 3, 8, 8}, 12).set_requires_grad(true);
    Tensor w = randn({4, 3, 3, 3}, 13, 0.3f).set_requires_grad(true);
    auto loss = [&] { return project(conv2d(x, w, Tensor(), 2, 1), 14); };
    EXPECT_LT(fd_check(loss, x, 1e-3f, 48).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, w, 1e-3f, 48).rel_err, 1e-3);
}

TEST(Softmax, UniformOnConstantInput) {
    Tensor x = Tensor::zeros({3});
    Tensor y = softmax(x, 0);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 1.0f / 3.0f, 1e-7);
}

TEST(Softmax, MaxSubtractionPreventsOverflow) {
    Tensor x = Tensor::from({2}, {1000.0f, 0.0f});
    Tensor y = softmax(x, 0);
    EXPECT_NEAR(y.data()[0], 1.0f, 1e-6);
    EXPECT_NEAR(y.data()[1], 0.0f, 1e-6);
    EXPECT_TRUE(y.all_finite());
}

TEST(Softmax, RowsSumToOneForAnyFiniteInput) {
    for (uint64_t s = 0; s < 8; ++s) {
        float scl = (s % 2 == 0) ? 1.0f : 500.0f;
        Tensor x = randn({4, 7}, 100 + s, scl);
        Tensor y = softmax(x, -1);
        for (int r = 0; r < 4; ++r) {
            double sum = 0;
            for (int c = 0; c < 7; ++c) sum += y.data()[r * 7 + c];
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, FiniteDifference) {
    Tensor x = randn({2, 5}, 15).set_requires_grad(true);
    auto loss = [&] { return project(softmax(x, -1), 16); };
    EXPECT_LT(fd_check(loss, x).rel_err, 1e-3);
}

TEST(Softmax, NonLastAxisFiniteDifference) {
    Tensor x = randn({3, 4, 2}, 17).set_requires_grad(true);
    auto loss = [&] { return project(softmax(x, 1), 18); };
    EXPECT_LT(fd_check(loss, x).rel_err, 1e-3);
}

TEST(LayerNorm, ConstantRowMapsToBias) {
    Tensor x = Tensor::full({1, 4}, 3.25f);
    Tensor gain = Tensor::full({4}, 1.0f);
    Tensor bias = Tensor::zeros({4});
    Tensor y = layer_norm(x, gain, bias);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], 0.0f, 1e-3);
}

TEST(LayerNorm, TwoPointRow) {
    Tensor x = Tensor::from({1, 2}, {1.0f, 3.0f});
    Tensor gain = Tensor::full({2}, 1.0f);
    Tensor bias = Tensor::zeros({2});
    Tensor y = layer_norm(x, gain, bias, 1e-12f);
    EXPECT_NEAR(y.data()[0], -1.0f, 1e-5);
    EXPECT_NEAR(y.data()[1], 1.0f, 1e-5);
}

TEST(LayerNorm, FiniteDifference) {
    Tensor x = randn({3, 8}, 19).set_requires_grad(true);
    Tensor gain = randn({8}, 20, 0.5f).set_requires_grad(true);
    Tensor bias = randn({8}, 21, 0.5f).set_requires_grad(true);
    auto loss = [&] { return project(layer_norm(x, gain, bias), 22); };
    EXPECT_LT(fd_check(loss, x).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, gain).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, bias).rel_err, 1e-3);
}

TEST(GroupNorm, FiniteDifference) {
    Tensor x = randn({2, 8, 4, 4}, 23).set_requires_grad(true);
    Tensor gain = randn({8}, 24, 0.5f).set_requires_grad(true);
    Tensor bias = randn({8}, 25, 0.5f).set_requires_grad(true);
    auto loss = [&] { return project(group_norm(x, 4, gain, bias), 26); };
    EXPECT_LT(fd_check(loss, x, 1e-3f, 64).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, gain).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, bias).rel_err, 1e-3);
}

TEST(Attention, SingleKeyBroadcastsValue) {
    Tensor q = randn({5, 4}, 27);
    Tensor k = randn({1, 4}, 28);
    Tensor v = randn({1, 4}, 29);
    Tensor out = attention(q, k, v);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[r * 4 + c], v.data()[c], 1e-6);
    }
}

TEST(Attention, SaturatedSoftmaxSelectsMatchingRow) {
    // Orthogonal keys; query aligned with key row 1, scaled far beyond sqrt(d).
    Tensor k = Tensor::from({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    Tensor v = Tensor::from({2, 4}, {5, 6, 7, 8, 9, 10, 11, 12});
    Tensor q = Tensor::from({1, 4}, {0, 200, 0, 0});
    Tensor out = attention(q, k, v);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[c], v.data()[4 + c], 1e-4);
}

TEST(Attention, WidthMismatchThrows) {
    Tensor q = Tensor::zeros({3, 4});
    Tensor k = Tensor::zeros({2, 5});
    Tensor v = Tensor::zeros({2, 5});
    EXPECT_THROW(attention(q, k, v), ShapeError);
}

TEST(Attention, FiniteDifference3x4) {
    Tensor q = randn({3, 4}, 30).set_requires_grad(true);
    Tensor k = randn({3, 4}, 31).set_requires_grad(true);
    Tensor v = randn({3, 4}, 32).set_requires_grad(true);
    auto loss = [&] { return project(attention(q, k, v), 33); };
    EXPECT_LT(fd_check(loss, q).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, k).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, v).rel_err, 1e-3);
}

TEST(Attention, KeyBiasMasksPaddedKeys) {
    // Two batch entries; second key masked in batch 0 only.
    Tensor q = randn({2, 1, 2, 4}, 34);
    Tensor k = randn({2, 1, 2, 4}, 35);
    Tensor v = randn({2, 1, 2, 4}, 36);
    Tensor bias = Tensor::from({2, 2}, {0.0f, -1e30f, 0.0f, 0.0f});
    Tensor out = attention(q, k, v, bias);
    // batch 0 must equal single-key attention on key 0.
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c) {
            EXPECT_NEAR(out.data()[r * 4 + c], v.data()[c], 1e-6);
        }
    }
    EXPECT_TRUE(out.all_finite());
}

TEST(Backward, SumGivesOnes) {
    Tensor x = randn({3, 3}, 37).set_requires_grad(true);
    {
        TapeScope scope;
        backward(sum_all(x));
    }
    for (int i = 0; i < 9; ++i) EXPECT_FLOAT_EQ(x.grad()[i], 1.0f);
}

TEST(Backward, ReuseAccumulatesAdditively) {
    Tensor x = randn({4}, 38).set_requires_grad(true);
    {
        TapeScope scope;
        backward(add(sum_all(x), sum_all(x)));
    }
    for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(x.grad()[i], 2.0f);
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor x = randn({3}, 39).set_requires_grad(true);
    TapeScope scope;
    Tensor y = scale(x, 2.0f);
    EXPECT_THROW(backward(y), ContractError);
}

TEST(Backward, RequiresActiveTape) {
    Tensor x = Tensor::scalar(1.0f);
    EXPECT_THROW(backward(x), ContractError);
}

// A frozen tensor's grad buffer is never allocated, even when it feeds ops.
TEST(Backward, FrozenParameterNeverAllocatesGrad) {
    Tensor frozen = randn({4, 4}, 40);  // requires_grad defaults to false
    Tensor live = randn({4, 4}, 41).set_requires_grad(true);
    {
        TapeScope scope;
        backward(sum_all(matmul(frozen, live)));
    }
    EXPECT_FALSE(frozen.has_grad());
    EXPECT_TRUE(live.has_grad());
}

// Gradient still flows *through* ops on frozen weights to earlier tensors.
TEST(Backward, GradientFlowsThroughFrozenWeights) {
    Tensor x = randn({2, 4}, 42).set_requires_grad(true);
    Tensor w_frozen = randn({3, 4}, 43);
    {
        TapeScope scope;
        backward(sum_all(linear(x, w_frozen, Tensor())));
    }
    EXPECT_TRUE(x.has_grad());
    EXPECT_FALSE(w_frozen.has_grad());
}

TEST(Backward, NoTapeMeansNoRecording) {
    Tensor x = randn({4}, 44).set_requires_grad(true);
    Tensor y = scale(x, 3.0f);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, MiscellaneousFiniteDifferences) {
    Tensor x = randn({2, 3, 4, 4}, 45).set_requires_grad(true);
    Tensor t = randn({2, 3}, 46).set_requires_grad(true);
    EXPECT_LT(fd_check([&] { return project(add_channel_bias(x, t), 47); }, t).rel_err, 1e-3);
    EXPECT_LT(fd_check([&] { return project(upsample_nearest_2x(x), 48); }, x, 1e-3f, 32).rel_err,
              1e-3);
    EXPECT_LT(fd_check([&] { return project(chw_to_tokens(x), 49); }, x, 1e-3f, 32).rel_err, 1e-3);
    EXPECT_LT(fd_check([&] { return project(silu(x), 50); }, x, 1e-3f, 32).rel_err, 1e-3);
    EXPECT_LT(fd_check([&] { return project(gelu(x), 51); }, x, 1e-3f, 32).rel_err, 1e-3);

    Tensor a = randn({6, 8}, 52).set_requires_grad(true);
    Tensor bcat = randn({2, 5, 4, 4}, 53).set_requires_grad(true);
    EXPECT_LT(fd_check([&] { return project(mean_rows(a), 54); }, a).rel_err, 1e-3);
    EXPECT_LT(
        fd_check([&] { return project(concat_channels(x, bcat), 55); }, bcat, 1e-3f, 32).rel_err,
        1e-3);

    Tensor m1 = randn({2, 3, 5}, 56).set_requires_grad(true);
    Tensor m2 = randn({2, 4, 5}, 57).set_requires_grad(true);
    EXPECT_LT(fd_check([&] { return project(bmm(m1, m2, true), 58); }, m1).rel_err, 1e-3);
    EXPECT_LT(fd_check([&] { return project(bmm(m1, m2, true), 58); }, m2).rel_err, 1e-3);

    Tensor tok = randn({2, 6, 8}, 59).set_requires_grad(true);
    EXPECT_LT(fd_check([&] { return project(merge_heads(split_heads(tok, 4)), 60); }, tok).rel_err,
              1e-3);

    Tensor p = randn({3, 7}, 61).set_requires_grad(true);
    Tensor q2 = randn({3, 7}, 62);
    EXPECT_LT(fd_check([&] { return mse_loss(p, q2); }, p).rel_err, 1e-3);
    EXPECT_NEAR(mse_loss(q2, q2).item(), 0.0f, 1e-12);
}

TEST(Ops, LinearFiniteDifference) {
    Tensor x = randn({3, 5, 6}, 63).set_requires_grad(true);
    Tensor w = randn({4, 6}, 64).set_requires_grad(true);
    Tensor b = randn({4}, 65).set_requires_grad(true);
    auto loss = [&] { return project(linear(x, w, b), 66); };
    EXPECT_LT(fd_check(loss, x).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, w).rel_err, 1e-3);
    EXPECT_LT(fd_check(loss, b).rel_err, 1e-3);
}

TEST(Ops, DeterministicAcrossRuns) {
    Tensor a = randn({16, 32}, 67);
    Tensor b = randn({32, 24}, 68);
    Tensor r1 = matmul(a, b);
    Tensor r2 = matmul(a, b);
    EXPECT_EQ(0, memcmp(r1.data(), r2.data(), sizeof(float) * r1.numel()));
}

TEST(Tensor, InvariantsAndValidity) {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6);
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_TRUE(t.all_finite());
    t.data()[2] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
    t.data()[2] = std::numeric_limits<float>::infinity();
    EXPECT_FALSE(t.all_finite());
}
