#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "picodiff/kernels.hpp"
#include "picodiff/rng.hpp"

using namespace picodiff;

namespace {

std::vector<float> random_vec(size_t n, uint64_t stream) {
    Philox rng(1234, stream);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

void expect_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::fabs((double)a[i]), std::fabs((double)b[i]), 1.0});
        ASSERT_NEAR(a[i], b[i], tol * denom) << "at index " << i;
    }
}

}  // namespace

TEST(Kernels, GemmNnMatchesReference) {
    for (auto [m, n, k] : {std::tuple{7, 13, 9}, {16, 64, 33}, {64, 256, 144}, {3, 5, 2}}) {
        auto a = random_vec((size_t)m * k, 1);
        auto b = random_vec((size_t)k * n, 2);
        std::vector<float> c((size_t)m * n), cref((size_t)m * n);
        kernels::sgemm_nn(m, n, k, a.data(), b.data(), c.data(), false);
        kernels_serial::sgemm_nn(m, n, k, a.data(), b.data(), cref.data(), false);
        expect_close(c, cref, 1e-5);
    }
}

TEST(Kernels, GemmNtMatchesReference) {
    for (auto [m, n, k] : {std::tuple{5, 7, 11}, {32, 17, 64}, {64, 144, 256}}) {
        auto a = random_vec((size_t)m * k, 3);
        auto b = random_vec((size_t)n * k, 4);
        std::vector<float> c((size_t)m * n), cref((size_t)m * n);
        kernels::sgemm_nt(m, n, k, a.data(), b.data(), c.data(), false);
        kernels_serial::sgemm_nt(m, n, k, a.data(), b.data(), cref.data(), false);
        expect_close(c, cref, 1e-5);
    }
}

TEST(Kernels, GemmTnMatchesReference) {
    for (auto [m, n, k] : {std::tuple{9, 6, 14}, {33, 64, 15}, {144, 64, 100}}) {
        auto a = random_vec((size_t)k * m, 5);
        auto b = random_vec((size_t)k * n, 6);
        std::vector<float> c((size_t)m * n), cref((size_t)m * n);
        kernels::sgemm_tn(m, n, k, a.data(), b.data(), c.data(), false);
        kernels_serial::sgemm_tn(m, n, k, a.data(), b.data(), cref.data(), false);
        expect_close(c, cref, 1e-5);
    }
}

TEST(Kernels, GemmAccumulateAddsOntoC) {
    int m = 6, n = 5, k = 4;
    auto a = random_vec((size_t)m * k, 7);
    auto b = random_vec((size_t)k * n, 8);
    std::vector<float> base((size_t)m * n, 2.5f);
    std::vector<float> c = base, prod((size_t)m * n);
    kernels::sgemm_nn(m, n, k, a.data(), b.data(), prod.data(), false);
    kernels::sgemm_nn(m, n, k, a.data(), b.data(), c.data(), true);
    for (size_t i = 0; i < c.size(); ++i) {
        ASSERT_NEAR(c[i], base[i] + prod[i], 1e-5);
    }
}

TEST(Kernels, ParallelToggleIsBitIdentical) {
    int m = 37, n = 129, k = 65;
    auto a = random_vec((size_t)m * k, 9);
    auto b = random_vec((size_t)k * n, 10);
    std::vector<float> c1((size_t)m * n), c2((size_t)m * n);
    kernels::set_parallel(true);
    kernels::sgemm_nn(m, n, k, a.data(), b.data(), c1.data(), false);
    kernels::set_parallel(false);
    kernels::sgemm_nn(m, n, k, a.data(), b.data(), c2.data(), false);
    kernels::set_parallel(true);
    ASSERT_EQ(0, memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)));
}

TEST(Kernels, Im2colGemmMatchesDirectConv) {
    int cin = 3, h = 8, w = 8, cout = 5, kh = 3, kw = 3;
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
        int ho = (h + 2 * pad - kh) / stride + 1;
        int wo = (w + 2 * pad - kw) / stride + 1;
        auto x = random_vec((size_t)cin * h * w, 11);
        auto wt = random_vec((size_t)cout * cin * kh * kw, 12);
        std::vector<float> col((size_t)cin * kh * kw * ho * wo);
        std::vector<float> y((size_t)cout * ho * wo), yref((size_t)cout * ho * wo);
        kernels::im2col(x.data(), cin, h, w, kh, kw, stride, pad, ho, wo, col.data());
        kernels::sgemm_nn(cout, ho * wo, cin * kh * kw, wt.data(), col.data(), y.data(), false);
        kernels_serial::conv2d(x.data(), wt.data(), yref.data(), cin, h, w, cout, kh, kw, stride, pad,
                               ho, wo);
        expect_close(y, yref, 1e-5);
    }
}

// col2im is the adjoint of im2col: <col2im(y), x> == <y, im2col(x)>.
TEST(Kernels, Col2imIsAdjointOfIm2col) {
    int cin = 4, h = 7, w = 6, kh = 3, kw = 3, stride = 2, pad = 1;
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (w + 2 * pad - kw) / stride + 1;
    size_t colsz = (size_t)cin * kh * kw * ho * wo;
    auto x = random_vec((size_t)cin * h * w, 13);
    auto y = random_vec(colsz, 14);
    std::vector<float> col(colsz);
    kernels::im2col(x.data(), cin, h, w, kh, kw, stride, pad, ho, wo, col.data());
    std::vector<float> xt((size_t)cin * h * w, 0.0f);
    kernels::col2im(y.data(), cin, h, w, kh, kw, stride, pad, ho, wo, xt.data());
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < xt.size(); ++i) lhs += (double)xt[i] * x[i];
    for (size_t i = 0; i < colsz; ++i) rhs += (double)y[i] * col[i];
    ASSERT_NEAR(lhs, rhs, 1e-3 * std::max(1.0, std::fabs(rhs)));
}
