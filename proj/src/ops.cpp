#include "picodiff/ops.hpp"

#include <cmath>
#include <cstring>

#include "picodiff/kernels.hpp"

namespace picodiff {

namespace {

bool taping(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void record(Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    Tape::current()->record(std::move(fn));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Grad of `out` may be absent when out never fed the loss.
const float* out_grad(const Tensor& out) {
    return out.impl->grad.empty() ? nullptr : out.impl->grad.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t n = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t n = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t n = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                const float* pb = b.data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                const float* pa = a.data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    int64_t n = a.numel();
    const float* pa = a.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (taping({&a})) {
        record(out, [a = a, out = out, s]() mutable {
            const float* g = out_grad(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            float* ga = a.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, float s) {
    check_same_shape(a, b, "add_scaled");
    Tensor out(a.shape());
    int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s * pb[i];
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out, s]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t n = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += s * g[i];
            }
        });
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    int64_t n = x.numel();
    const float* px = x.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        float sig = 1.0f / (1.0f + std::exp(-px[i]));
        po[i] = px[i] * sig;
    }
    if (taping({&x})) {
        record(out, [x = x, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            const float* px = x.data();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) {
                float sig = 1.0f / (1.0f + std::exp(-px[i]));
                gx[i] += g[i] * sig * (1.0f + px[i] * (1.0f - sig));
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr float kInvSqrt2 = 0.7071067811865475f;
    constexpr float kInvSqrt2Pi = 0.3989422804014327f;
    Tensor out(x.shape());
    int64_t n = x.numel();
    const float* px = x.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        po[i] = 0.5f * px[i] * (1.0f + std::erf(px[i] * kInvSqrt2));
    }
    if (taping({&x})) {
        record(out, [x = x, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            const float* px = x.data();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) {
                float cdf = 0.5f * (1.0f + std::erf(px[i] * kInvSqrt2));
                float pdf = kInvSqrt2Pi * std::exp(-0.5f * px[i] * px[i]);
                gx[i] += g[i] * (cdf + px[i] * pdf);
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::from(std::move(shape), x.impl->data);
    if (taping({&x})) {
        record(out, [x = x, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

namespace {

// Validates [..., m, k] x [..., k, n] (or [..., n, k] transposed) and returns
// the batch count.
int64_t bmm_check(const Tensor& a, const Tensor& b, bool trans_b, int& m, int& k, int& n) {
    if (a.ndim() < 2 || b.ndim() != a.ndim()) {
        throw ShapeError("bmm: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    int nd = a.ndim();
    int64_t batch = 1;
    for (int i = 0; i < nd - 2; ++i) {
        if (a.shape()[i] != b.shape()[i]) {
            throw ShapeError("bmm: batch dims differ " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        }
        batch *= a.shape()[i];
    }
    m = a.shape()[nd - 2];
    k = a.shape()[nd - 1];
    int bk = trans_b ? b.shape()[nd - 1] : b.shape()[nd - 2];
    n = trans_b ? b.shape()[nd - 2] : b.shape()[nd - 1];
    if (bk != k) {
        throw ShapeError("bmm: inner extents differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    return batch;
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    int m, k, n;
    int64_t batch = bmm_check(a, b, trans_b, m, k, n);
    std::vector<int> oshape(a.shape().begin(), a.shape().end() - 2);
    oshape.push_back(m);
    oshape.push_back(n);
    Tensor out(oshape);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t bi = 0; bi < batch; ++bi) {
        const float* ab = pa + bi * static_cast<int64_t>(m) * k;
        const float* bb = pb + bi * static_cast<int64_t>(k) * n;
        float* ob = po + bi * static_cast<int64_t>(m) * n;
        if (trans_b) {
            kernels::sgemm_nt(m, n, k, ab, bb, ob, false);
        } else {
            kernels::sgemm_nn(m, n, k, ab, bb, ob, false);
        }
    }
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out, batch, m, k, n, trans_b]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            if (a.requires_grad()) {
                a.ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const float* gb = g + bi * static_cast<int64_t>(m) * n;
                    const float* bb = b.data() + bi * static_cast<int64_t>(k) * n;
                    float* ga = a.grad() + bi * static_cast<int64_t>(m) * k;
                    if (trans_b) {
                        kernels::sgemm_nn(m, k, n, gb, bb, ga, true);  // g * b
                    } else {
                        kernels::sgemm_nt(m, k, n, gb, bb, ga, true);  // g * b^T
                    }
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const float* gb = g + bi * static_cast<int64_t>(m) * n;
                    const float* ab = a.data() + bi * static_cast<int64_t>(m) * k;
                    float* dgb = b.grad() + bi * static_cast<int64_t>(k) * n;
                    if (trans_b) {
                        kernels::sgemm_tn(n, k, m, gb, ab, dgb, true);  // g^T * a
                    } else {
                        kernels::sgemm_tn(k, n, m, ab, gb, dgb, true);  // a^T * g
                    }
                }
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    return bmm(a, b, false);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.ndim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(w.shape()));
    int in = w.shape()[1];
    int out_dim = w.shape()[0];
    if (x.dim(-1) != in) {
        throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    if (b.defined() && (b.ndim() != 1 || b.shape()[0] != out_dim)) {
        throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    int64_t rows = x.numel() / in;
    std::vector<int> oshape = x.shape();
    oshape.back() = out_dim;
    Tensor out(oshape);

    // W^T scratch so the hot path is an nn GEMM.
    std::vector<float> wt(static_cast<size_t>(in) * out_dim);
    const float* pw = w.data();
    for (int o = 0; o < out_dim; ++o) {
        for (int i = 0; i < in; ++i) wt[static_cast<size_t>(i) * out_dim + o] = pw[o * in + i];
    }
    kernels::sgemm_nn(static_cast<int>(rows), out_dim, in, x.data(), wt.data(), out.data(), false);
    if (b.defined()) {
        const float* pb = b.data();
        float* po = out.data();
        for (int64_t r = 0; r < rows; ++r) {
            float* row = po + r * out_dim;
            for (int o = 0; o < out_dim; ++o) row[o] += pb[o];
        }
    }

    if (taping({&x, &w, &b})) {
        record(out, [x = x, w = w, b = b, out = out, rows, in, out_dim]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            if (x.requires_grad()) {
                x.ensure_grad();
                kernels::sgemm_nn(static_cast<int>(rows), in, out_dim, g, w.data(), x.grad(), true);
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                kernels::sgemm_tn(out_dim, in, static_cast<int>(rows), g, x.data(), w.grad(), true);
            }
            if (b.defined() && b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int o = 0; o < out_dim; ++o) {
                    double acc = 0.0;
                    for (int64_t r = 0; r < rows; ++r) acc += g[r * out_dim + o];
                    gb[o] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw ShapeError("conv2d: expects x[B,C,H,W], w[O,C,kh,kw]; got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    int batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    int cout = w.shape()[0], wc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (cin != wc) {
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(w.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (b.defined() && (b.ndim() != 1 || b.shape()[0] != cout)) {
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match out channels");
    }
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output for " + shape_str(x.shape()));

    Tensor out({batch, cout, ho, wo});
    int crows = cin * kh * kw;
    int spatial = ho * wo;
    std::vector<float> col(static_cast<size_t>(crows) * spatial);
    const int64_t xstride = static_cast<int64_t>(cin) * h * wd;
    const int64_t ostride = static_cast<int64_t>(cout) * spatial;
    for (int bi = 0; bi < batch; ++bi) {
        kernels::im2col(x.data() + bi * xstride, cin, h, wd, kh, kw, stride, pad, ho, wo, col.data());
        kernels::sgemm_nn(cout, spatial, crows, w.data(), col.data(), out.data() + bi * ostride, false);
    }
    if (b.defined()) {
        float* po = out.data();
        const float* pb = b.data();
        for (int bi = 0; bi < batch; ++bi) {
            for (int oc = 0; oc < cout; ++oc) {
                float bias = pb[oc];
                float* plane = po + bi * ostride + static_cast<int64_t>(oc) * spatial;
                for (int i = 0; i < spatial; ++i) plane[i] += bias;
            }
        }
    }

    if (taping({&x, &w, &b})) {
        record(out, [x = x, w = w, b = b, out = out, batch, cin, h, wd, cout, kh, kw, stride, pad, ho,
                     wo]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int crows = cin * kh * kw;
            int spatial = ho * wo;
            const int64_t xstride = static_cast<int64_t>(cin) * h * wd;
            const int64_t ostride = static_cast<int64_t>(cout) * spatial;
            std::vector<float> col(static_cast<size_t>(crows) * spatial);
            if (x.requires_grad()) {
                x.ensure_grad();
                std::vector<float> gcol(static_cast<size_t>(crows) * spatial);
                for (int bi = 0; bi < batch; ++bi) {
                    kernels::sgemm_tn(crows, spatial, cout, w.data(), g + bi * ostride, gcol.data(),
                                      false);
                    kernels::col2im(gcol.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                                    x.grad() + bi * xstride);
                }
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                for (int bi = 0; bi < batch; ++bi) {
                    kernels::im2col(x.data() + bi * xstride, cin, h, wd, kh, kw, stride, pad, ho, wo,
                                    col.data());
                    kernels::sgemm_nt(cout, crows, spatial, g + bi * ostride, col.data(), w.grad(),
                                      true);
                }
            }
            if (b.defined() && b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int oc = 0; oc < cout; ++oc) {
                    double acc = 0.0;
                    for (int bi = 0; bi < batch; ++bi) {
                        const float* plane = g + bi * ostride + static_cast<int64_t>(oc) * spatial;
                        for (int i = 0; i < spatial; ++i) acc += plane[i];
                    }
                    gb[oc] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) {
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    }
    int an = x.shape()[axis];
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < nd; ++i) inner *= x.shape()[i];
    for (int i = 0; i < axis; ++i) outer *= x.shape()[i];

    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
#pragma omp parallel for schedule(static) if (kernels::parallel() && outer > 1)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const float* xs = px + (o * an) * inner + i;
            float* os = po + (o * an) * inner + i;
            float mx = xs[0];
            for (int j = 1; j < an; ++j) mx = std::max(mx, xs[j * inner]);
            double sum = 0.0;
            for (int j = 0; j < an; ++j) {
                float e = std::exp(xs[j * inner] - mx);
                os[j * inner] = e;
                sum += e;
            }
            float norm = static_cast<float>(1.0 / sum);
            for (int j = 0; j < an; ++j) os[j * inner] *= norm;
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, an, inner, outer]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            const float* y = out.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                    const float* ys = y + (o * an) * inner + i;
                    const float* gs = g + (o * an) * inner + i;
                    float* gxs = gx + (o * an) * inner + i;
                    double dot = 0.0;
                    for (int j = 0; j < an; ++j) dot += static_cast<double>(gs[j * inner]) * ys[j * inner];
                    float d = static_cast<float>(dot);
                    for (int j = 0; j < an; ++j) {
                        gxs[j * inner] += ys[j * inner] * (gs[j * inner] - d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    int d = x.dim(-1);
    if (gain.ndim() != 1 || gain.shape()[0] != d || bias.ndim() != 1 || bias.shape()[0] != d) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    }
    int64_t rows = x.numel() / d;
    Tensor out(x.shape());
    std::vector<float> mean(rows), inv_std(rows);
    const float* px = x.data();
    const float* pg = gain.data();
    const float* pb = bias.data();
    float* po = out.data();
#pragma omp parallel for schedule(static) if (kernels::parallel() && rows > 1)
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = px + r * d;
        double m = 0.0;
        for (int i = 0; i < d; ++i) m += xr[i];
        m /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            double c = xr[i] - m;
            var += c * c;
        }
        var /= d;
        float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        mean[r] = static_cast<float>(m);
        inv_std[r] = istd;
        float* orr = po + r * d;
        for (int i = 0; i < d; ++i) {
            orr[i] = (xr[i] - mean[r]) * istd * pg[i] + pb[i];
        }
    }
    if (taping({&x, &gain, &bias})) {
        record(out, [x = x, gain = gain, bias = bias, out = out, rows, d, mean = std::move(mean),
                     inv_std = std::move(inv_std)]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            const float* px = x.data();
            const float* pg = gain.data();
            if (x.requires_grad()) x.ensure_grad();
            if (gain.requires_grad()) gain.ensure_grad();
            if (bias.requires_grad()) bias.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const float* xr = px + r * d;
                const float* gr = g + r * d;
                float istd = inv_std[r];
                float mu = mean[r];
                if (gain.requires_grad() || bias.requires_grad()) {
                    float* gg = gain.requires_grad() ? gain.grad() : nullptr;
                    float* gb = bias.requires_grad() ? bias.grad() : nullptr;
                    for (int i = 0; i < d; ++i) {
                        float xhat = (xr[i] - mu) * istd;
                        if (gg) gg[i] += gr[i] * xhat;
                        if (gb) gb[i] += gr[i];
                    }
                }
                if (x.requires_grad()) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int i = 0; i < d; ++i) {
                        float gh = gr[i] * pg[i];
                        float xhat = (xr[i] - mu) * istd;
                        m1 += gh;
                        m2 += static_cast<double>(gh) * xhat;
                    }
                    m1 /= d;
                    m2 /= d;
                    float* gx = x.grad() + r * d;
                    for (int i = 0; i < d; ++i) {
                        float gh = gr[i] * pg[i];
                        float xhat = (xr[i] - mu) * istd;
                        gx[i] += istd * (gh - static_cast<float>(m1) - xhat * static_cast<float>(m2));
                    }
                }
            }
        });
    }
    return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias, float eps) {
    if (x.ndim() != 4) throw ShapeError("group_norm: expects [B,C,H,W], got " + shape_str(x.shape()));
    int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    if (gain.ndim() != 1 || gain.shape()[0] != c || bias.ndim() != 1 || bias.shape()[0] != c) {
        throw ShapeError("group_norm: gain/bias must be [" + std::to_string(c) + "]");
    }
    int cg = c / groups;
    int64_t gsize = static_cast<int64_t>(cg) * h * w;
    int64_t ngroups = static_cast<int64_t>(batch) * groups;
    Tensor out(x.shape());
    std::vector<float> mean(ngroups), inv_std(ngroups);
    const float* px = x.data();
    const float* pg = gain.data();
    const float* pb = bias.data();
    float* po = out.data();
#pragma omp parallel for schedule(static) if (kernels::parallel() && ngroups > 1)
    for (int64_t gi = 0; gi < ngroups; ++gi) {
        const float* xs = px + gi * gsize;
        double m = 0.0;
        for (int64_t i = 0; i < gsize; ++i) m += xs[i];
        m /= static_cast<double>(gsize);
        double var = 0.0;
        for (int64_t i = 0; i < gsize; ++i) {
            double cdev = xs[i] - m;
            var += cdev * cdev;
        }
        var /= static_cast<double>(gsize);
        mean[gi] = static_cast<float>(m);
        inv_std[gi] = static_cast<float>(1.0 / std::sqrt(var + eps));
        int g0 = static_cast<int>(gi % groups);
        float* os = po + gi * gsize;
        int64_t hw = static_cast<int64_t>(h) * w;
        for (int ci = 0; ci < cg; ++ci) {
            int channel = g0 * cg + ci;
            float sc = inv_std[gi] * pg[channel];
            float off = pb[channel] - mean[gi] * sc;
            const float* xc = xs + ci * hw;
            float* oc = os + ci * hw;
            for (int64_t i = 0; i < hw; ++i) oc[i] = xc[i] * sc + off;
        }
    }
    if (taping({&x, &gain, &bias})) {
        record(out, [x = x, gain = gain, bias = bias, out = out, batch, c, h, w, groups, cg,
                     mean = std::move(mean), inv_std = std::move(inv_std)]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t hw = static_cast<int64_t>(h) * w;
            int64_t gsize = static_cast<int64_t>(cg) * hw;
            const float* px = x.data();
            const float* pg = gain.data();
            if (x.requires_grad()) x.ensure_grad();
            if (gain.requires_grad()) gain.ensure_grad();
            if (bias.requires_grad()) bias.ensure_grad();
            for (int bi = 0; bi < batch; ++bi) {
                for (int gr = 0; gr < groups; ++gr) {
                    int64_t gi = static_cast<int64_t>(bi) * groups + gr;
                    const float* xs = px + gi * gsize;
                    const float* gs = g + gi * gsize;
                    float istd = inv_std[gi];
                    float mu = mean[gi];
                    if (gain.requires_grad() || bias.requires_grad()) {
                        float* gg = gain.requires_grad() ? gain.grad() : nullptr;
                        float* gb = bias.requires_grad() ? bias.grad() : nullptr;
                        for (int ci = 0; ci < cg; ++ci) {
                            int channel = gr * cg + ci;
                            double sg = 0.0, sb = 0.0;
                            const float* xc = xs + ci * hw;
                            const float* gc = gs + ci * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                sg += static_cast<double>(gc[i]) * ((xc[i] - mu) * istd);
                                sb += gc[i];
                            }
                            if (gg) gg[channel] += static_cast<float>(sg);
                            if (gb) gb[channel] += static_cast<float>(sb);
                        }
                    }
                    if (x.requires_grad()) {
                        double m1 = 0.0, m2 = 0.0;
                        for (int ci = 0; ci < cg; ++ci) {
                            int channel = gr * cg + ci;
                            const float* xc = xs + ci * hw;
                            const float* gc = gs + ci * hw;
                            float gv = pg[channel];
                            for (int64_t i = 0; i < hw; ++i) {
                                float gh = gc[i] * gv;
                                float xhat = (xc[i] - mu) * istd;
                                m1 += gh;
                                m2 += static_cast<double>(gh) * xhat;
                            }
                        }
                        m1 /= static_cast<double>(gsize);
                        m2 /= static_cast<double>(gsize);
                        float* gx = x.grad() + gi * gsize;
                        for (int ci = 0; ci < cg; ++ci) {
                            int channel = gr * cg + ci;
                            const float* xc = xs + ci * hw;
                            const float* gc = gs + ci * hw;
                            float gv = pg[channel];
                            float* gxc = gx + ci * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                float gh = gc[i] * gv;
                                float xhat = (xc[i] - mu) * istd;
                                gxc[i] += istd * (gh - static_cast<float>(m1) - xhat * static_cast<float>(m2));
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Adds key_bias[B, Lk] to scores[B, H, Lq, Lk]; bias never takes gradient.
Tensor add_key_bias(const Tensor& scores, const Tensor& bias) {
    if (scores.ndim() != 4 || bias.ndim() != 2 || scores.shape()[0] != bias.shape()[0] ||
        scores.shape()[3] != bias.shape()[1]) {
        throw ShapeError("attention: key bias " + shape_str(bias.shape()) + " does not match scores " +
                         shape_str(scores.shape()));
    }
    int b = scores.shape()[0], hds = scores.shape()[1], lq = scores.shape()[2], lk = scores.shape()[3];
    Tensor out(scores.shape());
    const float* ps = scores.data();
    const float* pb = bias.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        const float* brow = pb + static_cast<int64_t>(bi) * lk;
        for (int i = 0; i < hds * lq; ++i) {
            const float* src = ps + (static_cast<int64_t>(bi) * hds * lq + i) * lk;
            float* dst = po + (static_cast<int64_t>(bi) * hds * lq + i) * lk;
            for (int j = 0; j < lk; ++j) dst[j] = src[j] + brow[j];
        }
    }
    if (taping({&scores})) {
        record(out, [scores = scores, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !scores.requires_grad()) return;
            scores.ensure_grad();
            float* gs = scores.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) gs[i] += g[i];
        });
    }
    return out;
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& key_bias) {
    int nd = q.ndim();
    if (k.ndim() != nd || v.ndim() != nd) {
        throw ShapeError("attention: rank mismatch between q/k/v");
    }
    int d = q.dim(-1);
    if (k.dim(-1) != d) {
        throw ShapeError("attention: q width " + shape_str(q.shape()) + " vs k width " +
                         shape_str(k.shape()));
    }
    if (k.dim(-2) != v.dim(-2)) {
        throw ShapeError("attention: k rows " + shape_str(k.shape()) + " vs v rows " +
                         shape_str(v.shape()));
    }
    Tensor scores = bmm(scale(q, 1.0f / std::sqrt(static_cast<float>(d))), k, /*trans_b=*/true);
    if (key_bias.defined()) scores = add_key_bias(scores, key_bias);
    Tensor attn = softmax(scores, -1);
    return bmm(attn, v, false);
}

Tensor split_heads(const Tensor& x, int heads) {
    if (x.ndim() != 3) throw ShapeError("split_heads: expects [B,L,D], got " + shape_str(x.shape()));
    int b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
    if (d % heads != 0) throw ShapeError("split_heads: width not divisible by head count");
    int dh = d / heads;
    Tensor out({b, heads, l, dh});
    const float* px = x.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        for (int li = 0; li < l; ++li) {
            const float* src = px + (static_cast<int64_t>(bi) * l + li) * d;
            for (int hi = 0; hi < heads; ++hi) {
                float* dst = po + ((static_cast<int64_t>(bi) * heads + hi) * l + li) * dh;
                std::memcpy(dst, src + hi * dh, sizeof(float) * dh);
            }
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, b, l, d, heads, dh]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            for (int bi = 0; bi < b; ++bi) {
                for (int li = 0; li < l; ++li) {
                    float* dst = gx + (static_cast<int64_t>(bi) * l + li) * d;
                    for (int hi = 0; hi < heads; ++hi) {
                        const float* src = g + ((static_cast<int64_t>(bi) * heads + hi) * l + li) * dh;
                        for (int i = 0; i < dh; ++i) dst[hi * dh + i] += src[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor merge_heads(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("merge_heads: expects [B,h,L,dh], got " + shape_str(x.shape()));
    int b = x.shape()[0], heads = x.shape()[1], l = x.shape()[2], dh = x.shape()[3];
    int d = heads * dh;
    Tensor out({b, l, d});
    const float* px = x.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        for (int li = 0; li < l; ++li) {
            float* dst = po + (static_cast<int64_t>(bi) * l + li) * d;
            for (int hi = 0; hi < heads; ++hi) {
                const float* src = px + ((static_cast<int64_t>(bi) * heads + hi) * l + li) * dh;
                std::memcpy(dst + hi * dh, src, sizeof(float) * dh);
            }
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, b, l, d, heads, dh]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            for (int bi = 0; bi < b; ++bi) {
                for (int li = 0; li < l; ++li) {
                    const float* src = g + (static_cast<int64_t>(bi) * l + li) * d;
                    for (int hi = 0; hi < heads; ++hi) {
                        float* dst = gx + ((static_cast<int64_t>(bi) * heads + hi) * l + li) * dh;
                        for (int i = 0; i < dh; ++i) dst[i] += src[hi * dh + i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor chw_to_tokens(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("chw_to_tokens: expects [B,C,H,W]");
    int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    int hw = h * w;
    Tensor out({b, hw, c});
    const float* px = x.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        const float* xb = px + static_cast<int64_t>(bi) * c * hw;
        float* ob = po + static_cast<int64_t>(bi) * hw * c;
        for (int ci = 0; ci < c; ++ci) {
            const float* plane = xb + static_cast<int64_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) ob[static_cast<int64_t>(i) * c + ci] = plane[i];
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, b, c, hw]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            for (int bi = 0; bi < b; ++bi) {
                const float* gb = g + static_cast<int64_t>(bi) * hw * c;
                float* xb = gx + static_cast<int64_t>(bi) * c * hw;
                for (int ci = 0; ci < c; ++ci) {
                    float* plane = xb + static_cast<int64_t>(ci) * hw;
                    for (int i = 0; i < hw; ++i) plane[i] += gb[static_cast<int64_t>(i) * c + ci];
                }
            }
        });
    }
    return out;
}

Tensor tokens_to_chw(const Tensor& x, int c, int h, int w) {
    if (x.ndim() != 3 || x.shape()[1] != h * w || x.shape()[2] != c) {
        throw ShapeError("tokens_to_chw: " + shape_str(x.shape()) + " does not match [B," +
                         std::to_string(h * w) + "," + std::to_string(c) + "]");
    }
    int b = x.shape()[0];
    int hw = h * w;
    Tensor out({b, c, h, w});
    const float* px = x.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        const float* xb = px + static_cast<int64_t>(bi) * hw * c;
        float* ob = po + static_cast<int64_t>(bi) * c * hw;
        for (int ci = 0; ci < c; ++ci) {
            float* plane = ob + static_cast<int64_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) plane[i] = xb[static_cast<int64_t>(i) * c + ci];
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, b, c, hw]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            for (int bi = 0; bi < b; ++bi) {
                float* xb = gx + static_cast<int64_t>(bi) * hw * c;
                const float* gb = g + static_cast<int64_t>(bi) * c * hw;
                for (int ci = 0; ci < c; ++ci) {
                    const float* plane = gb + static_cast<int64_t>(ci) * hw;
                    for (int i = 0; i < hw; ++i) xb[static_cast<int64_t>(i) * c + ci] += plane[i];
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest_2x(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("upsample_nearest_2x: expects [B,C,H,W]");
    int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out({b, c, h * 2, w * 2});
    const float* px = x.data();
    float* po = out.data();
    int64_t planes = static_cast<int64_t>(b) * c;
    for (int64_t p = 0; p < planes; ++p) {
        const float* src = px + p * h * w;
        float* dst = po + p * h * w * 4;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                float v = src[y * w + xx];
                float* d0 = dst + (2 * y) * (2 * w) + 2 * xx;
                d0[0] = v;
                d0[1] = v;
                d0[2 * w] = v;
                d0[2 * w + 1] = v;
            }
        }
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, b, c, h, w]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            int64_t planes = static_cast<int64_t>(b) * c;
            for (int64_t p = 0; p < planes; ++p) {
                const float* src = g + p * h * w * 4;
                float* dst = gx + p * h * w;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        const float* s0 = src + (2 * y) * (2 * w) + 2 * xx;
                        dst[y * w + xx] += s0[0] + s0[1] + s0[2 * w] + s0[2 * w + 1];
                    }
                }
            }
        });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[2] || a.shape()[3] != b.shape()[3]) {
        throw ShapeError("concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    int batch = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    int h = a.shape()[2], w = a.shape()[3];
    int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out({batch, ca + cb, h, w});
    float* po = out.data();
    for (int bi = 0; bi < batch; ++bi) {
        std::memcpy(po + static_cast<int64_t>(bi) * (ca + cb) * hw, a.data() + static_cast<int64_t>(bi) * ca * hw,
                    sizeof(float) * ca * hw);
        std::memcpy(po + (static_cast<int64_t>(bi) * (ca + cb) + ca) * hw,
                    b.data() + static_cast<int64_t>(bi) * cb * hw, sizeof(float) * cb * hw);
    }
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out, batch, ca, cb, hw]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            if (a.requires_grad()) {
                a.ensure_grad();
                for (int bi = 0; bi < batch; ++bi) {
                    const float* src = g + static_cast<int64_t>(bi) * (ca + cb) * hw;
                    float* dst = a.grad() + static_cast<int64_t>(bi) * ca * hw;
                    for (int64_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                for (int bi = 0; bi < batch; ++bi) {
                    const float* src = g + (static_cast<int64_t>(bi) * (ca + cb) + ca) * hw;
                    float* dst = b.grad() + static_cast<int64_t>(bi) * cb * hw;
                    for (int64_t i = 0; i < cb * hw; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& t) {
    if (x.ndim() != 4 || t.ndim() != 2 || x.shape()[0] != t.shape()[0] || x.shape()[1] != t.shape()[1]) {
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs " + shape_str(t.shape()));
    }
    int b = x.shape()[0], c = x.shape()[1];
    int64_t hw = static_cast<int64_t>(x.shape()[2]) * x.shape()[3];
    Tensor out(x.shape());
    const float* px = x.data();
    const float* pt = t.data();
    float* po = out.data();
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            float bias = pt[bi * c + ci];
            const float* src = px + (static_cast<int64_t>(bi) * c + ci) * hw;
            float* dst = po + (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bias;
        }
    }
    if (taping({&x, &t})) {
        record(out, [x = x, t = t, out = out, b, c, hw]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            if (x.requires_grad()) {
                x.ensure_grad();
                float* gx = x.grad();
                int64_t n = out.numel();
                for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
            }
            if (t.requires_grad()) {
                t.ensure_grad();
                float* gt = t.grad();
                for (int bi = 0; bi < b; ++bi) {
                    for (int ci = 0; ci < c; ++ci) {
                        const float* src = g + (static_cast<int64_t>(bi) * c + ci) * hw;
                        double acc = 0.0;
                        for (int64_t i = 0; i < hw; ++i) acc += src[i];
                        gt[bi * c + ci] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    const float* px = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (taping({&x})) {
        record(out, [x = x, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            int64_t n = x.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    const float* px = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (taping({&x})) {
        record(out, [x = x, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            int64_t n = x.numel();
            float s = g[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) gx[i] += s;
        });
    }
    return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse_loss");
    const float* pa = a.data();
    const float* pb = b.data();
    int64_t n = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pa[i]) - pb[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (taping({&a, &b})) {
        record(out, [a = a, b = b, out = out]() mutable {
            const float* g = out_grad(out);
            if (!g) return;
            int64_t n = a.numel();
            float s = 2.0f * g[0] / static_cast<float>(n);
            const float* pa = a.data();
            const float* pb = b.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += s * (pa[i] - pb[i]);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] -= s * (pa[i] - pb[i]);
            }
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("mean_rows: expects [L,D], got " + shape_str(x.shape()));
    int l = x.shape()[0], d = x.shape()[1];
    Tensor out({d});
    const float* px = x.data();
    float* po = out.data();
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int r = 0; r < l; ++r) acc += px[static_cast<int64_t>(r) * d + i];
        po[i] = static_cast<float>(acc / l);
    }
    if (taping({&x})) {
        record(out, [x = x, out = out, l, d]() mutable {
            const float* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            float* gx = x.grad();
            float inv = 1.0f / static_cast<float>(l);
            for (int r = 0; r < l; ++r) {
                for (int i = 0; i < d; ++i) gx[static_cast<int64_t>(r) * d + i] += g[i] * inv;
            }
        });
    }
    return out;
}

}  // namespace picodiff
