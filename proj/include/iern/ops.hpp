#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "iern/tensor.hpp"

// Differentiable op library: the layer set needed by the models plus the loss
// heads. Shapes are NCHW for rank-4 tensors, [N, D] for rank-2. Every op
// records a closure that distributes its upstream gradient to its parents.

namespace iern {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw ContractError(std::string(op) + ": shape mismatch");
}

inline void accum(Node& dst, std::size_t i, double v) { dst.grad[i] += v; }

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] += b.data()[static_cast<std::size_t>(i)];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            for (int k = 0; k < 2; ++k) {
                detail::Node* p = self.parents[static_cast<std::size_t>(k)].node();
                if (!detail::wants_grad(*p)) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        },
        "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] -= b.data()[static_cast<std::size_t>(i)];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            detail::Node* pa = self.parents[0].node();
            detail::Node* pb = self.parents[1].node();
            if (detail::wants_grad(*pa)) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (detail::wants_grad(*pb)) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            detail::Node* pa = self.parents[0].node();
            detail::Node* pb = self.parents[1].node();
            if (detail::wants_grad(*pa)) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->value[i];
            }
            if (detail::wants_grad(*pb)) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->value[i];
            }
        },
        "mul");
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return Tensor::make_op(
        a.shape(), std::move(out), {a},
        [c](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
        },
        "scale");
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::make_op(
        {1}, {s}, {a},
        [](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            const double g = self.grad[0];
            for (auto& gv : p->grad) gv += g;
        },
        "sum_all");
}

inline Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return Tensor::make_op(
        {1}, {s * inv}, {a},
        [inv](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            const double g = self.grad[0] * inv;
            for (auto& gv : p->grad) gv += g;
        },
        "mean_all");
}

// ---- activations ----------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
        },
        "relu");
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x.data()[i] > 0.0 ? x.data()[i] : slope * x.data()[i];
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [slope](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * (p->value[i] > 0.0 ? 1.0 : slope);
        },
        "leaky_relu");
}

// ---- dense ----------------------------------------------------------------

/// x:[N,D] * w:[D,O] + b:[O] -> [N,O]
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ContractError("dense: expects x rank-2, w rank-2, b rank-1");
    const int n = x.dim(0), d = x.dim(1), o = w.dim(1);
    if (w.dim(0) != d || b.dim(0) != o) throw ContractError("dense: dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(n) * o);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data().data() + static_cast<std::size_t>(i) * d;
        double* yr = out.data() + static_cast<std::size_t>(i) * o;
        for (int j = 0; j < o; ++j) yr[j] = b.data()[static_cast<std::size_t>(j)];
        for (int k = 0; k < d; ++k) {
            const double xv = xr[k];
            const double* wr = w.data().data() + static_cast<std::size_t>(k) * o;
            for (int j = 0; j < o; ++j) yr[j] += xv * wr[j];
        }
    }
    return Tensor::make_op(
        {n, o}, std::move(out), {x, w, b},
        [n, d, o](detail::Node& self) {
            detail::Node* px = self.parents[0].node();
            detail::Node* pw = self.parents[1].node();
            detail::Node* pb = self.parents[2].node();
            const double* g = self.grad.data();
            if (detail::wants_grad(*px)) {
                px->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int k = 0; k < d; ++k) {
                        const double* wr = pw->value.data() + static_cast<std::size_t>(k) * o;
                        const double* gr = g + static_cast<std::size_t>(i) * o;
                        double acc = 0.0;
                        for (int j = 0; j < o; ++j) acc += gr[j] * wr[j];
                        px->grad[static_cast<std::size_t>(i) * d + k] += acc;
                    }
            }
            if (detail::wants_grad(*pw)) {
                pw->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double* xr = px->value.data() + static_cast<std::size_t>(i) * d;
                    const double* gr = g + static_cast<std::size_t>(i) * o;
                    for (int k = 0; k < d; ++k) {
                        double* wr = pw->grad.data() + static_cast<std::size_t>(k) * o;
                        const double xv = xr[k];
                        for (int j = 0; j < o; ++j) wr[j] += xv * gr[j];
                    }
                }
            }
            if (detail::wants_grad(*pb)) {
                pb->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j)
                        pb->grad[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * o + j];
            }
        },
        "dense");
}

/// a:[N,D] * b:[D,O] -> [N,O], no bias.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ContractError("matmul: incompatible shapes");
    const int n = a.dim(0), d = a.dim(1), o = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * o, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) {
            const double av = a.data()[static_cast<std::size_t>(i) * d + k];
            const double* br = b.data().data() + static_cast<std::size_t>(k) * o;
            double* yr = out.data() + static_cast<std::size_t>(i) * o;
            for (int j = 0; j < o; ++j) yr[j] += av * br[j];
        }
    return Tensor::make_op(
        {n, o}, std::move(out), {a, b},
        [n, d, o](detail::Node& self) {
            detail::Node* pa = self.parents[0].node();
            detail::Node* pb = self.parents[1].node();
            const double* g = self.grad.data();
            if (detail::wants_grad(*pa)) {
                pa->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int k = 0; k < d; ++k) {
                        const double* br = pb->value.data() + static_cast<std::size_t>(k) * o;
                        const double* gr = g + static_cast<std::size_t>(i) * o;
                        double acc = 0.0;
                        for (int j = 0; j < o; ++j) acc += gr[j] * br[j];
                        pa->grad[static_cast<std::size_t>(i) * d + k] += acc;
                    }
            }
            if (detail::wants_grad(*pb)) {
                pb->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int k = 0; k < d; ++k) {
                        const double av = pa->value[static_cast<std::size_t>(i) * d + k];
                        const double* gr = g + static_cast<std::size_t>(i) * o;
                        double* br = pb->grad.data() + static_cast<std::size_t>(k) * o;
                        for (int j = 0; j < o; ++j) br[j] += av * gr[j];
                    }
            }
        },
        "matmul");
}

// ---- conv2d ----------------------------------------------------------------

namespace detail {

/// x:[N,Ci,H,W], w:[Co,Ci,kh,kw], optional b:[Co], zero padding.
inline Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw ContractError("conv2d: expects rank-4 x and w");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ci) throw ContractError("conv2d: channel mismatch");
    if (b && (b->rank() != 1 || b->dim(0) != co)) throw ContractError("conv2d: bad bias shape");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1) throw ContractError("conv2d: kernel larger than padded input");

    std::vector<double> out(static_cast<std::size_t>(n) * co * ho * wo);
    const double* xd = x.data().data();
    const double* wdte = w.data().data();
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < co; ++oc) {
            const double bias = b ? b->data()[static_cast<std::size_t>(oc)] : 0.0;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = bias;
                    const int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                    for (int ic = 0; ic < ci; ++ic) {
                        const double* xp = xd + ((static_cast<std::size_t>(in) * ci + ic) * h) * wd;
                        const double* wp =
                            wdte + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += xp[static_cast<std::size_t>(iy) * wd + ix] *
                                       wp[static_cast<std::size_t>(ky) * kw + kx];
                            }
                        }
                    }
                    out[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox] = acc;
                }
        }

    std::vector<Tensor> parents = b ? std::vector<Tensor>{x, w, *b} : std::vector<Tensor>{x, w};
    return Tensor::make_op(
        {n, co, ho, wo}, std::move(out), std::move(parents),
        [n, ci, h, wd, co, kh, kw, ho, wo, stride, pad](detail::Node& self) {
            detail::Node* px = self.parents[0].node();
            detail::Node* pw = self.parents[1].node();
            detail::Node* pb = self.parents.size() > 2 ? self.parents[2].node() : nullptr;
            const double* g = self.grad.data();
            const bool gx = detail::wants_grad(*px);
            const bool gw = detail::wants_grad(*pw);
            const bool gb = pb && detail::wants_grad(*pb);
            if (gx) px->ensure_grad();
            if (gw) pw->ensure_grad();
            if (gb) pb->ensure_grad();
            if (!gx && !gw && !gb) return;
            for (int in = 0; in < n; ++in)
                for (int oc = 0; oc < co; ++oc)
                    for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox) {
                            const double go =
                                g[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox];
                            if (go == 0.0) continue;
                            if (gb) pb->grad[static_cast<std::size_t>(oc)] += go;
                            if (!gx && !gw) continue;
                            const int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                            for (int ic = 0; ic < ci; ++ic) {
                                const std::size_t xoff =
                                    ((static_cast<std::size_t>(in) * ci + ic) * h) * wd;
                                const std::size_t woff =
                                    ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int iy = iy0 + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int kx = 0; kx < kw; ++kx) {
                                        const int ix = ix0 + kx;
                                        if (ix < 0 || ix >= wd) continue;
                                        const std::size_t xi = xoff + static_cast<std::size_t>(iy) * wd + ix;
                                        const std::size_t wi = woff + static_cast<std::size_t>(ky) * kw + kx;
                                        if (gx) px->grad[xi] += go * pw->value[wi];
                                        if (gw) pw->grad[wi] += go * px->value[xi];
                                    }
                                }
                            }
                        }
        },
        "conv2d");
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    return detail::conv2d_impl(x, w, &b, stride, pad);
}

/// Bias-free variant, used wherever the output feeds a normalization layer
/// (the bias would be a loss-invariant direction there).
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    return detail::conv2d_impl(x, w, nullptr, stride, pad);
}

// ---- batch normalization ---------------------------------------------------

/// Per-channel batch-statistics normalization over (N, H, W) of an NCHW input.
/// Biased variance in the normalizer.
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          double eps = 1e-5) {
    if (x.rank() != 4) throw ContractError("batchnorm2d: expects rank-4 input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
        throw ContractError("batchnorm2d: gamma/beta must be length-C vectors");
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
    const double* xd = x.data().data();
    for (int ic = 0; ic < c; ++ic) {
        double s = 0.0;
        for (int in = 0; in < n; ++in) {
            const double* xp = xd + (static_cast<std::size_t>(in) * c + ic) * plane;
            for (std::size_t i = 0; i < plane; ++i) s += xp[i];
        }
        mean[static_cast<std::size_t>(ic)] = s / static_cast<double>(m);
        double v = 0.0;
        for (int in = 0; in < n; ++in) {
            const double* xp = xd + (static_cast<std::size_t>(in) * c + ic) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = xp[i] - mean[static_cast<std::size_t>(ic)];
                v += d * d;
            }
        }
        var[static_cast<std::size_t>(ic)] = v / static_cast<double>(m);
    }

    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double rstd = 1.0 / std::sqrt(var[static_cast<std::size_t>(ic)] + eps);
            const double g = gamma.data()[static_cast<std::size_t>(ic)];
            const double bb = beta.data()[static_cast<std::size_t>(ic)];
            const double mu = mean[static_cast<std::size_t>(ic)];
            const double* xp = xd + (static_cast<std::size_t>(in) * c + ic) * plane;
            double* op = out.data() + (static_cast<std::size_t>(in) * c + ic) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - mu) * rstd + bb;
        }

    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, c, h, w, m, plane, eps, mean, var](detail::Node& self) {
            detail::Node* px = self.parents[0].node();
            detail::Node* pg = self.parents[1].node();
            detail::Node* pb = self.parents[2].node();
            const bool gx = detail::wants_grad(*px);
            const bool gg = detail::wants_grad(*pg);
            const bool gb = detail::wants_grad(*pb);
            if (gx) px->ensure_grad();
            if (gg) pg->ensure_grad();
            if (gb) pb->ensure_grad();
            if (!gx && !gg && !gb) return;
            const double* g = self.grad.data();
            for (int ic = 0; ic < c; ++ic) {
                const double mu = mean[static_cast<std::size_t>(ic)];
                const double rstd = 1.0 / std::sqrt(var[static_cast<std::size_t>(ic)] + eps);
                const double gam = pg->value[static_cast<std::size_t>(ic)];
                // channel-wise sums of dy and dy * xhat
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int in = 0; in < n; ++in) {
                    const std::size_t off = (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = g[off + i];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (px->value[off + i] - mu) * rstd;
                    }
                }
                if (gb) pb->grad[static_cast<std::size_t>(ic)] += sum_dy;
                if (gg) pg->grad[static_cast<std::size_t>(ic)] += sum_dy_xhat;
                if (gx) {
                    const double invm = 1.0 / static_cast<double>(m);
                    for (int in = 0; in < n; ++in) {
                        const std::size_t off = (static_cast<std::size_t>(in) * c + ic) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xhat = (px->value[off + i] - mu) * rstd;
                            px->grad[off + i] += gam * rstd *
                                                 (g[off + i] - sum_dy * invm - xhat * sum_dy_xhat * invm);
                        }
                    }
                }
            }
        },
        "batchnorm2d");
}

/// Normalization against externally supplied (frozen) statistics.
inline Tensor batchnorm2d_frozen(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 const std::vector<double>& mean, const std::vector<double>& var,
                                 double eps = 1e-5) {
    if (x.rank() != 4) throw ContractError("batchnorm2d_frozen: expects rank-4 input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (static_cast<int>(mean.size()) != c || static_cast<int>(var.size()) != c)
        throw ContractError("batchnorm2d_frozen: statistics length mismatch");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double rstd = 1.0 / std::sqrt(var[static_cast<std::size_t>(ic)] + eps);
            const double g = gamma.data()[static_cast<std::size_t>(ic)];
            const double bb = beta.data()[static_cast<std::size_t>(ic)];
            const double mu = mean[static_cast<std::size_t>(ic)];
            const double* xp = x.data().data() + (static_cast<std::size_t>(in) * c + ic) * plane;
            double* op = out.data() + (static_cast<std::size_t>(in) * c + ic) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - mu) * rstd + bb;
        }
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, c, plane, eps, mean, var](detail::Node& self) {
            detail::Node* px = self.parents[0].node();
            detail::Node* pg = self.parents[1].node();
            detail::Node* pb = self.parents[2].node();
            const bool gx = detail::wants_grad(*px);
            const bool gg = detail::wants_grad(*pg);
            const bool gb = detail::wants_grad(*pb);
            if (gx) px->ensure_grad();
            if (gg) pg->ensure_grad();
            if (gb) pb->ensure_grad();
            if (!gx && !gg && !gb) return;
            const double* g = self.grad.data();
            for (int ic = 0; ic < c; ++ic) {
                const double rstd = 1.0 / std::sqrt(var[static_cast<std::size_t>(ic)] + eps);
                const double mu = mean[static_cast<std::size_t>(ic)];
                const double gam = pg->value[static_cast<std::size_t>(ic)];
                for (int in = 0; in < n; ++in) {
                    const std::size_t off = (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = g[off + i];
                        if (gx) px->grad[off + i] += dy * gam * rstd;
                        if (gg) pg->grad[static_cast<std::size_t>(ic)] += dy * (px->value[off + i] - mu) * rstd;
                        if (gb) pb->grad[static_cast<std::size_t>(ic)] += dy;
                    }
                }
            }
        },
        "batchnorm2d_frozen");
}

// ---- shape ops --------------------------------------------------------------

/// [N,C,H,W] -> [N,C] mean over the spatial plane.
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ContractError("global_avg_pool: expects rank-4 input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double inv = 1.0 / static_cast<double>(plane);
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double* xp = x.data().data() + (static_cast<std::size_t>(in) * c + ic) * plane;
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += xp[i];
            out[static_cast<std::size_t>(in) * c + ic] = s * inv;
        }
    return Tensor::make_op(
        {n, c}, std::move(out), {x},
        [n, c, plane, inv](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic) {
                    const double g = self.grad[static_cast<std::size_t>(in) * c + ic] * inv;
                    double* gp = p->grad.data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gp[i] += g;
                }
        },
        "global_avg_pool");
}

/// Channel concatenation of two NCHW tensors with equal N, H, W.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4) throw ContractError("concat_channels: expects rank-4");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ContractError("concat_channels: N/H/W mismatch");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n) * (ca + cb) * plane);
    for (int in = 0; in < n; ++in) {
        std::copy_n(a.data().data() + static_cast<std::size_t>(in) * ca * plane, static_cast<std::size_t>(ca) * plane,
                    out.data() + static_cast<std::size_t>(in) * (ca + cb) * plane);
        std::copy_n(b.data().data() + static_cast<std::size_t>(in) * cb * plane, static_cast<std::size_t>(cb) * plane,
                    out.data() + (static_cast<std::size_t>(in) * (ca + cb) + ca) * plane);
    }
    return Tensor::make_op(
        {n, ca + cb, h, w}, std::move(out), {a, b},
        [n, ca, cb, plane](detail::Node& self) {
            detail::Node* pa = self.parents[0].node();
            detail::Node* pb = self.parents[1].node();
            if (detail::wants_grad(*pa)) {
                pa->ensure_grad();
                for (int in = 0; in < n; ++in) {
                    const double* g = self.grad.data() + static_cast<std::size_t>(in) * (ca + cb) * plane;
                    double* d = pa->grad.data() + static_cast<std::size_t>(in) * ca * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i) d[i] += g[i];
                }
            }
            if (detail::wants_grad(*pb)) {
                pb->ensure_grad();
                for (int in = 0; in < n; ++in) {
                    const double* g =
                        self.grad.data() + (static_cast<std::size_t>(in) * (ca + cb) + ca) * plane;
                    double* d = pb->grad.data() + static_cast<std::size_t>(in) * cb * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i) d[i] += g[i];
                }
            }
        },
        "concat_channels");
}

inline Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (detail::numel(shape) != x.size()) throw ContractError("reshape: element count mismatch");
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_op(
        std::move(shape), std::move(out), {x},
        [](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        },
        "reshape");
}

/// table:[M, F...] indexed by per-sample labels -> [N, F...]. Backward
/// scatter-adds into the selected rows.
inline Tensor select_rows(const Tensor& table, const std::vector<int>& idx) {
    if (table.rank() < 2) throw ContractError("select_rows: table rank must be >= 2");
    const int m = table.dim(0);
    const std::size_t row = static_cast<std::size_t>(table.size() / m);
    for (int i : idx)
        if (i < 0 || i >= m) throw ContractError("select_rows: index out of range");
    std::vector<int> shape = table.shape();
    shape[0] = static_cast<int>(idx.size());
    std::vector<double> out(idx.size() * row);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(table.data().data() + static_cast<std::size_t>(idx[i]) * row, row,
                    out.data() + i * row);
    return Tensor::make_op(
        std::move(shape), std::move(out), {table},
        [idx, row](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* g = self.grad.data() + i * row;
                double* d = p->grad.data() + static_cast<std::size_t>(idx[i]) * row;
                for (std::size_t k = 0; k < row; ++k) d[k] += g[k];
            }
        },
        "select_rows");
}

/// Row `i` of table:[M, F...] tiled n times -> [n, F...]. Backward sums the
/// upstream gradient into that single row.
inline Tensor broadcast_row(const Tensor& table, int i, int n) {
    if (table.rank() < 2) throw ContractError("broadcast_row: table rank must be >= 2");
    if (i < 0 || i >= table.dim(0)) throw ContractError("broadcast_row: row out of range");
    const std::size_t row = static_cast<std::size_t>(table.size() / table.dim(0));
    std::vector<int> shape = table.shape();
    shape[0] = n;
    std::vector<double> out(static_cast<std::size_t>(n) * row);
    for (int k = 0; k < n; ++k)
        std::copy_n(table.data().data() + static_cast<std::size_t>(i) * row, row,
                    out.data() + static_cast<std::size_t>(k) * row);
    return Tensor::make_op(
        std::move(shape), std::move(out), {table},
        [i, n, row](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            double* d = p->grad.data() + static_cast<std::size_t>(i) * row;
            for (int k = 0; k < n; ++k) {
                const double* g = self.grad.data() + static_cast<std::size_t>(k) * row;
                for (std::size_t j = 0; j < row; ++j) d[j] += g[j];
            }
        },
        "broadcast_row");
}

// ---- probability heads -------------------------------------------------------

/// Softmax along the last axis of a rank-1 or rank-2 tensor, max-subtracted.
inline Tensor softmax(const Tensor& x) {
    if (x.rank() != 1 && x.rank() != 2) throw ContractError("softmax: expects rank-1 or rank-2");
    for (double v : x.data())
        if (!std::isfinite(v)) throw ContractError("softmax: non-finite logits");
    const int n = x.rank() == 2 ? x.dim(0) : 1;
    const int k = x.rank() == 2 ? x.dim(1) : x.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data().data() + static_cast<std::size_t>(i) * k;
        double* yr = out.data() + static_cast<std::size_t>(i) * k;
        double mx = xr[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < k; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < k; ++j) yr[j] *= inv;
    }
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [n, k](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* y = self.value.data() + static_cast<std::size_t>(i) * k;
                const double* gy = self.grad.data() + static_cast<std::size_t>(i) * k;
                double dot = 0.0;
                for (int j = 0; j < k; ++j) dot += gy[j] * y[j];
                double* gx = p->grad.data() + static_cast<std::size_t>(i) * k;
                for (int j = 0; j < k; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        },
        "softmax");
}

/// Mean cross-entropy of row logits against integer labels; fused log-softmax.
inline Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ContractError("cross_entropy_mean: expects [N,K] logits");
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ContractError("cross_entropy_mean: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= k) throw ContractError("cross_entropy: label out of range");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* xr = logits.data().data() + static_cast<std::size_t>(i) * k;
        double mx = xr[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += std::exp(xr[j] - mx);
        total += std::log(s) + mx - xr[labels[static_cast<std::size_t>(i)]];
    }
    const double invn = 1.0 / static_cast<double>(n);
    return Tensor::make_op(
        {1}, {total * invn}, {logits},
        [n, k, labels, invn](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            const double g = self.grad[0] * invn;
            for (int i = 0; i < n; ++i) {
                const double* xr = p->value.data() + static_cast<std::size_t>(i) * k;
                double mx = xr[0];
                for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
                double s = 0.0;
                for (int j = 0; j < k; ++j) s += std::exp(xr[j] - mx);
                const double inv = 1.0 / s;
                double* gx = p->grad.data() + static_cast<std::size_t>(i) * k;
                for (int j = 0; j < k; ++j) {
                    const double soft = std::exp(xr[j] - mx) * inv;
                    gx[j] += g * (soft - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
                }
            }
        },
        "cross_entropy_mean");
}

/// Single-sample cross-entropy: -log softmax(logits)[label].
inline Tensor cross_entropy(const Tensor& logits, int label) {
    if (logits.rank() != 1) throw ContractError("cross_entropy: expects rank-1 logits");
    return cross_entropy_mean(reshape(logits, {1, logits.dim(0)}), {label});
}

/// Mean squared error over all elements of equal-shape tensors.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ContractError("mse: incompatible shapes");
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[static_cast<std::size_t>(i)] - b.data()[static_cast<std::size_t>(i)];
        s += d * d;
    }
    return Tensor::make_op(
        {1}, {s * inv}, {a, b},
        [inv](detail::Node& self) {
            detail::Node* pa = self.parents[0].node();
            detail::Node* pb = self.parents[1].node();
            const double g = self.grad[0] * 2.0 * inv;
            const bool ga = detail::wants_grad(*pa);
            const bool gb = detail::wants_grad(*pb);
            if (ga) pa->ensure_grad();
            if (gb) pb->ensure_grad();
            for (std::size_t i = 0; i < pa->value.size(); ++i) {
                const double d = g * (pa->value[i] - pb->value[i]);
                if (ga) pa->grad[i] += d;
                if (gb) pb->grad[i] -= d;
            }
        },
        "mse");
}

/// Mean squared error against a broadcast scalar target (e.g. 1/N uniform mass).
inline Tensor mse_scalar(const Tensor& a, double target) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.data()) {
        const double d = v - target;
        s += d * d;
    }
    return Tensor::make_op(
        {1}, {s * inv}, {a},
        [inv, target](detail::Node& self) {
            detail::Node* p = self.parents[0].node();
            if (!detail::wants_grad(*p)) return;
            p->ensure_grad();
            const double g = self.grad[0] * 2.0 * inv;
            for (std::size_t i = 0; i < p->value.size(); ++i)
                p->grad[i] += g * (p->value[i] - target);
        },
        "mse_scalar");
}

// ---- non-differentiable helpers ---------------------------------------------

/// Lowest index wins on ties.
inline int argmax(std::span<const double> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

inline std::vector<int> argmax_rows(const Tensor& t) {
    if (t.rank() != 2) throw ContractError("argmax_rows: expects rank-2");
    const int n = t.dim(0), k = t.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            argmax(t.data().subspan(static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)));
    return out;
}

}  // namespace iern
