#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "mors/tape.hpp"
#include "mors/tensor.hpp"

namespace mors::ops {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

namespace detail {

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline T gelu_scalar(T x) {
    // exact Gaussian-CDF form x * Phi(x)
    return x * T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T phi_cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
    const T phi_pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
    return phi_cdf + x * phi_pdf;
}

inline bool any_tracked(std::initializer_list<int> ids) {
    for (int id : ids) {
        if (id >= 0) return true;
    }
    return false;
}

}  // namespace detail

// y[b,h,w,:] = x[b,h,w,:] . W + b with W packed as [1,1,Cin,Cout], b as [1,1,1,Cout].
template <typename T>
Tensor4<T> linear(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
    const auto& s = x.shape();
    const std::size_t cin = w.shape().w, cout = w.shape().c;
    if (s.c != cin) {
        throw DimensionError("linear: input channels " + std::to_string(s.c) + " vs weight Cin " +
                             std::to_string(cin) + " (x " + s.str() + ", W " + w.shape().str() + ")");
    }
    if (b.numel() != cout) {
        throw DimensionError("linear: bias length " + std::to_string(b.numel()) + " vs Cout " +
                             std::to_string(cout));
    }
    const std::size_t rows = s.b * s.h * s.w;
    Tensor4<T> y(Shape4{s.b, s.h, s.w, cout});

    CMapRM<T> xm(x.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cin));
    CMapRM<T> wm(w.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
    Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>> bv(b.data(), static_cast<Eigen::Index>(cout));
    MapRM<T> ym(y.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
    ym.noalias() = xm * wm;
    ym.rowwise() += bv;

    if (tape && detail::any_tracked({x.node(), w.node(), b.node()})) {
        const int xid = x.node(), wid = w.node(), bid = b.node();
        Tensor4<T> xs = x, ws = w;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            CMapRM<T> gym(gy.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
            CMapRM<T> xm2(xs.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cin));
            CMapRM<T> wm2(ws.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
            if (xid >= 0) {
                MapRM<T> gx(tp.grad_mut(xid).data(), static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(cin));
                gx.noalias() += gym * wm2.transpose();
            }
            if (wid >= 0) {
                MapRM<T> gw(tp.grad_mut(wid).data(), static_cast<Eigen::Index>(cin),
                            static_cast<Eigen::Index>(cout));
                gw.noalias() += xm2.transpose() * gym;
            }
            if (bid >= 0) {
                Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>> gb(tp.grad_mut(bid).data(),
                                                                   static_cast<Eigen::Index>(cout));
                gb += gym.colwise().sum();
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// Per-channel 2D cross-correlation, odd k, stride 1, zero same-padding.
// Kernels packed [1,k,k,C], bias [1,1,1,C].
template <typename T>
Tensor4<T> dwconv2d(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& kernels,
                    const Tensor4<T>& bias) {
    const auto& s = x.shape();
    const std::size_t k = kernels.shape().h;
    const std::size_t c = kernels.shape().c;
    if (k % 2 == 0) throw ConfigError("dwconv2d: kernel size must be odd, got " + std::to_string(k));
    if (kernels.shape().w != k) throw DimensionError("dwconv2d: kernel not square");
    if (s.c != c) {
        throw DimensionError("dwconv2d: input channels " + std::to_string(s.c) + " vs kernel channels " +
                             std::to_string(c));
    }
    const std::ptrdiff_t ctr = static_cast<std::ptrdiff_t>(k / 2);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
    Tensor4<T> y(s);

    const T* xd = x.data();
    const T* kd = kernels.data();
    const T* bd = bias.data();
    T* yd = y.data();
    const std::size_t plane = s.h * s.w * s.c;
    parallel_for(s.b, [&](std::size_t b) {
        const T* xp = xd + b * plane;
        T* yp = yd + b * plane;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
            for (std::ptrdiff_t j = 0; j < W; ++j) {
                T* out = yp + (static_cast<std::size_t>(i) * s.w + static_cast<std::size_t>(j)) * s.c;
                for (std::size_t ch = 0; ch < c; ++ch) out[ch] = bd[ch];
                for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(k); ++u) {
                    const std::ptrdiff_t ii = i + u - ctr;
                    if (ii < 0 || ii >= H) continue;
                    for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(k); ++v) {
                        const std::ptrdiff_t jj = j + v - ctr;
                        if (jj < 0 || jj >= W) continue;
                        const T* in = xp + (static_cast<std::size_t>(ii) * s.w + static_cast<std::size_t>(jj)) * s.c;
                        const T* kk = kd + (static_cast<std::size_t>(u) * k + static_cast<std::size_t>(v)) * s.c;
                        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[ch] * kk[ch];
                    }
                }
            }
        }
    });

    if (tape && detail::any_tracked({x.node(), kernels.node(), bias.node()})) {
        const int xid = x.node(), kid = kernels.node(), bid = bias.node();
        Tensor4<T> xs = x, ks = kernels;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            const T* kd2 = ks.data();
            if (xid >= 0) {
                T* gx = tp.grad_mut(xid).data();
                for (std::size_t b = 0; b < s.b; ++b) {
                    const T* gyp = gy.data() + b * plane;
                    T* gxp = gx + b * plane;
                    for (std::ptrdiff_t i = 0; i < H; ++i) {
                        for (std::ptrdiff_t j = 0; j < W; ++j) {
                            const T* g = gyp + (static_cast<std::size_t>(i) * s.w + static_cast<std::size_t>(j)) * s.c;
                            for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(k); ++u) {
                                const std::ptrdiff_t ii = i + u - ctr;
                                if (ii < 0 || ii >= H) continue;
                                for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(k); ++v) {
                                    const std::ptrdiff_t jj = j + v - ctr;
                                    if (jj < 0 || jj >= W) continue;
                                    T* gin = gxp + (static_cast<std::size_t>(ii) * s.w + static_cast<std::size_t>(jj)) * s.c;
                                    const T* kk = kd2 + (static_cast<std::size_t>(u) * k + static_cast<std::size_t>(v)) * s.c;
                                    for (std::size_t ch = 0; ch < c; ++ch) gin[ch] += g[ch] * kk[ch];
                                }
                            }
                        }
                    }
                }
            }
            if (kid >= 0) {
                T* gk = tp.grad_mut(kid).data();
                const T* xd2 = xs.data();
                for (std::size_t b = 0; b < s.b; ++b) {
                    const T* gyp = gy.data() + b * plane;
                    const T* xp = xd2 + b * plane;
                    for (std::ptrdiff_t i = 0; i < H; ++i) {
                        for (std::ptrdiff_t j = 0; j < W; ++j) {
                            const T* g = gyp + (static_cast<std::size_t>(i) * s.w + static_cast<std::size_t>(j)) * s.c;
                            for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(k); ++u) {
                                const std::ptrdiff_t ii = i + u - ctr;
                                if (ii < 0 || ii >= H) continue;
                                for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(k); ++v) {
                                    const std::ptrdiff_t jj = j + v - ctr;
                                    if (jj < 0 || jj >= W) continue;
                                    const T* in = xp + (static_cast<std::size_t>(ii) * s.w + static_cast<std::size_t>(jj)) * s.c;
                                    T* kk = gk + (static_cast<std::size_t>(u) * k + static_cast<std::size_t>(v)) * s.c;
                                    for (std::size_t ch = 0; ch < c; ++ch) kk[ch] += g[ch] * in[ch];
                                }
                            }
                        }
                    }
                }
            }
            if (bid >= 0) {
                T* gb = tp.grad_mut(bid).data();
                const T* g = gy.data();
                for (std::size_t i = 0; i < gy.size(); i += s.c) {
                    for (std::size_t ch = 0; ch < s.c; ++ch) gb[ch] += g[i + ch];
                }
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

namespace detail {

// im2col: rows = B*Ho*Wo, cols = k*k*Cin; zero padding floor(k/2).
template <typename T>
void im2col(const Tensor4<T>& x, std::size_t k, std::size_t stride, std::size_t ho, std::size_t wo,
            std::vector<T>& col) {
    const auto& s = x.shape();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t row_len = k * k * s.c;
    col.assign(s.b * ho * wo * row_len, T(0));
    const T* xd = x.data();
    parallel_for(s.b, [&](std::size_t b) {
        const T* xp = xd + b * s.h * s.w * s.c;
        T* cp = col.data() + b * ho * wo * row_len;
        for (std::size_t oi = 0; oi < ho; ++oi) {
            for (std::size_t oj = 0; oj < wo; ++oj) {
                T* row = cp + (oi * wo + oj) * row_len;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + u) - pad;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.h)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + v) - pad;
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.w)) continue;
                        const T* src = xp + (static_cast<std::size_t>(ii) * s.w + static_cast<std::size_t>(jj)) * s.c;
                        std::copy(src, src + s.c, row + (u * k + v) * s.c);
                    }
                }
            }
        }
    });
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_add(const std::vector<T>& col, std::size_t k, std::size_t stride, std::size_t ho,
                std::size_t wo, const Shape4& s, T* gx) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t row_len = k * k * s.c;
    parallel_for(s.b, [&](std::size_t b) {
        const T* cp = col.data() + b * ho * wo * row_len;
        T* gp = gx + b * s.h * s.w * s.c;
        for (std::size_t oi = 0; oi < ho; ++oi) {
            for (std::size_t oj = 0; oj < wo; ++oj) {
                const T* row = cp + (oi * wo + oj) * row_len;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + u) - pad;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.h)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + v) - pad;
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.w)) continue;
                        T* dst = gp + (static_cast<std::size_t>(ii) * s.w + static_cast<std::size_t>(jj)) * s.c;
                        const T* src = row + (u * k + v) * s.c;
                        for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += src[ch];
                    }
                }
            }
        }
    });
}

}  // namespace detail

// Dense cross-correlation, weights [k,k,Cin,Cout], zero padding floor(k/2),
// output spatial ceil(H/stride) for odd k.
template <typename T>
Tensor4<T> conv2d(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& bias,
                  std::size_t stride) {
    const auto& s = x.shape();
    const std::size_t k = w.shape().b, cin = w.shape().w, cout = w.shape().c;
    if (w.shape().h != k) throw DimensionError("conv2d: kernel not square " + w.shape().str());
    if (s.c != cin) {
        throw DimensionError("conv2d: input channels " + std::to_string(s.c) + " vs weight Cin " +
                             std::to_string(cin) + " (x " + s.str() + ", W " + w.shape().str() + ")");
    }
    const std::size_t pad = k / 2;
    const std::size_t ho = (s.h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (s.w + 2 * pad - k) / stride + 1;
    const std::size_t rows = s.b * ho * wo;
    const std::size_t row_len = k * k * cin;

    auto col = std::make_shared<std::vector<T>>();
    detail::im2col(x, k, stride, ho, wo, *col);

    Tensor4<T> y(Shape4{s.b, ho, wo, cout});
    CMapRM<T> cm(col->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(row_len));
    CMapRM<T> wm(w.data(), static_cast<Eigen::Index>(row_len), static_cast<Eigen::Index>(cout));
    Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>> bv(bias.data(), static_cast<Eigen::Index>(cout));
    MapRM<T> ym(y.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
    ym.noalias() = cm * wm;
    ym.rowwise() += bv;

    if (tape && detail::any_tracked({x.node(), w.node(), bias.node()})) {
        const int xid = x.node(), wid = w.node(), bid = bias.node();
        Tensor4<T> ws = w;
        const Shape4 xs_shape = s;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            CMapRM<T> gym(gy.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
            if (wid >= 0) {
                CMapRM<T> cm2(col->data(), static_cast<Eigen::Index>(rows),
                              static_cast<Eigen::Index>(row_len));
                MapRM<T> gw(tp.grad_mut(wid).data(), static_cast<Eigen::Index>(row_len),
                            static_cast<Eigen::Index>(cout));
                gw.noalias() += cm2.transpose() * gym;
            }
            if (bid >= 0) {
                Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>> gb(tp.grad_mut(bid).data(),
                                                                   static_cast<Eigen::Index>(cout));
                gb += gym.colwise().sum();
            }
            if (xid >= 0) {
                std::vector<T> gcol(rows * row_len);
                MapRM<T> gcm(gcol.data(), static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(row_len));
                CMapRM<T> wm2(ws.data(), static_cast<Eigen::Index>(row_len),
                              static_cast<Eigen::Index>(cout));
                gcm.noalias() = gym * wm2.transpose();
                detail::col2im_add(gcol, k, stride, ho, wo, xs_shape, tp.grad_mut(xid).data());
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

template <typename T>
Tensor4<T> gelu(Tape<T>* tape, const Tensor4<T>& x) {
    Tensor4<T> y(x.shape());
    const T* xd = x.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < x.numel(); ++i) yd[i] = detail::gelu_scalar(xd[i]);
    if (tape && x.tracked()) {
        const int xid = x.node();
        Tensor4<T> xs = x;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            auto& gx = tp.grad_mut(xid);
            const T* xd2 = xs.data();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * detail::gelu_grad_scalar(xd2[i]);
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

template <typename T>
Tensor4<T> sigmoid(Tape<T>* tape, const Tensor4<T>& x) {
    Tensor4<T> y(x.shape());
    const T* xd = x.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < x.numel(); ++i) yd[i] = detail::sigmoid_scalar(xd[i]);
    if (tape && x.tracked()) {
        const int xid = x.node();
        Tensor4<T> ys = y;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            auto& gx = tp.grad_mut(xid);
            const T* s = ys.data();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s[i] * (T(1) - s[i]);
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// LayerNorm over the channel axis per (b,h,w) site; eps added to the biased variance.
template <typename T>
Tensor4<T> layernorm(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& gamma,
                     const Tensor4<T>& beta, T eps) {
    const auto& s = x.shape();
    if (gamma.numel() != s.c || beta.numel() != s.c) {
        throw DimensionError("layernorm: affine size " + std::to_string(gamma.numel()) +
                             " vs channels " + std::to_string(s.c));
    }
    const std::size_t sites = s.b * s.h * s.w;
    Tensor4<T> y(s);
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(sites);

    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    T* yd = y.data();
    for (std::size_t site = 0; site < sites; ++site) {
        const T* xp = xd + site * s.c;
        T* yp = yd + site * s.c;
        T mean = T(0);
        for (std::size_t ch = 0; ch < s.c; ++ch) mean += xp[ch];
        mean /= static_cast<T>(s.c);
        T var = T(0);
        for (std::size_t ch = 0; ch < s.c; ++ch) {
            const T d = xp[ch] - mean;
            var += d * d;
        }
        var /= static_cast<T>(s.c);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[site] = inv;
        for (std::size_t ch = 0; ch < s.c; ++ch) {
            const T xh = (xp[ch] - mean) * inv;
            (*xhat)[site * s.c + ch] = xh;
            yp[ch] = gd[ch] * xh + bd[ch];
        }
    }

    if (tape && detail::any_tracked({x.node(), gamma.node(), beta.node()})) {
        const int xid = x.node(), gid = gamma.node(), bid = beta.node();
        Tensor4<T> gs = gamma;
        const std::size_t C = s.c;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            const T* gd2 = gs.data();
            if (gid >= 0) {
                auto& gg = tp.grad_mut(gid);
                for (std::size_t site = 0; site < sites; ++site)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        gg[ch] += gy[site * C + ch] * (*xhat)[site * C + ch];
            }
            if (bid >= 0) {
                auto& gb = tp.grad_mut(bid);
                for (std::size_t site = 0; site < sites; ++site)
                    for (std::size_t ch = 0; ch < C; ++ch) gb[ch] += gy[site * C + ch];
            }
            if (xid >= 0) {
                auto& gx = tp.grad_mut(xid);
                for (std::size_t site = 0; site < sites; ++site) {
                    const T inv = (*inv_std)[site];
                    T mean_g = T(0), mean_gx = T(0);
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        const T gh = gy[site * C + ch] * gd2[ch];
                        mean_g += gh;
                        mean_gx += gh * (*xhat)[site * C + ch];
                    }
                    mean_g /= static_cast<T>(C);
                    mean_gx /= static_cast<T>(C);
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        const T gh = gy[site * C + ch] * gd2[ch];
                        gx[site * C + ch] += inv * (gh - mean_g - (*xhat)[site * C + ch] * mean_gx);
                    }
                }
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// Spatial mean per channel -> [B,1,1,C].
template <typename T>
Tensor4<T> global_avg_pool(Tape<T>* tape, const Tensor4<T>& x) {
    const auto& s = x.shape();
    const std::size_t hw = s.h * s.w;
    Tensor4<T> y(Shape4{s.b, 1, 1, s.c});
    const T* xd = x.data();
    T* yd = y.data();
    for (std::size_t b = 0; b < s.b; ++b) {
        T* out = yd + b * s.c;
        const T* xp = xd + b * hw * s.c;
        for (std::size_t i = 0; i < hw; ++i)
            for (std::size_t ch = 0; ch < s.c; ++ch) out[ch] += xp[i * s.c + ch];
        for (std::size_t ch = 0; ch < s.c; ++ch) out[ch] /= static_cast<T>(hw);
    }
    if (tape && x.tracked()) {
        const int xid = x.node();
        const Shape4 xs = s;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            auto& gx = tp.grad_mut(xid);
            const T scale = T(1) / static_cast<T>(xs.h * xs.w);
            for (std::size_t b = 0; b < xs.b; ++b)
                for (std::size_t i = 0; i < xs.h * xs.w; ++i)
                    for (std::size_t ch = 0; ch < xs.c; ++ch)
                        gx[(b * xs.h * xs.w + i) * xs.c + ch] += gy[b * xs.c + ch] * scale;
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// Mean over batch of -sum(targets * log softmax(logits)); log-sum-exp stabilized.
// logits and targets are [B,1,1,K]; each target row must sum to 1.
template <typename T>
Tensor4<T> softmax_cross_entropy(Tape<T>* tape, const Tensor4<T>& logits, const Tensor4<T>& targets) {
    const auto& s = logits.shape();
    if (targets.shape() != s) {
        throw DimensionError("softmax_cross_entropy: logits " + s.str() + " vs targets " +
                             targets.shape().str());
    }
    const std::size_t B = s.b, K = s.h * s.w * s.c;
    const T* zd = logits.data();
    const T* td = targets.data();
    for (std::size_t b = 0; b < B; ++b) {
        T sum = T(0);
        for (std::size_t k = 0; k < K; ++k) sum += td[b * K + k];
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-5) {
            throw DataError("softmax_cross_entropy: target row " + std::to_string(b) +
                            " sums to " + std::to_string(static_cast<double>(sum)));
        }
    }

    auto probs = std::make_shared<std::vector<T>>(B * K);
    T loss = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        const T* z = zd + b * K;
        T m = z[0];
        for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k]);
        T denom = T(0);
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(z[k] - m);
        const T lse = m + std::log(denom);
        T dot = T(0);
        for (std::size_t k = 0; k < K; ++k) {
            (*probs)[b * K + k] = std::exp(z[k] - m) / denom;
            dot += td[b * K + k] * z[k];
        }
        loss += lse - dot;
    }
    loss /= static_cast<T>(B);
    Tensor4<T> out = Tensor4<T>::from(Shape4{1, 1, 1, 1}, {loss});

    if (tape && logits.tracked()) {
        const int zid = logits.node();
        Tensor4<T> ts = targets;
        tape->emit(1, [=](Tape<T>& tp, int self) {
            const T g = tp.grad(self)[0] / static_cast<T>(B);
            auto& gz = tp.grad_mut(zid);
            const T* td2 = ts.data();
            for (std::size_t i = 0; i < B * K; ++i) gz[i] += g * ((*probs)[i] - td2[i]);
        });
        out.set_node(static_cast<int>(tape->size()) - 1);
    }
    return out;
}

template <typename T>
Tensor4<T> add(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    Tensor4<T> y(a.shape());
    const T* ad = a.data();
    const T* bd = b.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] + bd[i];
    if (tape && detail::any_tracked({a.node(), b.node()})) {
        const int aid = a.node(), bid = b.node();
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            if (aid >= 0) {
                auto& ga = tp.grad_mut(aid);
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bid >= 0) {
                auto& gb = tp.grad_mut(bid);
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

template <typename T>
Tensor4<T> mul(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    Tensor4<T> y(a.shape());
    const T* ad = a.data();
    const T* bd = b.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] * bd[i];
    if (tape && detail::any_tracked({a.node(), b.node()})) {
        const int aid = a.node(), bid = b.node();
        Tensor4<T> as = a, bs = b;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            if (aid >= 0) {
                auto& ga = tp.grad_mut(aid);
                const T* bd2 = bs.data();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bd2[i];
            }
            if (bid >= 0) {
                auto& gb = tp.grad_mut(bid);
                const T* ad2 = as.data();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * ad2[i];
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// Channel slice [c0, c1).
template <typename T>
Tensor4<T> slice_channels(Tape<T>* tape, const Tensor4<T>& x, std::size_t c0, std::size_t c1) {
    const auto& s = x.shape();
    if (c0 >= c1 || c1 > s.c) {
        throw DimensionError("slice_channels: [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + std::to_string(s.c) + " channels");
    }
    const std::size_t cn = c1 - c0;
    const std::size_t sites = s.b * s.h * s.w;
    Tensor4<T> y(Shape4{s.b, s.h, s.w, cn});
    const T* xd = x.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < sites; ++i)
        std::copy(xd + i * s.c + c0, xd + i * s.c + c1, yd + i * cn);
    if (tape && x.tracked()) {
        const int xid = x.node();
        const std::size_t C = s.c;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            auto& gx = tp.grad_mut(xid);
            for (std::size_t i = 0; i < sites; ++i)
                for (std::size_t ch = 0; ch < cn; ++ch) gx[i * C + c0 + ch] += gy[i * cn + ch];
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

template <typename T>
Tensor4<T> concat_channels(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.b != sb.b || sa.h != sb.h || sa.w != sb.w) {
        throw DimensionError("concat_channels: " + sa.str() + " vs " + sb.str());
    }
    const std::size_t sites = sa.b * sa.h * sa.w;
    const std::size_t cn = sa.c + sb.c;
    Tensor4<T> y(Shape4{sa.b, sa.h, sa.w, cn});
    const T* ad = a.data();
    const T* bd = b.data();
    T* yd = y.data();
    for (std::size_t i = 0; i < sites; ++i) {
        std::copy(ad + i * sa.c, ad + (i + 1) * sa.c, yd + i * cn);
        std::copy(bd + i * sb.c, bd + (i + 1) * sb.c, yd + i * cn + sa.c);
    }
    if (tape && detail::any_tracked({a.node(), b.node()})) {
        const int aid = a.node(), bid = b.node();
        const std::size_t ca = sa.c, cb = sb.c;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            if (aid >= 0) {
                auto& ga = tp.grad_mut(aid);
                for (std::size_t i = 0; i < sites; ++i)
                    for (std::size_t ch = 0; ch < ca; ++ch) ga[i * ca + ch] += gy[i * cn + ch];
            }
            if (bid >= 0) {
                auto& gb = tp.grad_mut(bid);
                for (std::size_t i = 0; i < sites; ++i)
                    for (std::size_t ch = 0; ch < cb; ++ch) gb[i * cb + ch] += gy[i * cn + ca + ch];
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// Stochastic depth on a residual branch: per-sample Bernoulli(1-p) keep mask,
// survivors scaled by 1/(1-p). Identity in eval mode or at p == 0.
template <typename T>
Tensor4<T> droppath(Tape<T>* tape, const Tensor4<T>& branch, double p, bool training,
                    std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("droppath: rate must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return branch;
    const auto& s = branch.shape();
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<T> scale(s.b);
    for (std::size_t b = 0; b < s.b; ++b)
        scale[b] = keep(rng) ? static_cast<T>(1.0 / (1.0 - p)) : T(0);

    Tensor4<T> y(s);
    const std::size_t plane = s.h * s.w * s.c;
    const T* xd = branch.data();
    T* yd = y.data();
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t i = 0; i < plane; ++i) yd[b * plane + i] = xd[b * plane + i] * scale[b];

    if (tape && branch.tracked()) {
        const int xid = branch.node();
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            auto& gx = tp.grad_mut(xid);
            for (std::size_t b = 0; b < s.b; ++b)
                for (std::size_t i = 0; i < plane; ++i) gx[b * plane + i] += gy[b * plane + i] * scale[b];
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

template <typename T>
Tensor4<T> reduce_sum(Tape<T>* tape, const Tensor4<T>& x) {
    T total = T(0);
    const T* xd = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) total += xd[i];
    Tensor4<T> y = Tensor4<T>::from(Shape4{1, 1, 1, 1}, {total});
    if (tape && x.tracked()) {
        const int xid = x.node();
        tape->emit(1, [=](Tape<T>& tp, int self) {
            const T g = tp.grad(self)[0];
            auto& gx = tp.grad_mut(xid);
            for (auto& v : gx) v += g;
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

// sum_i weights[i] * x[i]; fixed-projection scalarizer used by gradient checks.
template <typename T>
Tensor4<T> weighted_sum(Tape<T>* tape, const Tensor4<T>& x, std::shared_ptr<std::vector<T>> weights) {
    if (weights->size() != x.numel()) {
        throw DimensionError("weighted_sum: " + std::to_string(weights->size()) + " weights vs " +
                             std::to_string(x.numel()) + " elements");
    }
    T total = T(0);
    const T* xd = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) total += xd[i] * (*weights)[i];
    Tensor4<T> y = Tensor4<T>::from(Shape4{1, 1, 1, 1}, {total});
    if (tape && x.tracked()) {
        const int xid = x.node();
        tape->emit(1, [=](Tape<T>& tp, int self) {
            const T g = tp.grad(self)[0];
            auto& gx = tp.grad_mut(xid);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*weights)[i];
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

}  // namespace mors::ops
