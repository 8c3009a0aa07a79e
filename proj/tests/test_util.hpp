#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (direct loops, O(N^2) transforms, long-double sums) and
// never share code with the library paths they check.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "mors/tensor.hpp"

namespace oracle {

inline constexpr double kPi = 3.14159265358979323846;

// y[r,:] = x[r,:] . W + b via triple loop.
inline std::vector<double> matmul_bias(const std::vector<double>& x, std::size_t rows,
                                       std::size_t cin, const std::vector<double>& w,
                                       std::size_t cout, const std::vector<double>& b) {
    std::vector<double> y(rows * cout, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cout; ++j) {
            double acc = b[j];
            for (std::size_t i = 0; i < cin; ++i) acc += x[r * cin + i] * w[i * cout + j];
            y[r * cout + j] = acc;
        }
    }
    return y;
}

// Direct O(HWk^2C) depthwise correlation, zero same-padding, stride 1.
inline mors::Tensor4<double> dwconv_direct(const mors::Tensor4<double>& x,
                                           const mors::Tensor4<double>& k,
                                           const mors::Tensor4<double>& bias) {
    const auto s = x.shape();
    const std::size_t ks = k.shape().h;
    const std::ptrdiff_t ctr = static_cast<std::ptrdiff_t>(ks / 2);
    mors::Tensor4<double> y(s);
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j)
                for (std::size_t c = 0; c < s.c; ++c) {
                    double acc = bias(0, 0, 0, c);
                    for (std::size_t u = 0; u < ks; ++u)
                        for (std::size_t v = 0; v < ks; ++v) {
                            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - ctr;
                            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - ctr;
                            if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(s.h) ||
                                jj >= static_cast<std::ptrdiff_t>(s.w))
                                continue;
                            acc += x(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), c) *
                                   k(0, u, v, c);
                        }
                    y.at(b, i, j, c) = acc;
                }
    return y;
}

// Direct dense cross-correlation with zero padding floor(k/2) and stride s.
inline mors::Tensor4<double> conv_direct(const mors::Tensor4<double>& x,
                                         const mors::Tensor4<double>& w,
                                         const mors::Tensor4<double>& bias, std::size_t stride) {
    const auto s = x.shape();
    const std::size_t k = w.shape().b, cin = w.shape().w, cout = w.shape().c;
    const std::size_t pad = k / 2;
    const std::size_t ho = (s.h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (s.w + 2 * pad - k) / stride + 1;
    mors::Tensor4<double> y(mors::Shape4{s.b, ho, wo, cout});
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t oi = 0; oi < ho; ++oi)
            for (std::size_t oj = 0; oj < wo; ++oj)
                for (std::size_t co = 0; co < cout; ++co) {
                    double acc = bias(0, 0, 0, co);
                    for (std::size_t u = 0; u < k; ++u)
                        for (std::size_t v = 0; v < k; ++v) {
                            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + u) - static_cast<std::ptrdiff_t>(pad);
                            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + v) - static_cast<std::ptrdiff_t>(pad);
                            if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(s.h) ||
                                jj >= static_cast<std::ptrdiff_t>(s.w))
                                continue;
                            for (std::size_t ci = 0; ci < cin; ++ci)
                                acc += x(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), ci) *
                                       w(u, v, ci, co);
                        }
                    y.at(b, oi, oj, co) = acc;
                }
    return y;
}

// Two-pass mean/variance layer norm over channels.
inline mors::Tensor4<double> layernorm_direct(const mors::Tensor4<double>& x,
                                              const std::vector<double>& gamma,
                                              const std::vector<double>& beta, double eps) {
    const auto s = x.shape();
    mors::Tensor4<double> y(s);
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j) {
                double mean = 0;
                for (std::size_t c = 0; c < s.c; ++c) mean += x(b, i, j, c);
                mean /= static_cast<double>(s.c);
                double var = 0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double d = x(b, i, j, c) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(s.c);
                for (std::size_t c = 0; c < s.c; ++c) {
                    y.at(b, i, j, c) = gamma[c] * (x(b, i, j, c) - mean) / std::sqrt(var + eps) + beta[c];
                }
            }
    return y;
}

// Long-double softmax cross-entropy, mean over batch.
inline double softmax_xent_direct(const std::vector<double>& logits,
                                  const std::vector<double>& targets, std::size_t batch,
                                  std::size_t k) {
    long double total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        long double denom = 0;
        for (std::size_t j = 0; j < k; ++j) denom += expl(static_cast<long double>(logits[b * k + j]));
        for (std::size_t j = 0; j < k; ++j) {
            const long double p = expl(static_cast<long double>(logits[b * k + j])) / denom;
            total -= static_cast<long double>(targets[b * k + j]) * logl(p);
        }
    }
    return static_cast<double>(total / static_cast<long double>(batch));
}

// O(N^2) direct DFT, unnormalized.
inline std::vector<std::complex<double>> dft_direct(const std::vector<std::complex<double>>& x,
                                                    bool inverse = false) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> y(n);
    const double sign = inverse ? 2.0 : -2.0;
    for (std::size_t kk = 0; kk < n; ++kk) {
        std::complex<double> acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double ang = sign * kPi * static_cast<double>((j * kk) % n) / static_cast<double>(n);
            acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        y[kk] = acc;
    }
    return y;
}

// Direct double-sum 2D DFT of one real plane, orthonormal scaling, all
// frequencies (the caller slices the retained half).
inline std::vector<std::complex<double>> dft2_direct(const std::vector<double>& plane, std::size_t h,
                                                     std::size_t w) {
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t kh = 0; kh < h; ++kh)
        for (std::size_t kw = 0; kw < w; ++kw) {
            std::complex<double> acc = 0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double ang = -2.0 * kPi * (static_cast<double>(kh * y) / static_cast<double>(h) +
                                                     static_cast<double>(kw * x) / static_cast<double>(w));
                    acc += plane[y * w + x] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out[kh * w + kw] = acc / std::sqrt(static_cast<double>(h * w));
        }
    return out;
}

template <typename T>
double max_abs_diff(const mors::Tensor4<T>& a, const mors::Tensor4<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    }
    return m;
}

template <typename T>
mors::Tensor4<T> random_tensor(mors::Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    mors::Tensor4<T> t(s);
    std::mt19937_64 rng(seed);
    mors::fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace oracle
