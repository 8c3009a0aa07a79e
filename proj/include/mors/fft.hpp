#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "mors/tensor.hpp"

namespace mors::fft {

inline constexpr double kPi = 3.14159265358979323846;

enum class Direction { forward, inverse };

// One-size DFT plan. Sizes factoring into {2,3,5,7} run the mixed-radix
// Cooley-Tukey recursion; anything else goes through Bluestein's chirp-z with
// a power-of-two convolution. Transforms are unnormalized in both directions;
// callers apply scaling.
template <typename T>
class Plan {
public:
    explicit Plan(std::size_t n) : n_(n) {
        if (n == 0) throw DimensionError("fft: length 0 rejected");
        std::size_t rem = n;
        for (std::size_t f : {2, 3, 5, 7}) {
            while (rem % f == 0) {
                factors_.push_back(f);
                rem /= f;
            }
        }
        if (rem != 1) {
            factors_.clear();
            init_bluestein();
        } else {
            init_roots(n_);
        }
    }

    std::size_t size() const { return n_; }

    // In-place unnormalized DFT: X[k] = sum_j x[j] exp(-2 pi i jk / n).
    void forward(std::complex<T>* a) const {
        if (n_ == 1) return;
        if (!factors_.empty()) {
            std::vector<std::complex<T>> in(a, a + n_);
            ct(a, in.data(), n_, 1, 0);
        } else {
            bluestein(a);
        }
    }

    // In-place unnormalized inverse: x[j] = sum_k X[k] exp(+2 pi i jk / n),
    // via conj(forward(conj(x))).
    void inverse(std::complex<T>* a) const {
        for (std::size_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]);
        forward(a);
        for (std::size_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]);
    }

private:
    void init_roots(std::size_t n) {
        roots_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double ang = -2.0 * kPi * static_cast<double>(j) / static_cast<double>(n);
            roots_[j] = std::complex<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
        }
    }

    void init_bluestein() {
        m_ = 1;
        while (m_ < 2 * n_ - 1) m_ <<= 1;
        chirp_.resize(n_);
        for (std::size_t j = 0; j < n_; ++j) {
            // j^2 mod 2n keeps the chirp angle exact for large j
            const std::size_t q = (j * j) % (2 * n_);
            const double ang = -kPi * static_cast<double>(q) / static_cast<double>(n_);
            chirp_[j] = std::complex<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
        }
        sub_ = std::make_unique<Plan<T>>(m_);
        bhat_.assign(m_, std::complex<T>(0, 0));
        bhat_[0] = std::conj(chirp_[0]);
        for (std::size_t j = 1; j < n_; ++j) {
            bhat_[j] = std::conj(chirp_[j]);
            bhat_[m_ - j] = std::conj(chirp_[j]);
        }
        sub_->forward(bhat_.data());
    }

    void bluestein(std::complex<T>* a) const {
        std::vector<std::complex<T>> buf(m_, std::complex<T>(0, 0));
        for (std::size_t j = 0; j < n_; ++j) buf[j] = a[j] * chirp_[j];
        sub_->forward(buf.data());
        for (std::size_t j = 0; j < m_; ++j) buf[j] *= bhat_[j];
        sub_->inverse(buf.data());
        const T inv_m = T(1) / static_cast<T>(m_);
        for (std::size_t k = 0; k < n_; ++k) a[k] = buf[k] * inv_m * chirp_[k];
    }

    // DFT of in[0], in[s], ..., in[(n-1)s] into out[0..n); decimation in time
    // over factors_[fidx...].
    void ct(std::complex<T>* out, const std::complex<T>* in, std::size_t n, std::size_t s,
            std::size_t fidx) const {
        if (n == 1) {
            out[0] = in[0];
            return;
        }
        const std::size_t r = factors_[fidx];
        const std::size_t m = n / r;
        for (std::size_t j = 0; j < r; ++j) ct(out + j * m, in + j * s, m, s * r, fidx + 1);

        const std::size_t step = n_ / n;  // roots_[step] == exp(-2 pi i / n)
        std::array<std::complex<T>, 7> t;
        for (std::size_t c = 0; c < m; ++c) {
            for (std::size_t b = 0; b < r; ++b) t[b] = out[b * m + c] * roots_[(b * c * step) % n_];
            for (std::size_t d = 0; d < r; ++d) {
                std::complex<T> acc = t[0];
                for (std::size_t b = 1; b < r; ++b) acc += t[b] * roots_[(b * d * m * step) % n_];
                out[c + d * m] = acc;
            }
        }
    }

    std::size_t n_;
    std::vector<std::size_t> factors_;
    std::vector<std::complex<T>> roots_;
    // Bluestein state
    std::size_t m_ = 0;
    std::vector<std::complex<T>> chirp_;
    std::vector<std::complex<T>> bhat_;
    std::unique_ptr<Plan<T>> sub_;
};

// Unnormalized DFT/IDFT of a complex vector, any length >= 1.
template <typename T>
std::vector<std::complex<T>> fft1d(std::vector<std::complex<T>> v, Direction dir) {
    Plan<T> plan(v.size());
    if (dir == Direction::forward) {
        plan.forward(v.data());
    } else {
        plan.inverse(v.data());
    }
    return v;
}

// Non-redundant half of the 2D spectrum of a real [B,H,W,C] tensor, stored
// channels-first: index = ((b*C + c)*H + h)*Wf + wf, Wf = floor(W/2)+1.
template <typename T>
struct HalfSpectrum {
    std::size_t b = 0, c = 0, h = 0, wf = 0;
    std::size_t original_w = 0;
    std::vector<std::complex<T>> data;

    std::size_t index(std::size_t bi, std::size_t ci, std::size_t hi, std::size_t wi) const {
        return ((bi * c + ci) * h + hi) * wf + wi;
    }
    std::size_t planes() const { return b * c; }
    std::size_t plane_size() const { return h * wf; }
};

inline std::size_t half_width(std::size_t w) { return w / 2 + 1; }

// Column weight of a stored half-spectrum column under the real inner
// product: 2 where the conjugate mirror column was dropped, 1 for DC and the
// even-width Nyquist column.
inline double column_weight(std::size_t wi, std::size_t original_w) {
    const std::size_t wf = half_width(original_w);
    if (wi == 0) return 1.0;
    if (original_w % 2 == 0 && wi == wf - 1) return 1.0;
    return 2.0;
}

namespace detail {

// rows then columns, keeping Wf columns; unnormalized.
template <typename T>
void rfft2_plane(const T* x, std::size_t h, std::size_t w, std::size_t x_stride,
                 const Plan<T>& ph, const Plan<T>& pw, std::complex<T>* out) {
    const std::size_t wf = half_width(w);
    std::vector<std::complex<T>> row(w);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) row[j] = std::complex<T>(x[(i * w + j) * x_stride], 0);
        pw.forward(row.data());
        for (std::size_t j = 0; j < wf; ++j) out[i * wf + j] = row[j];
    }
    std::vector<std::complex<T>> col(h);
    for (std::size_t j = 0; j < wf; ++j) {
        for (std::size_t i = 0; i < h; ++i) col[i] = out[i * wf + j];
        ph.forward(col.data());
        for (std::size_t i = 0; i < h; ++i) out[i * wf + j] = col[i];
    }
}

// Inverse of rfft2_plane: full inverse along columns, then Hermitian
// completion of each row followed by the row inverse. Unnormalized. Returns
// the largest |imaginary| residue seen across the reconstructed plane.
template <typename T>
T irfft2_plane(const std::complex<T>* spec, std::size_t h, std::size_t w, const Plan<T>& ph,
               const Plan<T>& pw, T* out, std::size_t out_stride) {
    const std::size_t wf = half_width(w);
    std::vector<std::complex<T>> work(h * wf);
    std::vector<std::complex<T>> col(h);
    for (std::size_t j = 0; j < wf; ++j) {
        for (std::size_t i = 0; i < h; ++i) col[i] = spec[i * wf + j];
        ph.inverse(col.data());
        for (std::size_t i = 0; i < h; ++i) work[i * wf + j] = col[i];
    }
    T residue = T(0);
    std::vector<std::complex<T>> row(w);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < wf; ++j) row[j] = work[i * wf + j];
        for (std::size_t j = wf; j < w; ++j) row[j] = std::conj(work[i * wf + (w - j)]);
        pw.inverse(row.data());
        for (std::size_t j = 0; j < w; ++j) {
            residue = std::max(residue, std::abs(row[j].imag()));
            out[(i * w + j) * out_stride] = row[j].real();
        }
    }
    return residue;
}

}  // namespace detail

// Orthonormal 2D real-input FFT over (H,W) per (b,c) plane.
template <typename T>
HalfSpectrum<T> rfft2(const Tensor4<T>& x) {
    const auto& s = x.shape();
    HalfSpectrum<T> spec;
    spec.b = s.b;
    spec.c = s.c;
    spec.h = s.h;
    spec.wf = half_width(s.w);
    spec.original_w = s.w;
    spec.data.resize(spec.planes() * spec.plane_size());

    const Plan<T> ph(s.h), pw(s.w);
    const T scale = T(1) / std::sqrt(static_cast<T>(s.h * s.w));
    const T* xd = x.data();
    parallel_for(spec.planes(), [&](std::size_t p) {
        const std::size_t b = p / s.c, c = p % s.c;
        const T* plane = xd + (b * s.h * s.w) * s.c + c;
        std::complex<T>* out = spec.data.data() + p * spec.plane_size();
        detail::rfft2_plane(plane, s.h, s.w, s.c, ph, pw, out);
        for (std::size_t i = 0; i < spec.plane_size(); ++i) out[i] *= scale;
    });
    return spec;
}

// Orthonormal inverse of rfft2. out_h/out_w must match the spectrum's
// originating sizes. max_imag_residue, when given, receives the largest
// imaginary component discarded by the real cast.
template <typename T>
Tensor4<T> irfft2(const HalfSpectrum<T>& spec, std::size_t out_h, std::size_t out_w,
                  T* max_imag_residue = nullptr) {
    if (out_h != spec.h || out_w != spec.original_w || half_width(out_w) != spec.wf) {
        throw DimensionError("irfft2: requested " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                             " but spectrum is H=" + std::to_string(spec.h) + ", Wf=" +
                             std::to_string(spec.wf) + " (original W " + std::to_string(spec.original_w) + ")");
    }
    Tensor4<T> y(Shape4{spec.b, out_h, out_w, spec.c});
    const Plan<T> ph(out_h), pw(out_w);
    const T scale = T(1) / std::sqrt(static_cast<T>(out_h * out_w));
    std::vector<T> residues(spec.planes(), T(0));
    T* yd = y.data();
    parallel_for(spec.planes(), [&](std::size_t p) {
        const std::size_t b = p / spec.c, c = p % spec.c;
        const std::complex<T>* in = spec.data.data() + p * spec.plane_size();
        T* plane = yd + (b * out_h * out_w) * spec.c + c;
        residues[p] = detail::irfft2_plane(in, out_h, out_w, ph, pw, plane, spec.c);
    });
    for (auto& v : y.vec()) v *= scale;
    if (max_imag_residue) {
        T r = T(0);
        for (T v : residues) r = std::max(r, v);
        *max_imag_residue = r * scale;
    }
    return y;
}

}  // namespace mors::fft
