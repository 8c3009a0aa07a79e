#pragma once

#include <optional>
#include <vector>

#include "mors/fft.hpp"
#include "mors/ops.hpp"
#include "mors/tape.hpp"

namespace mors::spectral {

// Learnable frequency gate bound to a fixed (H,W,C) at construction. The
// applied mask is sigmoid(logits), one real weight per retained frequency
// bin, broadcast over batch. override_mask is a test hook substituting an
// explicit mask for sigmoid(logits); it never participates in training.
template <typename T>
struct FourierFilterGate {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t wf = 0;
    Param<T>* logits = nullptr;                      // [1,C,H,Wf]
    std::optional<std::vector<T>> override_mask;     // [C*H*Wf] when engaged

    std::size_t mask_size() const { return channels * height * wf; }
};

namespace detail {

template <typename T>
std::vector<T> gate_mask(const FourierFilterGate<T>& ffg) {
    if (ffg.override_mask) return *ffg.override_mask;
    std::vector<T> g(ffg.mask_size());
    const T* w = ffg.logits->value.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = ops::detail::sigmoid_scalar(w[i]);
    return g;
}

}  // namespace detail

// y = irfft2(rfft2(x) * gate), differentiable w.r.t. x and the gate logits.
// The spectrum is real-linear in x, so the adjoint of the gated pipeline is
// the same gated pipeline applied to the output gradient; the gate gradient
// needs the column-weight correction for the dropped half-spectrum.
template <typename T>
Tensor4<T> ffg_forward(Tape<T>* tape, const Tensor4<T>& x, const FourierFilterGate<T>& ffg) {
    const auto& s = x.shape();
    if (s.h != ffg.height || s.w != ffg.width || s.c != ffg.channels) {
        throw ConfigError("ffg_forward: input " + s.str() + " does not match the gate's bound resolution (H=" +
                          std::to_string(ffg.height) + ", W=" + std::to_string(ffg.width) + ", C=" +
                          std::to_string(ffg.channels) + ")");
    }

    auto spec = std::make_shared<fft::HalfSpectrum<T>>(fft::rfft2(x));
    auto mask = std::make_shared<std::vector<T>>(detail::gate_mask(ffg));

    fft::HalfSpectrum<T> gated = *spec;
    const std::size_t msize = ffg.mask_size();
    for (std::size_t b = 0; b < s.b; ++b) {
        std::complex<T>* plane = gated.data.data() + b * msize;
        for (std::size_t i = 0; i < msize; ++i) plane[i] *= (*mask)[i];
    }
    Tensor4<T> y = fft::irfft2(gated, s.h, s.w);

    const bool track_x = x.tracked();
    const bool track_w = ffg.logits && ffg.logits->value.tracked() && !ffg.override_mask;
    if (tape && (track_x || track_w)) {
        const int xid = x.node();
        const int wid = track_w ? ffg.logits->value.node() : -1;
        const std::size_t H = s.h, W = s.w, Wf = ffg.wf, C = s.c, B = s.b;
        tape->emit(y.numel(), [=](Tape<T>& tp, int self) {
            const auto& gy = tp.grad(self);
            Tensor4<T> gy_t = Tensor4<T>::from(Shape4{B, H, W, C},
                                               std::vector<T>(gy.begin(), gy.end()));
            fft::HalfSpectrum<T> gspec = fft::rfft2(gy_t);
            if (xid >= 0) {
                // d/dx: gate the gradient spectrum and invert
                fft::HalfSpectrum<T> gxspec = gspec;
                for (std::size_t b = 0; b < B; ++b) {
                    std::complex<T>* plane = gxspec.data.data() + b * msize;
                    for (std::size_t i = 0; i < msize; ++i) plane[i] *= (*mask)[i];
                }
                Tensor4<T> gx = fft::irfft2(gxspec, H, W);
                auto& acc = tp.grad_mut(xid);
                const T* gxd = gx.data();
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gxd[i];
            }
            if (wid >= 0) {
                auto& gw = tp.grad_mut(wid);
                const T* wv = (*mask).data();  // mask == sigmoid(logits) here
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t h = 0; h < H; ++h) {
                        for (std::size_t f = 0; f < Wf; ++f) {
                            const std::size_t mi = (c * H + h) * Wf + f;
                            const T colw = static_cast<T>(fft::column_weight(f, W));
                            T gg = T(0);
                            for (std::size_t b = 0; b < B; ++b) {
                                const std::complex<T> gp = colw * gspec.data[b * msize + mi];
                                const std::complex<T> xs = spec->data[b * msize + mi];
                                gg += gp.real() * xs.real() + gp.imag() * xs.imag();
                            }
                            const T g = wv[mi];
                            gw[mi] += gg * g * (T(1) - g);
                        }
                    }
                }
            }
        });
        y.set_node(static_cast<int>(tape->size()) - 1);
    }
    return y;
}

}  // namespace mors::spectral
