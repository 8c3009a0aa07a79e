#pragma once

#include <cmath>
#include <random>
#include <string>

#include "mors/ops.hpp"
#include "mors/spectral.hpp"
#include "mors/tape.hpp"

namespace mors::blocks {

template <typename T>
struct LayerNormLayer {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    T eps = T(1e-6);
};

template <typename T>
struct LinearLayer {
    Param<T>* weight = nullptr;  // [1,1,Cin,Cout]
    Param<T>* bias = nullptr;    // [1,1,1,Cout]
};

template <typename T>
struct Conv2dLayer {
    Param<T>* weight = nullptr;  // [k,k,Cin,Cout]
    Param<T>* bias = nullptr;
    std::size_t stride = 1;
};

template <typename T>
struct DwConvLayer {
    Param<T>* kernels = nullptr;  // [1,k,k,C]
    Param<T>* bias = nullptr;
};

struct GatedCnnBlockCfg {
    std::size_t dim = 0;
    double expansion_ratio = 8.0 / 3.0;
    double conv_ratio = 1.0;
    std::size_t dw_kernel = 7;
    double norm_eps = 1e-6;

    std::size_t hidden() const {
        return static_cast<std::size_t>(std::llround(expansion_ratio * static_cast<double>(dim)));
    }
    std::size_t conv_channels() const {
        return static_cast<std::size_t>(std::llround(conv_ratio * static_cast<double>(dim)));
    }
};

struct FgbCfg {
    std::size_t dim = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t mlp_ratio = 4;
    double droppath_rate = 0.0;
    double norm_eps = 1e-6;
};

template <typename T>
struct GatedCnnBlock {
    GatedCnnBlockCfg cfg;
    LayerNormLayer<T> norm;
    LinearLayer<T> fc1;   // C -> 2h
    DwConvLayer<T> dw;    // on the conv split
    LinearLayer<T> fc2;   // h -> C
};

template <typename T>
struct FourierGateBlock {
    FgbCfg cfg;
    LayerNormLayer<T> norm1;
    spectral::FourierFilterGate<T> ffg;
    LayerNormLayer<T> norm2;
    LinearLayer<T> mlp_fc1;  // C -> mlp_ratio*C
    LinearLayer<T> mlp_fc2;  // mlp_ratio*C -> C
};

template <typename T>
struct Stem {
    std::size_t input_size = 224;
    Conv2dLayer<T> conv1;  // 3x3 s2
    LayerNormLayer<T> norm;
    Conv2dLayer<T> conv2;  // 3x3 s2
};

template <typename T>
struct Downsample {
    LayerNormLayer<T> norm;
    Conv2dLayer<T> conv;  // 3x3 s2 to the next stage dim
};

template <typename T>
struct Head {
    LayerNormLayer<T> norm;
    LinearLayer<T> fc;  // C -> K
};

// ---- parameter construction -------------------------------------------------

namespace detail {

template <typename T>
Param<T>& add_weight(ParamStore<T>& store, const std::string& name, Shape4 shape,
                     std::vector<std::uint64_t> io_dims, std::mt19937_64& rng, double stddev = 0.02) {
    Tensor4<T> v(shape);
    fill_trunc_normal(v, rng, stddev);
    return store.add(name, std::move(v), std::move(io_dims));
}

template <typename T>
Param<T>& add_const(ParamStore<T>& store, const std::string& name, Shape4 shape,
                    std::vector<std::uint64_t> io_dims, T value) {
    Tensor4<T> v = Tensor4<T>::full(shape, value);
    return store.add(name, std::move(v), std::move(io_dims));
}

}  // namespace detail

template <typename T>
LayerNormLayer<T> make_layernorm(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                                 double eps) {
    LayerNormLayer<T> ln;
    ln.gamma = &detail::add_const<T>(store, prefix + ".weight", Shape4{1, 1, 1, c}, {c}, T(1));
    ln.beta = &detail::add_const<T>(store, prefix + ".bias", Shape4{1, 1, 1, c}, {c}, T(0));
    ln.eps = static_cast<T>(eps);
    return ln;
}

template <typename T>
LinearLayer<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                           std::size_t cout, std::mt19937_64& rng) {
    LinearLayer<T> l;
    l.weight = &detail::add_weight<T>(store, prefix + ".weight", Shape4{1, 1, cin, cout}, {cin, cout}, rng);
    l.bias = &detail::add_const<T>(store, prefix + ".bias", Shape4{1, 1, 1, cout}, {cout}, T(0));
    return l;
}

template <typename T>
Conv2dLayer<T> make_conv2d(ParamStore<T>& store, const std::string& prefix, std::size_t k,
                           std::size_t cin, std::size_t cout, std::size_t stride,
                           std::mt19937_64& rng) {
    Conv2dLayer<T> c;
    c.weight = &detail::add_weight<T>(store, prefix + ".weight", Shape4{k, k, cin, cout},
                                      {k, k, cin, cout}, rng);
    c.bias = &detail::add_const<T>(store, prefix + ".bias", Shape4{1, 1, 1, cout}, {cout}, T(0));
    c.stride = stride;
    return c;
}

template <typename T>
DwConvLayer<T> make_dwconv(ParamStore<T>& store, const std::string& prefix, std::size_t k,
                           std::size_t c, std::mt19937_64& rng) {
    if (k % 2 == 0) throw ConfigError("dwconv kernel size must be odd, got " + std::to_string(k));
    DwConvLayer<T> d;
    d.kernels = &detail::add_weight<T>(store, prefix + ".weight", Shape4{1, k, k, c}, {k, k, c}, rng);
    d.bias = &detail::add_const<T>(store, prefix + ".bias", Shape4{1, 1, 1, c}, {c}, T(0));
    return d;
}

template <typename T>
GatedCnnBlock<T> make_gated_cnn_block(ParamStore<T>& store, const std::string& prefix,
                                      const GatedCnnBlockCfg& cfg, std::mt19937_64& rng) {
    const std::size_t h = cfg.hidden();
    const std::size_t cc = cfg.conv_channels();
    if (cc > h) {
        throw ConfigError(prefix + ": conv channels " + std::to_string(cc) + " exceed hidden " +
                          std::to_string(h));
    }
    GatedCnnBlock<T> b;
    b.cfg = cfg;
    b.norm = make_layernorm<T>(store, prefix + ".norm", cfg.dim, cfg.norm_eps);
    b.fc1 = make_linear<T>(store, prefix + ".fc1", cfg.dim, 2 * h, rng);
    b.dw = make_dwconv<T>(store, prefix + ".dwconv", cfg.dw_kernel, cc, rng);
    b.fc2 = make_linear<T>(store, prefix + ".fc2", h, cfg.dim, rng);
    return b;
}

// Gate logits start near zero (gate ~0.5), Normal(0, 0.02).
template <typename T>
spectral::FourierFilterGate<T> make_ffg(ParamStore<T>& store, const std::string& prefix,
                                        std::size_t c, std::size_t height, std::size_t width,
                                        std::mt19937_64& rng) {
    spectral::FourierFilterGate<T> g;
    g.channels = c;
    g.height = height;
    g.width = width;
    g.wf = fft::half_width(width);
    Tensor4<T> logits(Shape4{1, c, height, g.wf});
    fill_normal(logits, rng, 0.02);
    g.logits = &store.add(prefix + ".weight", std::move(logits), {1, c, height, g.wf});
    return g;
}

template <typename T>
FourierGateBlock<T> make_fgb(ParamStore<T>& store, const std::string& prefix, const FgbCfg& cfg,
                             std::mt19937_64& rng) {
    if (cfg.droppath_rate < 0.0 || cfg.droppath_rate >= 1.0) {
        throw ConfigError(prefix + ": droppath rate must be in [0,1)");
    }
    FourierGateBlock<T> b;
    b.cfg = cfg;
    b.norm1 = make_layernorm<T>(store, prefix + ".norm1", cfg.dim, cfg.norm_eps);
    b.ffg = make_ffg<T>(store, prefix + ".ffg", cfg.dim, cfg.height, cfg.width, rng);
    b.norm2 = make_layernorm<T>(store, prefix + ".norm2", cfg.dim, cfg.norm_eps);
    b.mlp_fc1 = make_linear<T>(store, prefix + ".mlp.fc1", cfg.dim, cfg.mlp_ratio * cfg.dim, rng);
    b.mlp_fc2 = make_linear<T>(store, prefix + ".mlp.fc2", cfg.mlp_ratio * cfg.dim, cfg.dim, rng);
    return b;
}

template <typename T>
Stem<T> make_stem(ParamStore<T>& store, std::size_t in_channels, std::size_t dim,
                  std::size_t input_size, double eps, std::mt19937_64& rng) {
    Stem<T> s;
    s.input_size = input_size;
    s.conv1 = make_conv2d<T>(store, "stem.conv1", 3, in_channels, dim, 2, rng);
    s.norm = make_layernorm<T>(store, "stem.norm", dim, eps);
    s.conv2 = make_conv2d<T>(store, "stem.conv2", 3, dim, dim, 2, rng);
    return s;
}

template <typename T>
Downsample<T> make_downsample(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                              std::size_t cout, double eps, std::mt19937_64& rng) {
    Downsample<T> d;
    d.norm = make_layernorm<T>(store, prefix + ".norm", cin, eps);
    d.conv = make_conv2d<T>(store, prefix + ".conv", 3, cin, cout, 2, rng);
    return d;
}

template <typename T>
Head<T> make_head(ParamStore<T>& store, std::size_t c, std::size_t num_classes, double eps,
                  std::mt19937_64& rng) {
    Head<T> h;
    h.norm = make_layernorm<T>(store, "head.norm", c, eps);
    h.fc = make_linear<T>(store, "head.fc", c, num_classes, rng);
    return h;
}

// ---- forward passes ---------------------------------------------------------

template <typename T>
Tensor4<T> layernorm_forward(Tape<T>* tape, const Tensor4<T>& x, const LayerNormLayer<T>& ln) {
    return ops::layernorm(tape, x, ln.gamma->value, ln.beta->value, ln.eps);
}

template <typename T>
Tensor4<T> linear_forward(Tape<T>* tape, const Tensor4<T>& x, const LinearLayer<T>& l) {
    return ops::linear(tape, x, l.weight->value, l.bias->value);
}

// norm -> fc1 to 2h -> split [gate | identity | conv] -> dwconv on the conv
// split -> sigmoid(gate) * concat(identity, conv') -> fc2(GELU(.)) -> + x.
template <typename T>
Tensor4<T> gated_cnn_forward(Tape<T>* tape, const Tensor4<T>& x, const GatedCnnBlock<T>& blk) {
    const std::size_t h = blk.cfg.hidden();
    const std::size_t cc = blk.cfg.conv_channels();
    if (x.shape().c != blk.cfg.dim) {
        throw DimensionError("gated_cnn_forward: input channels " + std::to_string(x.shape().c) +
                             " vs block dim " + std::to_string(blk.cfg.dim));
    }
    Tensor4<T> n = layernorm_forward(tape, x, blk.norm);
    Tensor4<T> u = linear_forward(tape, n, blk.fc1);
    Tensor4<T> gate = ops::slice_channels(tape, u, 0, h);
    Tensor4<T> mixed;
    if (cc == h) {
        Tensor4<T> conv_in = ops::slice_channels(tape, u, h, 2 * h);
        mixed = ops::dwconv2d(tape, conv_in, blk.dw.kernels->value, blk.dw.bias->value);
    } else {
        Tensor4<T> ident = ops::slice_channels(tape, u, h, 2 * h - cc);
        Tensor4<T> conv_in = ops::slice_channels(tape, u, 2 * h - cc, 2 * h);
        Tensor4<T> conv_out = ops::dwconv2d(tape, conv_in, blk.dw.kernels->value, blk.dw.bias->value);
        mixed = ops::concat_channels(tape, ident, conv_out);
    }
    Tensor4<T> z = ops::mul(tape, ops::sigmoid(tape, gate), mixed);
    Tensor4<T> y = linear_forward(tape, ops::gelu(tape, z), blk.fc2);
    return ops::add(tape, x, y);
}

// Two residual sub-layers: x1 = x + DropPath(FFG(norm1 x)),
// y = x1 + DropPath(MLP(norm2 x1)).
template <typename T>
Tensor4<T> fgb_forward(Tape<T>* tape, const Tensor4<T>& x, const FourierGateBlock<T>& blk,
                       bool training, std::mt19937_64& rng) {
    const auto& s = x.shape();
    if (s.h != blk.cfg.height || s.w != blk.cfg.width || s.c != blk.cfg.dim) {
        throw ConfigError("fgb_forward: input " + s.str() + " does not match the block's stage resolution (H=" +
                          std::to_string(blk.cfg.height) + ", W=" + std::to_string(blk.cfg.width) +
                          ", C=" + std::to_string(blk.cfg.dim) + ")");
    }
    Tensor4<T> z1 = spectral::ffg_forward(tape, layernorm_forward(tape, x, blk.norm1), blk.ffg);
    Tensor4<T> x1 = ops::add(tape, x, ops::droppath(tape, z1, blk.cfg.droppath_rate, training, rng));
    Tensor4<T> m = linear_forward(tape, ops::gelu(tape, linear_forward(tape, layernorm_forward(tape, x1, blk.norm2), blk.mlp_fc1)), blk.mlp_fc2);
    return ops::add(tape, x1, ops::droppath(tape, m, blk.cfg.droppath_rate, training, rng));
}

// x4 spatial reduction: conv3x3 s2 -> layernorm -> GELU -> conv3x3 s2.
template <typename T>
Tensor4<T> stem_forward(Tape<T>* tape, const Tensor4<T>& x, const Stem<T>& stem) {
    const auto& s = x.shape();
    if (s.h != stem.input_size || s.w != stem.input_size) {
        throw ConfigError("stem_forward: input " + s.str() + " but the model was configured for " +
                          std::to_string(stem.input_size) + "x" + std::to_string(stem.input_size));
    }
    Tensor4<T> y = ops::conv2d(tape, x, stem.conv1.weight->value, stem.conv1.bias->value, 2);
    y = layernorm_forward(tape, y, stem.norm);
    y = ops::gelu(tape, y);
    return ops::conv2d(tape, y, stem.conv2.weight->value, stem.conv2.bias->value, 2);
}

// layernorm -> conv3x3 stride 2 to the next stage dim; even spatial dims only.
template <typename T>
Tensor4<T> downsample_forward(Tape<T>* tape, const Tensor4<T>& x, const Downsample<T>& ds) {
    const auto& s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw ConfigError("downsample_forward: odd spatial dims " + s.str());
    }
    Tensor4<T> y = layernorm_forward(tape, x, ds.norm);
    return ops::conv2d(tape, y, ds.conv.weight->value, ds.conv.bias->value, 2);
}

// layernorm -> single linear to K logits, on pooled [B,1,1,C] features.
template <typename T>
Tensor4<T> mlp_head_forward(Tape<T>* tape, const Tensor4<T>& pooled, const Head<T>& head) {
    Tensor4<T> y = layernorm_forward(tape, pooled, head.norm);
    return linear_forward(tape, y, head.fc);
}

}  // namespace mors::blocks
