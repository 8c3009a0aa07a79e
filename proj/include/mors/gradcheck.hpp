#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mors/blocks.hpp"
#include "mors/model.hpp"
#include "mors/ops.hpp"
#include "mors/spectral.hpp"

namespace mors::gradcheck {

// Central finite differences, delta 1e-5, double precision. Relative error is
// |tape - fd| / max(1, |tape|, |fd|); probes sample up to `max_probes`
// components per differentiable input.
struct Settings {
    double delta = 1e-5;
    std::size_t max_probes = 12;
    std::uint64_t seed = 17;
};

struct CheckResult {
    std::string name;
    double max_rel_err = 0;
    std::size_t probes = 0;
};

// f(tape) must rebuild the graph from the current contents of `inputs` and
// return a scalar; the harness compares tape gradients against central
// differences of f(nullptr).
inline CheckResult check_scalar_fn(const std::string& name,
                                   const std::function<Tensor4<double>(Tape<double>*)>& f,
                                   const std::vector<Tensor4<double>*>& inputs,
                                   const Settings& cfg = {}) {
    Tape<double> tape;
    for (auto* t : inputs) tape.watch(*t);
    Tensor4<double> loss = f(&tape);
    tape.backward(loss);
    std::vector<Tensor4<double>> grads;
    grads.reserve(inputs.size());
    for (auto* t : inputs) grads.push_back(tape.grad_of(*t));

    CheckResult res;
    res.name = name;
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor4<double>& t = *inputs[i];
        const std::size_t n = t.numel();
        const std::size_t probes = std::min(n, cfg.max_probes);
        std::vector<std::size_t> picks;
        if (probes == n) {
            for (std::size_t j = 0; j < n; ++j) picks.push_back(j);
        } else {
            std::uniform_int_distribution<std::size_t> dist(0, n - 1);
            for (std::size_t j = 0; j < probes; ++j) picks.push_back(dist(rng));
        }
        for (std::size_t idx : picks) {
            const double saved = t.data()[idx];
            t.data()[idx] = saved + cfg.delta;
            const double lp = f(nullptr).data()[0];
            t.data()[idx] = saved - cfg.delta;
            const double lm = f(nullptr).data()[0];
            t.data()[idx] = saved;
            const double fd = (lp - lm) / (2.0 * cfg.delta);
            const double gt = grads[i].data()[idx];
            const double rel = std::abs(fd - gt) / std::max({1.0, std::abs(fd), std::abs(gt)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.probes;
        }
    }
    return res;
}

namespace detail {

inline std::shared_ptr<std::vector<double>> projection(std::size_t n, std::uint64_t seed) {
    auto w = std::make_shared<std::vector<double>>(n);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : *w) v = dist(rng);
    return w;
}

inline Tensor4<double> random_tensor(Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor4<double> t(s);
    std::mt19937_64 rng(seed);
    fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace detail

// ---- op and block scenarios --------------------------------------------------
// Each scenario runs over >= 3 random shapes and reports the worst error.

inline CheckResult check_linear(std::uint64_t seed = 1) {
    CheckResult worst{"linear", 0, 0};
    const Shape4 shapes[] = {{2, 3, 3, 4}, {1, 1, 5, 3}, {3, 2, 2, 6}};
    const std::size_t couts[] = {5, 2, 4};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c);
        auto w = detail::random_tensor(Shape4{1, 1, shapes[c].c, couts[c]}, seed + 10 * c + 1);
        auto b = detail::random_tensor(Shape4{1, 1, 1, couts[c]}, seed + 10 * c + 2);
        auto proj = detail::projection(shapes[c].b * shapes[c].h * shapes[c].w * couts[c], seed + 3);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, ops::linear(tape, x, w, b), proj);
        };
        auto r = check_scalar_fn("linear", f, {&x, &w, &b});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_dwconv2d(std::uint64_t seed = 2) {
    CheckResult worst{"dwconv2d", 0, 0};
    const Shape4 shapes[] = {{1, 5, 5, 3}, {2, 4, 6, 2}, {1, 3, 3, 4}};
    const std::size_t ks[] = {3, 3, 5};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c);
        auto k = detail::random_tensor(Shape4{1, ks[c], ks[c], shapes[c].c}, seed + 10 * c + 1);
        auto b = detail::random_tensor(Shape4{1, 1, 1, shapes[c].c}, seed + 10 * c + 2);
        auto proj = detail::projection(shapes[c].numel(), seed + 3);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, ops::dwconv2d(tape, x, k, b), proj);
        };
        auto r = check_scalar_fn("dwconv2d", f, {&x, &k, &b});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_conv2d(std::uint64_t seed = 3) {
    CheckResult worst{"conv2d", 0, 0};
    struct Case { Shape4 x; std::size_t k, cout, stride; };
    const Case cases[] = {{{1, 5, 5, 3}, 3, 4, 1}, {{2, 4, 4, 2}, 3, 3, 2}, {{1, 6, 6, 3}, 1, 5, 1}, {{1, 7, 7, 2}, 5, 2, 2}};
    for (std::size_t c = 0; c < 4; ++c) {
        auto x = detail::random_tensor(cases[c].x, seed + 10 * c);
        auto w = detail::random_tensor(Shape4{cases[c].k, cases[c].k, cases[c].x.c, cases[c].cout}, seed + 10 * c + 1);
        auto b = detail::random_tensor(Shape4{1, 1, 1, cases[c].cout}, seed + 10 * c + 2);
        const std::size_t pad = cases[c].k / 2;
        const std::size_t ho = (cases[c].x.h + 2 * pad - cases[c].k) / cases[c].stride + 1;
        const std::size_t wo = (cases[c].x.w + 2 * pad - cases[c].k) / cases[c].stride + 1;
        auto proj = detail::projection(cases[c].x.b * ho * wo * cases[c].cout, seed + 3);
        auto f = [&, c](Tape<double>* tape) {
            return ops::weighted_sum(tape, ops::conv2d(tape, x, w, b, cases[c].stride), proj);
        };
        auto r = check_scalar_fn("conv2d", f, {&x, &w, &b});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_elementwise(const std::string& which, std::uint64_t seed = 4) {
    CheckResult worst{which, 0, 0};
    const Shape4 shapes[] = {{2, 3, 3, 2}, {1, 1, 1, 7}, {1, 4, 2, 3}};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c, -2.0, 2.0);
        auto proj = detail::projection(shapes[c].numel(), seed + 3);
        auto f = [&](Tape<double>* tape) {
            Tensor4<double> y = which == "gelu" ? ops::gelu(tape, x) : ops::sigmoid(tape, x);
            return ops::weighted_sum(tape, y, proj);
        };
        auto r = check_scalar_fn(which, f, {&x});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_layernorm(std::uint64_t seed = 5) {
    CheckResult worst{"layernorm", 0, 0};
    const Shape4 shapes[] = {{2, 3, 3, 4}, {1, 2, 2, 8}, {1, 1, 1, 1}};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c);
        auto g = detail::random_tensor(Shape4{1, 1, 1, shapes[c].c}, seed + 10 * c + 1, 0.5, 1.5);
        auto b = detail::random_tensor(Shape4{1, 1, 1, shapes[c].c}, seed + 10 * c + 2);
        auto proj = detail::projection(shapes[c].numel(), seed + 3);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, ops::layernorm(tape, x, g, b, 1e-6), proj);
        };
        auto r = check_scalar_fn("layernorm", f, {&x, &g, &b});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_global_avg_pool(std::uint64_t seed = 6) {
    CheckResult worst{"global_avg_pool", 0, 0};
    const Shape4 shapes[] = {{2, 3, 3, 4}, {1, 1, 1, 3}, {3, 4, 2, 2}};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c);
        auto proj = detail::projection(shapes[c].b * shapes[c].c, seed + 3);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, ops::global_avg_pool(tape, x), proj);
        };
        auto r = check_scalar_fn("global_avg_pool", f, {&x});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_softmax_cross_entropy(std::uint64_t seed = 7) {
    CheckResult worst{"softmax_cross_entropy", 0, 0};
    const std::size_t ks[] = {2, 5, 11};
    for (int c = 0; c < 3; ++c) {
        const Shape4 s{3, 1, 1, ks[c]};
        auto z = detail::random_tensor(s, seed + 10 * c, -3.0, 3.0);
        Tensor4<double> t(s);
        std::mt19937_64 rng(seed + 10 * c + 1);
        std::uniform_real_distribution<double> u(0.05, 1.0);
        for (std::size_t b = 0; b < s.b; ++b) {
            double sum = 0;
            for (std::size_t k = 0; k < ks[c]; ++k) {
                t.at(b, 0, 0, k) = u(rng);
                sum += t(b, 0, 0, k);
            }
            for (std::size_t k = 0; k < ks[c]; ++k) t.at(b, 0, 0, k) /= sum;
        }
        auto f = [&](Tape<double>* tape) { return ops::softmax_cross_entropy(tape, z, t); };
        auto r = check_scalar_fn("softmax_cross_entropy", f, {&z});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_droppath(std::uint64_t seed = 8) {
    CheckResult worst{"droppath", 0, 0};
    const Shape4 shapes[] = {{4, 2, 2, 3}, {6, 1, 1, 2}, {3, 3, 3, 1}};
    for (int c = 0; c < 3; ++c) {
        auto x = detail::random_tensor(shapes[c], seed + 10 * c);
        auto proj = detail::projection(shapes[c].numel(), seed + 3);
        auto f = [&, c](Tape<double>* tape) {
            std::mt19937_64 rng(seed + 100 + static_cast<std::uint64_t>(c));  // same mask every call
            return ops::weighted_sum(tape, ops::droppath(tape, x, 0.4, true, rng), proj);
        };
        auto r = check_scalar_fn("droppath", f, {&x});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_ffg(std::uint64_t seed = 9) {
    CheckResult worst{"ffg", 0, 0};
    struct Case { std::size_t h, w, c; };
    const Case cases[] = {{4, 4, 2}, {5, 7, 3}, {8, 6, 1}};
    for (std::size_t c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        auto ffg = blocks::make_ffg<double>(store, "ffg", cases[c].c, cases[c].h, cases[c].w, rng);
        // move logits away from zero so the sigmoid is exercised off-center
        fill_uniform(ffg.logits->value, rng, -1.5, 1.5);
        auto x = detail::random_tensor(Shape4{2, cases[c].h, cases[c].w, cases[c].c}, seed + 10 * c + 1);
        auto proj = detail::projection(x.numel(), seed + 3);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, spectral::ffg_forward(tape, x, ffg), proj);
        };
        auto r = check_scalar_fn("ffg", f, {&x, &ffg.logits->value});
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_gated_cnn_block(std::uint64_t seed = 10) {
    CheckResult worst{"gated_cnn_block", 0, 0};
    struct Case { Shape4 x; double expansion, conv_ratio; std::size_t k; };
    const Case cases[] = {{{1, 4, 4, 6}, 8.0 / 3.0, 1.0, 3}, {{2, 3, 3, 4}, 2.0, 0.5, 3}, {{1, 2, 2, 8}, 1.5, 1.0, 5}};
    for (std::size_t c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        blocks::GatedCnnBlockCfg cfg;
        cfg.dim = cases[c].x.c;
        cfg.expansion_ratio = cases[c].expansion;
        cfg.conv_ratio = cases[c].conv_ratio;
        cfg.dw_kernel = cases[c].k;
        auto blk = blocks::make_gated_cnn_block<double>(store, "blk", cfg, rng);
        auto x = detail::random_tensor(cases[c].x, seed + 10 * c + 1);
        auto proj = detail::projection(cases[c].x.numel(), seed + 3);
        std::vector<Tensor4<double>*> inputs{&x};
        for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(&store[i].value);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, blocks::gated_cnn_forward(tape, x, blk), proj);
        };
        auto r = check_scalar_fn("gated_cnn_block", f, inputs);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_fgb_block(std::uint64_t seed = 11) {
    CheckResult worst{"fgb_block", 0, 0};
    struct Case { std::size_t h, w, c, mlp; };
    const Case cases[] = {{4, 4, 8, 4}, {6, 4, 3, 2}, {7, 7, 2, 4}};
    for (std::size_t c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        blocks::FgbCfg cfg;
        cfg.dim = cases[c].c;
        cfg.height = cases[c].h;
        cfg.width = cases[c].w;
        cfg.mlp_ratio = cases[c].mlp;
        cfg.droppath_rate = 0.0;
        auto blk = blocks::make_fgb<double>(store, "blk", cfg, rng);
        auto x = detail::random_tensor(Shape4{2, cases[c].h, cases[c].w, cases[c].c}, seed + 10 * c + 1);
        auto proj = detail::projection(x.numel(), seed + 3);
        std::vector<Tensor4<double>*> inputs{&x};
        for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(&store[i].value);
        auto f = [&](Tape<double>* tape) {
            std::mt19937_64 r2(0);
            return ops::weighted_sum(tape, blocks::fgb_forward(tape, x, blk, false, r2), proj);
        };
        auto r = check_scalar_fn("fgb_block", f, inputs);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_stem(std::uint64_t seed = 12) {
    CheckResult worst{"stem", 0, 0};
    const std::size_t sizes[] = {32, 64, 32};
    const std::size_t dims[] = {4, 3, 6};
    for (int c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        auto stem = blocks::make_stem<double>(store, 3, dims[c], sizes[c], 1e-6, rng);
        // init-scale weights leave the inner layernorm with near-zero variance,
        // which inflates finite-difference truncation; probe at O(1) scales
        fill_uniform(stem.conv1.weight->value, rng, -0.5, 0.5);
        fill_uniform(stem.conv2.weight->value, rng, -0.5, 0.5);
        auto x = detail::random_tensor(Shape4{1, sizes[c], sizes[c], 3}, seed + 10 * c + 1);
        auto proj = detail::projection((sizes[c] / 4) * (sizes[c] / 4) * dims[c], seed + 3);
        std::vector<Tensor4<double>*> inputs{&x};
        for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(&store[i].value);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, blocks::stem_forward(tape, x, stem), proj);
        };
        auto r = check_scalar_fn("stem", f, inputs);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_downsample(std::uint64_t seed = 13) {
    CheckResult worst{"downsample", 0, 0};
    struct Case { Shape4 x; std::size_t cout; };
    const Case cases[] = {{{1, 4, 4, 3}, 6}, {{2, 6, 6, 2}, 4}, {{1, 8, 4, 5}, 5}};
    for (std::size_t c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        auto ds = blocks::make_downsample<double>(store, "ds", cases[c].x.c, cases[c].cout, 1e-6, rng);
        auto x = detail::random_tensor(cases[c].x, seed + 10 * c + 1);
        auto proj = detail::projection(cases[c].x.b * (cases[c].x.h / 2) * (cases[c].x.w / 2) * cases[c].cout, seed + 3);
        std::vector<Tensor4<double>*> inputs{&x};
        for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(&store[i].value);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, blocks::downsample_forward(tape, x, ds), proj);
        };
        auto r = check_scalar_fn("downsample", f, inputs);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

inline CheckResult check_head(std::uint64_t seed = 14) {
    CheckResult worst{"head", 0, 0};
    struct Case { std::size_t b, c, k; };
    const Case cases[] = {{2, 8, 4}, {1, 3, 2}, {4, 5, 7}};
    for (std::size_t c = 0; c < 3; ++c) {
        ParamStore<double> store;
        std::mt19937_64 rng(seed + 10 * c);
        auto head = blocks::make_head<double>(store, cases[c].c, cases[c].k, 1e-6, rng);
        auto x = detail::random_tensor(Shape4{cases[c].b, 1, 1, cases[c].c}, seed + 10 * c + 1);
        auto proj = detail::projection(cases[c].b * cases[c].k, seed + 3);
        std::vector<Tensor4<double>*> inputs{&x};
        for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(&store[i].value);
        auto f = [&](Tape<double>* tape) {
            return ops::weighted_sum(tape, blocks::mlp_head_forward(tape, x, head), proj);
        };
        auto r = check_scalar_fn("head", f, inputs);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.probes += r.probes;
    }
    return worst;
}

// End-to-end micro model (depths 1/1/1/1, dims 8, input 32) against the
// classification loss; threshold for this composite is 1e-5.
inline CheckResult check_model(std::uint64_t seed = 15) {
    model::ModelConfig cfg;
    cfg.variant = {"micro", {1, 1, 1, 1}, {8, 8, 8, 8}};
    cfg.num_classes = 4;
    cfg.input_size = 32;
    cfg.seed = seed;
    auto m = model::build_model<double>(cfg);
    auto x = detail::random_tensor(Shape4{2, 32, 32, 3}, seed + 1, 0.0, 1.0);
    Tensor4<double> targets(Shape4{2, 1, 1, 4});
    targets.at(0, 0, 0, 1) = 1;
    targets.at(1, 0, 0, 2) = 1;
    std::vector<Tensor4<double>*> inputs{&x};
    for (std::size_t i = 0; i < m.params.size(); ++i) inputs.push_back(&m.params[i].value);
    auto f = [&](Tape<double>* tape) {
        std::mt19937_64 rng(0);
        Tensor4<double> logits = model::forward(m, tape, x, false, rng);
        return ops::softmax_cross_entropy(tape, logits, targets);
    };
    Settings s;
    s.max_probes = 5;
    auto r = check_scalar_fn("model", f, inputs, s);
    r.name = "model";
    return r;
}

inline std::vector<CheckResult> run_scope(const std::string& scope) {
    std::vector<CheckResult> out;
    const bool ops_scope = scope == "all" || scope == "ops";
    const bool blocks_scope = scope == "all" || scope == "blocks";
    auto want = [&](const std::string& n) { return scope == n; };

    if (ops_scope || want("linear")) out.push_back(check_linear());
    if (ops_scope || want("dwconv2d")) out.push_back(check_dwconv2d());
    if (ops_scope || want("conv2d")) out.push_back(check_conv2d());
    if (ops_scope || want("gelu")) out.push_back(check_elementwise("gelu"));
    if (ops_scope || want("sigmoid")) out.push_back(check_elementwise("sigmoid"));
    if (ops_scope || want("layernorm")) out.push_back(check_layernorm());
    if (ops_scope || want("global_avg_pool")) out.push_back(check_global_avg_pool());
    if (ops_scope || want("softmax_cross_entropy")) out.push_back(check_softmax_cross_entropy());
    if (ops_scope || want("droppath")) out.push_back(check_droppath());
    if (ops_scope || want("ffg")) out.push_back(check_ffg());
    if (blocks_scope || want("gated_cnn_block")) out.push_back(check_gated_cnn_block());
    if (blocks_scope || want("fgb_block")) out.push_back(check_fgb_block());
    if (blocks_scope || want("stem")) out.push_back(check_stem());
    if (blocks_scope || want("downsample")) out.push_back(check_downsample());
    if (blocks_scope || want("head")) out.push_back(check_head());
    if (scope == "model" || want("model")) out.push_back(check_model());
    if (out.empty()) throw ConfigError("gradcheck: unknown scope '" + scope + "'");
    return out;
}

}  // namespace mors::gradcheck
