#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mors/blocks.hpp"
#include "mors/gradcheck.hpp"
#include "test_util.hpp"

using namespace mors;

namespace {

blocks::GatedCnnBlock<double> gated_block(ParamStore<double>& store, std::size_t dim,
                                          std::uint64_t seed, std::size_t k = 7) {
    std::mt19937_64 rng(seed);
    blocks::GatedCnnBlockCfg cfg;
    cfg.dim = dim;
    cfg.dw_kernel = k;
    return blocks::make_gated_cnn_block<double>(store, "blk", cfg, rng);
}

blocks::FourierGateBlock<double> fgb_block(ParamStore<double>& store, std::size_t dim, std::size_t h,
                                           std::size_t w, double droppath, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    blocks::FgbCfg cfg;
    cfg.dim = dim;
    cfg.height = h;
    cfg.width = w;
    cfg.droppath_rate = droppath;
    return blocks::make_fgb<double>(store, "blk", cfg, rng);
}

}  // namespace

TEST_CASE("gated block: zero fc2 reduces to the residual identity") {
    ParamStore<double> store;
    auto blk = gated_block(store, 6, 1);
    std::fill(blk.fc2.weight->value.vec().begin(), blk.fc2.weight->value.vec().end(), 0.0);
    std::fill(blk.fc2.bias->value.vec().begin(), blk.fc2.bias->value.vec().end(), 0.0);
    auto x = oracle::random_tensor<double>({2, 4, 4, 6}, 2);
    auto y = blocks::gated_cnn_forward<double>(nullptr, x, blk);
    CHECK(y.shape() == x.shape());
    CHECK(oracle::max_abs_diff(y, x) <= 1e-12);
}

TEST_CASE("gated block: preserves shape on a stage-sized tensor") {
    ParamStore<double> store;
    auto blk = gated_block(store, 96, 3);
    auto x = oracle::random_tensor<double>({2, 14, 14, 96}, 4);
    auto y = blocks::gated_cnn_forward<double>(nullptr, x, blk);
    CHECK(y.shape() == Shape4{2, 14, 14, 96});
}

TEST_CASE("gated block: channel mismatch raises a dimension error") {
    ParamStore<double> store;
    auto blk = gated_block(store, 6, 5);
    auto x = oracle::random_tensor<double>({1, 4, 4, 5}, 6);
    CHECK_THROWS_AS(blocks::gated_cnn_forward<double>(nullptr, x, blk), DimensionError);
}

TEST_CASE("gated block: single-site forward equals the scalar re-implementation oracle") {
    ParamStore<double> store;
    auto blk = gated_block(store, 5, 7, 3);
    // delta kernel so the depthwise conv is the identity at H=W=1
    std::fill(blk.dw.kernels->value.vec().begin(), blk.dw.kernels->value.vec().end(), 0.0);
    for (std::size_t c = 0; c < blk.cfg.conv_channels(); ++c) blk.dw.kernels->value.at(0, 1, 1, c) = 1.0;
    std::fill(blk.dw.bias->value.vec().begin(), blk.dw.bias->value.vec().end(), 0.0);

    auto x = oracle::random_tensor<double>({1, 1, 1, 5}, 8);
    auto y = blocks::gated_cnn_forward<double>(nullptr, x, blk);

    // standalone scalar pipeline: norm -> fc1 -> split -> sigma(g)*concat(i,c) -> fc2(gelu) -> +x
    const std::size_t C = 5, h = blk.cfg.hidden(), cc = blk.cfg.conv_channels();
    std::vector<double> cvec(C);
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < C; ++c) mean += x(0, 0, 0, c);
    mean /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) {
        const double d = x(0, 0, 0, c) - mean;
        var += d * d;
    }
    var /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) {
        cvec[c] = blk.norm.gamma->value(0, 0, 0, c) * (x(0, 0, 0, c) - mean) / std::sqrt(var + 1e-6) +
                  blk.norm.beta->value(0, 0, 0, c);
    }
    std::vector<double> u(2 * h);
    for (std::size_t j = 0; j < 2 * h; ++j) {
        double acc = blk.fc1.bias->value(0, 0, 0, j);
        for (std::size_t i = 0; i < C; ++i) acc += cvec[i] * blk.fc1.weight->value(0, 0, i, j);
        u[j] = acc;
    }
    std::vector<double> z(h);
    for (std::size_t j = 0; j < h; ++j) {
        const double gate = 1.0 / (1.0 + std::exp(-u[j]));
        // identity channels and delta-conv channels both pass u[h+j] through
        z[j] = gate * u[h + j];
    }
    (void)cc;
    std::vector<double> out(C);
    for (std::size_t c = 0; c < C; ++c) {
        double acc = blk.fc2.bias->value(0, 0, 0, c);
        for (std::size_t j = 0; j < h; ++j) {
            const double gelu = z[j] * 0.5 * (1.0 + std::erf(z[j] / std::sqrt(2.0)));
            acc += gelu * blk.fc2.weight->value(0, 0, j, c);
        }
        out[c] = x(0, 0, 0, c) + acc;
    }
    for (std::size_t c = 0; c < C; ++c) CHECK(y(0, 0, 0, c) == doctest::Approx(out[c]).epsilon(1e-10));
}

TEST_CASE("droppath: p=0 and eval mode are identities") {
    auto x = oracle::random_tensor<double>({4, 2, 2, 3}, 9);
    std::mt19937_64 rng(10);
    auto y0 = ops::droppath<double>(nullptr, x, 0.0, true, rng);
    CHECK(oracle::max_abs_diff(y0, x) == doctest::Approx(0.0));
    auto ye = ops::droppath<double>(nullptr, x, 0.9, false, rng);
    CHECK(oracle::max_abs_diff(ye, x) == doctest::Approx(0.0));
    CHECK_THROWS_AS(ops::droppath<double>(nullptr, x, 1.0, true, rng), ConfigError);
}

TEST_CASE("droppath: per-sample masks zero or rescale whole samples") {
    auto x = Tensor4<double>::full({64, 1, 1, 2}, 1.0);
    std::mt19937_64 rng(11);
    const double p = 0.5;
    auto y = ops::droppath<double>(nullptr, x, p, true, rng);
    std::size_t kept = 0, dropped = 0;
    for (std::size_t b = 0; b < 64; ++b) {
        const double v0 = y(b, 0, 0, 0), v1 = y(b, 0, 0, 1);
        CHECK(v0 == v1);  // whole-sample decision
        if (v0 == 0.0) {
            ++dropped;
        } else {
            CHECK(v0 == doctest::Approx(2.0));
            ++kept;
        }
    }
    CHECK(kept + dropped == 64);
    CHECK(kept > 10);
    CHECK(dropped > 10);
}

TEST_CASE("droppath: Monte-Carlo expectation within the 3-sigma binomial bound") {
    const double p = 0.3;
    const std::size_t n = 10000;
    auto x = Tensor4<double>::full({1, 1, 1, 1}, 1.0);
    std::mt19937_64 rng(12);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sum += ops::droppath<double>(nullptr, x, p, true, rng)(0, 0, 0, 0);
    }
    const double mean = sum / static_cast<double>(n);
    const double sigma = std::sqrt(p / (1.0 - p) / static_cast<double>(n));
    CHECK(std::abs(mean - 1.0) <= 3.0 * sigma);
}

TEST_CASE("fgb: dead branches (stop mask + zero mlp fc2) make the block an identity") {
    ParamStore<double> store;
    auto blk = fgb_block(store, 4, 6, 6, 0.0, 13);
    blk.ffg.override_mask = std::vector<double>(blk.ffg.mask_size(), 0.0);
    std::fill(blk.mlp_fc2.weight->value.vec().begin(), blk.mlp_fc2.weight->value.vec().end(), 0.0);
    auto x = oracle::random_tensor<double>({2, 6, 6, 4}, 14);
    std::mt19937_64 rng(15);
    auto y = blocks::fgb_forward<double>(nullptr, x, blk, false, rng);
    CHECK(oracle::max_abs_diff(y, x) <= 1e-12);
}

TEST_CASE("fgb: eval mode is a deterministic function of the input") {
    ParamStore<double> store;
    auto blk = fgb_block(store, 3, 4, 4, 0.5, 16);
    auto x = oracle::random_tensor<double>({2, 4, 4, 3}, 17);
    std::mt19937_64 r1(18), r2(99);
    auto y1 = blocks::fgb_forward<double>(nullptr, x, blk, false, r1);
    auto y2 = blocks::fgb_forward<double>(nullptr, x, blk, false, r2);
    CHECK(std::memcmp(y1.data(), y2.data(), y1.numel() * sizeof(double)) == 0);
}

TEST_CASE("fgb: training droppath zeroes or rescales the branch per sample") {
    ParamStore<double> store;
    auto blk = fgb_block(store, 3, 4, 4, 0.5, 19);
    // isolate the first residual: zero MLP second layer
    std::fill(blk.mlp_fc2.weight->value.vec().begin(), blk.mlp_fc2.weight->value.vec().end(), 0.0);
    std::fill(blk.mlp_fc2.bias->value.vec().begin(), blk.mlp_fc2.bias->value.vec().end(), 0.0);
    auto x = oracle::random_tensor<double>({8, 4, 4, 3}, 20);
    std::mt19937_64 eval_rng(0);
    auto eval_out = blocks::fgb_forward<double>(nullptr, x, blk, false, eval_rng);

    const std::uint64_t seed = 21;
    std::mt19937_64 train_rng(seed);
    auto train_out = blocks::fgb_forward<double>(nullptr, x, blk, true, train_rng);
    // derive the same per-sample mask from the same seeded stream
    std::mt19937_64 check_rng(seed);
    std::bernoulli_distribution keep(0.5);
    const std::size_t plane = 4 * 4 * 3;
    std::vector<bool> kept(8);
    for (std::size_t b = 0; b < 8; ++b) kept[b] = keep(check_rng);
    for (std::size_t b = 0; b < 8; ++b) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double xin = x.data()[b * plane + i];
            const double branch_eval = eval_out.data()[b * plane + i] - xin;
            const double expected = kept[b] ? xin + 2.0 * branch_eval : xin;
            CHECK(train_out.data()[b * plane + i] == doctest::Approx(expected).epsilon(1e-10));
        }
    }
}

TEST_CASE("stem: stride arithmetic for 224 and 64 inputs, and channel law") {
    ParamStore<double> store;
    std::mt19937_64 rng(22);
    auto stem224 = blocks::make_stem<double>(store, 3, 48, 224, 1e-6, rng);
    auto x = oracle::random_tensor<double>({1, 224, 224, 3}, 23);
    auto y = blocks::stem_forward<double>(nullptr, x, stem224);
    CHECK(y.shape() == Shape4{1, 56, 56, 48});

    ParamStore<double> store2;
    auto stem64 = blocks::make_stem<double>(store2, 3, 96, 64, 1e-6, rng);
    auto x2 = oracle::random_tensor<double>({2, 64, 64, 3}, 24);
    CHECK(blocks::stem_forward<double>(nullptr, x2, stem64).shape() == Shape4{2, 16, 16, 96});

    CHECK_THROWS_AS(blocks::stem_forward<double>(nullptr, x2, stem224), ConfigError);
}

TEST_CASE("downsample: femto dimension ladder and odd-size rejection") {
    std::mt19937_64 rng(25);
    struct Case { Shape4 in; std::size_t cout; Shape4 out; };
    const Case cases[] = {
        {{1, 56, 56, 48}, 96, {1, 28, 28, 96}},
        {{1, 28, 28, 96}, 192, {1, 14, 14, 192}},
        {{1, 14, 14, 192}, 288, {1, 7, 7, 288}},
    };
    for (const auto& c : cases) {
        ParamStore<double> store;
        auto ds = blocks::make_downsample<double>(store, "ds", c.in.c, c.cout, 1e-6, rng);
        auto x = oracle::random_tensor<double>(c.in, 26);
        CHECK(blocks::downsample_forward<double>(nullptr, x, ds).shape() == c.out);
    }
    ParamStore<double> store;
    auto ds = blocks::make_downsample<double>(store, "ds", 4, 8, 1e-6, rng);
    auto odd = oracle::random_tensor<double>({1, 7, 8, 4}, 27);
    CHECK_THROWS_AS(blocks::downsample_forward<double>(nullptr, odd, ds), ConfigError);
}

TEST_CASE("head: zero weights give all-zero logits; batch equivariance holds") {
    ParamStore<double> store;
    std::mt19937_64 rng(28);
    auto head = blocks::make_head<double>(store, 8, 21, 1e-6, rng);
    std::fill(head.fc.weight->value.vec().begin(), head.fc.weight->value.vec().end(), 0.0);
    auto pooled = oracle::random_tensor<double>({2, 1, 1, 8}, 29);
    auto logits = blocks::mlp_head_forward<double>(nullptr, pooled, head);
    CHECK(logits.shape() == Shape4{2, 1, 1, 21});
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits.data()[i] == 0.0);

    ParamStore<double> store2;
    auto head2 = blocks::make_head<double>(store2, 8, 5, 1e-6, rng);
    auto a = oracle::random_tensor<double>({3, 1, 1, 8}, 30);
    Tensor4<double> swapped(a.shape());
    // permute batch (rotate by one)
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t c = 0; c < 8; ++c) swapped.at(b, 0, 0, c) = a((b + 1) % 3, 0, 0, c);
    auto la = blocks::mlp_head_forward<double>(nullptr, a, head2);
    auto ls = blocks::mlp_head_forward<double>(nullptr, swapped, head2);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(ls(b, 0, 0, k) == doctest::Approx(la((b + 1) % 3, 0, 0, k)).epsilon(1e-12));
        }
}

TEST_CASE("gradient flow: 6 stacked blocks keep a finite nonzero input gradient") {
    ParamStore<double> store;
    std::mt19937_64 rng(31);
    std::vector<blocks::GatedCnnBlock<double>> gblocks;
    std::vector<blocks::FourierGateBlock<double>> fblocks;
    for (int i = 0; i < 3; ++i) {
        blocks::GatedCnnBlockCfg cfg;
        cfg.dim = 6;
        cfg.dw_kernel = 3;
        gblocks.push_back(blocks::make_gated_cnn_block<double>(store, "g" + std::to_string(i), cfg, rng));
        blocks::FgbCfg fcfg;
        fcfg.dim = 6;
        fcfg.height = 4;
        fcfg.width = 4;
        fblocks.push_back(blocks::make_fgb<double>(store, "f" + std::to_string(i), fcfg, rng));
    }
    auto x = oracle::random_tensor<double>({1, 4, 4, 6}, 32);
    Tape<double> tape;
    tape.watch(x);
    store.watch_all(tape);
    Tensor4<double> h = x;
    std::mt19937_64 fw_rng(33);
    for (int i = 0; i < 3; ++i) {
        h = blocks::gated_cnn_forward(&tape, h, gblocks[static_cast<std::size_t>(i)]);
        h = blocks::fgb_forward(&tape, h, fblocks[static_cast<std::size_t>(i)], false, fw_rng);
    }
    auto loss = ops::reduce_sum(&tape, h);
    tape.backward(loss);
    auto gx = tape.grad_of(x);
    double norm = 0;
    for (std::size_t i = 0; i < gx.numel(); ++i) norm += gx.data()[i] * gx.data()[i];
    norm = std::sqrt(norm);
    CHECK(std::isfinite(norm));
    CHECK(norm > 1e-6);
}

TEST_CASE("gradcheck: composite blocks pass finite differences at 1e-6") {
    for (const auto& r : gradcheck::run_scope("blocks")) {
        INFO(r.name, " max_rel_err=", r.max_rel_err);
        CHECK(r.max_rel_err <= 1e-6);
    }
}
