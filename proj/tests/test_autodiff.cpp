#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mors/adam.hpp"
#include "mors/gradcheck.hpp"
#include "mors/ops.hpp"
#include "test_util.hpp"

using namespace mors;

TEST_CASE("backward: gradient of sum(linear) w.r.t. W is the column-summed input") {
    auto x = oracle::random_tensor<double>({2, 2, 2, 3}, 1);
    auto w = oracle::random_tensor<double>({1, 1, 3, 4}, 2);
    Tensor4<double> b(Shape4{1, 1, 1, 4});

    Tape<double> tape;
    tape.watch(w);
    auto loss = ops::reduce_sum(&tape, ops::linear(&tape, x, w, b));
    tape.backward(loss);
    auto gw = tape.grad_of(w);

    for (std::size_t i = 0; i < 3; ++i) {
        double expected = 0;
        for (std::size_t r = 0; r < 8; ++r) expected += x.vec()[r * 3 + i];
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(gw(0, 0, i, j) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward: unused watched tensor gets exactly zero gradient") {
    auto x = oracle::random_tensor<double>({1, 2, 2, 2}, 3);
    auto unused = oracle::random_tensor<double>({1, 1, 1, 5}, 4);
    Tape<double> tape;
    tape.watch(x);
    tape.watch(unused);
    auto loss = ops::reduce_sum(&tape, ops::gelu(&tape, x));
    tape.backward(loss);
    auto gu = tape.grad_of(unused);
    for (std::size_t i = 0; i < gu.numel(); ++i) CHECK(gu.data()[i] == 0.0);
}

TEST_CASE("backward: second backward on a consumed tape is a usage error") {
    auto x = oracle::random_tensor<double>({1, 1, 1, 3}, 5);
    Tape<double> tape;
    tape.watch(x);
    auto loss = ops::reduce_sum(&tape, x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("gradcheck: every primitive op matches central finite differences at 1e-6") {
    for (const auto& r : gradcheck::run_scope("ops")) {
        INFO(r.name, " max_rel_err=", r.max_rel_err, " over ", r.probes, " probes");
        CHECK(r.max_rel_err <= 1e-6);
        CHECK(r.probes >= 3);
    }
}

TEST_CASE("gradcheck: channel split/concat routing") {
    auto x = oracle::random_tensor<double>({2, 2, 2, 6}, 6);
    auto proj = std::make_shared<std::vector<double>>(x.numel());
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : *proj) v = u(rng);
    auto f = [&](Tape<double>* tape) {
        auto a = ops::slice_channels(tape, x, 0, 2);
        auto bpart = ops::slice_channels(tape, x, 2, 6);
        auto joined = ops::concat_channels(tape, ops::sigmoid(tape, bpart), a);
        return ops::weighted_sum(tape, joined, proj);
    };
    auto r = gradcheck::check_scalar_fn("split_concat", f, {&x});
    CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("adam: zero gradients leave parameters bitwise unchanged") {
    ParamStore<double> store;
    store.add("w", oracle::random_tensor<double>({1, 1, 4, 4}, 8), {4, 4});
    std::vector<double> before = store[0].value.vec();
    Adam<double> opt(store, {});
    store.zero_grads();
    opt.step(store);
    CHECK(std::memcmp(before.data(), store[0].value.data(), before.size() * sizeof(double)) == 0);
}

TEST_CASE("adam: first-step magnitude is ~lr for unit gradient") {
    ParamStore<double> store;
    store.add("w", Tensor4<double>::full({1, 1, 1, 1}, 5.0), {1});
    store[0].grad.at(0, 0, 0, 0) = 1.0;
    AdamConfig cfg;
    Adam<double> opt(store, cfg);
    opt.step(store);
    const double delta = 5.0 - store[0].value(0, 0, 0, 0);
    CHECK(delta == doctest::Approx(cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps on f(w)=w^2 from w=5 descend monotonically after warm-in") {
    ParamStore<double> store;
    store.add("w", Tensor4<double>::full({1, 1, 1, 1}, 5.0), {1});
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam<double> opt(store, cfg);
    double prev = 5.0;
    for (int t = 1; t <= 100; ++t) {
        const double w = store[0].value(0, 0, 0, 0);
        store[0].grad.at(0, 0, 0, 0) = 2.0 * w;
        opt.step(store);
        const double now = std::abs(store[0].value(0, 0, 0, 0));
        if (t > 5) CHECK(now < prev);
        prev = now;
    }
    // Adam moves ~lr per step while far from the minimum; 100 steps at 0.05
    // cover most but not all of the distance from 5
    CHECK(prev < 2.0);
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
    ParamStore<double> store;
    store.add("stage1.block0.fc1.weight", Tensor4<double>::full({1, 1, 2, 2}, 1.0), {2, 2});
    store[0].grad.at(0, 0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
    Adam<double> opt(store, {});
    CHECK_THROWS_WITH_AS(opt.step(store), doctest::Contains("stage1.block0.fc1.weight"), NumericalError);
}

TEST_CASE("adam: analytic single-step equivalence on a small tensor") {
    ParamStore<double> store;
    auto init = oracle::random_tensor<double>({1, 1, 2, 3}, 9);
    store.add("w", init.clone(), {2, 3});
    auto g = oracle::random_tensor<double>({1, 1, 2, 3}, 10);
    std::copy(g.data(), g.data() + g.numel(), store[0].grad.data());
    AdamConfig cfg;
    Adam<double> opt(store, cfg);
    opt.step(store);
    for (std::size_t i = 0; i < init.numel(); ++i) {
        const double m = (1 - cfg.beta1) * g.data()[i];
        const double v = (1 - cfg.beta2) * g.data()[i] * g.data()[i];
        const double mhat = m / (1 - cfg.beta1);
        const double vhat = v / (1 - cfg.beta2);
        const double expect = init.data()[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        CHECK(store[0].value.data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}
