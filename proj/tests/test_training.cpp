#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mors/metrics.hpp"
#include "mors/train.hpp"
#include "test_util.hpp"

using namespace mors;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Small synthetic dataset + micro model fixture shared by the loop tests.
struct Fixture {
    TempDir tmp{"mors_train_fixture"};
    data::DatasetManifest man;
    model::ModelConfig mcfg;

    explicit Fixture(std::uint64_t seed = 5) {
        data::SynthSpec spec;
        spec.classes = 3;
        spec.per_class = 12;
        spec.size = 32;
        spec.channels = 1;
        spec.sigma = 0.05;
        spec.seed = seed;
        data::synth_generate(spec, tmp.path.string(), {0.5, 0.25, 0.25});
        man = data::load_manifest((tmp.path / "manifest.json").string());

        mcfg.variant = {"micro", {1, 1, 1, 1}, {8, 8, 8, 8}};
        mcfg.num_classes = 3;
        mcfg.in_channels = 1;
        mcfg.input_size = 32;
        mcfg.seed = seed;
    }
};

std::uint64_t param_hash(const ParamStore<float>& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& v = params[i].value;
        const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t j = 0; j < v.numel() * sizeof(float); ++j) {
            h ^= bytes[j];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace

TEST_CASE("metrics: K=2 hand-computed confusion case") {
    auto m = metrics::from_confusion({{3, 1}, {2, 4}});
    CHECK(m.precision[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(m.precision[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.recall[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.recall[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(m.f1[1] == doctest::Approx(8.0 / 11.0).epsilon(1e-6));
    CHECK(m.macro_f1 == doctest::Approx(0.69697).epsilon(1e-4));
}

TEST_CASE("metrics: perfect predictor has a diagonal confusion and macro F1 = 1") {
    std::vector<int> y = {0, 1, 2, 2, 1, 0, 1};
    auto m = metrics::from_pairs(y, y, 3);
    CHECK(m.macro_f1 == doctest::Approx(1.0));
    CHECK(m.accuracy == doctest::Approx(1.0));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            if (i != j) CHECK(m.confusion[i][j] == 0);
        }
}

TEST_CASE("metrics: constant predictor on balanced classes matches the hand oracle") {
    const std::size_t k = 4, n_per = 5;
    std::vector<int> y_true, y_pred;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n_per; ++i) {
            y_true.push_back(static_cast<int>(c));
            y_pred.push_back(0);
        }
    auto m = metrics::from_pairs(y_true, y_pred, k);
    CHECK(m.accuracy == doctest::Approx(1.0 / static_cast<double>(k)));
    // hand oracle: class 0 has P=1/K, R=1, F1=2/(K+1); all other classes 0
    CHECK(m.f1[0] == doctest::Approx(2.0 / (static_cast<double>(k) + 1.0)).epsilon(1e-12));
    for (std::size_t c = 1; c < k; ++c) CHECK(m.f1[c] == 0.0);
    CHECK(m.macro_f1 == doctest::Approx(2.0 / (static_cast<double>(k) + 1.0) / static_cast<double>(k)).epsilon(1e-12));
}

TEST_CASE("metrics: property checks on random confusion matrices") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> kd(2, 6), cell(0, 9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = kd(rng);
        std::vector<std::vector<std::size_t>> conf(k, std::vector<std::size_t>(k));
        std::vector<std::size_t> row_sums(k, 0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                conf[i][j] = cell(rng);
                row_sums[i] += conf[i][j];
            }
        auto m = metrics::from_confusion(conf);
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t row = 0;
            for (std::size_t j = 0; j < k; ++j) row += m.confusion[i][j];
            CHECK(row == row_sums[i]);  // row sums == per-class counts
            CHECK(m.precision[i] >= 0.0);
            CHECK(m.precision[i] <= 1.0);
            CHECK(m.recall[i] >= 0.0);
            CHECK(m.recall[i] <= 1.0);
            CHECK(m.f1[i] >= 0.0);
            CHECK(m.f1[i] <= 1.0);
        }
        double mean_f1 = 0;
        for (std::size_t i = 0; i < k; ++i) mean_f1 += m.f1[i];
        CHECK(m.macro_f1 == doctest::Approx(mean_f1 / static_cast<double>(k)).epsilon(1e-12));
    }
}

TEST_CASE("metrics: class absent from the split is flagged with recall 0") {
    std::vector<int> y_true = {0, 0, 1};
    std::vector<int> y_pred = {0, 1, 1};
    auto m = metrics::from_pairs(y_true, y_pred, 3);  // class 2 never occurs
    CHECK(m.recall[2] == 0.0);
    REQUIRE(m.empty_classes.size() == 1);
    CHECK(m.empty_classes[0] == 2);
}

TEST_CASE("train: lr=0 leaves parameters bitwise unchanged over an epoch") {
    Fixture fx(7);
    auto m = model::build_model<float>(fx.mcfg);
    const std::uint64_t before = param_hash(m.params);
    train::TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 6;
    tc.lr = 0.0;
    tc.seed = 1;
    train::train(m, fx.man, tc);
    CHECK(param_hash(m.params) == before);
}

TEST_CASE("train: identical seed and config reproduce the loss history exactly") {
    Fixture fx(8);
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 6;
    tc.seed = 3;
    tc.augment.hflip_p = 0.5;
    tc.augment.mixup_alpha = 0.2;

    auto m1 = model::build_model<float>(fx.mcfg);
    auto r1 = train::train(m1, fx.man, tc);
    auto m2 = model::build_model<float>(fx.mcfg);
    auto r2 = train::train(m2, fx.man, tc);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
        CHECK(r1.history[i].val_macro_f1 == r2.history[i].val_macro_f1);
    }
}

TEST_CASE("train: one optimizer step equals the analytic Adam update on tape gradients") {
    Fixture fx(9);
    auto m = model::build_model<float>(fx.mcfg);
    data::BatchLoader<float> loader(fx.man);
    auto idx = fx.man.indices_of(data::Split::train);
    std::vector<std::size_t> chunk(idx.begin(), idx.begin() + 4);
    auto batch = loader.load(chunk);

    // reference gradients and expected first-step update
    Tape<float> tape;
    m.params.watch_all(tape);
    std::mt19937_64 rng(0);
    auto logits = model::forward(m, &tape, batch.images, true, rng);
    auto loss = ops::softmax_cross_entropy(&tape, logits, batch.labels);
    m.params.zero_grads();
    tape.backward(loss);
    m.params.collect_grads(tape);

    AdamConfig acfg;
    std::vector<std::vector<float>> expected;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& p = m.params[i];
        std::vector<float> w(p.value.data(), p.value.data() + p.value.numel());
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double g = p.grad.data()[j];
            const double mhat = (1 - acfg.beta1) * g / (1 - acfg.beta1);
            const double vhat = (1 - acfg.beta2) * g * g / (1 - acfg.beta2);
            w[j] -= static_cast<float>(acfg.lr * mhat / (std::sqrt(vhat) + acfg.eps));
        }
        expected.push_back(std::move(w));
    }
    Adam<float> opt(m.params, acfg);
    opt.step(m.params);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& p = m.params[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            CHECK(p.value.data()[j] == doctest::Approx(expected[i][j]).epsilon(1e-5));
        }
    }
}

TEST_CASE("train: best checkpoint reload reproduces its recorded validation loss") {
    Fixture fx(10);
    TempDir run("mors_train_run");
    auto m = model::build_model<float>(fx.mcfg);
    train::TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 6;
    tc.seed = 2;
    tc.run_dir = run.path.string();
    auto result = train::train(m, fx.man, tc);
    REQUIRE(!result.best_checkpoint.empty());

    auto m2 = model::build_model<float>(fx.mcfg);
    model::load_checkpoint(m2, static_cast<Adam<float>*>(nullptr), result.best_checkpoint);
    auto val = train::evaluate(m2, fx.man, data::Split::val, tc.batch_size);
    CHECK(val.loss == doctest::Approx(result.best_val_loss).epsilon(1e-6));

    // history file exists with one JSON line per epoch
    std::ifstream hist(result.history_path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line)) {
        if (!line.empty()) ++lines;
    }
    CHECK(lines == 3);
}

TEST_CASE("evaluate: never mutates parameters (hash identical before/after)") {
    Fixture fx(11);
    auto m = model::build_model<float>(fx.mcfg);
    const std::uint64_t before = param_hash(m.params);
    train::evaluate(m, fx.man, data::Split::val, 4);
    CHECK(param_hash(m.params) == before);
}

TEST_CASE("evaluate: empty split is a data error") {
    Fixture fx(12);
    auto m = model::build_model<float>(fx.mcfg);
    data::DatasetManifest man = fx.man;
    for (auto& s : man.samples) {
        if (s.split == data::Split::test) s.split = data::Split::train;
    }
    CHECK_THROWS_AS(train::evaluate(m, man, data::Split::test, 4), DataError);
}

TEST_CASE("ablation: structural contract (zero gate params) and paired seeds") {
    Fixture fx(13);
    train::TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 6;
    auto report = train::ablation_run<float>(fx.mcfg, tc, fx.man, {1, 2, 3});
    CHECK(report.seeds.size() == 3);
    CHECK(report.with_fgb.per_seed_macro_f1.size() == 3);
    CHECK(report.without_fgb.per_seed_macro_f1.size() == 3);

    model::ModelConfig ablated = fx.mcfg;
    ablated.use_fgb = false;
    auto m = model::build_model<float>(ablated);
    std::size_t gate_params = 0;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (m.params[i].name.find(".ffg.") != std::string::npos) gate_params += m.params[i].value.numel();
    }
    CHECK(gate_params == 0);

    CHECK_THROWS_AS(train::ablation_run<float>(fx.mcfg, tc, fx.man, {1, 2}), ConfigError);
}
