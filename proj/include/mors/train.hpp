#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mors/adam.hpp"
#include "mors/data.hpp"
#include "mors/metrics.hpp"
#include "mors/model.hpp"

namespace mors::train {

using json = nlohmann::json;

struct TrainConfig {
    std::size_t epochs = 25;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    data::AugmentOps augment;
    std::uint64_t seed = 0;
    std::string run_dir;  // empty -> no files written
    std::size_t eval_every = 1;
    std::string lr_schedule = "constant";  // constant | cosine
    double grad_clip = 0.0;                // 0 -> off
    bool verbose = false;

    AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_macro_f1 = 0;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_val_loss = 0;
    std::size_t best_epoch = 0;
    std::string best_checkpoint;
    std::string final_checkpoint;
    std::string history_path;
};

// Deterministic, augmentation-free evaluation over one split. DropPath is
// an identity at eval; parameters are read-only.
template <typename T>
metrics::Metrics evaluate(model::Model<T>& m, const data::DatasetManifest& man, data::Split split,
                          std::size_t batch_size = 32) {
    auto idx = man.indices_of(split);
    if (idx.empty()) throw DataError(std::string("evaluate: split '") + data::split_name(split) + "' is empty");
    data::BatchLoader<T> loader(man);
    std::vector<int> y_true, y_pred;
    double loss_sum = 0;
    std::mt19937_64 rng(0);  // unused at eval; forward requires a stream

    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                       idx.begin() + static_cast<std::ptrdiff_t>(end));
        data::Batch<T> batch = loader.load(chunk);
        Tensor4<T> logits = model::forward(m, static_cast<Tape<T>*>(nullptr), batch.images, false, rng);
        Tensor4<T> loss = ops::softmax_cross_entropy(static_cast<Tape<T>*>(nullptr), logits, batch.labels);
        loss_sum += static_cast<double>(loss.data()[0]) * static_cast<double>(chunk.size());
        const std::size_t K = man.classes.size();
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            int best = 0;
            for (std::size_t k = 1; k < K; ++k) {
                if (logits(b, 0, 0, k) > logits(b, 0, 0, static_cast<std::size_t>(best))) {
                    best = static_cast<int>(k);
                }
            }
            y_pred.push_back(best);
            y_true.push_back(man.samples[chunk[b]].label);
        }
    }
    return metrics::from_pairs(y_true, y_pred, man.classes.size(), loss_sum / static_cast<double>(idx.size()));
}

namespace detail {

inline double epoch_lr(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.lr_schedule == "cosine" && cfg.epochs > 1) {
        const double t = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
        return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    }
    return cfg.lr;
}

template <typename T>
void clip_grads(ParamStore<T>& params, double max_norm) {
    double sq = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].grad.numel(); ++j) {
            const double g = static_cast<double>(params[i].grad.data()[j]);
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const T scale = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].grad.numel(); ++j) params[i].grad.data()[j] *= scale;
    }
}

}  // namespace detail

// Training loop: seeded shuffles, Adam with bias correction, per-epoch
// validation, best-validation-loss checkpoint retention. On divergence the
// last written checkpoints stay on disk and a NumericalError surfaces.
template <typename T>
TrainResult train(model::Model<T>& m, const data::DatasetManifest& man, const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("train: epochs and batch size must be >= 1");
    auto train_idx = man.indices_of(data::Split::train);
    auto val_idx = man.indices_of(data::Split::val);
    if (train_idx.empty()) throw DataError("train: empty train split");
    if (val_idx.empty()) throw DataError("train: empty val split");

    const bool persist = !cfg.run_dir.empty();
    if (persist) std::filesystem::create_directories(cfg.run_dir);
    const std::string best_path = persist ? cfg.run_dir + "/best.ckpt" : "";
    const std::string final_path = persist ? cfg.run_dir + "/final.ckpt" : "";
    const std::string hist_path = persist ? cfg.run_dir + "/history.jsonl" : "";

    data::BatchLoader<T> loader(man);
    Adam<T> opt(m.params, cfg.adam());

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::ofstream hist;
    if (persist) {
        hist.open(hist_path);
        if (!hist) throw DataError("cannot write " + hist_path);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xe90c4u, epoch));
        std::mt19937_64 step_rng(mix_seed(cfg.seed, 0x57e9u, epoch));
        std::vector<std::size_t> order = train_idx;
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        opt.config().lr = detail::epoch_lr(cfg, epoch);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            data::Batch<T> batch = loader.load(chunk);
            batch = data::augment(batch, cfg.augment, step_rng);

            Tape<T> tape;
            m.params.watch_all(tape);
            Tensor4<T> logits = model::forward(m, &tape, batch.images, true, step_rng);
            Tensor4<T> loss = ops::softmax_cross_entropy(&tape, logits, batch.labels);
            const double loss_v = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(loss_v)) {
                throw NumericalError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                                     "; last good checkpoints preserved" +
                                     (persist ? " under " + cfg.run_dir : ""));
            }
            loss_sum += loss_v * static_cast<double>(chunk.size());

            m.params.zero_grads();
            tape.backward(loss);
            m.params.collect_grads(tape);
            if (cfg.grad_clip > 0) detail::clip_grads(m.params, cfg.grad_clip);
            opt.step(m.params);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            metrics::Metrics val = evaluate(m, man, data::Split::val, cfg.batch_size);
            rec.val_loss = val.loss;
            rec.val_macro_f1 = val.macro_f1;
            if (val.loss < result.best_val_loss) {
                result.best_val_loss = val.loss;
                result.best_epoch = epoch;
                if (persist) save_checkpoint(m, &opt, best_path);
            }
        } else {
            rec.val_loss = std::numeric_limits<double>::quiet_NaN();
            rec.val_macro_f1 = std::numeric_limits<double>::quiet_NaN();
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);

        if (persist) {
            json line = {{"epoch", rec.epoch},
                         {"train_loss", rec.train_loss},
                         {"val_loss", rec.val_loss},
                         {"val_macro_f1", rec.val_macro_f1},
                         {"seconds", rec.seconds}};
            hist << line.dump() << "\n";
            hist.flush();
        }
        if (cfg.verbose) {
            std::cerr << "[epoch " << epoch << "/" << cfg.epochs << "] train_loss=" << rec.train_loss
                      << " val_loss=" << rec.val_loss << " val_macro_f1=" << rec.val_macro_f1
                      << " (" << rec.seconds << "s)\n";
        }
    }

    if (persist) {
        save_checkpoint(m, &opt, final_path);
        result.best_checkpoint = best_path;
        result.final_checkpoint = final_path;
        result.history_path = hist_path;
    }
    return result;
}

// ---- paired FGB ablation ------------------------------------------------------

struct AblationArm {
    std::vector<double> per_seed_macro_f1;
    double mean_macro_f1 = 0;
};

struct AblationReport {
    std::vector<std::uint64_t> seeds;
    AblationArm with_fgb;
    AblationArm without_fgb;
};

// Trains, per seed, the model as configured and a structural twin whose
// stage-2/3 blocks are gated-CNN of equal depth/dim, on the same manifest
// with identical data order, then compares test macro-F1.
template <typename T>
AblationReport ablation_run(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                            const data::DatasetManifest& man, const std::vector<std::uint64_t>& seeds) {
    if (seeds.size() < 3) throw ConfigError("ablation: need at least 3 seeds");
    AblationReport report;
    report.seeds = seeds;
    for (bool use_fgb : {true, false}) {
        AblationArm& arm = use_fgb ? report.with_fgb : report.without_fgb;
        for (std::uint64_t seed : seeds) {
            model::ModelConfig mc = mcfg;
            mc.use_fgb = use_fgb;
            mc.seed = seed;
            TrainConfig tc = tcfg;
            tc.seed = seed;  // both arms share the data order for this seed
            if (!tcfg.run_dir.empty()) {
                tc.run_dir = tcfg.run_dir + "/seed" + std::to_string(seed) + (use_fgb ? "/fgb" : "/nofgb");
            }
            auto m = model::build_model<T>(mc);
            TrainResult r = train(m, man, tc);
            // test the best-validation checkpoint when one was persisted
            if (!r.best_checkpoint.empty() && std::filesystem::exists(r.best_checkpoint)) {
                model::load_checkpoint(m, static_cast<Adam<T>*>(nullptr), r.best_checkpoint);
            }
            metrics::Metrics test = evaluate(m, man, data::Split::test, tc.batch_size);
            arm.per_seed_macro_f1.push_back(test.macro_f1);
            if (tcfg.verbose) {
                std::cerr << "[ablation] seed=" << seed << " fgb=" << (use_fgb ? "yes" : "no")
                          << " test_macro_f1=" << test.macro_f1 << "\n";
            }
        }
        for (double v : arm.per_seed_macro_f1) arm.mean_macro_f1 += v;
        arm.mean_macro_f1 /= static_cast<double>(arm.per_seed_macro_f1.size());
    }
    return report;
}

}  // namespace mors::train
