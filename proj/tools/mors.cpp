// mors: train, evaluate, and inspect the gated-CNN + Fourier-filter-gate
// classification backbone. Data goes to stdout as JSON, logs to stderr.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mors/config.hpp"
#include "mors/gradcheck.hpp"
#include "mors/model.hpp"
#include "mors/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mors;

namespace {

json summary_json(const model::ModelSummary& s) {
    json out;
    out["variant"] = s.variant;
    out["depths"] = s.depths;
    out["dims"] = s.dims;
    out["input_size"] = s.input_size;
    out["num_classes"] = s.num_classes;
    out["stages"] = json::array();
    for (const auto& st : s.stages) {
        out["stages"].push_back({{"stage", st.index},
                                 {"kind", st.kind},
                                 {"blocks", st.blocks},
                                 {"dim", st.dim},
                                 {"resolution", st.resolution},
                                 {"params", st.params}});
    }
    out["stem_params"] = s.stem_params;
    out["downsample_params"] = s.downsample_params;
    out["head_params"] = s.head_params;
    out["total_params"] = s.total_params;
    return out;
}

json metrics_json(const metrics::Metrics& m) {
    json out;
    out["accuracy"] = m.accuracy;
    out["loss"] = m.loss;
    out["macro_precision"] = m.macro_precision;
    out["macro_recall"] = m.macro_recall;
    out["macro_f1"] = m.macro_f1;
    out["per_class"] = json::array();
    for (std::size_t c = 0; c < m.precision.size(); ++c) {
        out["per_class"].push_back(
            {{"precision", m.precision[c]}, {"recall", m.recall[c]}, {"f1", m.f1[c]}});
    }
    out["confusion"] = m.confusion;
    if (!m.empty_classes.empty()) out["empty_classes"] = m.empty_classes;
    return out;
}

data::DatasetManifest resolve_manifest(const config::RunConfig& cfg) {
    const std::string manifest = cfg.manifest_path();
    if (!manifest.empty()) return data::load_manifest(manifest);
    const std::string root = cfg.data_root();
    if (root.empty()) throw ConfigError("config: set data.root or data.manifest");
    const fs::path auto_manifest = fs::path(root) / "manifest.json";
    if (fs::exists(auto_manifest)) return data::load_manifest(auto_manifest.string());
    return data::scan_dataset(root, cfg.split_ratios(),
                              cfg.effective.at("data").at("seed").get<std::uint64_t>());
}

void echo_resolved_config(const config::RunConfig& cfg, const std::string& run_dir) {
    if (run_dir.empty()) return;
    fs::create_directories(run_dir);
    std::ofstream os(fs::path(run_dir) / "config.resolved.json");
    os << cfg.effective.dump(2) << "\n";
}

int cmd_train(const config::RunConfig& cfg) {
    auto man = resolve_manifest(cfg);
    auto mcfg = cfg.model_config();
    auto tcfg = cfg.train_config();
    tcfg.verbose = true;
    echo_resolved_config(cfg, tcfg.run_dir);
    auto m = model::build_model<float>(mcfg);
    std::cerr << "[train] variant=" << mcfg.variant.name << " params=" << model::count_params(m)
              << " train_samples=" << man.indices_of(data::Split::train).size() << "\n";
    auto result = train::train(m, man, tcfg);
    json out;
    out["epochs"] = result.history.size();
    out["best_val_loss"] = result.best_val_loss;
    out["best_epoch"] = result.best_epoch;
    out["best_checkpoint"] = result.best_checkpoint;
    out["final_checkpoint"] = result.final_checkpoint;
    out["history"] = result.history_path;
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_eval(const config::RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
    auto man = resolve_manifest(cfg);
    auto m = model::build_model<float>(cfg.model_config());
    model::load_checkpoint(m, static_cast<Adam<float>*>(nullptr), checkpoint);
    auto metrics = train::evaluate(m, man, data::split_by_name(split),
                                   cfg.train_config().batch_size);
    json out = metrics_json(metrics);
    out["split"] = split;
    out["checkpoint"] = checkpoint;
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_params(const std::string& variant, std::size_t num_classes) {
    model::ModelConfig cfg;
    cfg.variant = model::variant_by_name(variant);
    cfg.num_classes = num_classes;
    auto m = model::build_model<float>(cfg);
    const std::size_t n = model::count_params(m);
    json out;
    out["variant"] = variant;
    out["num_classes"] = num_classes;
    out["params"] = n;
    out["params_millions"] = static_cast<double>(n) / 1e6;
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_describe(const config::RunConfig& cfg, const std::string& variant) {
    auto mcfg = cfg.model_config();
    if (!variant.empty()) mcfg.variant = model::variant_by_name(variant);
    auto m = model::build_model<float>(mcfg);
    std::cout << summary_json(model::describe(m)).dump(2) << std::endl;
    return 0;
}

int cmd_gradcheck(const std::string& scope) {
    auto results = gradcheck::run_scope(scope);
    json out;
    out["scope"] = scope;
    out["checks"] = json::array();
    bool ok = true;
    double worst = 0;
    for (const auto& r : results) {
        const double threshold = r.name == "model" ? 1e-5 : 1e-6;
        const bool pass = r.max_rel_err <= threshold;
        ok = ok && pass;
        worst = std::max(worst, r.max_rel_err);
        out["checks"].push_back({{"name", r.name},
                                 {"max_rel_err", r.max_rel_err},
                                 {"probes", r.probes},
                                 {"threshold", threshold},
                                 {"pass", pass}});
        std::cerr << "[gradcheck] " << r.name << " max_rel_err=" << r.max_rel_err
                  << (pass ? " ok" : " FAIL") << "\n";
    }
    out["max_rel_err"] = worst;
    out["pass"] = ok;
    std::cout << out.dump(2) << std::endl;
    if (!ok) throw NumericalError("gradcheck: tolerance exceeded");
    return 0;
}

int cmd_synth(const config::RunConfig& cfg, const std::string& out_dir) {
    auto spec = cfg.synth_spec();
    const std::size_t files = data::synth_generate(spec, out_dir, cfg.split_ratios());
    json out;
    out["root"] = out_dir;
    out["classes"] = spec.classes;
    out["per_class"] = spec.per_class;
    out["size"] = spec.size;
    out["files"] = files;
    out["manifest"] = (fs::path(out_dir) / "manifest.json").string();
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_ablate(const config::RunConfig& cfg) {
    auto man = resolve_manifest(cfg);
    auto tcfg = cfg.train_config();
    tcfg.verbose = true;
    echo_resolved_config(cfg, tcfg.run_dir);
    auto report = train::ablation_run<float>(cfg.model_config(), tcfg, man, cfg.ablation_seeds());
    json out;
    out["seeds"] = report.seeds;
    out["with_fgb"] = {{"mean_macro_f1", report.with_fgb.mean_macro_f1},
                       {"per_seed", report.with_fgb.per_seed_macro_f1}};
    out["without_fgb"] = {{"mean_macro_f1", report.without_fgb.mean_macro_f1},
                          {"per_seed", report.without_fgb.per_seed_macro_f1}};
    out["with_minus_without"] =
        report.with_fgb.mean_macro_f1 - report.without_fgb.mean_macro_f1;
    std::cout << out.dump(2) << std::endl;
    return 0;
}

// Writes sigmoid(logits) of every gate in a checkpoint as MORS1 [C,H,Wf]
// plus a channel-mean CSV per frequency bin.
int cmd_export_gate(const std::string& checkpoint, const std::string& out_dir) {
    auto entries = io::read_archive(checkpoint);
    fs::create_directories(out_dir);
    json out;
    out["gates"] = json::array();
    for (const auto& e : entries) {
        if (e.name.size() < 11 || e.name.rfind(".ffg.weight") != e.name.size() - 11) continue;
        if (e.tensor.dims.size() != 4) continue;
        const std::size_t C = e.tensor.dims[1], H = e.tensor.dims[2], Wf = e.tensor.dims[3];
        auto logits = e.tensor.values<double>();
        std::vector<double> gate(logits.size());
        for (std::size_t i = 0; i < gate.size(); ++i) {
            gate[i] = ops::detail::sigmoid_scalar(logits[i]);
        }
        const std::string base = e.name.substr(0, e.name.size() - std::string(".ffg.weight").size());
        std::string stem = base;
        for (auto& ch : stem) {
            if (ch == '.' || ch == '/') ch = '_';
        }
        const std::string mors_path = (fs::path(out_dir) / (stem + ".gate.mors1")).string();
        io::write_mors1_file(mors_path, {C, H, Wf}, gate.data());

        const std::string csv_path = (fs::path(out_dir) / (stem + ".gate.csv")).string();
        std::ofstream csv(csv_path);
        csv << "h,wf,gate_mean\n";
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t f = 0; f < Wf; ++f) {
                double mean = 0;
                for (std::size_t c = 0; c < C; ++c) mean += gate[(c * H + h) * Wf + f];
                mean /= static_cast<double>(C);
                csv << h << "," << f << "," << mean << "\n";
            }
        }
        out["gates"].push_back({{"name", base}, {"mors1", mors_path}, {"csv", csv_path}});
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gated-CNN + Fourier-filter-gate image classification backbone"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "JSON config file")->group("global");
    app.add_option("--set", overrides, "dotted-path override, e.g. train.lr=0.01")->group("global");
    app.add_option("--seed", seed, "override every RNG seed")->group("global")
        ->each([&](const std::string&) { seed_set = true; });

    auto* train_cmd = app.add_subcommand("train", "train a model from a config");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string checkpoint, split = "test";
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--split", split, "train|val|test");

    auto* params_cmd = app.add_subcommand("params", "parameter count of a named variant");
    std::string variant;
    std::size_t num_classes = 10;
    params_cmd->add_option("variant", variant, "femto|kobe|tiny")->required();
    params_cmd->add_option("--num-classes", num_classes, "classification head width");

    auto* describe_cmd = app.add_subcommand("describe", "per-stage structural summary");
    std::string describe_variant;
    describe_cmd->add_option("variant", describe_variant, "femto|kobe|tiny (else from config)");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::string scope = "all";
    gradcheck_cmd->add_option("scope", scope, "all|ops|blocks|model|<op name>");

    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic spectral dataset");
    std::string out_dir = "data/synth";
    synth_cmd->add_option("--out", out_dir, "output directory");

    auto* ablate_cmd = app.add_subcommand("ablate", "paired with/without frequency-gate runs");

    auto* export_cmd = app.add_subcommand("export-gate", "dump learned gates from a checkpoint");
    std::string export_ckpt, export_out = "gates";
    export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
    export_cmd->add_option("--out", export_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        const config::RunConfig cfg =
            config::load(config_path, overrides, seed_set ? &seed : nullptr);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint, split);
        if (params_cmd->parsed()) return cmd_params(variant, num_classes);
        if (describe_cmd->parsed()) return cmd_describe(cfg, describe_variant);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(scope);
        if (synth_cmd->parsed()) return cmd_synth(cfg, out_dir);
        if (ablate_cmd->parsed()) return cmd_ablate(cfg);
        if (export_cmd->parsed()) return cmd_export_gate(export_ckpt, export_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
