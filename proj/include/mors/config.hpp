#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mors/data.hpp"
#include "mors/model.hpp"
#include "mors/train.hpp"

namespace mors::config {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// Resolved run configuration: declared defaults, overlaid by a JSON file,
// overlaid by dotted-path --set overrides. Unknown keys are rejected so a
// typo never silently falls back to a default.
struct RunConfig {
    json effective;

    model::ModelConfig model_config() const;
    train::TrainConfig train_config() const;
    data::SynthSpec synth_spec() const;
    std::array<double, 3> split_ratios() const;
    std::string data_root() const { return effective.at("data").at("root").get<std::string>(); }
    std::string manifest_path() const { return effective.at("data").at("manifest").get<std::string>(); }
    std::vector<std::uint64_t> ablation_seeds() const {
        return effective.at("ablation").at("seeds").get<std::vector<std::uint64_t>>();
    }
};

inline json default_config() {
    return json{
        {"schema", kSchemaVersion},
        {"model",
         {{"variant", "femto"},
          {"depths", json::array()},
          {"dims", json::array()},
          {"num_classes", 10},
          {"in_channels", 3},
          {"input_size", 224},
          {"droppath", 0.0},
          {"use_fgb", true},
          {"dw_kernel", 7},
          {"expansion_ratio", 8.0 / 3.0},
          {"conv_ratio", 1.0},
          {"mlp_ratio", 4},
          {"norm_eps", 1e-6},
          {"seed", 0}}},
        {"data",
         {{"root", ""},
          {"manifest", ""},
          {"split", {0.8, 0.1, 0.1}},
          {"seed", 0}}},
        {"train",
         {{"epochs", 25},
          {"batch_size", 32},
          {"lr", 1e-3},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"eps", 1e-8},
          {"seed", 0},
          {"run_dir", "runs/default"},
          {"eval_every", 1},
          {"lr_schedule", "constant"},
          {"grad_clip", 0.0},
          {"augment",
           {{"hflip", 0.0}, {"crop_pad", 0}, {"mixup_alpha", 0.0}, {"cutmix_alpha", 0.0}}}}},
        {"synth",
         {{"classes", 4},
          {"per_class", 64},
          {"size", 64},
          {"channels", 3},
          {"sigma", 0.1},
          {"seed", 0},
          {"signatures", json::array()}}},
        {"ablation", {{"seeds", {1, 2, 3, 4, 5}}}},
    };
}

namespace detail {

inline void check_known_keys(const json& value, const json& reference, const std::string& path) {
    if (!value.is_object()) return;
    if (!reference.is_object()) throw ConfigError("config: unexpected object at " + path);
    for (auto it = value.begin(); it != value.end(); ++it) {
        const std::string child = path.empty() ? it.key() : path + "." + it.key();
        if (!reference.contains(it.key())) throw ConfigError("config: unknown key '" + child + "'");
        check_known_keys(it.value(), reference.at(it.key()), child);
    }
}

inline void deep_merge(json& base, const json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            deep_merge(base[it.key()], *it);
        } else {
            base[it.key()] = *it;
        }
    }
}

inline json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);  // bare strings need no quotes
    return v;
}

}  // namespace detail

// key=value with dotted key paths, e.g. train.lr=0.01 or model.variant=tiny.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const json value = detail::parse_override_value(assignment.substr(eq + 1));

    json* node = &cfg;
    std::size_t start = 0;
    std::string walked;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        walked = walked.empty() ? part : walked + "." + part;
        if (!node->contains(part)) throw ConfigError("config: unknown key '" + walked + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

inline RunConfig load(const std::string& file_path, const std::vector<std::string>& overrides,
                      const std::uint64_t* seed_override = nullptr) {
    json cfg = default_config();
    if (!file_path.empty()) {
        std::ifstream is(file_path);
        if (!is) throw ConfigError("cannot open config file: " + file_path);
        json user;
        try {
            is >> user;
        } catch (const json::exception& e) {
            throw ConfigError("config parse error in " + file_path + ": " + e.what());
        }
        if (user.contains("schema") && user.at("schema").get<int>() != kSchemaVersion) {
            throw ConfigError("config: unsupported schema version");
        }
        detail::check_known_keys(user, cfg, "");
        detail::deep_merge(cfg, user);
    }
    for (const auto& ov : overrides) apply_override(cfg, ov);
    if (seed_override) {
        cfg["model"]["seed"] = *seed_override;
        cfg["data"]["seed"] = *seed_override;
        cfg["train"]["seed"] = *seed_override;
        cfg["synth"]["seed"] = *seed_override;
    }
    return RunConfig{cfg};
}

inline model::ModelConfig RunConfig::model_config() const {
    const json& m = effective.at("model");
    model::ModelConfig cfg;
    const std::string variant = m.at("variant").get<std::string>();
    if (variant == "custom") {
        auto depths = m.at("depths").get<std::vector<std::size_t>>();
        auto dims = m.at("dims").get<std::vector<std::size_t>>();
        if (depths.size() != 4 || dims.size() != 4) {
            throw ConfigError("config: custom variant needs 4 depths and 4 dims");
        }
        cfg.variant = {"custom", {depths[0], depths[1], depths[2], depths[3]},
                       {dims[0], dims[1], dims[2], dims[3]}};
    } else {
        cfg.variant = model::variant_by_name(variant);
    }
    cfg.num_classes = m.at("num_classes").get<std::size_t>();
    cfg.in_channels = m.at("in_channels").get<std::size_t>();
    cfg.input_size = m.at("input_size").get<std::size_t>();
    cfg.droppath = m.at("droppath").get<double>();
    cfg.use_fgb = m.at("use_fgb").get<bool>();
    cfg.dw_kernel = m.at("dw_kernel").get<std::size_t>();
    cfg.expansion_ratio = m.at("expansion_ratio").get<double>();
    cfg.conv_ratio = m.at("conv_ratio").get<double>();
    cfg.mlp_ratio = m.at("mlp_ratio").get<std::size_t>();
    cfg.norm_eps = m.at("norm_eps").get<double>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    return cfg;
}

inline train::TrainConfig RunConfig::train_config() const {
    const json& t = effective.at("train");
    train::TrainConfig cfg;
    cfg.epochs = t.at("epochs").get<std::size_t>();
    cfg.batch_size = t.at("batch_size").get<std::size_t>();
    cfg.lr = t.at("lr").get<double>();
    cfg.beta1 = t.at("beta1").get<double>();
    cfg.beta2 = t.at("beta2").get<double>();
    cfg.eps = t.at("eps").get<double>();
    cfg.seed = t.at("seed").get<std::uint64_t>();
    cfg.run_dir = t.at("run_dir").get<std::string>();
    cfg.eval_every = t.at("eval_every").get<std::size_t>();
    cfg.lr_schedule = t.at("lr_schedule").get<std::string>();
    if (cfg.lr_schedule != "constant" && cfg.lr_schedule != "cosine") {
        throw ConfigError("config: lr_schedule must be 'constant' or 'cosine'");
    }
    cfg.grad_clip = t.at("grad_clip").get<double>();
    const json& a = t.at("augment");
    cfg.augment.hflip_p = a.at("hflip").get<double>();
    cfg.augment.crop_pad = a.at("crop_pad").get<std::size_t>();
    cfg.augment.mixup_alpha = a.at("mixup_alpha").get<double>();
    cfg.augment.cutmix_alpha = a.at("cutmix_alpha").get<double>();
    return cfg;
}

inline data::SynthSpec RunConfig::synth_spec() const {
    const json& s = effective.at("synth");
    data::SynthSpec spec;
    spec.classes = s.at("classes").get<std::size_t>();
    spec.per_class = s.at("per_class").get<std::size_t>();
    spec.size = s.at("size").get<std::size_t>();
    spec.channels = s.at("channels").get<std::size_t>();
    spec.sigma = s.at("sigma").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    for (const auto& cls : s.at("signatures")) {
        std::vector<data::GratingComponent> comps;
        for (const auto& c : cls) {
            if (!c.is_array() || c.size() < 2 || c.size() > 3) {
                throw ConfigError("config: each signature component is [fx, fy] or [fx, fy, orientation]");
            }
            data::GratingComponent g;
            g.fx = c[0].get<double>();
            g.fy = c[1].get<double>();
            g.orientation = c.size() == 3 ? c[2].get<double>() : 0.0;
            comps.push_back(g);
        }
        spec.signatures.push_back(comps);
    }
    return spec;
}

inline std::array<double, 3> RunConfig::split_ratios() const {
    auto r = effective.at("data").at("split").get<std::vector<double>>();
    if (r.size() != 3) throw ConfigError("config: data.split must have 3 ratios");
    return {r[0], r[1], r[2]};
}

}  // namespace mors::config
