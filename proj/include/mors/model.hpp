#pragma once

#include <array>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mors/adam.hpp"
#include "mors/blocks.hpp"
#include "mors/serialize.hpp"

namespace mors::model {

struct VariantSpec {
    std::string name;
    std::array<std::size_t, 4> depths{};
    std::array<std::size_t, 4> dims{};
};

inline VariantSpec variant_femto() { return {"femto", {3, 3, 9, 3}, {48, 96, 192, 288}}; }
inline VariantSpec variant_kobe() { return {"kobe", {3, 3, 15, 3}, {48, 96, 192, 288}}; }
inline VariantSpec variant_tiny() { return {"tiny", {3, 3, 9, 3}, {96, 192, 384, 576}}; }

inline VariantSpec variant_by_name(const std::string& name) {
    if (name == "femto") return variant_femto();
    if (name == "kobe") return variant_kobe();
    if (name == "tiny") return variant_tiny();
    throw ConfigError("unknown variant '" + name + "' (expected femto, kobe, or tiny)");
}

struct ModelConfig {
    VariantSpec variant = variant_femto();
    std::size_t num_classes = 10;
    std::size_t in_channels = 3;
    std::size_t input_size = 224;
    double droppath = 0.0;  // p_max of the linear ramp over block index
    std::uint64_t seed = 0;
    double expansion_ratio = 8.0 / 3.0;
    double conv_ratio = 1.0;
    std::size_t dw_kernel = 7;
    std::size_t mlp_ratio = 4;
    double norm_eps = 1e-6;
    bool use_fgb = true;  // false swaps stages 2-3 to gated CNN blocks (ablation arm)
};

// Stage kinds are fixed: local gated-CNN mixing in stages 1 and 4, frequency
// gating in stages 2 and 3.
enum class StageKind { gated_cnn, fourier_gate };

template <typename T>
using Block = std::variant<blocks::GatedCnnBlock<T>, blocks::FourierGateBlock<T>>;

template <typename T>
struct Stage {
    StageKind kind = StageKind::gated_cnn;
    std::size_t dim = 0;
    std::size_t resolution = 0;  // spatial H == W entering the stage
    std::vector<Block<T>> blocks;
    std::size_t param_count = 0;
};

template <typename T>
struct Model {
    ModelConfig cfg;
    ParamStore<T> params;
    blocks::Stem<T> stem;
    std::array<Stage<T>, 4> stages;
    std::array<blocks::Downsample<T>, 3> downs;
    blocks::LayerNormLayer<T> final_norm;
    blocks::Head<T> head;
    std::size_t stem_param_count = 0;
    std::array<std::size_t, 3> down_param_counts{};
    std::size_t head_param_count = 0;  // final norm + head
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
    if (cfg.input_size == 0 || cfg.input_size % 32 != 0) {
        throw ConfigError("input_size " + std::to_string(cfg.input_size) +
                          " is not divisible by 32 (stem x4, then three x2 downsamples)");
    }
    if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    for (std::size_t d : cfg.variant.depths) {
        if (d == 0) throw ConfigError("variant depths must be >= 1");
    }

    std::mt19937_64 rng(cfg.seed);
    Model<T> m;
    m.cfg = cfg;

    const auto& dims = cfg.variant.dims;
    const auto& depths = cfg.variant.depths;
    const std::size_t total_blocks = depths[0] + depths[1] + depths[2] + depths[3];
    std::size_t block_index = 0;
    auto ramp_rate = [&](std::size_t idx) {
        if (cfg.droppath <= 0.0 || total_blocks <= 1) return 0.0;
        return cfg.droppath * static_cast<double>(idx) / static_cast<double>(total_blocks - 1);
    };

    std::size_t mark = 0;
    auto consumed = [&] {
        const std::size_t now = m.params.scalar_count();
        const std::size_t delta = now - mark;
        mark = now;
        return delta;
    };

    m.stem = blocks::make_stem<T>(m.params, cfg.in_channels, dims[0], cfg.input_size, cfg.norm_eps, rng);
    m.stem_param_count = consumed();

    std::size_t res = cfg.input_size / 4;
    for (std::size_t s = 0; s < 4; ++s) {
        Stage<T>& stage = m.stages[s];
        stage.dim = dims[s];
        stage.resolution = res;
        const bool fourier = cfg.use_fgb && (s == 1 || s == 2);
        stage.kind = fourier ? StageKind::fourier_gate : StageKind::gated_cnn;
        for (std::size_t i = 0; i < depths[s]; ++i) {
            const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(i);
            if (fourier) {
                blocks::FgbCfg bc;
                bc.dim = dims[s];
                bc.height = res;
                bc.width = res;
                bc.mlp_ratio = cfg.mlp_ratio;
                bc.norm_eps = cfg.norm_eps;
                bc.droppath_rate = ramp_rate(block_index);
                stage.blocks.emplace_back(blocks::make_fgb<T>(m.params, prefix, bc, rng));
            } else {
                blocks::GatedCnnBlockCfg bc;
                bc.dim = dims[s];
                bc.expansion_ratio = cfg.expansion_ratio;
                bc.conv_ratio = cfg.conv_ratio;
                bc.dw_kernel = cfg.dw_kernel;
                bc.norm_eps = cfg.norm_eps;
                stage.blocks.emplace_back(blocks::make_gated_cnn_block<T>(m.params, prefix, bc, rng));
            }
            ++block_index;
        }
        stage.param_count = consumed();
        if (s < 3) {
            m.downs[s] = blocks::make_downsample<T>(m.params, "down" + std::to_string(s + 1),
                                                    dims[s], dims[s + 1], cfg.norm_eps, rng);
            m.down_param_counts[s] = consumed();
            res /= 2;
        }
    }

    m.final_norm = blocks::make_layernorm<T>(m.params, "final_norm", dims[3], cfg.norm_eps);
    m.head = blocks::make_head<T>(m.params, dims[3], cfg.num_classes, cfg.norm_eps, rng);
    m.head_param_count = consumed();
    return m;
}

namespace detail {

template <typename T>
void check_finite(const Tensor4<T>& t, const std::string& where) {
    if (!t.all_finite()) throw NumericalError("non-finite activations after " + where);
}

}  // namespace detail

// Full pipeline: stem -> stage1 -> DS -> stage2 -> DS -> stage3 -> DS ->
// stage4 -> norm -> pool -> head. Returns logits [B,1,1,K].
template <typename T>
Tensor4<T> forward(Model<T>& m, Tape<T>* tape, const Tensor4<T>& x, bool training,
                   std::mt19937_64& rng) {
    const auto& s = x.shape();
    if (s.h != m.cfg.input_size || s.w != m.cfg.input_size) {
        throw ConfigError("forward: input " + s.str() + " vs configured input_size " +
                          std::to_string(m.cfg.input_size));
    }
    if (s.c != m.cfg.in_channels) {
        throw ConfigError("forward: input channels " + std::to_string(s.c) + " vs configured " +
                          std::to_string(m.cfg.in_channels));
    }
    Tensor4<T> h = blocks::stem_forward(tape, x, m.stem);
    detail::check_finite(h, "stem");
    for (std::size_t si = 0; si < 4; ++si) {
        for (auto& blk : m.stages[si].blocks) {
            if (std::holds_alternative<blocks::GatedCnnBlock<T>>(blk)) {
                h = blocks::gated_cnn_forward(tape, h, std::get<blocks::GatedCnnBlock<T>>(blk));
            } else {
                h = blocks::fgb_forward(tape, h, std::get<blocks::FourierGateBlock<T>>(blk), training, rng);
            }
        }
        detail::check_finite(h, "stage" + std::to_string(si + 1));
        if (si < 3) h = blocks::downsample_forward(tape, h, m.downs[si]);
    }
    h = blocks::layernorm_forward(tape, h, m.final_norm);
    h = ops::global_avg_pool(tape, h);
    Tensor4<T> logits = blocks::mlp_head_forward(tape, h, m.head);
    detail::check_finite(logits, "head");
    return logits;
}

template <typename T>
std::size_t count_params(const Model<T>& m) {
    return m.params.scalar_count();
}

struct StageSummary {
    std::size_t index = 0;
    std::string kind;
    std::size_t blocks = 0;
    std::size_t dim = 0;
    std::size_t resolution = 0;
    std::size_t params = 0;
};

struct ModelSummary {
    std::string variant;
    std::array<std::size_t, 4> depths{};
    std::array<std::size_t, 4> dims{};
    std::size_t input_size = 0;
    std::size_t num_classes = 0;
    std::vector<StageSummary> stages;
    std::size_t stem_params = 0;
    std::size_t downsample_params = 0;
    std::size_t head_params = 0;
    std::size_t total_params = 0;
};

template <typename T>
ModelSummary describe(const Model<T>& m) {
    ModelSummary out;
    out.variant = m.cfg.variant.name;
    out.depths = m.cfg.variant.depths;
    out.dims = m.cfg.variant.dims;
    out.input_size = m.cfg.input_size;
    out.num_classes = m.cfg.num_classes;
    for (std::size_t s = 0; s < 4; ++s) {
        StageSummary row;
        row.index = s + 1;
        row.kind = m.stages[s].kind == StageKind::fourier_gate ? "FGB" : "GatedCNN";
        row.blocks = m.stages[s].blocks.size();
        row.dim = m.stages[s].dim;
        row.resolution = m.stages[s].resolution;
        row.params = m.stages[s].param_count;
        out.stages.push_back(row);
    }
    out.stem_params = m.stem_param_count;
    for (auto d : m.down_param_counts) out.downsample_params += d;
    out.head_params = m.head_param_count;
    out.total_params = count_params(m);
    return out;
}

// ---- checkpoints -------------------------------------------------------------
// Archive of MORS1 tensors: every parameter under its own name, optimizer
// moments under "optim/<param>/m|v", and the step counter under "optim/step".

template <typename T>
void save_checkpoint(const Model<T>& m, const Adam<T>* opt, const std::string& path) {
    io::ArchiveWriter ar(path);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& p = m.params[i];
        ar.add(p.name, p.io_dims, p.value.data());
    }
    if (opt) {
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            const auto& p = m.params[i];
            ar.add("optim/" + p.name + "/m", p.io_dims, opt->m_state(i).data());
            ar.add("optim/" + p.name + "/v", p.io_dims, opt->v_state(i).data());
        }
        const double step = static_cast<double>(opt->step_count());
        ar.add("optim/step", std::vector<std::uint64_t>{1}, &step);
    }
    ar.close();
}

template <typename T>
void load_checkpoint(Model<T>& m, Adam<T>* opt, const std::string& path) {
    auto entries = io::read_archive(path);
    std::size_t used = 0;
    auto find = [&](const std::string& name) -> const io::ArchiveEntry* {
        for (const auto& e : entries) {
            if (e.name == name) return &e;
        }
        return nullptr;
    };
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        auto& p = m.params[i];
        const auto* e = find(p.name);
        if (!e) throw DataError("checkpoint " + path + ": missing parameter " + p.name);
        if (e->tensor.dims != p.io_dims) {
            throw DataError("checkpoint " + path + ": shape mismatch for " + p.name);
        }
        if (e->tensor.dtype != io::dtype_of<T>()) {
            throw DataError("checkpoint " + path + ": dtype mismatch for " + p.name);
        }
        auto vals = e->tensor.template values<T>();
        std::copy(vals.begin(), vals.end(), p.value.data());
        ++used;
        if (opt) {
            const auto* em = find("optim/" + p.name + "/m");
            const auto* ev = find("optim/" + p.name + "/v");
            if (em && ev) {
                opt->m_state(i) = em->tensor.template values<T>();
                opt->v_state(i) = ev->tensor.template values<T>();
            }
        }
    }
    if (opt) {
        if (const auto* es = find("optim/step")) {
            opt->set_step_count(static_cast<std::size_t>(es->tensor.template values<double>()[0]));
        }
    }
    // anything that is neither a known parameter nor optimizer state is stale
    for (const auto& e : entries) {
        if (e.name.rfind("optim/", 0) == 0) continue;
        if (!m.params.find(e.name)) {
            throw DataError("checkpoint " + path + ": unknown parameter " + e.name);
        }
    }
    (void)used;
}

}  // namespace mors::model
