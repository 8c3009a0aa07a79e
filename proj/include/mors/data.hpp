#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mors/serialize.hpp"
#include "mors/tensor.hpp"

namespace mors::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Split { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split split_by_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "'");
}

struct SampleRecord {
    std::string path;
    int label = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::string root;
    std::vector<std::string> classes;
    std::vector<SampleRecord> samples;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.8, 0.1, 0.1};

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].split == s) out.push_back(i);
        }
        return out;
    }
};

// Deterministic stratified split of a directory-of-class-folders tree.
// Classes are the sorted subdirectory names; files are shuffled per class by
// a (seed, class-index) stream and cut at floor(ratio * n).
inline DatasetManifest scan_dataset(const std::string& root, std::array<double, 3> ratios,
                                    std::uint64_t seed) {
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);
    DatasetManifest man;
    man.root = root;
    man.seed = seed;
    man.ratios = ratios;

    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) man.classes.push_back(entry.path().filename().string());
    }
    std::sort(man.classes.begin(), man.classes.end());
    if (man.classes.empty()) throw DataError("no class directories under " + root);

    for (std::size_t ci = 0; ci < man.classes.size(); ++ci) {
        std::vector<std::string> files;
        for (const auto& f : fs::directory_iterator(fs::path(root) / man.classes[ci])) {
            if (f.is_regular_file()) files.push_back(f.path().string());
        }
        if (files.empty()) throw DataError("class directory '" + man.classes[ci] + "' is empty");
        std::sort(files.begin(), files.end());
        std::mt19937_64 rng(mix_seed(seed, ci));
        std::shuffle(files.begin(), files.end(), rng);

        const std::size_t n = files.size();
        const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n) + 1e-9));
        const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord rec;
            rec.path = files[i];
            rec.label = static_cast<int>(ci);
            rec.split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
            man.samples.push_back(rec);
        }
    }
    return man;
}

inline void save_manifest(const DatasetManifest& man, const std::string& path) {
    json j;
    j["classes"] = man.classes;
    j["seed"] = man.seed;
    j["ratios"] = man.ratios;
    j["samples"] = json::array();
    for (const auto& s : man.samples) {
        j["samples"].push_back({{"path", s.path}, {"label", s.label}, {"split", split_name(s.split)}});
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    DatasetManifest man;
    man.root = fs::path(path).parent_path().string();
    man.classes = j.at("classes").get<std::vector<std::string>>();
    man.seed = j.at("seed").get<std::uint64_t>();
    auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw DataError("manifest: ratios must have 3 entries");
    man.ratios = {r[0], r[1], r[2]};
    for (const auto& s : j.at("samples")) {
        SampleRecord rec;
        rec.path = s.at("path").get<std::string>();
        rec.label = s.at("label").get<int>();
        rec.split = split_by_name(s.at("split").get<std::string>());
        man.samples.push_back(rec);
    }
    return man;
}

// ---- synthetic frequency-separable dataset -----------------------------------

// One planar grating: wave vector (fx, fy) cycles per image, optionally
// rotated by `orientation` radians.
struct GratingComponent {
    double fx = 0;
    double fy = 0;
    double orientation = 0;
};

struct SynthSpec {
    std::size_t classes = 4;
    std::size_t per_class = 64;
    std::size_t size = 64;
    std::size_t channels = 3;
    double sigma = 0.1;
    std::uint64_t seed = 0;
    std::vector<std::vector<GratingComponent>> signatures;  // one list per class
};

// Low-frequency integer wave vectors, pairwise distinct, chosen to survive
// the backbone's spatial reductions.
inline std::vector<std::vector<GratingComponent>> default_signatures(std::size_t k) {
    static const std::vector<std::pair<double, double>> bank = {
        {2, 0}, {0, 2}, {2, 2}, {3, 1}, {1, 3}, {3, 3}, {1, 0}, {0, 1},
        {1, 1}, {3, 0}, {0, 3}, {2, 1}, {1, 2}, {3, 2}, {2, 3}, {4, 1},
    };
    if (k > bank.size()) throw ConfigError("default signatures support up to " + std::to_string(bank.size()) + " classes");
    std::vector<std::vector<GratingComponent>> sig(k);
    for (std::size_t i = 0; i < k; ++i) sig[i] = {GratingComponent{bank[i].first, bank[i].second, 0.0}};
    return sig;
}

inline void validate_signatures(const SynthSpec& spec) {
    if (spec.signatures.size() != spec.classes) {
        throw ConfigError("synth: " + std::to_string(spec.signatures.size()) + " signatures for " +
                          std::to_string(spec.classes) + " classes");
    }
    auto canon = [](const std::vector<GratingComponent>& sig) {
        std::vector<std::array<long long, 3>> c;
        for (const auto& g : sig) {
            c.push_back({std::llround(g.fx * 1e6), std::llround(g.fy * 1e6),
                         std::llround(g.orientation * 1e6)});
        }
        std::sort(c.begin(), c.end());
        return c;
    };
    for (std::size_t i = 0; i < spec.signatures.size(); ++i) {
        if (spec.signatures[i].empty()) throw ConfigError("synth: class " + std::to_string(i) + " has no components");
        for (std::size_t j = i + 1; j < spec.signatures.size(); ++j) {
            if (canon(spec.signatures[i]) == canon(spec.signatures[j])) {
                throw ConfigError("synth: classes " + std::to_string(i) + " and " + std::to_string(j) +
                                  " share the same spectral signature");
            }
        }
    }
}

// image(x,y) = 0.5 + sum over components of 0.5 cos(2 pi (fx' x + fy' y)/S + phase)
// + N(0, sigma), clipped to [0,1]. Phases are drawn per sample and component;
// the grating pattern is shared across channels, noise is not.
template <typename T = float>
Tensor4<T> synth_image(const SynthSpec& spec, std::size_t cls, std::size_t sample_idx) {
    const std::size_t S = spec.size;
    std::mt19937_64 rng(mix_seed(spec.seed, cls, sample_idx));
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * 3.14159265358979323846);
    std::normal_distribution<double> noise(0.0, spec.sigma);

    std::vector<double> plane(S * S, 0.5);
    for (const auto& comp : spec.signatures[cls]) {
        const double cs = std::cos(comp.orientation), sn = std::sin(comp.orientation);
        const double fx = comp.fx * cs - comp.fy * sn;
        const double fy = comp.fx * sn + comp.fy * cs;
        const double phase = phase_dist(rng);
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double arg = 2.0 * 3.14159265358979323846 *
                                   (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                                   static_cast<double>(S) + phase;
                plane[y * S + x] += 0.5 * std::cos(arg);
            }
        }
    }
    Tensor4<T> img(Shape4{1, S, S, spec.channels});
    T* d = img.data();
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            for (std::size_t c = 0; c < spec.channels; ++c) {
                double v = plane[y * S + x] + (spec.sigma > 0 ? noise(rng) : 0.0);
                v = std::min(1.0, std::max(0.0, v));
                d[(y * S + x) * spec.channels + c] = static_cast<T>(v);
            }
        }
    }
    return img;
}

// Materializes the dataset under out_root/class{k}/img{i}.mors1 and writes a
// manifest.json with the given split ratios. Returns the file count.
inline std::size_t synth_generate(SynthSpec spec, const std::string& out_root,
                                  std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
    if (spec.size < 16) throw ConfigError("synth: image size must be >= 16");
    if (spec.classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (spec.signatures.empty()) spec.signatures = default_signatures(spec.classes);
    validate_signatures(spec);

    std::size_t files = 0;
    for (std::size_t cls = 0; cls < spec.classes; ++cls) {
        char cdir[32];
        std::snprintf(cdir, sizeof(cdir), "class%02zu", cls);
        const fs::path dir = fs::path(out_root) / cdir;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            char fname[32];
            std::snprintf(fname, sizeof(fname), "img%04zu.mors1", i);
            Tensor4<float> img = synth_image<float>(spec, cls, i);
            io::write_mors1_file((dir / fname).string(),
                                 {spec.size, spec.size, spec.channels}, img.data());
            ++files;
        }
    }
    auto man = scan_dataset(out_root, ratios, spec.seed);
    save_manifest(man, (fs::path(out_root) / "manifest.json").string());
    return files;
}

// ---- batching and augmentation -----------------------------------------------

template <typename T>
struct Batch {
    Tensor4<T> images;  // [B,S,S,C]
    Tensor4<T> labels;  // [B,1,1,K], rows on the simplex
};

struct AugmentOps {
    double hflip_p = 0.0;
    std::size_t crop_pad = 0;
    double mixup_alpha = 0.0;
    double cutmix_alpha = 0.0;
};

namespace detail {

inline double sample_beta(double alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng), b = g(rng);
    return a / (a + b);
}

}  // namespace detail

// hflip -> random zero-pad crop -> mixup -> cutmix, each only when enabled.
// Mixup blends each sample with its batch-reversal partner; cutmix pastes a
// seeded rectangle and mixes labels by the exact pasted-area fraction.
template <typename T>
Batch<T> augment(const Batch<T>& in, const AugmentOps& ops, std::mt19937_64& rng) {
    const auto s = in.images.shape();
    const std::size_t B = s.b, H = s.h, W = s.w, C = s.c;
    Batch<T> out;
    out.images = in.images.clone();
    out.labels = in.labels.clone();

    if (ops.hflip_p > 0.0) {
        std::bernoulli_distribution flip(ops.hflip_p);
        for (std::size_t b = 0; b < B; ++b) {
            if (!flip(rng)) continue;
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w < W / 2; ++w) {
                    for (std::size_t c = 0; c < C; ++c) {
                        std::swap(out.images.at(b, h, w, c), out.images.at(b, h, W - 1 - w, c));
                    }
                }
            }
        }
    }

    if (ops.crop_pad > 0) {
        const std::size_t pad = ops.crop_pad;
        std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
        Tensor4<T> cropped(s);
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t oy = off(rng), ox = off(rng);
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w < W; ++w) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(h + oy) - static_cast<std::ptrdiff_t>(pad);
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(w + ox) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t c = 0; c < C; ++c) {
                        T v = T(0);
                        if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx >= 0 &&
                            sx < static_cast<std::ptrdiff_t>(W)) {
                            v = out.images(b, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
                        }
                        cropped.at(b, h, w, c) = v;
                    }
                }
            }
        }
        out.images = std::move(cropped);
    }

    if (ops.mixup_alpha > 0.0 && B > 1) {
        const double lam = detail::sample_beta(ops.mixup_alpha, rng);
        Tensor4<T> mixed(s);
        Tensor4<T> mixed_labels(out.labels.shape());
        const std::size_t K = out.labels.shape().c;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t pb = B - 1 - b;
            for (std::size_t i = 0; i < H * W * C; ++i) {
                mixed.data()[b * H * W * C + i] =
                    static_cast<T>(lam) * out.images.data()[b * H * W * C + i] +
                    static_cast<T>(1.0 - lam) * out.images.data()[pb * H * W * C + i];
            }
            for (std::size_t k = 0; k < K; ++k) {
                mixed_labels.data()[b * K + k] =
                    static_cast<T>(lam) * out.labels.data()[b * K + k] +
                    static_cast<T>(1.0 - lam) * out.labels.data()[pb * K + k];
            }
        }
        out.images = std::move(mixed);
        out.labels = std::move(mixed_labels);
    }

    if (ops.cutmix_alpha > 0.0 && B > 1) {
        const double lam = detail::sample_beta(ops.cutmix_alpha, rng);
        const double cut = std::sqrt(1.0 - lam);
        const std::size_t ch = std::min(H, static_cast<std::size_t>(std::llround(cut * static_cast<double>(H))));
        const std::size_t cw = std::min(W, static_cast<std::size_t>(std::llround(cut * static_cast<double>(W))));
        std::uniform_int_distribution<std::size_t> cy_dist(0, H - 1), cx_dist(0, W - 1);
        const std::size_t cy = cy_dist(rng), cx = cx_dist(rng);
        const std::size_t y0 = ch / 2 > cy ? 0 : cy - ch / 2;
        const std::size_t x0 = cw / 2 > cx ? 0 : cx - cw / 2;
        const std::size_t y1 = std::min(H, cy + (ch + 1) / 2);
        const std::size_t x1 = std::min(W, cx + (cw + 1) / 2);
        const double area_frac = static_cast<double>((y1 - y0) * (x1 - x0)) / static_cast<double>(H * W);

        Tensor4<T> pasted = out.images.clone();
        Tensor4<T> new_labels(out.labels.shape());
        const std::size_t K = out.labels.shape().c;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t pb = B - 1 - b;
            for (std::size_t h = y0; h < y1; ++h) {
                for (std::size_t w = x0; w < x1; ++w) {
                    for (std::size_t c = 0; c < C; ++c) {
                        pasted.at(b, h, w, c) = out.images(pb, h, w, c);
                    }
                }
            }
            for (std::size_t k = 0; k < K; ++k) {
                new_labels.data()[b * K + k] =
                    static_cast<T>(1.0 - area_frac) * out.labels.data()[b * K + k] +
                    static_cast<T>(area_frac) * out.labels.data()[pb * K + k];
            }
        }
        out.images = std::move(pasted);
        out.labels = std::move(new_labels);
    }
    return out;
}

// In-memory image cache over a manifest; assembles [B,S,S,C] batches with
// one-hot labels in deterministic order for a given index list.
template <typename T>
class BatchLoader {
public:
    explicit BatchLoader(const DatasetManifest& man) : man_(&man) {}

    Batch<T> load(const std::vector<std::size_t>& indices) {
        if (indices.empty()) throw DataError("BatchLoader: empty batch");
        const Tensor4<T>& first = image(indices[0]);
        const auto s = first.shape();
        const std::size_t K = man_->classes.size();
        Batch<T> out;
        out.images = Tensor4<T>(Shape4{indices.size(), s.h, s.w, s.c});
        out.labels = Tensor4<T>(Shape4{indices.size(), 1, 1, K});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const Tensor4<T>& img = image(indices[i]);
            if (img.shape().h != s.h || img.shape().w != s.w || img.shape().c != s.c) {
                throw DataError("BatchLoader: inconsistent image shapes in dataset");
            }
            std::copy(img.data(), img.data() + img.numel(),
                      out.images.data() + i * img.numel());
            out.labels.at(i, 0, 0, static_cast<std::size_t>(man_->samples[indices[i]].label)) = T(1);
        }
        return out;
    }

private:
    const Tensor4<T>& image(std::size_t idx) {
        auto it = cache_.find(idx);
        if (it != cache_.end()) return it->second;
        const auto& rec = man_->samples[idx];
        auto [pos, inserted] = cache_.emplace(idx, io::read_image<T>(rec.path));
        return pos->second;
    }

    const DatasetManifest* man_;
    std::unordered_map<std::size_t, Tensor4<T>> cache_;
};

}  // namespace mors::data
