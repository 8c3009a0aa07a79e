#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mors/common.hpp"

namespace mors {

// Shape of a rank-4 tensor, batch / height / width / channels.
struct Shape4 {
    std::size_t b = 0, h = 0, w = 0, c = 0;

    std::size_t numel() const { return b * h * w * c; }
    bool operator==(const Shape4& o) const { return b == o.b && h == o.h && w == o.w && c == o.c; }
    bool operator!=(const Shape4& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "[" << b << "," << h << "," << w << "," << c << "]";
        return os.str();
    }
};

// Dense rank-4 array, channels-last row-major:
//   flat index = ((b*H + h)*W + w)*C + c.
// Storage is shared on copy and treated as immutable once an op has consumed
// the tensor; only freshly created tensors are written through data().
// node() is the tensor's id on the tape currently recording, -1 when untracked.
template <typename T>
class Tensor4 {
public:
    using scalar_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape4 s)
        : shape_(s), store_(std::make_shared<std::vector<T>>(s.numel(), T(0))) {}

    Tensor4(std::size_t b, std::size_t h, std::size_t w, std::size_t c)
        : Tensor4(Shape4{b, h, w, c}) {}

    static Tensor4 from(Shape4 s, std::vector<T> values) {
        if (values.size() != s.numel()) {
            throw DimensionError("Tensor4::from: " + std::to_string(values.size()) +
                                 " values for shape " + s.str());
        }
        Tensor4 t;
        t.shape_ = s;
        t.store_ = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static Tensor4 full(Shape4 s, T value) {
        Tensor4 t(s);
        std::fill(t.store_->begin(), t.store_->end(), value);
        return t;
    }

    static Tensor4 zeros(Shape4 s) { return Tensor4(s); }

    const Shape4& shape() const { return shape_; }
    std::size_t numel() const { return shape_.numel(); }
    bool empty() const { return !store_; }

    T* data() { return store_->data(); }
    const T* data() const { return store_->data(); }

    std::vector<T>& vec() { return *store_; }
    const std::vector<T>& vec() const { return *store_; }

    std::size_t index(std::size_t b, std::size_t h, std::size_t w, std::size_t c) const {
        return ((b * shape_.h + h) * shape_.w + w) * shape_.c + c;
    }

    T operator()(std::size_t b, std::size_t h, std::size_t w, std::size_t c) const {
        return (*store_)[index(b, h, w, c)];
    }

    T& at(std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
        return (*store_)[index(b, h, w, c)];
    }

    Tensor4 clone() const {
        Tensor4 t;
        t.shape_ = shape_;
        t.store_ = std::make_shared<std::vector<T>>(*store_);
        return t;
    }

    int node() const { return node_; }
    void set_node(int id) { node_ = id; }
    bool tracked() const { return node_ >= 0; }

    bool all_finite() const {
        for (T v : *store_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

private:
    Shape4 shape_{};
    std::shared_ptr<std::vector<T>> store_;
    int node_ = -1;
};

// Normal draws truncated to mean +/- 2 sigma (resampling).
template <typename T>
void fill_trunc_normal(Tensor4<T>& t, std::mt19937_64& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.vec()) {
        double x = dist(rng);
        while (std::abs(x - mean) > 2.0 * stddev) x = dist(rng);
        v = static_cast<T>(x);
    }
}

template <typename T>
void fill_normal(Tensor4<T>& t, std::mt19937_64& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor4<T>& t, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

}  // namespace mors
