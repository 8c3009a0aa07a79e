#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mors/tape.hpp"

namespace mors {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Single-tensor Adam update with bias correction, t >= 1.
template <typename T>
void adam_update(T* w, const T* g, T* m, T* v, std::size_t n, std::size_t t, const AdamConfig& cfg) {
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const T corr2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    const T lr = static_cast<T>(cfg.lr);
    const T eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Optimizer state for a ParamStore; (m, v) zero-initialized, step counter t.
template <typename T>
class Adam {
public:
    Adam(const ParamStore<T>& params, AdamConfig cfg) : cfg_(cfg) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].value.numel(), T(0));
            v_[i].assign(params[i].value.numel(), T(0));
        }
    }

    // Applies one update from the grads currently held in the store.
    void step(ParamStore<T>& params) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = params[i].grad;
            if (!g.all_finite()) {
                throw NumericalError("adam: non-finite gradient in parameter " + params[i].name);
            }
        }
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            adam_update(p.value.data(), p.grad.data(), m_[i].data(), v_[i].data(), p.value.numel(),
                        t_, cfg_);
        }
    }

    std::size_t step_count() const { return t_; }
    void set_step_count(std::size_t t) { t_ = t; }
    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }

    std::vector<T>& m_state(std::size_t i) { return m_[i]; }
    std::vector<T>& v_state(std::size_t i) { return v_[i]; }
    const std::vector<T>& m_state(std::size_t i) const { return m_[i]; }
    const std::vector<T>& v_state(std::size_t i) const { return v_[i]; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

}  // namespace mors
