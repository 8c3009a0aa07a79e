#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mors/tensor.hpp"

namespace mors {

// Reverse-mode tape. Ops append one node per executed primitive; backward()
// replays the nodes in exact reverse execution order, accumulating gradients
// into per-node buffers. A tape serves a single forward/backward pair.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    // Registers a leaf (input or parameter value) for gradient tracking.
    int watch(Tensor4<T>& t) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{t.numel(), nullptr});
        grads_.emplace_back();
        t.set_node(id);
        return id;
    }

    // Records an executed op producing `numel` outputs. The backward closure
    // reads grad(self) and accumulates into its parents via grad_mut().
    int emit(std::size_t numel, BackwardFn fn) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{numel, std::move(fn)});
        grads_.emplace_back();
        return id;
    }

    const std::vector<T>& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }

    bool has_grad(int id) const { return !grads_[static_cast<std::size_t>(id)].empty(); }

    std::vector<T>& grad_mut(int id) {
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].numel, T(0));
        return g;
    }

    void backward(const Tensor4<T>& loss) {
        if (consumed_) throw UsageError("Tape::backward: tape already consumed");
        if (!loss.tracked()) throw UsageError("Tape::backward: loss is not on this tape");
        if (loss.numel() != 1) throw UsageError("Tape::backward: loss must be scalar");
        consumed_ = true;
        grad_mut(loss.node())[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            if (node.fn && has_grad(i)) node.fn(*this, i);
        }
    }

    // Gradient of the recorded scalar w.r.t. a watched/produced tensor;
    // zeros when the tensor did not influence the loss.
    Tensor4<T> grad_of(const Tensor4<T>& t) const {
        Tensor4<T> g(t.shape());
        if (t.tracked() && has_grad(t.node())) {
            const auto& src = grad(t.node());
            std::copy(src.begin(), src.end(), g.data());
        }
        return g;
    }

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t numel;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    bool consumed_ = false;
};

// Named learnable tensor. `io_dims` is the natural rank/dims used when the
// value crosses the serialization boundary (e.g. [Cin, Cout] for a linear
// weight that is packed as a [1,1,Cin,Cout] Tensor4 in memory).
template <typename T>
struct Param {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    std::vector<std::uint64_t> io_dims;
};

// Ordered parameter store with unique names.
template <typename T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Tensor4<T> value, std::vector<std::uint64_t> io_dims) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        std::uint64_t n = 1;
        for (auto d : io_dims) n *= d;
        if (n != value.numel()) {
            throw DimensionError("parameter " + name + ": io dims do not cover " +
                                 std::to_string(value.numel()) + " scalars");
        }
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->grad = Tensor4<T>(value.shape());
        p->value = std::move(value);
        p->io_dims = std::move(io_dims);
        index_.emplace(name, items_.size());
        items_.push_back(std::move(p));
        return *items_.back();
    }

    Param<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }
    const Param<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    std::size_t size() const { return items_.size(); }
    Param<T>& operator[](std::size_t i) { return *items_[i]; }
    const Param<T>& operator[](std::size_t i) const { return *items_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : items_) std::fill(p->grad.vec().begin(), p->grad.vec().end(), T(0));
    }

    // Registers every parameter on the tape for the upcoming step.
    void watch_all(Tape<T>& tape) {
        for (auto& p : items_) tape.watch(p->value);
    }

    // Adds the tape's gradients into each parameter's grad buffer.
    void collect_grads(const Tape<T>& tape) {
        for (auto& p : items_) {
            if (!p->value.tracked() || !tape.has_grad(p->value.node())) continue;
            const auto& src = tape.grad(p->value.node());
            T* dst = p->grad.data();
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
    }

private:
    std::vector<std::unique_ptr<Param<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mors
