#pragma once

#include <string>
#include <vector>

#include "mmfusion/rng.hpp"
#include "mmfusion/tensor.hpp"

namespace mmf {

// Registry of named trainable tensors. Registration order is the model
// build order, which is deterministic for a given config; initialization is
// keyed by (seed, name) so it does not depend on that order.
template <typename S>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Returned handles share storage with the registry entry, so modules can
    // keep them by value.
    Tensor<S> add(const std::string& name, Tensor<S> tensor) {
        for (const auto& e : entries_) {
            if (e.name == name) throw ValueError("params: duplicate name '" + name + "'");
        }
        tensor.set_requires_grad(true);
        entries_.push_back({name, tensor});
        return tensor;
    }

    Tensor<S> add_xavier(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
        Rng rng = Rng::keyed(seed_, name);
        return add(name, Tensor<S>::xavier(std::move(shape), fan_in, fan_out, rng));
    }

    Tensor<S> add_zeros(const std::string& name, Shape shape) {
        return add(name, Tensor<S>::zeros(std::move(shape)));
    }

    Tensor<S> add_full(const std::string& name, Shape shape, S value) {
        return add(name, Tensor<S>::full(std::move(shape), value));
    }

    struct Entry {
        std::string name;
        Tensor<S> tensor;
    };

    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    Tensor<S>* find(const std::string& name) {
        for (auto& e : entries_) {
            if (e.name == name) return &e.tensor;
        }
        return nullptr;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::uint64_t seed_;
    std::vector<Entry> entries_;
};

}  // namespace mmf
