#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "mmfusion/errors.hpp"
#include "mmfusion/rng.hpp"

namespace mmf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until gradients flow; same length as data otherwise
    bool requires_grad = false;
    std::uint64_t tape_epoch = 0;  // epoch of the graph that produced this tensor; 0 = none
};

// Dense n-dimensional tensor with shared storage and value semantics on the
// handle. Scalar type S is float for training and double for gradient
// checking; a computation graph is homogeneous in S.
template <typename S>
class Tensor {
public:
    using scalar_type = S;

    Tensor() : impl_(std::make_shared<TensorImpl<S>>()) {}

    explicit Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<S>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), S(0));
    }

    Tensor(Shape shape, std::vector<S> values) : impl_(std::make_shared<TensorImpl<S>>()) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        for (S& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, double sd = 1.0, double mean = 0.0) {
        Tensor t(std::move(shape));
        for (S& v : t.impl_->data) v = static_cast<S>(rng.gaussian(mean, sd));
        return t;
    }

    // Xavier-uniform for a linear map with the given fan-in/out.
    static Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor t(std::move(shape));
        for (S& v : t.impl_->data) v = static_cast<S>(rng.uniform(-limit, limit));
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

    S* data() { return impl_->data.data(); }
    const S* data() const { return impl_->data.data(); }
    std::vector<S>& values() { return impl_->data; }
    const std::vector<S>& values() const { return impl_->data; }

    S item() const {
        if (numel() != 1) {
            throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
        }
        return impl_->data[0];
    }

    // 2D accessors (row-major).
    S& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->shape[1] + c]; }
    S at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<S>& grad() {
        ensure_grad();
        return impl_->grad;
    }
    const std::vector<S>& grad_view() const { return impl_->grad; }

    void ensure_grad() {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), S(0));
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    // Deep copy of values (fresh storage, no grad, no tape linkage).
    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    bool finite() const {
        for (S v : impl_->data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace mmf
