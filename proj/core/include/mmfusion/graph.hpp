#pragma once

#include <atomic>
#include <functional>
#include <vector>

#include "mmfusion/tensor.hpp"

namespace mmf {

// Append-only tape of executed ops. Ops record themselves on the active
// graph (if any); backward() replays the tape in exact reverse execution
// order, accumulating gradients into the participating tensors. Leaf
// tensors (requires_grad) keep their gradients after the graph is reset;
// interior gradients die with the tape.
//
// Precision is fixed per graph by the scalar type S.
template <typename S>
class Graph {
public:
    Graph() : epoch_(next_epoch()) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    ~Graph() {
        if (active_ == this) active_ = nullptr;
    }

    // RAII activation: ops executed while a scope is alive record here.
    class Scope {
    public:
        explicit Scope(Graph& g) : prev_(active_) { active_ = &g; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Graph* prev_;
    };

    static Graph* active() { return active_; }

    std::uint64_t epoch() const { return epoch_; }
    std::size_t size() const { return tape_.size(); }

    bool tracks(const Tensor<S>& t) const {
        return t.impl()->requires_grad || t.impl()->tape_epoch == epoch_;
    }

    void mark(Tensor<S>& t) { t.impl()->tape_epoch = epoch_; }

    void record(std::function<void()> backprop) { tape_.push_back(std::move(backprop)); }

    // Seeds d(loss)/d(loss)=1 and replays the tape in reverse. Rejects a
    // second call without an intervening reset(), non-scalar losses, and
    // losses that were not produced on the current tape epoch.
    void backward(Tensor<S>& loss) {
        if (backward_done_) {
            throw ValueError("backward: called twice on the same graph; reset() first");
        }
        if (loss.numel() != 1) {
            throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
        }
        if (loss.impl()->tape_epoch != epoch_) {
            throw ValueError("backward: loss does not belong to the live graph (stale or constant)");
        }
        backward_done_ = true;
        loss.ensure_grad();
        loss.grad()[0] = S(1);
        for (std::size_t i = tape_.size(); i-- > 0;) {
            tape_[i]();
        }
    }

    // Clears the tape and allows a new forward+backward. Fresh epoch, so
    // tensors from previous iterations are treated as constants.
    void reset() {
        tape_.clear();
        backward_done_ = false;
        epoch_ = next_epoch();
    }

private:
    static std::uint64_t next_epoch() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    std::vector<std::function<void()>> tape_;
    std::uint64_t epoch_ = 0;
    bool backward_done_ = false;

    static inline thread_local Graph* active_ = nullptr;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace mmf
