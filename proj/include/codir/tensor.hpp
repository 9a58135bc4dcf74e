#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace codir {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until gradient first reaches the node
    bool requires_grad = false;
    bool is_leaf = true;
    bool grad_live = false;  // set while a backward pass has delivered gradient here
};

// Dense row-major tensor of rank 1..3 in double precision. A Tensor is a
// cheap handle; copies share storage. Values are treated as immutable after
// creation except by optimizers and by explicit mutable access on leaves.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->values.size(); }
    std::string shape_string() const { return shape_to_string(node_->shape); }

    std::span<const double> values() const { return node_->values; }
    // Only for leaves (parameters, constants under construction).
    std::span<double> mutable_values();

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad();
    void zero_grad();

    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    // Value copy with no gradient tracking.
    Tensor detach() const;

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Computation tape.

struct TapeEntry {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    std::function<void()> backward;
};

// Ordered record of differentiable operations executed on the current
// thread. backward() replays it in reverse, visiting each entry once.
class Tape {
public:
    void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<TapeEntry>& entries() const { return entries_; }

    // Tape used by operations on the calling thread.
    static Tape& current();

private:
    std::vector<TapeEntry> entries_;
};

// Installs a fresh tape for the lifetime of the scope, restoring the
// previous one on exit.
class TapeScope {
public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

    Tape& tape() { return tape_; }

private:
    Tape tape_;
    Tape* previous_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Populates the gradient of every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& loss);

// Number of tape entries executed by the most recent backward() on this thread.
std::size_t last_backward_visits();

namespace detail {

// Builds an op result and, when gradient tracking applies, records the
// backward closure on the current tape.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(TensorNode& out)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(TensorNode& out)> backward_fn);

// Gradient buffer of `node`, allocated on first use. Returns nullptr when the
// node does not take gradient.
double* grad_buffer(TensorNode& node);

}  // namespace detail

}  // namespace codir
