#include "codir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "codir/error.hpp"

namespace codir {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape, std::size_t count) {
    if (shape.empty() || shape.size() > 3) {
        fail(ErrorKind::Dimension, "tensor rank must be 1..3, got shape " + shape_to_string(shape));
    }
    if (shape_numel(shape) != count) {
        fail(ErrorKind::Dimension, "shape " + shape_to_string(shape) + " needs " +
                                       std::to_string(shape_numel(shape)) + " values, got " +
                                       std::to_string(count));
    }
}

void check_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, "operation produced a non-finite value");
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape, values.size());
    check_finite(values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    Shape shape{values.size()};
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::span<double> Tensor::mutable_values() {
    if (!node_->is_leaf) fail(ErrorKind::State, "cannot mutate the values of a non-leaf tensor");
    return node_->values;
}

std::span<double> Tensor::mutable_grad() {
    double* buf = detail::grad_buffer(*node_);
    if (!buf) fail(ErrorKind::State, "tensor does not require gradient");
    return {buf, node_->values.size()};
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
    if (numel() != 1) fail(ErrorKind::Dimension, "item() on non-scalar tensor " + shape_string());
    return node_->values[0];
}

double Tensor::at(std::size_t i) const { return node_->values.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) fail(ErrorKind::Dimension, "at(i, j) on tensor " + shape_string());
    return node_->values.at(i * node_->shape[1] + j);
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    if (rank() != 3) fail(ErrorKind::Dimension, "at(i, j, k) on tensor " + shape_string());
    return node_->values.at((i * node_->shape[1] + j) * node_->shape[2] + k);
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------

namespace {

thread_local Tape default_tape;
thread_local Tape* active_tape = nullptr;
thread_local bool grad_mode = true;
thread_local std::size_t backward_visits = 0;

}  // namespace

Tape& Tape::current() { return active_tape ? *active_tape : default_tape; }

TapeScope::TapeScope() : previous_(active_tape) { active_tape = &tape_; }

TapeScope::~TapeScope() { active_tape = previous_; }

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }

NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

std::size_t last_backward_visits() { return backward_visits; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        fail(ErrorKind::Dimension,
             "backward() needs a scalar loss, got " + (loss.defined() ? loss.shape_string() : std::string("undefined")));
    }
    backward_visits = 0;
    if (!loss.requires_grad()) return;

    Tape& tape = Tape::current();
    const auto& entries = tape.entries();
    for (const auto& entry : entries) {
        entry.output->grad_live = false;
        std::fill(entry.output->grad.begin(), entry.output->grad.end(), 0.0);
        for (const auto& input : entry.inputs) input->grad_live = false;
    }

    TensorNode& root = *loss.node();
    double* seed = detail::grad_buffer(root);
    if (!root.is_leaf) seed[0] = 0.0;
    seed[0] += 1.0;
    root.grad_live = true;

    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (!it->output->grad_live) continue;
        it->backward();
        ++backward_visits;
    }
}

namespace detail {

double* grad_buffer(TensorNode& node) {
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad.assign(node.values.size(), 0.0);
    node.grad_live = true;
    return node.grad.data();
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(TensorNode& out)> backward_fn) {
    validate_shape(shape, values.size());
    check_finite(values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);

    bool track = false;
    if (grad_mode) {
        for (const auto& t : inputs) track = track || t.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        node->is_leaf = false;
        TapeEntry entry;
        for (const auto& t : inputs) entry.inputs.push_back(t.node_ptr());
        entry.output = node;
        TensorNode* out = node.get();
        entry.backward = [fn = std::move(backward_fn), out] { fn(*out); };
        Tape::current().record(std::move(entry));
    }
    return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(TensorNode& out)> backward_fn) {
    return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward_fn));
}

}  // namespace detail

}  // namespace codir
