#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdx {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for shape/argument contract violations. The message names the
/// offending dimension or argument.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph. `backward` reads `self.grad` and
/// accumulates into the parents' grads.
struct Node {
    std::vector<double> value;
    std::vector<double> grad;  // empty until needed
    Shape shape;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node& self)> backward;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

/// Handle to a differentiable dense array of rank 1..4 (row-major).
/// Copies share the underlying node; use `clone()` for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->value; }
    /// Mutable view for leaves (parameters, inputs). Mutating an interior
    /// node invalidates gradients of any graph built on it.
    std::span<double> data_mut() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    double item() const;
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    /// Detached deep copy (no graph history).
    Tensor clone(bool requires_grad = false) const;
    /// Same values, no history; shares nothing with the source.
    Tensor detach() const { return clone(false); }

    Node* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

/// Gradient recording is on by default; disable it with `NoGradGuard` for
/// inference-only passes.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Builds an op result. The backward closure is attached only when
/// recording is enabled and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node& self)> backward, const char* op);

/// Populates ∂loss/∂t for every requires-grad tensor reachable from
/// `loss`. Gradients accumulate across calls; zero them between steps.
void backward(const Tensor& loss);

}  // namespace cdx
