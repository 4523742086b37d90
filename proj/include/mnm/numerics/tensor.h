#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mnm {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);

// One recorded value in the autodiff graph. Interior nodes keep owning
// references to their parents, so a graph lives exactly as long as the
// tensors that were produced from it.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& EnsureGrad();
};

// Dense row-major double tensor with reverse-mode differentiation.
// Copies are shallow: two Tensor handles may refer to the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor Zeros(const Shape& shape, bool requires_grad = false);
  static Tensor Full(const Shape& shape, double fill, bool requires_grad = false);
  static Tensor FromVector(const Shape& shape, std::vector<double> values,
                           bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Mutating values of a node that already has consumers invalidates their
  // recorded backward closures; only do this on leaves between steps.
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->EnsureGrad(); }
  void ZeroGrad();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  // Same values, no history.
  Tensor Detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive on the current thread, ops do not record history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradModeEnabled();

// Builds the result of an op. When grad mode is on and any parent requires
// grad, the node records `parents` and `backward`; otherwise it is a plain
// constant. Custom fused ops in other modules are built on this.
Tensor MakeResult(Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents,
                  std::function<void(Node&)> backward, const char* op);

// Reverse pass from a scalar. Each reachable node is visited once in
// reverse topological order. Throws ShapeError for non-scalar `loss`.
void Backward(const Tensor& loss);

}  // namespace mnm
