#pragma once

// Dense float32 tensors with a dynamic reverse-mode graph.
//
// Every op returns a fresh Tensor whose node remembers its inputs and a
// backward rule. Tensor::backward() on a scalar root sorts the reachable
// nodes topologically and runs each rule once, accumulating into the grad
// buffers of the inputs that require gradients.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mgpvae::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  /// Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }

  std::span<const float> data() const;
  /// Mutable access for leaves only (optimizer updates, finite-difference probes).
  std::span<float> mutable_data();
  /// Value of a one-element tensor. Results of reductions and of arithmetic
  /// on one-element tensors carry a double-precision value, returned here.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  /// Empty when no gradient has been accumulated.
  std::span<const float> grad() const;
  void zero_grad();

  /// Reverse sweep from this scalar; leaf grads accumulate (call zero_grad between steps).
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf with the same requires_grad flag.
  Tensor clone() const;

  const char* op_name() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<float>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>, const char*);
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  double exact = std::numeric_limits<double>::quiet_NaN();  // one-element results only

  /// Grad buffer, zero-filled on first use.
  std::vector<float>& grad_buffer();
};

}  // namespace detail

/// Builds an op result. `backward` receives the output node (its grad is
/// filled) and must accumulate into `inputs[i]->grad_buffer()` for every
/// input with requires_grad set. The rule is dropped when no input needs
/// gradients. Throws NumericalError if `value` contains NaN or Inf.
Tensor make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward, const char* op);

/// make_result for a one-element output computed in double.
Tensor make_scalar_result(double value, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward, const char* op);

/// Number of worker threads used by batched kernels (env MGPVAE_NUM_THREADS).
int num_threads();
void set_num_threads(int n);

}  // namespace mgpvae::ad
