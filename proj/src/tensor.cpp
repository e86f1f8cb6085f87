#include "mgpvae/tensor.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unordered_set>

#include "mgpvae/errors.hpp"

namespace mgpvae::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
}

void check_finite(const std::vector<float>& v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << "non-finite value " << v[i] << " at flat index " << i << " produced by " << op;
      throw NumericalError(os.str());
    }
  }
}

int initial_threads() {
  if (const char* env = std::getenv("MGPVAE_NUM_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1, omp_get_max_threads());
}

int& thread_setting() {
  static int n = initial_threads();
  return n;
}

}  // namespace

int num_threads() { return thread_setting(); }
void set_num_threads(int n) { thread_setting() = std::max(1, n); }

std::vector<float>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad;
}

Tensor::Tensor(Shape shape, float fill) {
  validate_shape(shape);
  node_ = std::make_shared<detail::Node>();
  node_->value.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  validate_shape(shape);
  if (values.size() != numel(shape))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  check_finite(values, "constructor");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::parameter(Shape shape, std::vector<float> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[axis];
}

std::span<const float> Tensor::data() const { return node_->value; }

std::span<float> Tensor::mutable_data() {
  if (!is_leaf()) throw ValidationError("mutable_data() is only available on leaf tensors");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return std::isnan(node_->exact) ? node_->value[0] : node_->exact;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ValidationError("requires_grad can only be toggled on leaves");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_->inputs.empty(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const float> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->value);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() requires a scalar root, got " + to_string(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward, const char* op) {
  check_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
  }
  return Tensor(std::move(node));
}

Tensor make_scalar_result(double value, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward, const char* op) {
  if (!std::isfinite(value)) throw NumericalError(std::string(op) + " produced a non-finite value");
  Tensor t = make_result({1}, {static_cast<float>(value)}, std::move(inputs), std::move(backward), op);
  t.node()->exact = value;
  return t;
}

}  // namespace mgpvae::ad
