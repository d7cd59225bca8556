#include "dpot/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "dpot/error.hpp"

namespace dpot {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

std::shared_ptr<Node> make_result(Shape shape, DType dtype, const char* op,
                                  std::vector<std::shared_ptr<Node>> parents) {
  auto node = std::make_shared<Node>();
  const std::size_t storage = shape_numel(shape) * (dtype == DType::Complex ? 2 : 1);
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->data.assign(storage, 0.0);
  node->op = op;
  node->is_leaf = false;
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) node->parents = std::move(parents);
  return node;
}

}  // namespace detail

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape) * (dtype == DType::Complex ? 2 : 1), 0.0);
  node->shape = std::move(shape);
  node->dtype = dtype;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, DType dtype) {
  const std::size_t expect = shape_numel(shape) * (dtype == DType::Complex ? 2 : 1);
  if (values.size() != expect) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape) + " (expected " +
                     std::to_string(expect) + ")");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_vector({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from_vector(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

DType Tensor::dtype() const { return node_->dtype; }

std::size_t Tensor::numel() const { return shape_numel(node_->shape); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw Error(std::string("cannot edit values of non-leaf tensor '") + node_->op + "'");
  return node_->data;
}

double Tensor::item() const {
  if (node_->data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw Error("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->dtype = node_->dtype;
  node->data = node_->data;
  return Tensor(std::move(node));
}

const char* Tensor::op_name() const { return node_->op; }

std::size_t Tensor::backward() const {
  if (node_->dtype != DType::Real || node_->data.size() != 1) {
    throw ShapeError("backward() needs a real scalar loss, got " + shape_str(shape()) +
                     (is_complex() ? " complex" : ""));
  }
  if (!node_->requires_grad) return 0;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf) continue;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    // Intermediate adjoints are consumed; dropping them keeps re-runs exact.
    std::vector<double>().swap(n->grad);
  }
  return order.size();
}

}  // namespace dpot
