#pragma once

// Reverse-mode differentiable n-d arrays.
//
// A Tensor is a cheap handle onto a graph node. Operations in ops.hpp build
// new nodes that keep their parents alive, so the graph lives exactly as long
// as the tensors derived from it. Complex tensors store interleaved
// (re, im) pairs; their adjoints are the independent real/imag adjoints of
// that storage, so no Wirtinger calculus enters anywhere.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dpot {

using Shape = std::vector<std::size_t>;

enum class DType { Real, Complex };

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  DType dtype = DType::Real;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::Real);
  static Tensor full(Shape shape, double value);
  /// `values` is raw storage: 2*numel doubles for complex tensors.
  static Tensor from_vector(Shape shape, std::vector<double> values, DType dtype = DType::Real);
  static Tensor scalar(double value);
  /// A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  DType dtype() const;
  bool is_complex() const { return dtype() == DType::Complex; }
  /// Logical element count (complex entries count once).
  std::size_t numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const { auto d = data(); return {d.begin(), d.end()}; }
  /// Mutable storage; only leaves may be edited in place.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();
  bool has_grad() const;

  /// Reverse sweep from a scalar real tensor, seeding d(self)/d(self) = 1.
  /// Returns the number of graph nodes visited (each exactly once).
  std::size_t backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  const char* op_name() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
/// Allocates a result node wired to `parents`; it requires grad when any parent does.
std::shared_ptr<Node> make_result(Shape shape, DType dtype, const char* op,
                                  std::vector<std::shared_ptr<Node>> parents);
}  // namespace detail

}  // namespace dpot
