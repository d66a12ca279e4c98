#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nl2sql {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value lies outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a caller violates an API precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  // Leaves: accumulated by GradTape::backward. Interior nodes: scratch space
  // reset at the start of every backward replay.
  std::vector<double> grad;
  bool requires_grad = false;
  bool interior = false;
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage, so a Tensor is a
/// cheap handle; values are treated as immutable once an op has consumed them.
class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return node_->value; }
  // Mutating values is only legal for leaves (initialisation, optimiser steps,
  // finite-difference probes).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  // True when gradients can flow through this tensor on the active tape.
  bool tracked() const { return node_->requires_grad || node_->interior; }

  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Deep copy with no gradient history.
  Tensor clone(bool requires_grad = false) const;

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Leaf gradients produced by one backward replay.
class GradientMap {
 public:
  // Zeros when the leaf was not reached.
  std::vector<double> of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

  void add(const std::shared_ptr<detail::Node>& leaf, std::span<const double> grad);
  const auto& entries() const { return grads_; }

 private:
  std::unordered_map<const detail::Node*,
                     std::pair<std::shared_ptr<detail::Node>, std::vector<double>>>
      grads_;
};

/// Ordered record of executed ops. Constructing a tape makes it the active
/// tape of the calling thread until it is destroyed; ops executed with no
/// active tape record nothing.
class GradTape {
 public:
  using Rule = std::function<void(GradTape&)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Replays the tape from a scalar loss, adds leaf gradients into each leaf's
  // grad buffer and returns them.
  GradientMap backward(const Tensor& loss);
  // Same replay but leaves the leaf buffers untouched.
  GradientMap gradients(const Tensor& loss);

  // Used by op implementations.
  void record(Tensor output, std::vector<Tensor> inputs, Rule rule);
  std::span<double> grad_of(const detail::Node* node);
  std::span<const double> out_grad() const { return current_out_grad_; }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    Rule rule;
  };
  GradientMap replay(const Tensor& loss);

  std::vector<Entry> entries_;
  std::unordered_map<const detail::Node*, std::vector<double>> leaf_grads_;
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> leaf_nodes_;
  std::span<const double> current_out_grad_;
  GradTape* previous_ = nullptr;
};

/// Backward on the thread's active tape.
GradientMap backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Every op records a backward rule when an input is tracked and a tape
// is active.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Rows along axis 0; indices may repeat. An empty index list yields a
// zero-row tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

Tensor softmax(const Tensor& x, std::size_t axis);

enum class ReduceMode { kSum, kMax };
Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode, bool keepdim = false);
Tensor reduce_sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor reduce_max(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);

// Broadcasting binary ops (NumPy rules, right-aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor broadcast_mul(const Tensor& a, const Tensor& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// ---------------------------------------------------------------------------
// Finite-difference oracle.

/// Central differences of f at x. x is not modified.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

/// Central differences of f with respect to selected entries of a leaf that f
/// reads implicitly (e.g. a model weight). The leaf is restored afterwards.
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                             std::span<const std::size_t> entries,
                                             double eps = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace nl2sql
