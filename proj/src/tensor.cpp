#include "nl2sql/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nl2sql {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local GradTape* g_active_tape = nullptr;

Tensor make(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

GradTape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->tracked()) return tape;
  }
  return nullptr;
}

GradTape* recording_tape(const std::vector<Tensor>& inputs) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.tracked()) return tape;
  }
  return nullptr;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    std::ostringstream msg;
    msg << op << ": axis " << axis << " out of range for shape " << shape_to_string(x.shape());
    throw DimensionError(msg.str());
  }
}

// Splits a shape around an axis into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Strides of `in` viewed with the rank of `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const auto own = row_major_strides(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    strides[offset + i] = in[i] == 1 ? 0 : own[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) over every output element.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t total = shape_numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<double> out(shape_numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
    }
    return 0.0;
  };
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    sa = broadcast_strides(a.shape(), out_shape);
    sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = apply(av[ia], bv[ib]);
    });
  }
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, kind, same, sa, sb, out_shape](GradTape& t) {
      const auto g = t.out_grad();
      auto ga = t.grad_of(a.node().get());
      auto gb = t.grad_of(b.node().get());
      const auto av = a.data();
      const auto bv = b.data();
      const double bsign = kind == BinaryKind::kSub ? -1.0 : 1.0;
      auto body = [&](std::size_t o, std::size_t ia, std::size_t ib) {
        if (kind == BinaryKind::kMul) {
          if (!ga.empty()) ga[ia] += g[o] * bv[ib];
          if (!gb.empty()) gb[ib] += g[o] * av[ia];
        } else {
          if (!ga.empty()) ga[ia] += g[o];
          if (!gb.empty()) gb[ib] += bsign * g[o];
        }
      };
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) body(i, i, i);
      } else {
        for_each_broadcast(out_shape, sa, sb, body);
      }
    });
  }
  return result;
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward&& forward, Derivative&& derivative) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  Tensor result = make(x.shape(), std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, derivative](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      const auto xv = x.data();
      const auto yv = result.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
    });
  }
  return result;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->value.assign(1, 0.0); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  Tensor t = make(std::move(shape), std::vector<double>(n, value));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    std::ostringstream msg;
    msg << "from_data: shape " << shape_to_string(shape) << " needs " << shape_numel(shape)
        << " values, got " << data.size();
    throw DimensionError(msg.str());
  }
  Tensor t = make(std::move(shape), std::move(data));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  check_axis(*this, axis, "dim");
  return node_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (node_->interior) throw ContractError("mutable_data: tensor is an op result, not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item: tensor of shape " + shape_to_string(shape()) +
                         " is not a single value");
  }
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j): tensor is not 2-D");
  return node_->value.at(i * node_->shape[1] + j);
}

void Tensor::set_requires_grad(bool flag) {
  if (node_->interior) throw ContractError("set_requires_grad: only leaves can be marked");
  node_->requires_grad = flag;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = make(shape(), node_->value);
  t.node_->requires_grad = requires_grad;
  return t;
}

// ---------------------------------------------------------------------------
// GradientMap

std::vector<double> GradientMap::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node().get());
  if (it == grads_.end()) return std::vector<double>(leaf.numel(), 0.0);
  return it->second.second;
}

bool GradientMap::contains(const Tensor& leaf) const {
  return grads_.contains(leaf.node().get());
}

void GradientMap::add(const std::shared_ptr<detail::Node>& leaf, std::span<const double> grad) {
  auto& slot = grads_[leaf.get()];
  if (!slot.first) {
    slot.first = leaf;
    slot.second.assign(grad.begin(), grad.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) slot.second[i] += grad[i];
}

// ---------------------------------------------------------------------------
// GradTape

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(Tensor output, std::vector<Tensor> inputs, Rule rule) {
  Entry entry;
  output.node()->interior = true;
  entry.output = output.node();
  entry.inputs.reserve(inputs.size());
  for (auto& in : inputs) entry.inputs.push_back(in.node());
  entry.rule = std::move(rule);
  entries_.push_back(std::move(entry));
}

std::span<double> GradTape::grad_of(const detail::Node* node) {
  if (node->interior) {
    auto* mutable_node = const_cast<detail::Node*>(node);
    if (mutable_node->grad.size() != node->value.size()) {
      mutable_node->grad.assign(node->value.size(), 0.0);
    }
    return mutable_node->grad;
  }
  if (!node->requires_grad) return {};
  auto it = leaf_grads_.find(node);
  if (it == leaf_grads_.end()) {
    it = leaf_grads_.emplace(node, std::vector<double>(node->value.size(), 0.0)).first;
  }
  return it->second;
}

GradientMap GradTape::replay(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_to_string(loss.shape()));
  }
  leaf_grads_.clear();
  leaf_nodes_.clear();
  for (auto& entry : entries_) entry.output->grad.assign(entry.output->value.size(), 0.0);
  for (auto& entry : entries_) {
    for (auto& in : entry.inputs) {
      if (!in->interior && in->requires_grad) leaf_nodes_.emplace(in.get(), in);
    }
  }
  if (loss.node()->requires_grad && !loss.node()->interior) {
    leaf_nodes_.emplace(loss.node().get(), loss.node());
  }

  GradientMap result;
  if (!loss.tracked()) return result;
  grad_of(loss.node().get())[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    current_out_grad_ = it->output->grad;
    it->rule(*this);
  }
  current_out_grad_ = {};
  for (const auto& [raw, grad] : leaf_grads_) result.add(leaf_nodes_.at(raw), grad);
  return result;
}

GradientMap GradTape::gradients(const Tensor& loss) { return replay(loss); }

GradientMap GradTape::backward(const Tensor& loss) {
  GradientMap result = replay(loss);
  for (const auto& [raw, entry] : result.entries()) {
    auto& buffer = entry.first->grad;
    if (buffer.size() != entry.second.size()) buffer.assign(entry.second.size(), 0.0);
    for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] += entry.second[i];
  }
  return result;
}

GradientMap backward(const Tensor& loss) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    return {};
  }
  return tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Layout ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  if (m > 0 && n > 0 && k > 0) {
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  }
  Tensor result = make({m, n}, std::move(out));
  if (GradTape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, m, k, n](GradTape& t) {
      if (m == 0 || n == 0 || k == 0) return;
      ConstMap g(t.out_grad().data(), m, n);
      if (auto ga = t.grad_of(a.node().get()); !ga.empty()) {
        MutMap(ga.data(), m, k).noalias() += g * ConstMap(b.data().data(), k, n).transpose();
      }
      if (auto gb = t.grad_of(b.node().get()); !gb.empty()) {
        MutMap(gb.data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * g;
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_to_string(x.shape()));
  return transpose(x, {1, 0});
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw DimensionError("transpose: permutation rank mismatch");
  for (std::size_t ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("transpose: invalid permutation");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  const auto in_strides = row_major_strides(x.shape());
  // Stride in the input for each output axis.
  std::vector<std::size_t> gather_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) gather_strides[i] = in_strides[axes[i]];
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const std::vector<std::size_t> unit(rank, 0);
  for_each_broadcast(out_shape, gather_strides, unit,
                     [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, out_shape, gather_strides, unit](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      for_each_broadcast(out_shape, gather_strides, unit,
                         [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  Tensor result = make(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  check_axis(xs.front(), axis, "concat");
  Shape out_shape = xs.front().shape();
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    bool ok = x.rank() == out_shape.size();
    for (std::size_t d = 0; ok && d < x.rank(); ++d) {
      if (d != axis && x.shape()[d] != out_shape[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + shape_to_string(x.shape()) +
                           " disagrees with " + shape_to_string(xs.front().shape()) +
                           " off axis " + std::to_string(axis));
    }
    out_shape[axis] += x.shape()[axis];
  }
  const AxisSplit split = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    offsets.push_back(offset);
    const std::size_t block = x.shape()[axis] * split.inner;
    const auto xv = x.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(xv.begin() + o * block, block,
                  out.begin() + o * split.length * split.inner + offset);
    }
    offset += block;
  }
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape(xs)) {
    tape->record(result, xs, [xs, split, offsets, axis](GradTape& t) {
      const auto g = t.out_grad();
      for (std::size_t k = 0; k < xs.size(); ++k) {
        auto gx = t.grad_of(xs[k].node().get());
        if (gx.empty()) continue;
        const std::size_t block = xs[k].shape()[axis] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* src = g.data() + o * split.length * split.inner + offsets[k];
          double* dst = gx.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(x, axis, "slice");
  if (start + length > x.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis of " +
                         shape_to_string(x.shape()));
  }
  const AxisSplit split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t block = length * split.inner;
  std::vector<double> out(split.outer * block);
  const auto xv = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(xv.begin() + (o * split.length + start) * split.inner, block,
                out.begin() + o * block);
  }
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, split, start, block](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      for (std::size_t o = 0; o < split.outer; ++o) {
        double* dst = gx.data() + (o * split.length + start) * split.inner;
        const double* src = g.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw DimensionError("gather_rows: scalar input");
  const std::size_t rows = x.shape()[0];
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t r : idx) {
    if (r >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(r) + " out of range for " +
                              std::to_string(rows) + " rows");
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = idx.size();
  std::vector<double> out(idx.size() * width);
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(xv.begin() + idx[i] * width, width, out.begin() + i * width);
  }
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, idx = std::move(idx), width](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = gx.data() + idx[i] * width;
        const double* src = g.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Softmax and reductions

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) peak = std::max(peak, xv[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double e = std::exp(xv[base + l * s.inner] - peak);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= total;
    }
  }
  Tensor result = make(x.shape(), std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, s](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      const auto y = result.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.length * s.inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < s.length; ++l) {
            const std::size_t i = base + l * s.inner;
            dot += g[i] * y[i];
          }
          for (std::size_t l = 0; l < s.length; ++l) {
            const std::size_t i = base + l * s.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode, bool keepdim) {
  check_axis(x, axis, "reduce");
  const AxisSplit s = split_at(x.shape(), axis);
  if (mode == ReduceMode::kMax && s.length == 0) {
    throw DimensionError("reduce: max over an empty axis of " + shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const auto xv = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  std::vector<std::size_t> argmax;
  if (mode == ReduceMode::kMax) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      const std::size_t dst = o * s.inner + in;
      if (mode == ReduceMode::kSum) {
        double total = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) total += xv[base + l * s.inner];
        out[dst] = total;
      } else {
        std::size_t best = base;
        for (std::size_t l = 1; l < s.length; ++l) {
          // Strict comparison keeps the lowest index on ties.
          if (xv[base + l * s.inner] > xv[best]) best = base + l * s.inner;
        }
        out[dst] = xv[best];
        argmax[dst] = best;
      }
    }
  }
  Tensor result = make(out_shape, std::move(out));
  if (GradTape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, s, mode, argmax = std::move(argmax)](GradTape& t) {
      auto gx = t.grad_of(x.node().get());
      if (gx.empty()) return;
      const auto g = t.out_grad();
      if (mode == ReduceMode::kMax) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        return;
      }
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const double gi = g[o * s.inner + in];
          const std::size_t base = o * s.length * s.inner + in;
          for (std::size_t l = 0; l < s.length; ++l) gx[base + l * s.inner] += gi;
        }
      }
    });
  }
  return result;
}

Tensor reduce_sum(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce(x, axis, ReduceMode::kSum, keepdim);
}

Tensor reduce_max(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce(x, axis, ReduceMode::kMax, keepdim);
}

Tensor sum_all(const Tensor& x) { return reduce_sum(reshape(x, {x.numel()}), 0); }

// ---------------------------------------------------------------------------
// Elementwise

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("broadcast: incompatible shapes " + shape_to_string(a) + " and " +
                           shape_to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor broadcast_mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      std::ostringstream msg;
      msg << "log: non-positive input " << v << " (clamp probabilities before taking logs)";
      throw DomainError(msg.str());
    }
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lower bound exceeds upper bound");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Finite differences

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  std::vector<double> grad(x.numel());
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + eps;
    const double up = f(probe);
    values[i] = original - eps;
    const double down = f(probe);
    values[i] = original;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return Tensor::from_data(x.shape(), std::move(grad));
}

std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                             std::span<const std::size_t> entries,
                                             double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad_inplace: eps must be positive");
  auto values = leaf.mutable_data();
  std::vector<double> grad;
  grad.reserve(entries.size());
  for (std::size_t i : entries) {
    const double original = values[i];
    values[i] = original + eps;
    const double up = f();
    values[i] = original - eps;
    const double down = f();
    values[i] = original;
    grad.push_back((up - down) / (2.0 * eps));
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace nl2sql
