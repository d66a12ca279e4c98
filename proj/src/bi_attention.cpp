#include "nl2sql/bi_attention.hpp"

#include <cmath>

namespace nl2sql {

Tensor make_biattention_weights(ParamSet& params, const std::string& name, std::size_t hidden,
                                Rng& rng) {
  return params.add(name, uniform_tensor({hidden, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
}

Tensor coattention(const Tensor& s1, const Tensor& s2, const Tensor& w) {
  if (s1.rank() != 2 || s2.rank() != 2 || w.rank() != 2 || w.dim(0) != w.dim(1) ||
      s1.dim(1) != w.dim(0) || s2.dim(1) != w.dim(0)) {
    throw DimensionError("coattention: S1 " + shape_to_string(s1.shape()) + ", S2 " +
                         shape_to_string(s2.shape()) + " and W " + shape_to_string(w.shape()) +
                         " must share one feature size");
  }
  return matmul(matmul(s1, w), transpose(s2));
}

Tensor forward_attention(const Tensor& m, const Tensor& s1) {
  if (m.rank() != 2 || s1.rank() != 2 || m.dim(0) != s1.dim(0)) {
    throw DimensionError("forward_attention: M " + shape_to_string(m.shape()) + " vs S1 " +
                         shape_to_string(s1.shape()));
  }
  const std::size_t k1 = m.dim(0);
  const std::size_t k2 = m.dim(1);
  const std::size_t d = s1.dim(1);
  const Tensor weights = softmax(m, 1);
  const Tensor stretched = broadcast_mul(reshape(weights, {k1, k2, 1}), reshape(s1, {k1, 1, d}));
  return reduce_sum(stretched, 1);
}

Tensor backward_attention(const Tensor& m, const Tensor& s1, const Tensor& s2) {
  if (m.rank() != 2 || s1.rank() != 2 || s2.rank() != 2 || m.dim(0) != s1.dim(0) ||
      m.dim(1) != s2.dim(0) || s1.dim(1) != s2.dim(1)) {
    throw DimensionError("backward_attention: M " + shape_to_string(m.shape()) + ", S1 " +
                         shape_to_string(s1.shape()) + ", S2 " + shape_to_string(s2.shape()));
  }
  const std::size_t k2 = m.dim(1);
  const Tensor colmax = reduce_max(m, 0, /*keepdim=*/true);   // 1 x k2
  const Tensor weights = softmax(colmax, 1);                   // 1 x k2
  const Tensor weighted = broadcast_mul(reshape(weights, {k2, 1}), s2);  // k2 x d
  const Tensor summary = reduce_sum(weighted, 0, /*keepdim=*/true);       // 1 x d
  return broadcast_mul(summary, s1);
}

BiAttnOutput biattend(const Tensor& s1, const Tensor& s2, const Tensor& w) {
  Tensor m = coattention(s1, s2, w);
  Tensor fwd = forward_attention(m, s1);
  Tensor bwd = backward_attention(m, s1, s2);
  return BiAttnOutput{std::move(fwd), std::move(bwd), std::move(m)};
}

}  // namespace nl2sql
