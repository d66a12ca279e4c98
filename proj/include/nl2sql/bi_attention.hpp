#pragma once

#include <string>

#include "nl2sql/params.hpp"
#include "nl2sql/tensor.hpp"

namespace nl2sql {

struct BiAttnOutput {
  Tensor forward;      // k1 x h
  Tensor backward;     // k1 x h
  Tensor coattention;  // k1 x k2
};

Tensor make_biattention_weights(ParamSet& params, const std::string& name, std::size_t hidden,
                                Rng& rng);

/// M = S1 * W * S2^T.
Tensor coattention(const Tensor& s1, const Tensor& s2, const Tensor& w);

/// Row softmax of M over k2, stretched against S1 along a new middle axis and
/// summed over k2. Each softmax row sums to one, so this evaluates to S1 in
/// value while still routing gradients through M.
Tensor forward_attention(const Tensor& m, const Tensor& s1);

/// Column-wise max of M over k1, softmax over k2, softmax-weighted sum of S2
/// rows (1 x h), multiplied element-wise into every row of S1.
Tensor backward_attention(const Tensor& m, const Tensor& s1, const Tensor& s2);

BiAttnOutput biattend(const Tensor& s1, const Tensor& s2, const Tensor& w);

}  // namespace nl2sql
