#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nl2sql/tensor.hpp"

namespace nl2sql {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of every trainable weight, keyed by a dotted name.
class ParamSet {
 public:
  // Registers a leaf and marks it as requiring gradients.
  Tensor add(std::string name, Tensor tensor);

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  const Tensor* find(std::string_view name) const;
  std::size_t total_size() const;

  void zero_grad();

 private:
  std::vector<NamedParam> entries_;
};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

}  // namespace nl2sql
