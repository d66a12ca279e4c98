#include "nl2sql/params.hpp"

namespace nl2sql {

Tensor ParamSet::add(std::string name, Tensor tensor) {
  for (const auto& entry : entries_) {
    if (entry.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  tensor.set_requires_grad(true);
  tensor.mutable_grad();
  entries_.push_back(NamedParam{std::move(name), tensor});
  return tensor;
}

const Tensor* ParamSet::find(std::string_view name) const {
  for (const auto& entry : entries_) {
    if (entry.name == name) return &entry.tensor;
  }
  return nullptr;
}

std::size_t ParamSet::total_size() const {
  std::size_t total = 0;
  for (const auto& entry : entries_) total += entry.tensor.numel();
  return total;
}

void ParamSet::zero_grad() {
  for (auto& entry : entries_) entry.tensor.zero_grad();
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace nl2sql
