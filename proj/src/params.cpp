#include "docnmt/params.hpp"

#include <algorithm>
#include <cmath>

#include "docnmt/errors.hpp"

namespace docnmt {

const Tensor& ModelParams::add(std::string name, Tensor value) {
  if (index_.contains(name)) fail(ErrorKind::kContract, "parameter '" + name + "' registered twice");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ModelParams::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "no parameter named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

Tensor& ModelParams::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ModelParams::freeze(std::string_view name) {
  at(name).set_requires_grad(false);
  frozen_.emplace(name);
}

bool ModelParams::is_frozen(std::string_view name) const { return frozen_.find(name) != frozen_.end(); }

void ModelParams::zero_grad() {
  for (auto& [name, t] : entries_) t.clear_grad();
}

void ModelParams::copy_values_from(const ModelParams& other) {
  for (auto& [name, t] : entries_) {
    if (!other.contains(name)) continue;
    const auto& src = other.at(name);
    if (src.shape() != t.shape()) {
      fail(ErrorKind::kIncompatible, "parameter '" + name + "' has shape " + to_string(src.shape()) +
                                         ", expected " + to_string(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace docnmt
