#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "docnmt/random.hpp"
#include "docnmt/tensor.hpp"

namespace docnmt {

// Named learnable leaves in registration order, split into frozen and
// trainable sets. Frozen leaves take no gradient.
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor>;

  const Tensor& add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t parameter_count() const;

  void freeze(std::string_view name);
  bool is_frozen(std::string_view name) const;
  const std::set<std::string, std::less<>>& frozen() const { return frozen_; }

  void zero_grad();
  // Copies values from another store for every name both contain.
  void copy_values_from(const ModelParams& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::set<std::string, std::less<>> frozen_;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace docnmt
