// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_PARAMS_HPP
#define DSMOE_PARAMS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dsmoe/rng.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe {

// Named learnable leaves. Stages register their weights here so the
// optimizer, serializer and parameter counting all see one flat list.
class ParamRegistry {
 public:
  Tensor make(Graph& g, const std::string& name, const Shape& shape, std::vector<double> init) {
    Tensor t = g.leaf(shape, std::move(init), /*requires_grad=*/true);
    entries_.push_back({name, t});
    return t;
  }

  Tensor make_fill(Graph& g, const std::string& name, const Shape& shape, double fill) {
    return make(g, name, shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), fill));
  }

  Tensor make_normal(Graph& g, const std::string& name, const Shape& shape, Rng& rng,
                     double stddev) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal() * stddev;
    return make(g, name, shape, std::move(v));
  }

  struct Entry {
    std::string name;
    Tensor tensor;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace dsmoe

#endif
