// Named trainable arrays. A ParamStore owns the values; bind() registers all
// of them as leaves on a tape in registration order, which is also the
// checkpoint serialization order and the order Adam state is kept in.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mcbeam/rng.hpp"
#include "mcbeam/tensor.hpp"

namespace mcbeam {

struct ParamEntry {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;

  std::int64_t size() const { return static_cast<std::int64_t>(shape.rows) * shape.cols; }
};

class ParamStore {
 public:
  int add(std::string name, Shape shape, std::vector<double> init) {
    if (static_cast<std::int64_t>(init.size()) != static_cast<std::int64_t>(shape.rows) * shape.cols) {
      throw ShapeError("ParamStore::add: init length does not match shape");
    }
    entries_.push_back({std::move(name), shape, std::make_shared<std::vector<double>>(std::move(init))});
    return static_cast<int>(entries_.size()) - 1;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  ParamEntry& entry(int i) { return entries_[static_cast<std::size_t>(i)]; }
  const ParamEntry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
  int count() const { return static_cast<int>(entries_.size()); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  // Leaves share the stored value arrays; no copies.
  std::vector<Tensor> bind(Tape& tape) const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(tape.leaf(e.shape, e.value));
    return out;
  }

 private:
  std::vector<ParamEntry> entries_;
};

inline std::vector<double> uniform_init(Rng& rng, Shape shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(shape.rows) * shape.cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

inline std::vector<double> const_init(Shape shape, double value) {
  return std::vector<double>(static_cast<std::size_t>(shape.rows) * shape.cols, value);
}

}  // namespace mcbeam
