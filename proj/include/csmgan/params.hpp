#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "csmgan/autodiff.hpp"

namespace csmgan {

/// Ordered, name-addressed collection of parameters. Addresses stay stable
/// for the store's lifetime so model components can hold references.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  /// Registers a Glorot-uniform initialised weight. fan_in/fan_out drive the bound.
  Parameter<T>& weight(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Parameter<T>& zeros(const std::string& name, Shape shape);
  Parameter<T>& constant(const std::string& name, Shape shape, double value);

  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Parameter<T>*> pointers();
  void zero_grad();

  void seed(std::uint64_t s) { rng_.seed(s); }

 private:
  Parameter<T>& add(const std::string& name, Tensor<T> value);

  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_{0};
};

}  // namespace csmgan
