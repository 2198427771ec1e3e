#include "csmgan/params.hpp"

#include <cmath>

namespace csmgan {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

template <typename T>
Parameter<T>& ParamStore<T>::weight(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  // Drawn in double so float and double models built from one seed agree up to rounding.
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> value(std::move(shape));
  for (T& v : value.values()) v = static_cast<T>(dist(rng_));
  return add(name, std::move(value));
}

template <typename T>
Parameter<T>& ParamStore<T>::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor<T>(std::move(shape)));
}

template <typename T>
Parameter<T>& ParamStore<T>::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor<T>(std::move(shape), static_cast<T>(value)));
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return params_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::pointers() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace csmgan
