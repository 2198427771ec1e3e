#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "csmgan/autodiff.hpp"

namespace csmgan {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param name>[flat index]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<Var<double>(Tape<double>&)>;

/// Compares the tape gradient of `f` with central differences for every
/// coordinate of every parameter in `params`.
///
/// `f` must build its graph from tape.param() on those parameters and return a
/// scalar. The error per coordinate is |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws ContractError when eps is outside [1e-6, 1e-4] or two forward passes disagree.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter<double>*>& params, double eps = 1e-6);

/// Reduces a tensor-valued output to a scalar with fixed random weights so a
/// single backward pass exercises every output coordinate.
Var<double> random_projection(const Var<double>& out, std::uint64_t seed);

/// Uniform [lo, hi) fill, handy for building check inputs.
Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

}  // namespace csmgan
