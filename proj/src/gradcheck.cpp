#include "csmgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace csmgan {

namespace {

double evaluate(const ScalarFn& f) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  Var<double> out = f(tape);
  if (out.value().size() != 1) {
    throw ContractError("grad_check: function must return a scalar, got " + shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter<double>*>& params, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) {
    throw ContractError("grad_check: eps must lie in [1e-6, 1e-4], got " + std::to_string(eps));
  }
  const double base = evaluate(f);
  if (evaluate(f) != base) throw ContractError("grad_check: function is not deterministic");

  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> out = f(tape);
    tape.backward(out);
  }

  GradCheckResult result;
  for (Parameter<double>* p : params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double saved = p->value[k];
      p->value[k] = saved + eps;
      const double up = evaluate(f);
      p->value[k] = saved - eps;
      const double down = evaluate(f);
      p->value[k] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p->name + "[" + std::to_string(k) + "]";
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

Var<double> random_projection(const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> weights = random_tensor(out.shape(), rng);
  return sum(mul(out, out.tape()->constant(std::move(weights))));
}

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace csmgan
