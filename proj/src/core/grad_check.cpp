#include "btx/core/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace btx {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape<double> tape(false);
  const double value = tape.value(loss(tape))[0];
  if (!std::isfinite(value)) throw NumericError("grad_check: non-finite loss");
  return value;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, ParamStore<double>& store, double h) {
  store.zero_grad();
  {
    Tape<double> tape(true);
    const Var out = loss(tape);
    if (!std::isfinite(tape.value(out)[0])) throw NumericError("grad_check: non-finite loss");
    tape.backward(out);
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    Parameter<double>& p = store.at(pi);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = evaluate(loss);
      p.value[j] = saved - h;
      const double down = evaluate(loss);
      p.value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[j];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.entries;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = j;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace btx
