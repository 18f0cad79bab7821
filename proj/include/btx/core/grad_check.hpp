#pragma once

#include <functional>
#include <string>

#include "btx/core/tape.hpp"

namespace btx {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries = 0;
};

// Builds the scalar loss on the given tape from parameters of the store the
// caller closes over.
using LossBuilder = std::function<Var(Tape<double>&)>;

// Compares the analytic gradient of every parameter entry with the central
// difference (f(w+h) - f(w-h)) / 2h and reports the worst relative error
// |a - n| / max(|a|, |n|, 1e-8). The loss must be deterministic.
GradCheckResult grad_check(const LossBuilder& loss, ParamStore<double>& store, double h = 1e-4);

}  // namespace btx
