#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "limn/params.hpp"

namespace limn {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Lower bound on the relative-error denominator. Central differences carry
  // roughly 1e-11 of roundoff, so smaller gradients are compared absolutely.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "name[index]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences. Relative error per coordinate is |a - n| / max(|a|, |n|, floor).
// `f` must build a fresh graph on every call.
GradCheckResult grad_check(const std::function<Tensor(Graph&)>& f, std::vector<ParamStore::Entry> inputs,
                           const GradCheckOptions& opts = {});

}  // namespace limn
