#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chronoscope/tensor.hpp"

namespace chronoscope {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Central differences (f(x+eps) - f(x-eps)) / 2eps per coordinate of `x`,
// compared with the reverse-mode gradient. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). `x` is restored before returning.
GradCheckResult grad_check(const ScalarFn& f, Tensor x, double eps = 1e-6);

// Checks the gradient with respect to every tensor in `params`, one at a time,
// for a scalar function that closes over them. Returns the worst result.
GradCheckResult grad_check_all(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-6);

// One named verification case: runs a randomized trial and reports the
// worst relative error it saw.
struct GradCheckCase {
  std::string name;
  std::string kind;  // "primitive" or "composite"
  std::size_t trials;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

// All cases known to the verification suite: every differentiable primitive
// plus each encoder family end to end.
const std::vector<GradCheckCase>& gradcheck_registry();

// Op names that the primitive cases exercise. Every op recorded on a tape
// must appear here.
std::vector<std::string> registered_primitive_ops();

struct GradCheckReportRow {
  std::string name;
  std::string kind;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

std::vector<GradCheckReportRow> run_gradcheck_suite(double tolerance = 1e-4, std::uint64_t base_seed = 20180906);

}  // namespace chronoscope
