#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pepnet/graph.hpp"

namespace pepnet {

// One checkable parameter slice: mutable storage the loss reads from, plus
// the analytic gradient claimed for it.
struct GradCheckTarget {
  std::string name;
  double* data = nullptr;
  int64_t size = 0;
  std::vector<double> analytic;
};

// Central finite differences against a value-only loss evaluation.
// Returns max over all entries of |analytic - central| / max(1, |central|).
double finite_diff_check(const std::function<double()>& loss_value,
                         std::span<GradCheckTarget> targets, double step = 1e-5);

// Convenience form over Parameters: builds the graph once, runs backward to
// collect analytic gradients, then perturbs each parameter entry and
// re-evaluates the builder. The finite-difference path never touches
// backward(), so it stays an independent oracle for it.
double finite_diff_check(const std::function<NodeId(Graph&)>& build,
                         std::span<Parameter* const> params, double step = 1e-5);

}  // namespace pepnet
