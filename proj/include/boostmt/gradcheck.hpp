#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "boostmt/autodiff.hpp"

namespace boostmt {

// Builds a scalar loss on `g`, binding every entry of `params` as a parameter.
using LossBuilder = std::function<NodeId(Graph& g, const ParamStore& params)>;

struct GradCheckResult {
  double max_error = 0.0;  // worst per-coordinate error
  std::string worst;       // "<name>[<index>]" of that coordinate
  std::size_t coordinates = 0;
};

// Central differences per coordinate against backward(). Each coordinate is
// scored by |a - n| / max(|a|, |n|, floor): relative error, with `floor`
// bounding the denominator from below so that gradients too small for the
// difference quotient to resolve (its roundoff is about 1e-16 * |loss| / h)
// are judged on absolute error scaled by 1 / floor.
inline GradCheckResult finite_diff_check(const LossBuilder& loss, const ParamStore& params, double h,
                                         double floor = 1e-5) {
  if (!(h > 0.0) || !(floor > 0.0)) throw ContractError("finite_diff_check: step and floor must be positive");

  GradientMap analytic;
  {
    Graph g;
    analytic = g.backward(loss(g, params));
  }

  auto evaluate = [&](const ParamStore& p) {
    Graph g;
    return g.value(loss(g, p)).item();
  };

  GradCheckResult r;
  ParamStore work = params;
  for (std::size_t i = 0; i < work.size(); ++i) {
    const std::string& name = work.name(i);
    const Tensor& a = analytic.at(name);
    for (std::size_t j = 0; j < work.value(i).size(); ++j) {
      const double orig = work.value(i)[j];
      work.value(i)[j] = orig + h;
      const double up = evaluate(work);
      work.value(i)[j] = orig - h;
      const double down = evaluate(work);
      work.value(i)[j] = orig;

      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(a[j] - numeric) / std::max({std::abs(a[j]), std::abs(numeric), floor});
      if (err > r.max_error || r.coordinates == 0) {
        r.max_error = err;
        r.worst = name + "[" + std::to_string(j) + "]";
      }
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace boostmt
