#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>

#include "dmn/params.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;

  std::string summary() const {
    std::ostringstream os;
    os << (pass ? "ok" : "FAIL") << " max_rel_err=" << max_rel_err << " over " << checked
       << " entries";
    if (!worst_param.empty())
      os << " (worst " << worst_param << "[" << worst_index << "] analytic=" << analytic
         << " numeric=" << numeric << ")";
    return os.str();
  }
};

// Compares reverse-mode gradients against central differences for every entry
// of every parameter. build must construct a scalar loss on the given graph
// from the current parameter values; it is re-run twice per entry for the
// numeric side, so keep the probe model small.
template <typename Builder>
GradCheckReport grad_check(ParamStore& store, Builder&& build, double eps = 1e-5,
                           double tol = 1e-4) {
  store.zero_grads();
  {
    Graph g(store);
    Tensor loss = build(g);
    g.backward(loss);
    g.accumulate_grads();
  }

  auto eval = [&]() {
    Graph g(store);
    Tensor loss = build(g);
    return loss.values[0];
  };

  GradCheckReport report;
  for (Param& p : store.all()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.values[i];
      p.value.values[i] = saved + eps;
      const double up = eval();
      p.value.values[i] = saved - eps;
      const double down = eval();
      p.value.values[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad[i];
      // The floor keeps near-zero entries from inflating the relative error.
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace dmn
