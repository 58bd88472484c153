#pragma once

#include "skimo/params.hpp"

namespace skimo {

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t n_checked = 0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against the tape. `loss_fn` must rebuild the
// graph from the current parameter values on every call and return a scalar.
// Relative error uses max(1, |analytic|, |numeric|) in the denominator so
// near-zero gradients are judged on absolute error.
template <class S, class F>
GradCheckReport gradcheck(ParameterSet<S>& ps, const std::vector<std::string>& names, F loss_fn,
                          double eps = 1e-5) {
  // Analytic pass.
  ps.zero_grads();
  {
    Tensor<S> loss = loss_fn();
    loss.backward();
  }
  std::map<std::string, std::vector<S>> analytic;
  for (const auto& name : names) analytic[name] = ps.at(name).grad();

  GradCheckReport rep;
  for (const auto& name : names) {
    auto& val = ps.at(name).value();
    for (size_t i = 0; i < val.size(); ++i) {
      S keep = val[i];
      val[i] = keep + S(eps);
      double up = double(loss_fn().item());
      val[i] = keep - S(eps);
      double down = double(loss_fn().item());
      val[i] = keep;
      double numeric = (up - down) / (2 * eps);
      double a = double(analytic[name][i]);
      double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      double rel = std::abs(a - numeric) / denom;
      ++rep.n_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = int64_t(i);
      }
    }
  }
  return rep;
}

}  // namespace skimo
