#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "kvconsist/encoders.hpp"

namespace kvconsist::testing {

/// |analytic - numeric| / max(|analytic| + |numeric|, floor). The floor keeps
/// entries whose true gradient is zero from dividing noise by noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

/// Central finite differences of `loss` with respect to every entry of
/// `param`, compared against `analytic`.
inline void check_tensor(const std::string& name, Matrix& param, const Matrix& analytic,
                         const std::function<double()>& loss, GradCheckResult& result, double eps = 1e-5) {
  for (Eigen::Index j = 0; j < param.cols(); ++j) {
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      const double saved = param(i, j);
      param(i, j) = saved + eps;
      const double up = loss();
      param(i, j) = saved - eps;
      const double down = loss();
      param(i, j) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic(i, j), numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "(" + std::to_string(i) + "," + std::to_string(j) + ") analytic=" +
                       std::to_string(analytic(i, j)) + " numeric=" + std::to_string(numeric);
      }
    }
  }
}

}  // namespace kvconsist::testing
