#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

namespace gradcheck {

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
/// analytically from turning rounding noise into a huge ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Result {
  double max_rel = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central differences of `loss` wrt every entry of `values` against
/// `analytic`. `loss` must re-evaluate from scratch each call.
inline Result check(std::span<double> values, std::span<const double> analytic, const std::function<double()>& loss,
                    double h = 1e-6, double floor = 1e-6) {
  Result r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    const double rel = relative_error(analytic[i], (up - down) / (2 * h), floor);
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

}  // namespace gradcheck
