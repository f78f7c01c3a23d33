#include "embfat/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace embfat {

double finite_diff_check(const ScalarFn& f, const GradFn& grad_fn,
                         std::vector<Tensor> params, double h,
                         const SkipFn& skip) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: h must be positive");

  const std::vector<Tensor> analytic = grad_fn(params);
  if (analytic.size() != params.size()) {
    throw ShapeError("finite_diff_check: gradient count mismatch");
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(params[p])) {
      throw ShapeError("finite_diff_check: gradient shape mismatch for param " +
                       std::to_string(p));
    }
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      if (skip && skip(p, i)) continue;
      const double orig = params[p].data[i];
      params[p].data[i] = orig + h;
      const double fp = f(params);
      params[p].data[i] = orig - h;
      const double fm = f(params);
      params[p].data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_diff_check: non-finite function value");
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[p].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace embfat
