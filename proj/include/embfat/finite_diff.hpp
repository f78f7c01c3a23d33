#pragma once

#include <functional>
#include <vector>

#include "embfat/tensor.hpp"

namespace embfat {

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;
// (param index, element index) -> true to exclude the element from the check.
using SkipFn = std::function<bool(std::size_t, std::size_t)>;

// Central-difference check of an analytic gradient. Perturbs every element of
// every parameter by ±h and returns the worst relative error against grad_fn,
// with a 1e-8 denominator floor. skip, when given, excludes elements (used for
// relu-kink-adjacent parameters where the central difference is invalid).
double finite_diff_check(const ScalarFn& f, const GradFn& grad_fn,
                         std::vector<Tensor> params, double h,
                         const SkipFn& skip = nullptr);

}  // namespace embfat
