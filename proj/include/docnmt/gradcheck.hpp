#pragma once

#include <functional>

#include "docnmt/tensor.hpp"

namespace docnmt {

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of x of
//   |analytic - central difference| / max(1e-8, |analytic| + |numeric|).
// A coordinate that misses 1e-6 at step eps is retried at 100, 10 and 0.1
// times eps and keeps its best agreement.
// x must be a grad-requiring leaf; its values are perturbed in place and
// restored before returning.
double finite_diff_check(const ScalarFn& f, Tensor& x, double eps = 1e-5);

// Same measure against an arbitrary leaf reached through a closure that
// takes no argument, as used for model parameters.
double finite_diff_check(const std::function<Tensor()>& f, Tensor& leaf,
                         double eps = 1e-5);

}  // namespace docnmt
