#pragma once

#include <functional>

namespace freelab {

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`. Throws
/// NumericalError when the recursion depth is exhausted before the local
/// error estimate meets its share of the tolerance.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth = 50);

}  // namespace freelab
