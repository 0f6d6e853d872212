#pragma once

#include <span>
#include <vector>

#include "ptstab/errors.hpp"

namespace ptstab {

/// Thomas algorithm for a tridiagonal system; a = sub, b = main, c = super
/// (a[0] and c[n-1] unused). Overwrites d with the solution.
void solve_tridiagonal(std::span<const double> a, std::span<const double> b,
                       std::span<const double> c, std::span<double> d);

/// Tridiagonal system whose last row is dense (a boundary row coupling every
/// unknown): forward-eliminates the band, folding the dense row as it goes.
/// Overwrites rhs with the solution.
void solve_tridiagonal_dense_last_row(std::span<const double> a, std::span<const double> b,
                                      std::span<const double> c, std::span<const double> last_row,
                                      std::span<double> rhs);

} // namespace ptstab
