#pragma once

#include <vector>

#include "ptstab/grid.hpp"
#include "ptstab/kernel.hpp"

namespace ptstab {

/// Plant (or target) state on a SpaceGrid at one instant.
struct StateVector {
    SpaceGrid grid;
    std::vector<double> values;
    double t = 0.0;

    double l2() const { return l2_norm(values, grid.dx); }
    double max_abs() const;
};

/// Boundary gain row g(y) = k(1, y, t).
struct GainRow {
    SpaceGrid grid;
    std::vector<double> values;
    double t = 0.0;
};

/// w(x) = v(x) - int_0^x k(x,y) v(y) dy
StateVector forward_transform(const StateVector& v, const KernelSlice& k);

/// v(x) = w(x) + int_0^x l(x,y) w(y) dy
StateVector inverse_transform(const StateVector& w, const KernelSlice& l);

/// Top row of the kernel slice, i = n-1 (x = 1).
GainRow control_gain(const KernelSlice& k);

/// U = int_0^1 g(y) v(y) dy
double control_U(const GainRow& g, const StateVector& v);

} // namespace ptstab
