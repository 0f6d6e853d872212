#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ptstab/errors.hpp"

namespace ptstab {

/// Uniform grid on [0,1] with n_x nodes, x_i = i*dx, dx = 1/(n_x-1).
struct SpaceGrid {
    int n_x = 0;
    double dx = 0.0;

    static SpaceGrid make(int n_x);
    double x(int i) const { return i * dx; }
};

/// Uniform triangular grid on {0 <= y <= x <= 1}: nodes (x_i, y_j), j <= i.
/// Lower-triangular row-major storage: row i holds i+1 values.
struct TriGrid {
    int n = 0;
    double dx = 0.0;

    static TriGrid make(int n);
    std::size_t node_count() const { return static_cast<std::size_t>(n) * (n + 1) / 2; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * (i + 1) / 2 + j; }
    double x(int i) const { return i * dx; }
    double y(int j) const { return j * dx; }
};

/// Time grid for a run stopped at T - margin. Sample times t_m = m*dt, m = 0..n_t.
struct TimeGrid {
    double dt = 0.0;
    double T = 0.0;
    double margin = 0.0;
    int n_t = 0;

    static TimeGrid make(double dt, double T, double margin);
    double t(int m) const { return m * dt; }
    double t_end() const { return T - margin; }
};

/// Composite trapezoid rule on a uniform grid. Throws on fewer than 2 values.
double trapezoid(std::span<const double> values, double dx);

/// Running trapezoid integral: out[i] = integral over [x_0, x_i]. out[0] = 0.
void cumtrapz(std::span<const double> values, double dx, std::span<double> out);

/// L2(0,1) norm of nodal values by trapezoid quadrature.
double l2_norm(std::span<const double> values, double dx);

/// Node weights for integrating over the triangle {0 <= y <= x <= 1};
/// cells straddling the diagonal contribute their lower half.
std::vector<double> tri_quadrature_weights(const TriGrid& grid);

/// L2 norm over the triangular domain.
double tri_l2_norm(std::span<const double> field, const TriGrid& grid);

/// Linear interpolation of a triangular nodal field at a point (x, y) with
/// y <= x; diagonal-straddling cells interpolate on their lower half.
double tri_interp(std::span<const double> field, const TriGrid& grid, double x, double y);

} // namespace ptstab
