#include "ptstab/grid.hpp"

#include <cmath>

namespace ptstab {

SpaceGrid SpaceGrid::make(int n_x) {
    if (n_x < 2) throw validation_error("SpaceGrid: need at least 2 nodes, got " + std::to_string(n_x));
    SpaceGrid g;
    g.n_x = n_x;
    g.dx = 1.0 / (n_x - 1);
    return g;
}

TriGrid TriGrid::make(int n) {
    if (n < 2) throw validation_error("TriGrid: need at least 2 nodes per side, got " + std::to_string(n));
    TriGrid g;
    g.n = n;
    g.dx = 1.0 / (n - 1);
    return g;
}

TimeGrid TimeGrid::make(double dt, double T, double margin) {
    if (dt <= 0.0) throw validation_error("TimeGrid: dt must be positive");
    if (!(margin > 0.0 && margin < T)) throw validation_error("TimeGrid: need 0 < margin < T");
    TimeGrid g;
    g.dt = dt;
    g.T = T;
    g.margin = margin;
    g.n_t = static_cast<int>(std::floor((T - margin) / dt + 1e-9));
    return g;
}

double trapezoid(std::span<const double> values, double dx) {
    if (values.size() < 2) throw validation_error("trapezoid: need at least 2 values");
    if (dx <= 0.0) throw validation_error("trapezoid: dx must be positive");
    double s = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) s += values[i];
    return s * dx;
}

void cumtrapz(std::span<const double> values, double dx, std::span<double> out) {
    if (values.size() != out.size()) throw validation_error("cumtrapz: size mismatch");
    if (values.empty()) return;
    out[0] = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i)
        out[i] = out[i - 1] + 0.5 * dx * (values[i - 1] + values[i]);
}

double l2_norm(std::span<const double> values, double dx) {
    if (values.size() < 2) throw validation_error("l2_norm: need at least 2 values");
    double s = 0.5 * (values.front() * values.front() + values.back() * values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) s += values[i] * values[i];
    return std::sqrt(s * dx);
}

std::vector<double> tri_quadrature_weights(const TriGrid& grid) {
    const int n = grid.n;
    const double cell = grid.dx * grid.dx;
    std::vector<double> w(grid.node_count(), 0.0);
    for (int i = 0; i < n - 1; ++i) {
        for (int j = 0; j <= i; ++j) {
            if (j + 1 <= i) {
                // full square cell (i..i+1, j..j+1), all four corners inside
                w[grid.index(i, j)] += 0.25 * cell;
                w[grid.index(i + 1, j)] += 0.25 * cell;
                w[grid.index(i, j + 1)] += 0.25 * cell;
                w[grid.index(i + 1, j + 1)] += 0.25 * cell;
            } else {
                // cell cut by the diagonal: lower half-triangle (i,i), (i+1,i), (i+1,i+1)
                w[grid.index(i, i)] += cell / 6.0;
                w[grid.index(i + 1, i)] += cell / 6.0;
                w[grid.index(i + 1, i + 1)] += cell / 6.0;
            }
        }
    }
    return w;
}

double tri_l2_norm(std::span<const double> field, const TriGrid& grid) {
    if (field.size() != grid.node_count()) throw validation_error("tri_l2_norm: field size mismatch");
    auto w = tri_quadrature_weights(grid);
    double s = 0.0;
    for (std::size_t m = 0; m < field.size(); ++m) s += w[m] * field[m] * field[m];
    return std::sqrt(s);
}

double tri_interp(std::span<const double> field, const TriGrid& grid, double x, double y) {
    if (field.size() != grid.node_count()) throw validation_error("tri_interp: field size mismatch");
    const int n = grid.n;
    int ci = static_cast<int>(std::floor(x / grid.dx));
    int cj = static_cast<int>(std::floor(y / grid.dx));
    ci = ci < 0 ? 0 : (ci > n - 2 ? n - 2 : ci);
    cj = cj < 0 ? 0 : (cj > ci ? ci : cj);
    double wx = (x - ci * grid.dx) / grid.dx;
    double wy = (y - cj * grid.dx) / grid.dx;
    wx = wx < 0 ? 0 : (wx > 1 ? 1 : wx);
    wy = wy < 0 ? 0 : (wy > 1 ? 1 : wy);
    double v00 = field[grid.index(ci, cj)];
    double v10 = field[grid.index(ci + 1, cj)];
    double v11 = field[grid.index(ci + 1, cj + 1)];
    if (cj + 1 <= ci) {
        double v01 = field[grid.index(ci, cj + 1)];
        return (1 - wx) * (1 - wy) * v00 + wx * (1 - wy) * v10 + (1 - wx) * wy * v01 +
               wx * wy * v11;
    }
    return v00 + wx * (v10 - v00) + wy * (v11 - v10);
}

} // namespace ptstab
