#include "ptstab/transform.hpp"

#include <cmath>

namespace ptstab {

double StateVector::max_abs() const {
    double mx = 0.0;
    for (double v : values) mx = std::max(mx, std::abs(v));
    return mx;
}

namespace {
void check_pair(const SpaceGrid& g, const KernelSlice& k, const char* what) {
    if (k.grid.n != g.n_x)
        throw validation_error(std::string(what) + ": kernel and state grids differ");
}
} // namespace

StateVector forward_transform(const StateVector& v, const KernelSlice& k) {
    check_pair(v.grid, k, "forward_transform");
    const int n = v.grid.n_x;
    const double dx = v.grid.dx;
    StateVector w;
    w.grid = v.grid;
    w.t = v.t;
    w.values.resize(n);
    w.values[0] = v.values[0];
    for (int i = 1; i < n; ++i) {
        double integral = 0.0;
        for (int j = 0; j <= i; ++j) {
            double weight = (j == 0 || j == i) ? 0.5 : 1.0;
            integral += weight * dx * k.at(i, j) * v.values[j];
        }
        w.values[i] = v.values[i] - integral;
    }
    return w;
}

StateVector inverse_transform(const StateVector& w, const KernelSlice& l) {
    check_pair(w.grid, l, "inverse_transform");
    const int n = w.grid.n_x;
    const double dx = w.grid.dx;
    StateVector v;
    v.grid = w.grid;
    v.t = w.t;
    v.values.resize(n);
    v.values[0] = w.values[0];
    for (int i = 1; i < n; ++i) {
        double integral = 0.0;
        for (int j = 0; j <= i; ++j) {
            double weight = (j == 0 || j == i) ? 0.5 : 1.0;
            integral += weight * dx * l.at(i, j) * w.values[j];
        }
        v.values[i] = w.values[i] + integral;
    }
    return v;
}

GainRow control_gain(const KernelSlice& k) {
    GainRow g;
    g.grid = SpaceGrid::make(k.grid.n);
    g.t = k.t;
    g.values.resize(k.grid.n);
    for (int j = 0; j < k.grid.n; ++j) g.values[j] = k.at(k.grid.n - 1, j);
    return g;
}

double control_U(const GainRow& g, const StateVector& v) {
    if (g.grid.n_x != v.grid.n_x) throw validation_error("control_U: grid mismatch");
    std::vector<double> prod(g.values.size());
    for (std::size_t j = 0; j < prod.size(); ++j) prod[j] = g.values[j] * v.values[j];
    return trapezoid(prod, g.grid.dx);
}

} // namespace ptstab
