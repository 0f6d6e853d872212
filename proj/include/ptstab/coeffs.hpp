#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ptstab/grid.hpp"

namespace ptstab {

/// Reaction coefficient lambda(x,t) of the plant, either the parametric family
///   lambda(x,t) = a + cos(sigma*arccos(x)) + T/(T-t)^2
/// (valid for t < T) or a table sampled on a SpaceGrid x TimeGrid lattice with
/// bilinear interpolation and clamp-to-boundary extrapolation.
struct CoeffSpec {
    enum class Variant { chebyshev_blowup, tabulated };

    Variant variant = Variant::chebyshev_blowup;
    double theta = 1.0;
    double q = 1.0;

    // chebyshev_blowup
    double base_a = 5.0;
    double sigma = 3.3;
    double T = 8.0;

    // tabulated: samples[it * nx + ix] = lambda(x_ix, t_it)
    struct Table {
        SpaceGrid xs;
        std::vector<double> ts;
        std::vector<double> samples;
    };
    std::shared_ptr<const Table> table;

    static CoeffSpec chebyshev(double sigma, double T, double theta = 1.0, double q = 1.0,
                               double base_a = 5.0);
    static CoeffSpec tabulated(SpaceGrid xs, std::vector<double> ts, std::vector<double> samples,
                               double theta = 1.0, double q = 1.0);
};

/// Blow-up gain c(t); prescribed variant c(t) = 2T/(T-t)^2, or tabulated in t.
struct GainSchedule {
    enum class Variant { prescribed, tabulated };

    Variant variant = Variant::prescribed;
    double T = 8.0;
    std::vector<double> ts;     // tabulated support
    std::vector<double> values; // tabulated c(t) samples

    static GainSchedule prescribed(double T);
    static GainSchedule tabulated(std::vector<double> ts, std::vector<double> values);
};

double eval_lambda(const CoeffSpec& spec, double x, double t);
double eval_c(const GainSchedule& sched, double t);
double eval_gamma(const CoeffSpec& spec, const GainSchedule& sched, double x, double t);

/// Integral of c over [0,t]; closed form 2t/(T-t) for the prescribed schedule.
double integral_c(const GainSchedule& sched, double t);

/// Spatial mean of gamma(.,t) by trapezoid on a fine lattice.
double gamma_mean(const CoeffSpec& spec, const GainSchedule& sched, double t, int samples = 65);

/// Diagonal datum of the kernel problem: D(x) = -1/(2 theta) * int_0^x gamma(xi,t) dxi,
/// cumulative nodal trapezoid plus a local correction between nodes.
std::function<double(double)> make_diagonal_data(const CoeffSpec& spec, const GainSchedule& sched,
                                                 const SpaceGrid& grid, double t);

} // namespace ptstab
