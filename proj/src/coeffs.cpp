#include "ptstab/coeffs.hpp"

#include <algorithm>
#include <cmath>

namespace ptstab {

CoeffSpec CoeffSpec::chebyshev(double sigma, double T, double theta, double q, double base_a) {
    if (theta <= 0.0) throw validation_error("CoeffSpec: theta must be positive");
    if (q <= 0.0) throw validation_error("CoeffSpec: q must be positive");
    if (T <= 0.0) throw validation_error("CoeffSpec: T must be positive");
    CoeffSpec s;
    s.variant = Variant::chebyshev_blowup;
    s.sigma = sigma;
    s.T = T;
    s.theta = theta;
    s.q = q;
    s.base_a = base_a;
    return s;
}

CoeffSpec CoeffSpec::tabulated(SpaceGrid xs, std::vector<double> ts, std::vector<double> samples,
                               double theta, double q) {
    if (theta <= 0.0) throw validation_error("CoeffSpec: theta must be positive");
    if (q <= 0.0) throw validation_error("CoeffSpec: q must be positive");
    if (ts.size() < 1) throw validation_error("CoeffSpec: tabulated needs at least one time sample");
    if (samples.size() != ts.size() * static_cast<std::size_t>(xs.n_x))
        throw validation_error("CoeffSpec: table size mismatch");
    CoeffSpec s;
    s.variant = Variant::tabulated;
    s.theta = theta;
    s.q = q;
    auto tab = std::make_shared<Table>();
    tab->xs = xs;
    tab->ts = std::move(ts);
    tab->samples = std::move(samples);
    s.table = std::move(tab);
    s.T = s.table->ts.back();
    return s;
}

GainSchedule GainSchedule::prescribed(double T) {
    if (T <= 0.0) throw validation_error("GainSchedule: T must be positive");
    GainSchedule g;
    g.variant = Variant::prescribed;
    g.T = T;
    return g;
}

GainSchedule GainSchedule::tabulated(std::vector<double> ts, std::vector<double> values) {
    if (ts.size() != values.size() || ts.empty())
        throw validation_error("GainSchedule: tabulated needs matching nonempty samples");
    GainSchedule g;
    g.variant = Variant::tabulated;
    g.T = ts.back();
    g.ts = std::move(ts);
    g.values = std::move(values);
    return g;
}

namespace {

double interp1(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    // linear interpolation, clamped to the end values
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    std::size_t lo = hi - 1;
    double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return (1.0 - w) * ys[lo] + w * ys[hi];
}

} // namespace

double eval_lambda(const CoeffSpec& spec, double x, double t) {
    if (x < -1e-12 || x > 1.0 + 1e-12)
        throw validation_error("eval_lambda: x outside [0,1]");
    x = std::clamp(x, 0.0, 1.0);
    if (spec.variant == CoeffSpec::Variant::chebyshev_blowup) {
        if (t >= spec.T)
            throw validation_error("eval_lambda: t >= T for the blow-up variant");
        double d = spec.T - t;
        return spec.base_a + std::cos(spec.sigma * std::acos(x)) + spec.T / (d * d);
    }
    const auto& tab = *spec.table;
    // clamp-to-boundary in t, bilinear in (x,t)
    double tc = std::clamp(t, tab.ts.front(), tab.ts.back());
    auto it = std::upper_bound(tab.ts.begin(), tab.ts.end(), tc);
    std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - tab.ts.begin()), tab.ts.size() - 1);
    std::size_t lo = (hi == 0) ? 0 : hi - 1;
    double wt = (hi == lo) ? 0.0 : (tc - tab.ts[lo]) / (tab.ts[hi] - tab.ts[lo]);
    int ix = std::clamp(static_cast<int>(std::floor(x / tab.xs.dx)), 0, tab.xs.n_x - 2);
    double wx = std::clamp((x - tab.xs.x(ix)) / tab.xs.dx, 0.0, 1.0);
    auto at = [&](std::size_t itime, int i) { return tab.samples[itime * tab.xs.n_x + i]; };
    double lo_val = (1.0 - wx) * at(lo, ix) + wx * at(lo, ix + 1);
    double hi_val = (1.0 - wx) * at(hi, ix) + wx * at(hi, ix + 1);
    return (1.0 - wt) * lo_val + wt * hi_val;
}

double eval_c(const GainSchedule& sched, double t) {
    if (sched.variant == GainSchedule::Variant::prescribed) {
        if (t < 0.0 || t >= sched.T)
            throw validation_error("eval_c: t outside [0,T)");
        double d = sched.T - t;
        return 2.0 * sched.T / (d * d);
    }
    return interp1(sched.ts, sched.values, t);
}

double eval_gamma(const CoeffSpec& spec, const GainSchedule& sched, double x, double t) {
    return eval_lambda(spec, x, t) + eval_c(sched, t);
}

double integral_c(const GainSchedule& sched, double t) {
    if (sched.variant == GainSchedule::Variant::prescribed) {
        if (t < 0.0 || t >= sched.T)
            throw validation_error("integral_c: t outside [0,T)");
        return 2.0 * t / (sched.T - t);
    }
    // trapezoid over the tabulated support up to t
    double acc = 0.0;
    for (std::size_t i = 1; i < sched.ts.size() && sched.ts[i - 1] < t; ++i) {
        double t1 = std::min(sched.ts[i], t);
        double c1 = interp1(sched.ts, sched.values, t1);
        acc += 0.5 * (t1 - sched.ts[i - 1]) * (sched.values[i - 1] + c1);
    }
    return acc;
}

double gamma_mean(const CoeffSpec& spec, const GainSchedule& sched, double t, int samples) {
    std::vector<double> vals(samples);
    double h = 1.0 / (samples - 1);
    for (int i = 0; i < samples; ++i) vals[i] = eval_lambda(spec, i * h, t);
    return trapezoid(vals, h) + eval_c(sched, t);
}

std::function<double(double)> make_diagonal_data(const CoeffSpec& spec, const GainSchedule& sched,
                                                 const SpaceGrid& grid, double t) {
    const int n = grid.n_x;
    const double dx = grid.dx;
    const double theta = spec.theta;
    std::vector<double> gam(n), D(n);
    for (int i = 0; i < n; ++i) gam[i] = eval_gamma(spec, sched, grid.x(i), t);
    cumtrapz(gam, dx, D);
    for (int i = 0; i < n; ++i) D[i] *= -1.0 / (2.0 * theta);
    // capture the gamma profile for the local correction between nodes
    auto gamma_at = [spec, sched, t](double x) { return eval_gamma(spec, sched, x, t); };
    return [D = std::move(D), gam = std::move(gam), gamma_at, dx, theta, n](double x) {
        int i = std::clamp(static_cast<int>(std::floor(x / dx + 1e-12)), 0, n - 1);
        double x0 = i * dx;
        if (std::abs(x - x0) < 1e-14) return D[i];
        double seg = 0.5 * (x - x0) * (gam[i] + gamma_at(x));
        return D[i] - seg / (2.0 * theta);
    };
}

} // namespace ptstab
