#include "ptstab/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ptstab {

double lyapunov_V(const StateVector& w) {
    std::vector<double> sq(w.values.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = w.values[i] * w.values[i];
    return 0.5 * trapezoid(sq, w.grid.dx);
}

double zeta(const GainSchedule& sched, double t) {
    if (sched.variant == GainSchedule::Variant::prescribed) {
        if (t < 0.0 || t >= sched.T) throw validation_error("zeta: t outside [0,T)");
        return std::exp(-4.0 * t / (sched.T - t));
    }
    return std::exp(-2.0 * integral_c(sched, t));
}

double estimate_C_vw(const KernelTrajectory& ltraj) {
    if (ltraj.kind != KernelKind::inverse)
        throw validation_error("estimate_C_vw: expected an inverse-kind trajectory");
    double sup = 0.0;
    for (const auto& s : ltraj.slices) sup = std::max(sup, s.sup_norm());
    double c = (1.0 + sup) * (1.0 + sup);
    if (!std::isfinite(c)) throw numeric_error("estimate_C_vw: non-finite bound");
    return c;
}

EpsilonStar epsilon_star(const GainSchedule& sched, double theta, double C, const TimeGrid& tg) {
    if (C <= 0.0 || theta <= 0.0) throw validation_error("epsilon_star: need C > 0 and theta > 0");
    EpsilonStar out;
    double inf = std::numeric_limits<double>::infinity();
    for (int m = 0; m <= tg.n_t; ++m) {
        double c = eval_c(sched, tg.t(m));
        if (c <= theta) out.warning = true;
        double val = std::sqrt(std::max(0.0, 2.0 * (c - theta) / (C * theta)));
        inf = std::min(inf, val);
    }
    out.value = std::isfinite(inf) ? inf : 0.0;
    return out;
}

StabilityReport decay_envelope_check(const PlantTrajectory& traj, const KernelTrajectory& ktraj,
                                     const KernelTrajectory& ltraj, const GainSchedule& sched,
                                     double eps_hat, double slack, double theta) {
    StabilityReport rep;
    rep.eps_hat = eps_hat;
    rep.slack = slack;
    rep.blown_up = traj.blown_up;
    rep.C_vw = estimate_C_vw(ltraj);

    const std::size_t count = std::min(traj.states.size(), ktraj.slices.size());
    double w0 = 0.0, v0 = traj.states.front().l2();
    rep.initial_v = v0;

    std::vector<StateVector> w(count);
    for (std::size_t m = 0; m < count; ++m) w[m] = forward_transform(traj.states[m], ktraj.slices[m]);
    w0 = w[0].l2();
    double k0_sup = ktraj.slices.front().sup_norm();

    rep.envelope_pass = true;
    for (std::size_t m = 0; m < count; ++m) {
        double t = traj.time_grid.t(static_cast<int>(m));
        double z = zeta(sched, t);
        double wn = w[m].l2(), vn = traj.states[m].l2();
        double growth = std::exp(0.5 * (theta * eps_hat * eps_hat * rep.C_vw + 2.0 * theta) * t);
        double env_w = std::sqrt(z) * growth * w0;
        double env_v = std::sqrt(rep.C_vw) * std::sqrt(z) * growth * (1.0 + k0_sup) * v0;
        rep.times.push_back(t);
        rep.V.push_back(lyapunov_V(w[m]));
        rep.zeta.push_back(z);
        rep.w_norm.push_back(wn);
        rep.v_norm.push_back(vn);
        rep.envelope_w.push_back(env_w);
        rep.envelope_v.push_back(env_v);
        if (wn > slack * env_w || vn > slack * env_v) rep.envelope_pass = false;
    }
    rep.terminal_v = traj.states[count - 1].l2();

    TimeGrid tg = traj.time_grid;
    EpsilonStar es = epsilon_star(sched, 1.0, rep.C_vw, tg);
    rep.eps_star = es.value;
    rep.eps_star_warning = es.warning;
    return rep;
}

double practical_residual_bound(double eps_hat, double T, double C) {
    if (eps_hat < 0.0 || T < 0.0 || C < 0.0)
        throw validation_error("practical_residual_bound: nonnegative inputs required");
    return C * std::sqrt(T) * eps_hat;
}

std::vector<double> lift_tri_field(const std::vector<double>& native, const TriGrid& from,
                                   const TriGrid& to) {
    if (native.size() != from.node_count()) throw validation_error("lift_tri_field: size mismatch");
    std::vector<double> out(to.node_count());
    const int nf = from.n;
    auto val = [&](int i, int j) { return native[from.index(i, j)]; };
    for (int i = 0; i < to.n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double x = to.x(i), y = to.y(j);
            int ci = std::clamp(static_cast<int>(std::floor(x / from.dx)), 0, nf - 2);
            int cj = std::clamp(static_cast<int>(std::floor(y / from.dx)), 0, nf - 2);
            if (cj > ci) cj = ci;
            double wx = std::clamp((x - ci * from.dx) / from.dx, 0.0, 1.0);
            double wy = std::clamp((y - cj * from.dx) / from.dx, 0.0, 1.0);
            double v00 = val(ci, cj);
            double v10 = val(ci + 1, cj);
            double v11 = val(ci + 1, cj + 1);
            // the (ci, cj+1) corner may lie above the diagonal; fall back to the
            // triangle (v00, v10, v11) on diagonal-straddling cells
            if (cj + 1 <= ci) {
                double v01 = val(ci, cj + 1);
                out[to.index(i, j)] = (1 - wx) * (1 - wy) * v00 + wx * (1 - wy) * v10 +
                                      (1 - wx) * wy * v01 + wx * wy * v11;
            } else {
                out[to.index(i, j)] = v00 + wx * (v10 - v00) + wy * (v11 - v10);
            }
        }
    }
    return out;
}

BenchTable benchmark_speedup(const DeepOperator& op, const CoeffSpec& spec,
                             const GainSchedule& sched, const std::vector<double>& dx_values,
                             int repetitions, int slice_count, double control_dt) {
    using clock = std::chrono::steady_clock;
    BenchTable table;
    table.repetitions = repetitions;
    table.slice_count = slice_count;
    table.environment = "single thread, steady_clock, median of repetitions; workload = gain "
                        "rows at every control step + full fields at the diagnostic times";

    const double t_end = op.t_end();
    const int n_steps = static_cast<int>(std::floor(t_end / control_dt + 1e-9));
    std::vector<double> diag_times(slice_count);
    for (int s2 = 0; s2 < slice_count; ++s2)
        diag_times[s2] = t_end * s2 / (slice_count - 1);

    std::vector<double> lam = lambda_sensor_values(spec, op.layout);
    TriGrid native = TriGrid::make(op.native_n);
    const auto& ttimes = op.tscale.times;

    for (double dx : dx_values) {
        int n = static_cast<int>(std::lround(1.0 / dx)) + 1;
        TriGrid grid = TriGrid::make(n);
        TimeGrid tg = TimeGrid::make(control_dt, spec.T, spec.T - t_end);

        std::vector<double> analytic_times, surrogate_times;
        double sink = 0.0;

        std::vector<double> control_times(tg.n_t + 1);
        for (int m = 0; m <= tg.n_t; ++m) control_times[m] = tg.t(m);
        for (int rep = 0; rep < repetitions; ++rep) {
            auto t0 = clock::now();
            // every control step requires the PDE solve of its slice
            for_each_kernel_slice(spec, sched, grid, t_end, control_times, KernelKind::direct,
                                  [&](const KernelSlice& s2) {
                                      sink += s2.at(grid.n - 1, grid.n / 2);
                                  });
            auto t1 = clock::now();
            analytic_times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }

        for (int rep = 0; rep < repetitions; ++rep) {
            auto t0 = clock::now();
            // operator evaluation on its native lattice once, then interpolation
            std::vector<KernelSlice> native_slices;
            native_slices.reserve(ttimes.size());
            for (double t : ttimes)
                native_slices.push_back(predict_kernel_slice(op, lam, t, native));
            // gain rows at every control step
            std::vector<double> row_native(native.n), row(n);
            for (int m = 0; m <= n_steps; ++m) {
                double t = std::min(m * control_dt, t_end);
                std::size_t hi = 0;
                while (hi + 1 < ttimes.size() && ttimes[hi] < t) ++hi;
                std::size_t lo = hi > 0 ? hi - 1 : 0;
                double w = ttimes[hi] > ttimes[lo] ? (t - ttimes[lo]) / (ttimes[hi] - ttimes[lo]) : 0.0;
                w = std::clamp(w, 0.0, 1.0);
                for (int j = 0; j < native.n; ++j)
                    row_native[j] = (1.0 - w) * native_slices[lo].at(native.n - 1, j) +
                                    w * native_slices[hi].at(native.n - 1, j);
                for (int j = 0; j < n; ++j) {
                    double y = static_cast<double>(j) / (n - 1);
                    int cj = std::clamp(static_cast<int>(std::floor(y / native.dx)), 0, native.n - 2);
                    double wy = std::clamp((y - cj * native.dx) / native.dx, 0.0, 1.0);
                    row[j] = (1.0 - wy) * row_native[cj] + wy * row_native[cj + 1];
                }
                sink += row[n / 2];
            }
            // full fields at the diagnostic times
            std::vector<double> blend(native.node_count());
            for (double t : diag_times) {
                std::size_t hi = 0;
                while (hi + 1 < ttimes.size() && ttimes[hi] < t) ++hi;
                std::size_t lo = hi > 0 ? hi - 1 : 0;
                double w = ttimes[hi] > ttimes[lo] ? (t - ttimes[lo]) / (ttimes[hi] - ttimes[lo]) : 0.0;
                w = std::clamp(w, 0.0, 1.0);
                for (std::size_t z = 0; z < blend.size(); ++z)
                    blend[z] = (1.0 - w) * native_slices[lo].values[z] +
                               w * native_slices[hi].values[z];
                std::vector<double> lifted = lift_tri_field(blend, native, grid);
                sink += lifted[lifted.size() / 2];
            }
            auto t1 = clock::now();
            surrogate_times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        if (!std::isfinite(sink)) throw numeric_error("benchmark_speedup: non-finite value");

        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        BenchRow row;
        row.dx = dx;
        row.analytic_s = median(analytic_times);
        row.surrogate_s = median(surrogate_times);
        row.speedup = row.analytic_s / row.surrogate_s;
        table.rows.push_back(row);
    }
    return table;
}

void write_bench_csv(const BenchTable& table, const std::string& path,
                     const std::string& config_hash) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << "# config=" << config_hash << " env=" << table.environment
      << " reps=" << table.repetitions << " slices=" << table.slice_count << "\n";
    f << "dx,analytic_s,surrogate_s,speedup\n";
    char buf[128];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", r.dx, r.analytic_s,
                      r.surrogate_s, r.speedup);
        f << buf;
    }
    if (!f) throw io_error("short write to " + path);
}

void write_stability_json(const StabilityReport& rep, const std::string& path) {
    nlohmann::json j;
    j["C_vw"] = rep.C_vw;
    j["eps_star"] = rep.eps_star;
    j["eps_star_warning"] = rep.eps_star_warning;
    j["eps_hat"] = rep.eps_hat;
    j["slack"] = rep.slack;
    j["initial_v"] = rep.initial_v;
    j["terminal_v"] = rep.terminal_v;
    j["terminal_ratio"] = rep.initial_v > 0 ? rep.terminal_v / rep.initial_v : 0.0;
    j["envelope_pass"] = rep.envelope_pass;
    j["blown_up"] = rep.blown_up;
    // subsample the per-time arrays to keep the report readable
    std::size_t stride = std::max<std::size_t>(1, rep.times.size() / 512);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t m = 0; m < rep.times.size(); m += stride) {
        rows.push_back({{"t", rep.times[m]},
                        {"V", rep.V[m]},
                        {"zeta", rep.zeta[m]},
                        {"w_norm", rep.w_norm[m]},
                        {"v_norm", rep.v_norm[m]},
                        {"envelope_w", rep.envelope_w[m]},
                        {"envelope_v", rep.envelope_v[m]}});
    }
    j["rows"] = rows;
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

void write_stability_csv(const StabilityReport& rep, const std::string& path,
                         const std::string& config_hash) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << "# config=" << config_hash << "\n";
    f << "t,V,zeta,w_norm,v_norm,envelope_w,envelope_v\n";
    char buf[224];
    for (std::size_t m = 0; m < rep.times.size(); ++m) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      rep.times[m], rep.V[m], rep.zeta[m], rep.w_norm[m], rep.v_norm[m],
                      rep.envelope_w[m], rep.envelope_v[m]);
        f << buf;
    }
    if (!f) throw io_error("short write to " + path);
}

} // namespace ptstab
