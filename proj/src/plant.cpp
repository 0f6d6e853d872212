#include "ptstab/plant.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ptstab/deeponet.hpp"
#include "ptstab/tridiag.hpp"

namespace ptstab {

Controller Controller::open_loop() { return {}; }

Controller Controller::analytic(const KernelTrajectory& ktraj) {
    Controller c;
    c.type = Type::analytic_kernel;
    c.kernels = &ktraj;
    return c;
}

Controller Controller::surrogate_kernel(const DeepOperator& op) {
    Controller c;
    c.type = Type::no_kernel;
    c.op = &op;
    return c;
}

Controller Controller::surrogate_feedback(const DeepOperator& op) {
    Controller c;
    c.type = Type::no_feedback;
    c.op = &op;
    return c;
}

Controller Controller::perturbed(const KernelTrajectory& ktraj, double eps_inj,
                                 std::uint64_t seed) {
    Controller c;
    c.type = Type::perturbed_exact;
    c.kernels = &ktraj;
    c.eps_inj = eps_inj;
    c.noise_seed = seed;
    return c;
}

namespace {

struct CnRows {
    std::vector<double> a, b, c, rhs; // rows 0..n-2 after folding the Robin row
};

// Rows 0..n-2 of the Crank-Nicolson system. Row 0 is the Robin condition
// (-3v0 + 4v1 - v2)/(2dx) = q v0 with v2 eliminated against row 1.
CnRows assemble_cn(const StateVector& v, const std::vector<double>& lambda_now,
                   const std::vector<double>& lambda_next, double theta, double q, double dt) {
    const int n = v.grid.n_x;
    const double dx = v.grid.dx;
    const double r = theta * dt / (dx * dx);
    CnRows rows;
    rows.a.assign(n - 1, 0.0);
    rows.b.assign(n - 1, 0.0);
    rows.c.assign(n - 1, 0.0);
    rows.rhs.assign(n, 0.0);

    for (int i = 1; i <= n - 2; ++i) {
        rows.a[i] = -0.5 * r;
        rows.b[i] = 1.0 + r - 0.5 * dt * lambda_next[i];
        rows.c[i] = -0.5 * r;
        rows.rhs[i] = 0.5 * r * v.values[i - 1] +
                      (1.0 - r + 0.5 * dt * lambda_now[i]) * v.values[i] +
                      0.5 * r * v.values[i + 1];
    }
    // fold v2 out of the Robin row using row 1
    double b0 = 3.0 + 2.0 * q * dx, c0 = -4.0, e0 = 1.0, r0 = 0.0;
    double f = e0 / rows.c[1];
    rows.b[0] = b0 - f * rows.a[1];
    rows.c[0] = c0 - f * rows.b[1];
    rows.rhs[0] = r0 - f * rows.rhs[1];
    return rows;
}

StateVector solve_cn(const StateVector& v, CnRows rows, const std::vector<double>& last_row,
                     double last_rhs, double t_next) {
    const int n = v.grid.n_x;
    rows.rhs[n - 1] = last_rhs;
    solve_tridiagonal_dense_last_row(rows.a, rows.b, rows.c, last_row, rows.rhs);
    StateVector out;
    out.grid = v.grid;
    out.t = t_next;
    out.values = std::move(rows.rhs);
    return out;
}

std::vector<double> dirichlet_row(int n) {
    std::vector<double> L(n, 0.0);
    L[n - 1] = 1.0;
    return L;
}

// Coupled boundary row: v(1) - int_0^1 g(y) v(y) dy = eta
std::vector<double> coupled_row(const GainRow& g) {
    const int n = g.grid.n_x;
    const double dx = g.grid.dx;
    std::vector<double> L(n, 0.0);
    for (int j = 0; j < n; ++j) {
        double w = (j == 0 || j == n - 1) ? 0.5 : 1.0;
        L[j] = -w * dx * g.values[j];
    }
    L[n - 1] += 1.0;
    return L;
}

double uniform_pm1(std::mt19937_64& rng) {
    return 2.0 * ((rng() >> 11) * (1.0 / 9007199254740992.0)) - 1.0;
}

} // namespace

StateVector step_plant(const StateVector& v, const std::vector<double>& lambda_now,
                       const std::vector<double>& lambda_next, double theta, double q,
                       double U_next, double dt) {
    if (lambda_now.size() != v.values.size() || lambda_next.size() != v.values.size())
        throw validation_error("step_plant: lambda fields must match the state grid");
    if (dt <= 0.0) throw validation_error("step_plant: dt must be positive");
    CnRows rows = assemble_cn(v, lambda_now, lambda_next, theta, q, dt);
    return solve_cn(v, std::move(rows), dirichlet_row(v.grid.n_x), U_next, v.t + dt);
}

StateVector default_initial_state(const SpaceGrid& grid, double amplitude) {
    StateVector v;
    v.grid = grid;
    v.t = 0.0;
    v.values.resize(grid.n_x);
    for (int i = 0; i < grid.n_x; ++i) {
        double x = grid.x(i);
        v.values[i] = amplitude * x * (1.0 - x);
    }
    return v;
}

PlantTrajectory simulate(const CoeffSpec& spec, const GainSchedule& sched, const Controller& ctrl,
                         const TimeGrid& tg, const StateVector& v0) {
    (void)sched; // the gain schedule enters through the controller's kernels
    const int n = v0.grid.n_x;
    const double blowup_threshold = 1e12;

    if ((ctrl.type == Controller::Type::analytic_kernel ||
         ctrl.type == Controller::Type::perturbed_exact)) {
        if (!ctrl.kernels) throw validation_error("simulate: controller has no kernel trajectory");
        if (static_cast<int>(ctrl.kernels->slices.size()) < tg.n_t + 1)
            throw validation_error("simulate: kernel trajectory does not cover the time grid");
        if (ctrl.kernels->slices.front().grid.n != n)
            throw validation_error("simulate: kernel grid does not match the state grid");
    }
    if ((ctrl.type == Controller::Type::no_kernel || ctrl.type == Controller::Type::no_feedback) &&
        !ctrl.op)
        throw validation_error("simulate: controller has no operator");

    PlantTrajectory traj;
    traj.time_grid = tg;
    traj.states.reserve(tg.n_t + 1);
    traj.controls.reserve(tg.n_t + 1);
    traj.states.push_back(v0);
    traj.controls.push_back(v0.values.back());

    std::mt19937_64 rng(ctrl.noise_seed);
    std::vector<double> lambda_sensors;
    if (ctrl.op) lambda_sensors = lambda_sensor_values(spec, ctrl.op->layout);

    std::vector<double> lam_now(n), lam_next(n);
    for (int i = 0; i < n; ++i) lam_now[i] = eval_lambda(spec, v0.grid.x(i), 0.0);

    StateVector v = v0;
    for (int m = 0; m < tg.n_t; ++m) {
        double t_next = tg.t(m + 1);
        for (int i = 0; i < n; ++i) lam_next[i] = eval_lambda(spec, v.grid.x(i), t_next);
        CnRows rows = assemble_cn(v, lam_now, lam_next, spec.theta, spec.q, tg.dt);

        switch (ctrl.type) {
        case Controller::Type::open_loop_zero:
            v = solve_cn(v, std::move(rows), dirichlet_row(n), 0.0, t_next);
            break;
        case Controller::Type::analytic_kernel: {
            GainRow g = control_gain(ctrl.kernels->slice_at_step(m + 1));
            v = solve_cn(v, std::move(rows), coupled_row(g), 0.0, t_next);
            break;
        }
        case Controller::Type::perturbed_exact: {
            GainRow g = control_gain(ctrl.kernels->slice_at_step(m + 1));
            double eta = ctrl.eps_inj * uniform_pm1(rng);
            v = solve_cn(v, std::move(rows), coupled_row(g), eta, t_next);
            break;
        }
        case Controller::Type::no_kernel: {
            GainRow g = predict_kernel_gain_row(*ctrl.op, lambda_sensors, t_next, v.grid);
            v = solve_cn(v, std::move(rows), coupled_row(g), 0.0, t_next);
            break;
        }
        case Controller::Type::no_feedback: {
            std::vector<double> vs = state_sensor_values(v, ctrl.op->layout);
            double U = predict_feedback(*ctrl.op, lambda_sensors, vs, t_next);
            v = solve_cn(v, std::move(rows), dirichlet_row(n), U, t_next);
            break;
        }
        }

        traj.states.push_back(v);
        traj.controls.push_back(v.values.back());
        std::swap(lam_now, lam_next);

        if (!std::isfinite(v.max_abs()) || v.max_abs() > blowup_threshold) {
            traj.blown_up = true;
            break;
        }
    }
    return traj;
}

TargetResidualReport target_residual(const PlantTrajectory& traj, const KernelTrajectory& ktraj,
                                     const GainSchedule& sched, double theta, double q) {
    (void)q;
    const auto& states = traj.states;
    if (states.empty()) throw validation_error("target_residual: empty trajectory");
    if (ktraj.slices.front().grid.n != states.front().grid.n_x)
        throw validation_error("target_residual: grid mismatch");
    const std::size_t count = std::min(states.size(), ktraj.slices.size());
    const int n = states.front().grid.n_x;
    const double dx = states.front().grid.dx;
    const double dt = traj.time_grid.dt;

    TargetResidualReport rep;
    std::vector<StateVector> w(count);
    for (std::size_t m = 0; m < count; ++m) {
        w[m] = forward_transform(states[m], ktraj.slices[m]);
        rep.max_state_l2 = std::max(rep.max_state_l2, states[m].l2());
    }
    rep.times.resize(count);
    rep.boundary_residual.resize(count);
    rep.interior_residual.assign(count, 0.0);
    for (std::size_t m = 0; m < count; ++m) {
        rep.times[m] = traj.time_grid.t(static_cast<int>(m));
        rep.boundary_residual[m] = std::abs(w[m].values[n - 1]);
        if (m > 0) rep.max_boundary = std::max(rep.max_boundary, rep.boundary_residual[m]);
        if (m > 0 && m + 1 < count) {
            double c = eval_c(sched, rep.times[m]);
            double mx = 0.0;
            for (int i = 1; i <= n - 2; ++i) {
                double wt = (w[m + 1].values[i] - w[m - 1].values[i]) / (2.0 * dt);
                double wxx = (w[m].values[i + 1] - 2.0 * w[m].values[i] + w[m].values[i - 1]) / (dx * dx);
                mx = std::max(mx, std::abs(wt - theta * wxx + c * w[m].values[i]));
            }
            rep.interior_residual[m] = mx;
            rep.max_interior = std::max(rep.max_interior, mx);
        }
    }
    return rep;
}

void write_state_csv(const std::string& path, const PlantTrajectory& traj,
                     const std::string& config_hash, int stride) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << "# config=" << config_hash << "\n";
    f << "t,x,v\n";
    char buf[96];
    for (std::size_t m = 0; m < traj.states.size(); m += stride) {
        const auto& s = traj.states[m];
        for (int i = 0; i < s.grid.n_x; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n",
                          traj.time_grid.t(static_cast<int>(m)), s.grid.x(i), s.values[i]);
            f << buf;
        }
    }
    if (!f) throw io_error("short write to " + path);
}

void write_scalar_csv(const std::string& path, const PlantTrajectory& traj,
                      const std::string& config_hash, int stride) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << "# config=" << config_hash << "\n";
    f << "t,U,l2norm\n";
    char buf[96];
    for (std::size_t m = 0; m < traj.states.size(); m += stride) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n",
                      traj.time_grid.t(static_cast<int>(m)), traj.controls[m],
                      traj.states[m].l2());
        f << buf;
    }
    if (!f) throw io_error("short write to " + path);
}

} // namespace ptstab
