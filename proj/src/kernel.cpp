#include "ptstab/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ptstab {

double KernelSlice::sup_norm() const {
    double mx = 0.0;
    for (double v : values) mx = std::max(mx, std::abs(v));
    return mx;
}

bool cfl_check(double theta, double dx, double dt) {
    if (theta <= 0.0 || dx <= 0.0 || dt <= 0.0)
        throw validation_error("cfl_check: arguments must be positive");
    return theta * dt / (dx * dx) <= 0.5 + 1e-12;
}

// The PDE theta*(k_xx - k_yy) = R k + f is hyperbolic in (x,y); with data on
// the diagonal y = x and a Robin condition at y = 0 it is a Goursat problem.
// In characteristic variables (xi, eta) = (x+y, x-y) the five-point stencil
//   k(i+1,j) + k(i-1,j) - k(i,j+1) - k(i,j-1)
// integrates k_xieta exactly over a characteristic rectangle, so the field can
// be computed level by level in d = i - j, each level anchored at the Robin
// boundary. The first off-diagonal level uses half-height rectangles whose
// lower corners sit on the diagonal between nodes.
std::vector<double> solve_kernel_bvp(const TriGrid& grid, double theta, double q,
                                     const std::function<double(double, double)>& reaction,
                                     const std::vector<double>* source,
                                     const std::function<double(double)>& diag_data) {
    const int n = grid.n;
    const double dx = grid.dx;
    std::vector<double> k(grid.node_count(), 0.0);
    auto idx = [&](int i, int j) { return grid.index(i, j); };
    auto src = [&](int i, int j) { return source ? (*source)[idx(i, j)] : 0.0; };

    for (int i = 0; i < n; ++i) k[idx(i, i)] = diag_data(i * dx);
    if (n < 2) return k;

    // level 1; the corner node (1,0) gets a first-order Robin closure because
    // the x = dx line has no third node
    k[idx(1, 0)] = diag_data(dx) / (1.0 + q * dx);
    for (int m = 1; m <= n - 2; ++m) {
        double DQ0 = diag_data((m + 0.5) * dx);
        double DP0 = diag_data((m - 0.5) * dx);
        double kP = k[idx(m, m - 1)];
        double Rc = reaction(m * dx + 0.25 * dx, m * dx - 0.25 * dx);
        double fc = 0.0;
        if (source)
            fc = 0.25 * (src(m, m - 1) + src(m + 1, m) + 0.5 * (src(m - 1, m - 1) + src(m, m)) +
                         0.5 * (src(m, m) + src(m + 1, m + 1)));
        double denom = 1.0 - dx * dx * Rc / (8.0 * theta);
        if (!(std::abs(denom) > 1e-12))
            throw numeric_error("solve_kernel_bvp: singular point-implicit closure at level 1");
        double rhs = kP + DQ0 - DP0 +
                     dx * dx / (2.0 * theta) * (Rc * (kP + DQ0 + DP0) / 4.0 + fc);
        k[idx(m + 1, m)] = rhs / denom;
    }

    for (int L = 2; L <= n - 1; ++L) {
        // Robin row, second-order one-sided: (-3k0 + 4k1 - k2)/(2dx) = q k0
        k[idx(L, 0)] = (4.0 * k[idx(L, 1)] - k[idx(L, 2)]) / (3.0 + 2.0 * q * dx);
        for (int j = 1; j <= n - 1 - L; ++j) {
            int i = L + j - 1; // stencil center, one level in
            k[idx(i + 1, j)] = dx * dx / theta * (reaction(i * dx, j * dx) * k[idx(i, j)] + src(i, j)) -
                               k[idx(i - 1, j)] + k[idx(i, j + 1)] + k[idx(i, j - 1)];
        }
    }
    return k;
}

namespace {

std::function<double(double)> field_diag_data(const std::vector<double>& gamma_slice,
                                              const TriGrid& grid, double theta) {
    const int n = grid.n;
    const double dx = grid.dx;
    std::vector<double> D(n);
    cumtrapz(gamma_slice, dx, D);
    for (double& v : D) v *= -1.0 / (2.0 * theta);
    std::vector<double> gam = gamma_slice;
    return [D = std::move(D), gam = std::move(gam), dx, theta, n](double x) {
        int i = std::clamp(static_cast<int>(std::floor(x / dx + 1e-12)), 0, n - 1);
        double x0 = i * dx;
        if (std::abs(x - x0) < 1e-14) return D[i];
        // linear-in-gamma segment correction to the node integral
        int i1 = std::min(i + 1, n - 1);
        double w = (x - x0) / dx;
        double gx = (1.0 - w) * gam[i] + w * gam[i1];
        return D[i] - 0.5 * (x - x0) * (gam[i] + gx) / (2.0 * theta);
    };
}

std::function<double(double, double)> field_reaction(const std::vector<double>& gamma_slice,
                                                     const TriGrid& grid, KernelKind kind) {
    const int n = grid.n;
    const double dx = grid.dx;
    std::vector<double> gam = gamma_slice;
    return [gam = std::move(gam), dx, n, kind](double x, double y) {
        double arg = (kind == KernelKind::direct) ? y : x;
        int i = std::clamp(static_cast<int>(std::floor(arg / dx)), 0, n - 2);
        double w = std::clamp((arg - i * dx) / dx, 0.0, 1.0);
        double g = (1.0 - w) * gam[i] + w * gam[i + 1];
        return (kind == KernelKind::direct) ? g : -g;
    };
}

void check_finite(const std::vector<double>& field, const char* what) {
    for (double v : field)
        if (!std::isfinite(v)) throw numeric_error(std::string(what) + ": non-finite kernel value");
}

} // namespace

KernelSlice solve_stationary_kernel(const std::vector<double>& gamma_slice, double theta, double q,
                                    const TriGrid& grid, double tol, int max_iter, KernelKind kind,
                                    double t) {
    if (gamma_slice.size() != static_cast<std::size_t>(grid.n))
        throw validation_error("solve_stationary_kernel: gamma slice must match the grid");
    if (tol <= 0.0) throw validation_error("solve_stationary_kernel: tol must be positive");
    for (double g : gamma_slice)
        if (!std::isfinite(g)) throw validation_error("solve_stationary_kernel: gamma not finite");

    auto diag = field_diag_data(gamma_slice, grid, theta);
    auto reac = field_reaction(gamma_slice, grid, kind);

    // Successive approximation in characteristic order. With the sweep following
    // the level ordering a single sweep lands on the fixed point of the discrete
    // system, so the loop terminates once two sweeps agree within tol.
    std::vector<double> prev(grid.node_count(), 0.0);
    double delta = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= max_iter; ++it) {
        std::vector<double> cur = solve_kernel_bvp(grid, theta, q, reac, nullptr, diag);
        delta = 0.0;
        for (std::size_t m = 0; m < cur.size(); ++m)
            delta = std::max(delta, std::abs(cur[m] - prev[m]));
        prev = std::move(cur);
        if (delta <= tol) {
            check_finite(prev, "solve_stationary_kernel");
            KernelSlice s;
            s.grid = grid;
            s.values = std::move(prev);
            s.t = t;
            return s;
        }
    }
    throw convergence_error("solve_stationary_kernel: no convergence within max_iter", delta,
                            max_iter);
}

KernelSlice step_kernel_imex(const KernelSlice& k, const std::vector<double>& gamma_now,
                             const std::vector<double>& gamma_next, double theta, double q,
                             double dt, const std::vector<double>* dk_dt) {
    const TriGrid& grid = k.grid;
    if (gamma_now.size() != static_cast<std::size_t>(grid.n) || gamma_next.size() != gamma_now.size())
        throw validation_error("step_kernel_imex: gamma fields must match the grid");
    if (!cfl_check(theta, grid.dx, dt))
        throw numeric_error("step_kernel_imex: CFL condition theta*dt/dx^2 <= 1/2 violated");
    if (dk_dt && dk_dt->size() != grid.node_count())
        throw validation_error("step_kernel_imex: source field size mismatch");

    auto diag = field_diag_data(gamma_next, grid, theta);
    auto reac = field_reaction(gamma_next, grid, KernelKind::direct);
    KernelSlice out;
    out.grid = grid;
    out.values = solve_kernel_bvp(grid, theta, q, reac, dk_dt, diag);
    out.t = k.t + dt;
    check_finite(out.values, "step_kernel_imex");
    return out;
}

namespace {

// Scaffold of solve times: uniform over the body plus a geometrically refined
// tail where the blow-up gain steepens.
std::vector<double> scaffold_times(double t_end) {
    std::vector<double> st;
    double tail = std::min(0.5, 0.25 * t_end);
    int body = 96, tail_pts = 24;
    for (int i = 0; i <= body; ++i) st.push_back((t_end - tail) * i / body);
    for (int j = tail_pts - 1; j >= 1; --j) st.push_back(t_end - tail * std::pow(0.8, tail_pts - 1 - j));
    st.push_back(t_end);
    std::sort(st.begin(), st.end());
    st.erase(std::unique(st.begin(), st.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             st.end());
    return st;
}

struct ScaffoldFields {
    std::vector<double> times;
    std::vector<std::vector<double>> k;     // quasi-static family
    std::vector<std::vector<double>> kdot;  // its time derivative
};

ScaffoldFields build_scaffold(const CoeffSpec& spec, const GainSchedule& sched, const TriGrid& grid,
                              double t_end, KernelKind kind) {
    ScaffoldFields sf;
    sf.times = scaffold_times(t_end);
    const int S = static_cast<int>(sf.times.size());
    const std::size_t nt = grid.node_count();
    SpaceGrid sg = SpaceGrid::make(grid.n);

    sf.k.resize(S);
    for (int s = 0; s < S; ++s) {
        double t = sf.times[s];
        std::vector<double> gam(grid.n);
        for (int i = 0; i < grid.n; ++i) gam[i] = eval_gamma(spec, sched, sg.x(i), t);
        auto diag = make_diagonal_data(spec, sched, sg, t);
        auto reac = field_reaction(gam, grid, kind);
        sf.k[s] = solve_kernel_bvp(grid, spec.theta, spec.q, reac, nullptr, diag);
        check_finite(sf.k[s], "solve_kernel_trajectory (scaffold)");
    }

    sf.kdot.assign(S, std::vector<double>(nt, 0.0));
    for (int s = 0; s < S; ++s) {
        int lo = std::max(0, s - 1), hi = std::min(S - 1, s + 1);
        double ha = sf.times[s] - sf.times[lo], hb = sf.times[hi] - sf.times[s];
        for (std::size_t m = 0; m < nt; ++m) {
            if (lo == s)
                sf.kdot[s][m] = (sf.k[hi][m] - sf.k[s][m]) / hb;
            else if (hi == s)
                sf.kdot[s][m] = (sf.k[s][m] - sf.k[lo][m]) / ha;
            else
                sf.kdot[s][m] = (sf.k[hi][m] * ha * ha - sf.k[lo][m] * hb * hb +
                                 sf.k[s][m] * (hb * hb - ha * ha)) /
                                (ha * hb * (ha + hb));
        }
    }
    return sf;
}

std::vector<double> interp_kdot(const ScaffoldFields& sf, double t, std::size_t nt) {
    const int S = static_cast<int>(sf.times.size());
    int s = 0;
    while (s < S - 2 && sf.times[s + 1] < t) ++s;
    double denom = sf.times[s + 1] - sf.times[s];
    double w = denom > 0.0 ? (t - sf.times[s]) / denom : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    std::vector<double> src(nt);
    for (std::size_t m = 0; m < nt; ++m)
        src[m] = (1.0 - w) * sf.kdot[s][m] + w * sf.kdot[s + 1][m];
    return src;
}

KernelSlice output_slice(const CoeffSpec& spec, const GainSchedule& sched, const TriGrid& grid,
                         const ScaffoldFields& sf, double t, KernelKind kind) {
    SpaceGrid sg = SpaceGrid::make(grid.n);
    std::vector<double> gam(grid.n);
    for (int i = 0; i < grid.n; ++i) gam[i] = eval_gamma(spec, sched, sg.x(i), t);
    auto diag = make_diagonal_data(spec, sched, sg, t);
    auto reac = field_reaction(gam, grid, kind);
    std::vector<double> src = interp_kdot(sf, t, grid.node_count());
    KernelSlice s;
    s.grid = grid;
    s.values = solve_kernel_bvp(grid, spec.theta, spec.q, reac, &src, diag);
    s.t = t;
    check_finite(s.values, "solve_kernel_trajectory (output)");
    return s;
}

KernelTrajectory solve_trajectory_impl(const CoeffSpec& spec, const GainSchedule& sched,
                                       const TriGrid& grid, const TimeGrid& tg, KernelKind kind) {
    ScaffoldFields sf = build_scaffold(spec, sched, grid, tg.t_end(), kind);
    KernelTrajectory traj;
    traj.time_grid = tg;
    traj.kind = kind;
    traj.slices.reserve(tg.n_t + 1);
    for (int m = 0; m <= tg.n_t; ++m) {
        traj.slices.push_back(output_slice(spec, sched, grid, sf, tg.t(m), kind));
        traj.sup_over_time = std::max(traj.sup_over_time, traj.slices.back().sup_norm());
    }
    return traj;
}

} // namespace

KernelTrajectory solve_kernel_trajectory(const CoeffSpec& spec, const GainSchedule& sched,
                                         const TriGrid& grid, const TimeGrid& tg) {
    return solve_trajectory_impl(spec, sched, grid, tg, KernelKind::direct);
}

KernelTrajectory solve_inverse_kernel_trajectory(const CoeffSpec& spec, const GainSchedule& sched,
                                                 const TriGrid& grid, const TimeGrid& tg) {
    return solve_trajectory_impl(spec, sched, grid, tg, KernelKind::inverse);
}

std::vector<KernelSlice> solve_kernel_slices(const CoeffSpec& spec, const GainSchedule& sched,
                                             const TriGrid& grid, double t_end,
                                             const std::vector<double>& out_times, KernelKind kind) {
    ScaffoldFields sf = build_scaffold(spec, sched, grid, t_end, kind);
    std::vector<KernelSlice> out;
    out.reserve(out_times.size());
    for (double t : out_times) out.push_back(output_slice(spec, sched, grid, sf, t, kind));
    return out;
}

void for_each_kernel_slice(const CoeffSpec& spec, const GainSchedule& sched, const TriGrid& grid,
                           double t_end, const std::vector<double>& out_times, KernelKind kind,
                           const std::function<void(const KernelSlice&)>& fn) {
    ScaffoldFields sf = build_scaffold(spec, sched, grid, t_end, kind);
    for (double t : out_times) fn(output_slice(spec, sched, grid, sf, t, kind));
}

double reciprocity_residual(const KernelSlice& k, const KernelSlice& l) {
    if (k.grid.n != l.grid.n) throw validation_error("reciprocity_residual: grid mismatch");
    if (std::abs(k.t - l.t) > 1e-9) throw validation_error("reciprocity_residual: timestamp mismatch");
    const int n = k.grid.n;
    const double dx = k.grid.dx;
    double mx = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double integral = 0.0;
            if (i > j) {
                for (int m = j; m <= i; ++m) {
                    double w = (m == j || m == i) ? 0.5 : 1.0;
                    integral += w * dx * l.at(i, m) * k.at(m, j);
                }
            }
            mx = std::max(mx, std::abs(l.at(i, j) - k.at(i, j) - integral));
        }
    return mx;
}

double diagonal_violation(const KernelSlice& k, const std::function<double(double)>& diag_data) {
    double mx = 0.0;
    for (int i = 0; i < k.grid.n; ++i)
        mx = std::max(mx, std::abs(k.at(i, i) - diag_data(i * k.grid.dx)));
    return mx;
}

void save_kernel_trajectory(const KernelTrajectory& traj, const std::string& manifest_path,
                            const std::string& blob_path) {
    nlohmann::json j;
    j["format"] = "ptstab-kernel-trajectory";
    j["version"] = 1;
    j["n"] = traj.slices.empty() ? 0 : traj.slices.front().grid.n;
    j["dt"] = traj.time_grid.dt;
    j["T"] = traj.time_grid.T;
    j["margin"] = traj.time_grid.margin;
    j["n_t"] = traj.time_grid.n_t;
    j["kind"] = traj.kind == KernelKind::direct ? "direct" : "inverse";
    j["slices"] = traj.slices.size();
    j["sup_over_time"] = traj.sup_over_time;
    j["blob"] = blob_path;

    std::ofstream mf(manifest_path);
    if (!mf) throw io_error("cannot write " + manifest_path);
    mf << j.dump(2) << "\n";

    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf) throw io_error("cannot write " + blob_path);
    for (const auto& s : traj.slices)
        bf.write(reinterpret_cast<const char*>(s.values.data()),
                 static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    if (!bf) throw io_error("short write to " + blob_path);
}

KernelTrajectory load_kernel_trajectory(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw io_error("cannot read " + manifest_path);
    nlohmann::json j;
    mf >> j;
    if (j.value("format", "") != "ptstab-kernel-trajectory")
        throw io_error("not a kernel trajectory manifest: " + manifest_path);

    KernelTrajectory traj;
    traj.time_grid = TimeGrid::make(j.at("dt"), j.at("T"), j.at("margin"));
    traj.kind = j.at("kind") == "direct" ? KernelKind::direct : KernelKind::inverse;
    traj.sup_over_time = j.value("sup_over_time", 0.0);
    int n = j.at("n");
    std::size_t count = j.at("slices");
    TriGrid grid = TriGrid::make(n);

    std::ifstream bf(j.at("blob").get<std::string>(), std::ios::binary);
    if (!bf) throw io_error("cannot read kernel blob");
    traj.slices.resize(count);
    for (std::size_t m = 0; m < count; ++m) {
        auto& s = traj.slices[m];
        s.grid = grid;
        s.t = traj.time_grid.t(static_cast<int>(m));
        s.values.resize(grid.node_count());
        bf.read(reinterpret_cast<char*>(s.values.data()),
                static_cast<std::streamsize>(s.values.size() * sizeof(double)));
        if (!bf) throw io_error("truncated kernel blob");
    }
    return traj;
}

} // namespace ptstab
