#pragma once

#include <string>

#include "ptstab/coeffs.hpp"
#include "ptstab/deeponet.hpp"
#include "ptstab/plant.hpp"

namespace ptstab {

/// Per-run stability diagnostics against the prescribed-time decay envelope.
struct StabilityReport {
    std::vector<double> times;
    std::vector<double> V;          // Lyapunov values of the transformed state
    std::vector<double> zeta;       // exp(-2 int c)
    std::vector<double> w_norm, v_norm;
    std::vector<double> envelope_w, envelope_v;
    double C_vw = 1.0;
    double eps_star = 0.0;
    bool eps_star_warning = false;
    double eps_hat = 0.0;
    double slack = 1.5;
    double terminal_v = 0.0, initial_v = 0.0;
    bool envelope_pass = false;
    bool blown_up = false;
};

double lyapunov_V(const StateVector& w);

/// zeta(t) = exp(-2 int_0^t c); closed form exp(-4 t/(T-t)) for the prescribed schedule.
double zeta(const GainSchedule& sched, double t);

/// C of the state-norm comparison, realized as (1 + sup_t ||l||_inf)^2.
double estimate_C_vw(const KernelTrajectory& ltraj);

struct EpsilonStar {
    double value = 0.0;
    bool warning = false; // c(t) <= theta somewhere on the grid
};
EpsilonStar epsilon_star(const GainSchedule& sched, double theta, double C, const TimeGrid& tg);

StabilityReport decay_envelope_check(const PlantTrajectory& traj, const KernelTrajectory& ktraj,
                                     const KernelTrajectory& ltraj, const GainSchedule& sched,
                                     double eps_hat, double slack = 1.5, double theta = 1.0);

/// C * sqrt(T) * eps
double practical_residual_bound(double eps_hat, double T, double C);

struct BenchRow {
    double dx = 0.0;
    double analytic_s = 0.0;
    double surrogate_s = 0.0;
    double speedup = 0.0;
};

struct BenchTable {
    std::vector<BenchRow> rows;
    std::string environment;
    int repetitions = 5;
    int slice_count = 128;
};

/// Deployment-workload benchmark at each spatial resolution: the analytic side
/// solves the kernel trajectory on the control time grid (one PDE sweep per
/// step); the surrogate side evaluates the operator once on its native lattice
/// and interpolates the same gain rows and diagnostic fields. Median wall time
/// over repetitions, single thread, monotonic clock.
BenchTable benchmark_speedup(const DeepOperator& op, const CoeffSpec& spec,
                             const GainSchedule& sched, const std::vector<double>& dx_values,
                             int repetitions = 5, int slice_count = 128,
                             double control_dt = 6.25e-4);

void write_bench_csv(const BenchTable& table, const std::string& path,
                     const std::string& config_hash);
void write_stability_json(const StabilityReport& rep, const std::string& path);
void write_stability_csv(const StabilityReport& rep, const std::string& path,
                         const std::string& config_hash);

/// Lift a kernel field from the operator's native grid onto a finer triangular
/// grid (linear interpolation; the benchmark's surrogate path).
std::vector<double> lift_tri_field(const std::vector<double>& native, const TriGrid& from,
                                   const TriGrid& to);

} // namespace ptstab
