#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptstab/coeffs.hpp"
#include "ptstab/kernel.hpp"
#include "ptstab/transform.hpp"

namespace ptstab {

struct DeepOperator;

/// Boundary controller variants. Gain-based controllers (analytic, perturbed,
/// no_kernel) impose U(t_{m+1}) = int k(1,y,t_{m+1}) v(y,t_{m+1}) dy through a
/// coupled boundary row of the implicit solve; no_feedback evaluates the
/// learned map on the current state and imposes the result as Dirichlet data.
struct Controller {
    enum class Type { open_loop_zero, analytic_kernel, no_kernel, no_feedback, perturbed_exact };

    Type type = Type::open_loop_zero;
    const KernelTrajectory* kernels = nullptr; // analytic_kernel, perturbed_exact
    const DeepOperator* op = nullptr;          // no_kernel, no_feedback
    double eps_inj = 0.0;                      // perturbed_exact
    std::uint64_t noise_seed = 0;              // perturbed_exact

    static Controller open_loop();
    static Controller analytic(const KernelTrajectory& ktraj);
    static Controller surrogate_kernel(const DeepOperator& op);
    static Controller surrogate_feedback(const DeepOperator& op);
    static Controller perturbed(const KernelTrajectory& ktraj, double eps_inj, std::uint64_t seed);
};

struct PlantTrajectory {
    std::vector<StateVector> states; // one per stored time, starting at t = 0
    std::vector<double> controls;    // boundary value per stored time
    TimeGrid time_grid;
    bool blown_up = false;

    double initial_l2() const { return states.front().l2(); }
    double terminal_l2() const { return states.back().l2(); }
};

/// One Crank-Nicolson step with diffusion and reaction implicit at the
/// half-step average, Robin at x = 0 (second-order one-sided) and the
/// Dirichlet value U_next imposed exactly at x = 1.
StateVector step_plant(const StateVector& v, const std::vector<double>& lambda_now,
                       const std::vector<double>& lambda_next, double theta, double q,
                       double U_next, double dt);

StateVector default_initial_state(const SpaceGrid& grid, double amplitude = 10.25);

PlantTrajectory simulate(const CoeffSpec& spec, const GainSchedule& sched, const Controller& ctrl,
                         const TimeGrid& tg, const StateVector& v0);

/// Per-time target-system diagnostics: w = (transform of v), boundary residual
/// |w(1,t)| and the interior residual of w_t = theta w_xx - c(t) w.
struct TargetResidualReport {
    std::vector<double> times;
    std::vector<double> boundary_residual;
    std::vector<double> interior_residual;
    double max_boundary = 0.0; // over t > 0; the initial datum need not satisfy w(1)=0
    double max_interior = 0.0;
    double max_state_l2 = 0.0;
};

TargetResidualReport target_residual(const PlantTrajectory& traj, const KernelTrajectory& ktraj,
                                     const GainSchedule& sched, double theta, double q);

/// Long-form CSV "t,x,v" and scalar CSV "t,U,l2norm"; first line carries the
/// configuration hash as a comment.
void write_state_csv(const std::string& path, const PlantTrajectory& traj,
                     const std::string& config_hash, int stride = 1);
void write_scalar_csv(const std::string& path, const PlantTrajectory& traj,
                      const std::string& config_hash, int stride = 1);

} // namespace ptstab
