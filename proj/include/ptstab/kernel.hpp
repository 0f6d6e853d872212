#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ptstab/coeffs.hpp"
#include "ptstab/grid.hpp"

namespace ptstab {

enum class KernelKind { direct, inverse };

/// Kernel field on the triangular grid at one instant.
struct KernelSlice {
    TriGrid grid;
    std::vector<double> values;
    double t = 0.0;

    double at(int i, int j) const { return values[grid.index(i, j)]; }
    double& at(int i, int j) { return values[grid.index(i, j)]; }
    double sup_norm() const;
};

/// Time-ordered kernel slices over a TimeGrid.
struct KernelTrajectory {
    std::vector<KernelSlice> slices;
    TimeGrid time_grid;
    KernelKind kind = KernelKind::direct;
    double sup_over_time = 0.0;

    const KernelSlice& slice_at_step(int m) const { return slices.at(m); }
};

/// True iff the explicit x-diffusion stability bound theta*dt/dx^2 <= 1/2 holds.
bool cfl_check(double theta, double dx, double dt);

/// Characteristic-sweep solve of  theta*(k_xx - k_yy) = R(x,y)*k + f  on the
/// triangle, with diagonal data k(x,x) = D(x) and Robin k_y(x,0) = q k(x,0).
/// The interior relation is the exact central-difference wave stencil, so the
/// returned field satisfies the second-order FD system to roundoff.
std::vector<double> solve_kernel_bvp(const TriGrid& grid, double theta, double q,
                                     const std::function<double(double, double)>& reaction,
                                     const std::vector<double>* source,
                                     const std::function<double(double)>& diag_data);

/// Stationary kernel for a frozen gamma profile given on the matching SpaceGrid.
/// Successive approximation in characteristic order; tol bounds the max-norm
/// change between sweeps.
KernelSlice solve_stationary_kernel(const std::vector<double>& gamma_slice, double theta, double q,
                                    const TriGrid& grid, double tol = 1e-8, int max_iter = 200,
                                    KernelKind kind = KernelKind::direct, double t = 0.0);

/// Advance one slice to t + dt: a frozen-coefficient solve at the new time with
/// the reaction and boundary data refreshed, plus an optional explicit
/// time-derivative source field supplied by the trajectory driver.
KernelSlice step_kernel_imex(const KernelSlice& k, const std::vector<double>& gamma_now,
                             const std::vector<double>& gamma_next, double theta, double q,
                             double dt, const std::vector<double>* dk_dt = nullptr);

/// Full time-varying kernel: quasi-static sweep over an internal scaffold of
/// times, a time-derivative estimate of that family, and one correction solve
/// per requested output time.
KernelTrajectory solve_kernel_trajectory(const CoeffSpec& spec, const GainSchedule& sched,
                                         const TriGrid& grid, const TimeGrid& tg);

KernelTrajectory solve_inverse_kernel_trajectory(const CoeffSpec& spec, const GainSchedule& sched,
                                                 const TriGrid& grid, const TimeGrid& tg);

/// Same solver, arbitrary list of output times (used by dataset generation and
/// the benchmark protocol).
std::vector<KernelSlice> solve_kernel_slices(const CoeffSpec& spec, const GainSchedule& sched,
                                             const TriGrid& grid, double t_end,
                                             const std::vector<double>& out_times,
                                             KernelKind kind = KernelKind::direct);

/// Streaming form: invokes the callback on each output slice in time order
/// without retaining the trajectory.
void for_each_kernel_slice(const CoeffSpec& spec, const GainSchedule& sched, const TriGrid& grid,
                           double t_end, const std::vector<double>& out_times, KernelKind kind,
                           const std::function<void(const KernelSlice&)>& fn);

/// Max-norm defect of the identity l(x,y) - k(x,y) = int_y^x l(x,s) k(s,y) ds.
double reciprocity_residual(const KernelSlice& k, const KernelSlice& l);

/// Max-norm violation of the diagonal condition against the supplied data.
double diagonal_violation(const KernelSlice& k, const std::function<double(double)>& diag_data);

/// Serialization: JSON manifest + little-endian float64 blob, slices
/// concatenated in time order, each slice lower-triangular row-major.
void save_kernel_trajectory(const KernelTrajectory& traj, const std::string& manifest_path,
                            const std::string& blob_path);
KernelTrajectory load_kernel_trajectory(const std::string& manifest_path);

} // namespace ptstab
