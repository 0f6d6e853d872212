#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ptstab/coeffs.hpp"
#include "ptstab/kernel.hpp"
#include "ptstab/mlp.hpp"
#include "ptstab/transform.hpp"

namespace ptstab {

/// Fixed lattices on which input functions are sampled before entering the
/// branch net. The coefficient is sampled on x_sensors x t_sensors (row-major,
/// x outer); the feedback head additionally samples the state on v_sensors.
struct SensorLayout {
    std::vector<double> x_sensors;
    std::vector<double> t_sensors;
    std::vector<double> v_sensors;

    int lambda_dim() const { return static_cast<int>(x_sensors.size() * t_sensors.size()); }
    static SensorLayout standard(double t_end, int nx = 11, int nt = 9, int nv = 21);
};

/// Per-input affine normalization y = (x - shift) / scale.
struct AffineNorm {
    std::vector<double> shift, scale;
    void apply(std::span<const double> in, std::span<double> out) const;
    void invert(std::span<const double> in, std::span<double> out) const;
};

/// Kernel-target normalization: a carrier-scaled mean field per training time
/// on the native triangular grid, plus a per-time spread. The mean field
/// interpolates linearly in (x, y, t); the spread log-linearly in t.
struct TimeScale {
    std::vector<double> times;
    std::vector<double> sd;         // per-time residual spread
    std::vector<double> mean_field; // times x native nodes, carrier units
    double sd_at(double t) const;
};

enum class OperatorKind { kernel_map, feedback_map };

/// Branch/trunk operator with dot-product readout. The kernel head maps
/// coefficient samples to the kernel field queried at (x, y, t); the feedback
/// head maps (coefficient samples, state samples, t) to the boundary control.
struct DeepOperator {
    OperatorKind kind = OperatorKind::kernel_map;
    Mlp branch, trunk;
    double bias = 0.0;
    int p = 0;
    SensorLayout layout;
    AffineNorm branch_norm;
    AffineNorm trunk_norm;

    // problem constants baked in for target de-normalization
    double T = 8.0, margin = 0.4, theta = 1.0;
    int native_n = 21;            // triangular grid resolution of the training targets
    bool carrier_analytic = true; // reconstruct the blow-up structure of the coefficient family
    TimeScale tscale;             // kernel head
    double target_shift = 0.0, target_scale = 1.0; // feedback head

    std::uint64_t seed = 0;
    double final_train_mse = 0.0;        // optimization units (per-time residual)
    double final_train_mse_global = 0.0; // same residuals over globally z-scored targets
    double final_val_score = 0.0;
    std::vector<double> loss_history;

    double t_end() const { return T - margin; }
};

struct TrainConfig {
    int epochs = 600;
    int batch = 0;          // kernel head: trunk queries per step (0 = 1024);
                            // feedback head: samples per step (0 = full batch)
    double step_size = 2e-3;
    double step_size_min_frac = 0.05; // cosine decay floor
    std::uint64_t seed = 1;
    double split = 0.9;     // train fraction (applied by the dataset loader)
    // adaptive-moment constants
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// One scalar readout: sum_i branch_i(fn) * trunk_i(query) + bias, computed in
/// normalized units (inputs normalized internally, output not de-normalized).
double deeponet_forward(const DeepOperator& op, std::span<const double> fn_samples,
                        std::span<const double> query);

/// Mean-squared-error loss and exact reverse-mode gradients over a generic
/// batch of (function samples, query, target) triples in normalized units.
struct GenericBatch {
    // fn: batch x fn_dim, queries: batch x q_dim, targets: batch (normalized)
    std::vector<double> fn, queries, targets;
    int count = 0;
};

struct OperatorGrads {
    MlpGrads branch, trunk;
    double bias = 0.0;
    static OperatorGrads zeros_like(const DeepOperator& op);
};

double loss_and_gradients(const DeepOperator& op, const GenericBatch& batch, OperatorGrads& grads);

/// Sampling helpers for the sensor lattices.
std::vector<double> lambda_sensor_values(const CoeffSpec& spec, const SensorLayout& layout);
std::vector<double> state_sensor_values(const StateVector& v, const SensorLayout& layout);

/// Carrier scale for kernel targets: amplitude of the constant-coefficient
/// kernel at the spatial mean of gamma, a smooth analytic proxy for the field
/// magnitude that grows with the blow-up gain.
double kernel_carrier_scale(double gamma_mean, double theta);
double carrier_scale_at(const DeepOperator& op, std::span<const double> lambda_samples, double t);

/// Kernel-head prediction on a full triangular grid. Raw operator output; the
/// diagonal condition is not re-imposed.
KernelSlice predict_kernel_slice(const DeepOperator& op, std::span<const double> lambda_samples,
                                 double t, const TriGrid& grid);
GainRow predict_kernel_gain_row(const DeepOperator& op, std::span<const double> lambda_samples,
                                double t, const SpaceGrid& grid);

/// Feedback-head prediction of the boundary control at time t.
double predict_feedback(const DeepOperator& op, std::span<const double> lambda_samples,
                        std::span<const double> v_samples, double t);

struct Dataset; // dataset.hpp

/// Construct and train the kernel-map operator on a kernel_pairs dataset.
DeepOperator train_kernel_operator(const Dataset& ds, const TrainConfig& cfg,
                                   std::vector<int> hidden = {64, 64, 64}, int p = 32);

/// Construct and train the feedback-map operator on a feedback_triples dataset.
DeepOperator train_feedback_operator(const Dataset& ds, const TrainConfig& cfg,
                                     std::vector<int> hidden = {64, 64, 64}, int p = 32);

/// Checkpoint: JSON manifest plus little-endian float64 parameter blob in
/// declared layer order (branch layers, trunk layers, readout bias).
void save_operator(const DeepOperator& op, const std::string& manifest_path,
                   const std::string& blob_path);
DeepOperator load_operator(const std::string& manifest_path);

} // namespace ptstab
