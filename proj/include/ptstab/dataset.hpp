#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptstab/coeffs.hpp"
#include "ptstab/deeponet.hpp"
#include "ptstab/grid.hpp"

namespace ptstab {

/// On-disk description of a generated corpus: <name>.manifest.json plus two
/// little-endian float64 blobs, one record per sample, row-major.
struct DatasetManifest {
    std::string kind;          // "kernel_pairs" | "feedback_triples"
    int count = 0;             // records actually written
    int input_dim = 0;
    int target_dim = 0;
    double sigma_low = 2.0, sigma_high = 4.0;
    std::uint64_t seed = 0;
    double split_fraction = 0.9;
    int tri_n = 21;
    int n_x = 21;
    double dt = 6.25e-4, T = 8.0, margin = 0.4, theta = 1.0, q = 1.0;
    std::vector<double> train_times;          // kernel_pairs: stored slice times
    std::vector<double> sigmas;               // per record
    std::vector<double> amplitudes;           // feedback_triples: per rollout
    int sensors_x = 11, sensors_t = 9, sensors_v = 21;
    int rollouts = 0, stored_steps = 0;       // feedback_triples
    std::string inputs_file, targets_file;
    std::string inputs_checksum, targets_checksum;
    std::vector<std::string> failures;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<double> inputs;  // count x input_dim
    std::vector<double> targets; // count x target_dim
    std::vector<int> train_indices, val_indices;

    SensorLayout layout() const;
};

struct GenConfig {
    std::string out_dir = ".";
    std::string name = "dataset";
    int count = 200;           // kernel samples, or rollouts for feedback
    int stored_steps = 50;     // feedback: stored (state, control) pairs per rollout
    std::uint64_t seed = 7;
    double sigma_low = 2.0, sigma_high = 4.0;
    int tri_n = 21;
    double dt = 6.25e-4, T = 8.0, margin = 0.4, theta = 1.0, q = 1.0;
    int n_train_times = 17;    // uniform on [0, T-margin]
    int n_tail_refine = 8;     // extra geometrically spaced times near T-margin
    double split_fraction = 0.9;
    int jobs = 1;
};

/// Deterministic uniform draws in [low, high).
std::vector<double> sample_sigma(std::uint64_t seed, int n, double low, double high);

/// Stored slice times for kernel training: uniform lattice plus tail refinement.
std::vector<double> training_times(double t_end, int n_uniform, int n_tail);

DatasetManifest generate_kernel_dataset(const GenConfig& cfg);
DatasetManifest generate_feedback_dataset(const GenConfig& cfg);

Dataset load_dataset(const std::string& manifest_path);

std::string manifest_path_for(const GenConfig& cfg);

} // namespace ptstab
