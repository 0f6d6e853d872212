#pragma once

#include <random>
#include <span>
#include <vector>

#include "ptstab/errors.hpp"

namespace ptstab {

/// Dense multilayer perceptron; hidden activations tanh or relu, linear output.
struct Mlp {
    enum class Act { tanh_act, relu, identity };

    std::vector<int> sizes;
    Act activation = Act::tanh_act;
    std::vector<std::vector<double>> weights; // weights[l]: sizes[l+1] x sizes[l], row-major
    std::vector<std::vector<double>> biases;  // biases[l]: sizes[l+1]

    static Mlp make(std::vector<int> sizes, Act act, std::mt19937_64& rng);

    int n_layers() const { return static_cast<int>(weights.size()); }
    int in_dim() const { return sizes.front(); }
    int out_dim() const { return sizes.back(); }
    std::size_t n_params() const;

    std::vector<double> forward(std::span<const double> x) const;
};

/// Post-activation values per layer for a whole batch; acts[0] is the input.
struct MlpBatchCache {
    std::vector<std::vector<double>> acts;
};

struct MlpGrads {
    std::vector<std::vector<double>> weights, biases;

    static MlpGrads zeros_like(const Mlp& net);
    void scale(double s);
};

/// Batched forward; X is batch x in_dim row-major, Y is batch x out_dim.
void mlp_forward_batch(const Mlp& net, std::span<const double> X, int batch, MlpBatchCache& cache,
                       std::vector<double>& Y);

/// Reverse-mode pass accumulating parameter gradients; dY is batch x out_dim.
/// If dX is non-null it receives the gradient w.r.t. the inputs.
void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache, std::span<const double> dY,
                        int batch, MlpGrads& grads, std::vector<double>* dX);

} // namespace ptstab
