#include "ptstab/mlp.hpp"

#include <cmath>

namespace ptstab {

Mlp Mlp::make(std::vector<int> sizes, Act act, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw validation_error("Mlp: need at least input and output sizes");
    for (int s : sizes)
        if (s < 1) throw validation_error("Mlp: layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(sizes);
    net.activation = act;
    const int L = static_cast<int>(net.sizes.size()) - 1;
    net.weights.resize(L);
    net.biases.resize(L);
    for (int l = 0; l < L; ++l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        net.weights[l].resize(static_cast<std::size_t>(in) * out);
        net.biases[l].assign(out, 0.0);
        double bound = std::sqrt(6.0 / (in + out));
        for (double& w : net.weights[l]) {
            double u = (rng() >> 11) * (1.0 / 9007199254740992.0); // [0,1)
            w = bound * (2.0 * u - 1.0);
        }
    }
    return net;
}

std::size_t Mlp::n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
}

namespace {
inline double act_fn(Mlp::Act a, double z) {
    switch (a) {
    case Mlp::Act::tanh_act: return std::tanh(z);
    case Mlp::Act::relu: return z > 0.0 ? z : 0.0;
    default: return z;
    }
}
inline double act_deriv_from_value(Mlp::Act a, double v) {
    switch (a) {
    case Mlp::Act::tanh_act: return 1.0 - v * v;
    case Mlp::Act::relu: return v > 0.0 ? 1.0 : 0.0;
    default: return 1.0;
    }
}
} // namespace

std::vector<double> Mlp::forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_dim())
        throw validation_error("Mlp::forward: input length mismatch");
    std::vector<double> cur(x.begin(), x.end());
    const int L = n_layers();
    for (int l = 0; l < L; ++l) {
        int in = sizes[l], out = sizes[l + 1];
        std::vector<double> next(out);
        for (int o = 0; o < out; ++o) {
            double z = biases[l][o];
            const double* wrow = &weights[l][static_cast<std::size_t>(o) * in];
            for (int i = 0; i < in; ++i) z += wrow[i] * cur[i];
            next[o] = (l + 1 == L) ? z : act_fn(activation, z);
        }
        cur = std::move(next);
    }
    return cur;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
    MlpGrads g;
    g.weights.resize(net.weights.size());
    g.biases.resize(net.biases.size());
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        g.weights[l].assign(net.weights[l].size(), 0.0);
        g.biases[l].assign(net.biases[l].size(), 0.0);
    }
    return g;
}

void MlpGrads::scale(double s) {
    for (auto& w : weights)
        for (double& v : w) v *= s;
    for (auto& b : biases)
        for (double& v : b) v *= s;
}

void mlp_forward_batch(const Mlp& net, std::span<const double> X, int batch, MlpBatchCache& cache,
                       std::vector<double>& Y) {
    const int L = net.n_layers();
    if (X.size() != static_cast<std::size_t>(batch) * net.in_dim())
        throw validation_error("mlp_forward_batch: input size mismatch");
    cache.acts.assign(L + 1, {});
    cache.acts[0].assign(X.begin(), X.end());
    for (int l = 0; l < L; ++l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        const auto& A = cache.acts[l];
        auto& Z = cache.acts[l + 1];
        Z.assign(static_cast<std::size_t>(batch) * out, 0.0);
        const bool last = (l + 1 == L);
        for (int b = 0; b < batch; ++b) {
            const double* a = &A[static_cast<std::size_t>(b) * in];
            double* z = &Z[static_cast<std::size_t>(b) * out];
            for (int o = 0; o < out; ++o) {
                double acc = net.biases[l][o];
                const double* wrow = &net.weights[l][static_cast<std::size_t>(o) * in];
                for (int i = 0; i < in; ++i) acc += wrow[i] * a[i];
                z[o] = last ? acc : act_fn(net.activation, acc);
            }
        }
    }
    Y = cache.acts[L];
}

void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache, std::span<const double> dY,
                        int batch, MlpGrads& grads, std::vector<double>* dX) {
    const int L = net.n_layers();
    std::vector<double> delta(dY.begin(), dY.end()); // gradient w.r.t. layer output
    for (int l = L - 1; l >= 0; --l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        const auto& A = cache.acts[l];
        const bool last = (l + 1 == L);
        if (!last) {
            const auto& V = cache.acts[l + 1]; // post-activation values
            for (int b = 0; b < batch; ++b) {
                double* d = &delta[static_cast<std::size_t>(b) * out];
                const double* v = &V[static_cast<std::size_t>(b) * out];
                for (int o = 0; o < out; ++o) d[o] *= act_deriv_from_value(net.activation, v[o]);
            }
        }
        for (int b = 0; b < batch; ++b) {
            const double* a = &A[static_cast<std::size_t>(b) * in];
            const double* d = &delta[static_cast<std::size_t>(b) * out];
            for (int o = 0; o < out; ++o) {
                double* gw = &grads.weights[l][static_cast<std::size_t>(o) * in];
                for (int i = 0; i < in; ++i) gw[i] += d[o] * a[i];
                grads.biases[l][o] += d[o];
            }
        }
        if (l > 0 || dX) {
            std::vector<double> dprev(static_cast<std::size_t>(batch) * in, 0.0);
            for (int b = 0; b < batch; ++b) {
                const double* d = &delta[static_cast<std::size_t>(b) * out];
                double* dp = &dprev[static_cast<std::size_t>(b) * in];
                for (int o = 0; o < out; ++o) {
                    const double* wrow = &net.weights[l][static_cast<std::size_t>(o) * in];
                    double dv = d[o];
                    for (int i = 0; i < in; ++i) dp[i] += dv * wrow[i];
                }
            }
            if (l == 0 && dX) {
                *dX = std::move(dprev);
            } else {
                delta = std::move(dprev);
            }
        }
    }
}

} // namespace ptstab
