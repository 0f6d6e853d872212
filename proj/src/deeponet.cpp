#include "ptstab/deeponet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ptstab/dataset.hpp"

namespace ptstab {

SensorLayout SensorLayout::standard(double t_end, int nx, int nt, int nv) {
    SensorLayout s;
    s.x_sensors.resize(nx);
    for (int i = 0; i < nx; ++i) s.x_sensors[i] = static_cast<double>(i) / (nx - 1);
    s.t_sensors.resize(nt);
    for (int i = 0; i < nt; ++i) s.t_sensors[i] = t_end * i / (nt - 1);
    s.v_sensors.resize(nv);
    for (int i = 0; i < nv; ++i) s.v_sensors[i] = static_cast<double>(i) / (nv - 1);
    return s;
}

void AffineNorm::apply(std::span<const double> in, std::span<double> out) const {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - shift[i]) / scale[i];
}

void AffineNorm::invert(std::span<const double> in, std::span<double> out) const {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scale[i] + shift[i];
}

namespace {

double interp_linear(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    std::size_t lo = hi - 1;
    double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return (1.0 - w) * ys[lo] + w * ys[hi];
}

} // namespace

namespace {

// 4-point Lagrange interpolation on a sorted abscissa with window clamping
double lagrange4(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    const std::size_t n = xs.size();
    if (n < 2) return ys.empty() ? 0.0 : ys.front();
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    if (n < 4) {
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t hi = static_cast<std::size_t>(it - xs.begin());
        std::size_t lo = hi - 1;
        double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
        return (1.0 - w) * ys[lo] + w * ys[hi];
    }
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    std::size_t start = hi >= 2 ? hi - 2 : 0;
    if (start + 4 > n) start = n - 4;
    double acc = 0.0;
    for (std::size_t i = start; i < start + 4; ++i) {
        double li = 1.0;
        for (std::size_t j = start; j < start + 4; ++j)
            if (j != i) li *= (x - xs[j]) / (xs[i] - xs[j]);
        acc += li * ys[i];
    }
    return acc;
}

} // namespace

double TimeScale::sd_at(double t) const {
    std::vector<double> logs(sd.size());
    for (std::size_t i = 0; i < sd.size(); ++i) logs[i] = std::log(std::max(sd[i], 1e-300));
    return std::exp(lagrange4(times, logs, t));
}

double deeponet_forward(const DeepOperator& op, std::span<const double> fn_samples,
                        std::span<const double> query) {
    if (fn_samples.size() != op.branch_norm.shift.size())
        throw validation_error("deeponet_forward: function sample length mismatch");
    if (query.size() != op.trunk_norm.shift.size())
        throw validation_error("deeponet_forward: query length mismatch");
    std::vector<double> fn(fn_samples.size()), qn(query.size());
    op.branch_norm.apply(fn_samples, fn);
    op.trunk_norm.apply(query, qn);
    std::vector<double> b = op.branch.forward(fn);
    std::vector<double> tr = op.trunk.forward(qn);
    double out = op.bias;
    for (int i = 0; i < op.p; ++i) out += b[i] * tr[i];
    return out;
}

OperatorGrads OperatorGrads::zeros_like(const DeepOperator& op) {
    OperatorGrads g;
    g.branch = MlpGrads::zeros_like(op.branch);
    g.trunk = MlpGrads::zeros_like(op.trunk);
    g.bias = 0.0;
    return g;
}

double loss_and_gradients(const DeepOperator& op, const GenericBatch& batch, OperatorGrads& grads) {
    if (batch.count <= 0) throw validation_error("loss_and_gradients: empty batch");
    const int B = batch.count;
    const int fd = op.branch.in_dim(), qd = op.trunk.in_dim(), p = op.p;

    // normalize inputs
    std::vector<double> FN(batch.fn.size()), QN(batch.queries.size());
    for (int b = 0; b < B; ++b) {
        op.branch_norm.apply({&batch.fn[static_cast<std::size_t>(b) * fd], static_cast<std::size_t>(fd)},
                             {&FN[static_cast<std::size_t>(b) * fd], static_cast<std::size_t>(fd)});
        op.trunk_norm.apply({&batch.queries[static_cast<std::size_t>(b) * qd], static_cast<std::size_t>(qd)},
                            {&QN[static_cast<std::size_t>(b) * qd], static_cast<std::size_t>(qd)});
    }
    MlpBatchCache bc, tc;
    std::vector<double> BO, TO;
    mlp_forward_batch(op.branch, FN, B, bc, BO);
    mlp_forward_batch(op.trunk, QN, B, tc, TO);

    double loss = 0.0;
    std::vector<double> dBO(static_cast<std::size_t>(B) * p), dTO(static_cast<std::size_t>(B) * p);
    for (int b = 0; b < B; ++b) {
        const double* bo = &BO[static_cast<std::size_t>(b) * p];
        const double* to = &TO[static_cast<std::size_t>(b) * p];
        double pred = op.bias;
        for (int i = 0; i < p; ++i) pred += bo[i] * to[i];
        double resid = pred - batch.targets[b];
        loss += resid * resid;
        double d = 2.0 * resid / B;
        for (int i = 0; i < p; ++i) {
            dBO[static_cast<std::size_t>(b) * p + i] = d * to[i];
            dTO[static_cast<std::size_t>(b) * p + i] = d * bo[i];
        }
        grads.bias += d;
    }
    loss /= B;
    mlp_backward_batch(op.branch, bc, dBO, B, grads.branch, nullptr);
    mlp_backward_batch(op.trunk, tc, dTO, B, grads.trunk, nullptr);
    return loss;
}

std::vector<double> lambda_sensor_values(const CoeffSpec& spec, const SensorLayout& layout) {
    std::vector<double> out;
    out.reserve(layout.x_sensors.size() * layout.t_sensors.size());
    for (double x : layout.x_sensors)
        for (double t : layout.t_sensors) out.push_back(eval_lambda(spec, x, t));
    return out;
}

std::vector<double> state_sensor_values(const StateVector& v, const SensorLayout& layout) {
    std::vector<double> out;
    out.reserve(layout.v_sensors.size());
    const int n = v.grid.n_x;
    for (double x : layout.v_sensors) {
        int i = std::clamp(static_cast<int>(std::floor(x / v.grid.dx)), 0, n - 2);
        double w = std::clamp((x - v.grid.x(i)) / v.grid.dx, 0.0, 1.0);
        out.push_back((1.0 - w) * v.values[i] + w * v.values[i + 1]);
    }
    return out;
}

double kernel_carrier_scale(double gamma_mean, double theta) {
    double g = std::max(gamma_mean, 0.0) / theta;
    if (g <= 0.0) return 1.0;
    double mx = 0.0;
    for (int i = 1; i <= 64; ++i) {
        double y = static_cast<double>(i) / 64.0;
        double z = std::sqrt(g * std::max(0.0, 1.0 - y * y));
        double i1_over_z = (z < 1e-8) ? 0.5 : std::cyl_bessel_i(1.0, z) / z;
        mx = std::max(mx, g * y * i1_over_z);
    }
    return std::max(1.0, mx);
}

double carrier_scale_at(const DeepOperator& op, std::span<const double> lambda_samples, double t) {
    const auto& lay = op.layout;
    const int nx = static_cast<int>(lay.x_sensors.size());
    const int nt = static_cast<int>(lay.t_sensors.size());
    // spatial mean of lambda(., t) reconstructed from the sensor lattice
    std::vector<double> prof(nx);
    if (op.carrier_analytic) {
        // the family's time dependence is an additive blow-up term shared by all x
        double t0 = lay.t_sensors.front();
        double blow0 = op.T / ((op.T - t0) * (op.T - t0));
        double blow = op.T / ((op.T - t) * (op.T - t));
        for (int i = 0; i < nx; ++i)
            prof[i] = lambda_samples[static_cast<std::size_t>(i) * nt] - blow0 + blow;
    } else {
        for (int i = 0; i < nx; ++i) {
            std::vector<double> row(nt);
            for (int j = 0; j < nt; ++j) row[j] = lambda_samples[static_cast<std::size_t>(i) * nt + j];
            prof[i] = interp_linear(lay.t_sensors, row, t);
        }
    }
    double mean = trapezoid(prof, lay.x_sensors[1] - lay.x_sensors[0]);
    double c = 2.0 * op.T / ((op.T - t) * (op.T - t));
    return kernel_carrier_scale(mean + c, op.theta);
}

namespace {

void check_time_domain(const DeepOperator& op, double t) {
    if (t < -1e-9 || t > op.t_end() + 1e-9)
        throw validation_error("predict: t outside the trained range [0, T-margin]");
}

// carrier-normalized mean field at time t on the native grid: 4-point Lagrange
// combination of the stored per-training-time fields
std::vector<double> blended_mean_field(const DeepOperator& op, double t) {
    const auto& ts = op.tscale;
    TriGrid native = TriGrid::make(op.native_n);
    const std::size_t nn = native.node_count();
    std::vector<double> out(nn, 0.0);
    if (ts.mean_field.empty()) return out;
    const auto& times = ts.times;
    const std::size_t K = times.size();
    double tc = std::clamp(t, times.front(), times.back());
    std::size_t hi = 0;
    while (hi + 1 < K && times[hi] < tc) ++hi;
    std::size_t start, count;
    if (K >= 4) {
        start = hi >= 2 ? hi - 2 : 0;
        if (start + 4 > K) start = K - 4;
        count = 4;
    } else {
        start = hi > 0 ? hi - 1 : 0;
        count = std::min<std::size_t>(2, K - start);
    }
    for (std::size_t i = start; i < start + count; ++i) {
        double li = 1.0;
        for (std::size_t j = start; j < start + count; ++j)
            if (j != i) li *= (tc - times[j]) / (times[i] - times[j]);
        const double* fld = &ts.mean_field[i * nn];
        for (std::size_t z = 0; z < nn; ++z) out[z] += li * fld[z];
    }
    return out;
}

} // namespace

KernelSlice predict_kernel_slice(const DeepOperator& op, std::span<const double> lambda_samples,
                                 double t, const TriGrid& grid) {
    if (op.kind != OperatorKind::kernel_map)
        throw validation_error("predict_kernel_slice: not a kernel operator");
    check_time_domain(op, t);
    double carrier = carrier_scale_at(op, lambda_samples, t);
    double sd = op.tscale.sd_at(t);
    std::vector<double> mu = blended_mean_field(op, t);
    TriGrid native = TriGrid::make(op.native_n);

    std::vector<double> fn(lambda_samples.size());
    op.branch_norm.apply(lambda_samples, fn);
    std::vector<double> bout = op.branch.forward(fn);

    KernelSlice s;
    s.grid = grid;
    s.t = t;
    s.values.resize(grid.node_count());
    double tn = t / op.t_end();
    std::vector<double> query(3), qn(3);
    for (int i = 0; i < grid.n; ++i)
        for (int j = 0; j <= i; ++j) {
            query[0] = grid.x(i);
            query[1] = grid.y(j);
            query[2] = tn;
            op.trunk_norm.apply(query, qn);
            std::vector<double> tout = op.trunk.forward(qn);
            double raw = op.bias;
            for (int k = 0; k < op.p; ++k) raw += bout[k] * tout[k];
            double mean = tri_interp(mu, native, grid.x(i), grid.y(j));
            s.values[grid.index(i, j)] = (raw * sd + mean) * carrier;
        }
    return s;
}

GainRow predict_kernel_gain_row(const DeepOperator& op, std::span<const double> lambda_samples,
                                double t, const SpaceGrid& grid) {
    if (op.kind != OperatorKind::kernel_map)
        throw validation_error("predict_kernel_gain_row: not a kernel operator");
    check_time_domain(op, t);
    double carrier = carrier_scale_at(op, lambda_samples, t);
    double sd = op.tscale.sd_at(t);
    std::vector<double> mu = blended_mean_field(op, t);
    TriGrid native = TriGrid::make(op.native_n);

    std::vector<double> fn(lambda_samples.size());
    op.branch_norm.apply(lambda_samples, fn);
    std::vector<double> bout = op.branch.forward(fn);

    GainRow g;
    g.grid = grid;
    g.t = t;
    g.values.resize(grid.n_x);
    double tn = t / op.t_end();
    std::vector<double> query(3), qn(3);
    for (int j = 0; j < grid.n_x; ++j) {
        query[0] = 1.0;
        query[1] = grid.x(j);
        query[2] = tn;
        op.trunk_norm.apply(query, qn);
        std::vector<double> tout = op.trunk.forward(qn);
        double raw = op.bias;
        for (int k = 0; k < op.p; ++k) raw += bout[k] * tout[k];
        double mean = tri_interp(mu, native, 1.0, grid.x(j));
        g.values[j] = (raw * sd + mean) * carrier;
    }
    return g;
}

double predict_feedback(const DeepOperator& op, std::span<const double> lambda_samples,
                        std::span<const double> v_samples, double t) {
    if (op.kind != OperatorKind::feedback_map)
        throw validation_error("predict_feedback: not a feedback operator");
    if (v_samples.size() != op.layout.v_sensors.size())
        throw validation_error("predict_feedback: state sample length mismatch");
    // the true feedback map is linear in the state, so the net sees the state
    // direction and the output is rescaled by the state norm and the carrier
    double dx = op.layout.v_sensors[1] - op.layout.v_sensors[0];
    double vnorm = l2_norm(v_samples, dx);
    if (!(vnorm > 1e-300)) return 0.0;
    std::vector<double> fn;
    fn.reserve(lambda_samples.size() + v_samples.size() + 1);
    fn.insert(fn.end(), lambda_samples.begin(), lambda_samples.end());
    for (double v : v_samples) fn.push_back(v / vnorm);
    fn.push_back(t);
    std::vector<double> query{t};
    double raw = deeponet_forward(op, fn, query);
    double carrier = carrier_scale_at(op, lambda_samples, t);
    return (raw * op.target_scale + op.target_shift) * vnorm * carrier;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct Adam {
    double beta1, beta2, eps;
    long step = 0;
    std::vector<double> m, v;

    explicit Adam(std::size_t n, const TrainConfig& cfg)
        : beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.eps), m(n, 0.0), v(n, 0.0) {}

    void update(std::span<double> params, std::span<const double> grads, double lr) {
        ++step;
        double bc1 = 1.0 - std::pow(beta1, step);
        double bc2 = 1.0 - std::pow(beta2, step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
            params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

// flatten operator parameters/gradients into one contiguous view for Adam
struct ParamView {
    std::vector<double*> blocks;
    std::vector<std::size_t> sizes;
    std::size_t total = 0;

    static ParamView of(DeepOperator& op) {
        ParamView pv;
        auto add = [&](std::vector<double>& v) {
            pv.blocks.push_back(v.data());
            pv.sizes.push_back(v.size());
            pv.total += v.size();
        };
        for (auto& w : op.branch.weights) add(w);
        for (auto& b : op.branch.biases) add(b);
        for (auto& w : op.trunk.weights) add(w);
        for (auto& b : op.trunk.biases) add(b);
        pv.blocks.push_back(&op.bias);
        pv.sizes.push_back(1);
        pv.total += 1;
        return pv;
    }

    void gather(std::vector<double>& out) const {
        out.resize(total);
        std::size_t o = 0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            std::copy(blocks[b], blocks[b] + sizes[b], out.begin() + o);
            o += sizes[b];
        }
    }
    void scatter(const std::vector<double>& in) {
        std::size_t o = 0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            std::copy(in.begin() + o, in.begin() + o + sizes[b], blocks[b]);
            o += sizes[b];
        }
    }
};

std::vector<double> flatten_grads(const DeepOperator& op, const OperatorGrads& g) {
    std::vector<double> out;
    auto add = [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
    for (auto& w : g.branch.weights) add(w);
    for (auto& b : g.branch.biases) add(b);
    for (auto& w : g.trunk.weights) add(w);
    for (auto& b : g.trunk.biases) add(b);
    out.push_back(g.bias);
    (void)op;
    return out;
}

double cosine_lr(const TrainConfig& cfg, int epoch) {
    double frac = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    double lo = cfg.step_size * cfg.step_size_min_frac;
    return lo + 0.5 * (cfg.step_size - lo) * (1.0 + std::cos(M_PI * frac));
}

AffineNorm zscore_columns(const std::vector<double>& rows, int count, int dim,
                          const std::vector<int>& subset) {
    AffineNorm n;
    n.shift.assign(dim, 0.0);
    n.scale.assign(dim, 1.0);
    if (subset.empty()) return n;
    for (int d = 0; d < dim; ++d) {
        double mean = 0.0;
        for (int r : subset) mean += rows[static_cast<std::size_t>(r) * dim + d];
        mean /= subset.size();
        double var = 0.0;
        for (int r : subset) {
            double diff = rows[static_cast<std::size_t>(r) * dim + d] - mean;
            var += diff * diff;
        }
        var /= subset.size();
        n.shift[d] = mean;
        n.scale[d] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    (void)count;
    return n;
}

void check_history(const std::vector<double>& history) {
    for (std::size_t e = 0; e < history.size(); ++e)
        if (!std::isfinite(history[e]))
            throw numeric_error("train: loss diverged (NaN) at epoch " + std::to_string(e + 1));
}

} // namespace

DeepOperator train_kernel_operator(const Dataset& ds, const TrainConfig& cfg,
                                   std::vector<int> hidden, int p) {
    if (ds.manifest.kind != "kernel_pairs")
        throw validation_error("train_kernel_operator: dataset kind mismatch");
    if (ds.train_indices.empty()) throw validation_error("train_kernel_operator: empty dataset");

    const auto& mf = ds.manifest;
    TriGrid grid = TriGrid::make(mf.tri_n);
    const int n_nodes = static_cast<int>(grid.node_count());
    const int n_times = static_cast<int>(mf.train_times.size());
    const int fd = mf.input_dim;
    const double t_end = mf.T - mf.margin;

    DeepOperator op;
    op.kind = OperatorKind::kernel_map;
    op.p = p;
    op.T = mf.T;
    op.margin = mf.margin;
    op.theta = mf.theta;
    op.native_n = mf.tri_n;
    op.seed = cfg.seed;
    op.layout = SensorLayout::standard(t_end, mf.sensors_x, mf.sensors_t, mf.sensors_v);

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> bsizes{fd};
    bsizes.insert(bsizes.end(), hidden.begin(), hidden.end());
    bsizes.push_back(p);
    std::vector<int> tsizes{3};
    tsizes.insert(tsizes.end(), hidden.begin(), hidden.end());
    tsizes.push_back(p);
    op.branch = Mlp::make(bsizes, Mlp::Act::tanh_act, rng);
    op.trunk = Mlp::make(tsizes, Mlp::Act::tanh_act, rng);
    op.bias = 0.0;

    op.branch_norm = zscore_columns(ds.inputs, mf.count, fd, ds.train_indices);
    op.trunk_norm.shift = {0.0, 0.0, 0.0};
    op.trunk_norm.scale = {1.0, 1.0, 1.0};

    // carrier scale per (sample, time); per-time affine of the carried residual
    const int n_train = static_cast<int>(ds.train_indices.size());
    std::vector<double> carriers(static_cast<std::size_t>(mf.count) * n_times);
    for (int r = 0; r < mf.count; ++r)
        for (int k = 0; k < n_times; ++k)
            carriers[static_cast<std::size_t>(r) * n_times + k] = carrier_scale_at(
                op, {&ds.inputs[static_cast<std::size_t>(r) * fd], static_cast<std::size_t>(fd)},
                mf.train_times[k]);

    // normalization: per (time, node) mean field over the training split in
    // carrier units, then one spread value per time for the residual
    op.tscale.times = mf.train_times;
    op.tscale.sd.assign(n_times, 1.0);
    op.tscale.mean_field.assign(static_cast<std::size_t>(n_times) * n_nodes, 0.0);
    for (int k = 0; k < n_times; ++k) {
        double* mfld = &op.tscale.mean_field[static_cast<std::size_t>(k) * n_nodes];
        for (int r : ds.train_indices) {
            double carrier = carriers[static_cast<std::size_t>(r) * n_times + k];
            const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim +
                                            static_cast<std::size_t>(k) * n_nodes];
            for (int m = 0; m < n_nodes; ++m) mfld[m] += tgt[m] / carrier;
        }
        for (int m = 0; m < n_nodes; ++m) mfld[m] /= n_train;
        double var = 0.0;
        for (int r : ds.train_indices) {
            double carrier = carriers[static_cast<std::size_t>(r) * n_times + k];
            const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim +
                                            static_cast<std::size_t>(k) * n_nodes];
            for (int m = 0; m < n_nodes; ++m) {
                double d = tgt[m] / carrier - mfld[m];
                var += d * d;
            }
        }
        var /= static_cast<double>(n_train) * n_nodes;
        op.tscale.sd[k] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }

    // normalized targets Ytr[r][k][m] and normalized inputs for train samples
    std::vector<double> Ytr(static_cast<std::size_t>(n_train) * n_times * n_nodes);
    std::vector<double> FN(static_cast<std::size_t>(n_train) * fd);
    for (int a = 0; a < n_train; ++a) {
        int r = ds.train_indices[a];
        op.branch_norm.apply(
            {&ds.inputs[static_cast<std::size_t>(r) * fd], static_cast<std::size_t>(fd)},
            {&FN[static_cast<std::size_t>(a) * fd], static_cast<std::size_t>(fd)});
        for (int k = 0; k < n_times; ++k) {
            double carrier = carriers[static_cast<std::size_t>(r) * n_times + k];
            const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim +
                                            static_cast<std::size_t>(k) * n_nodes];
            const double* mfld = &op.tscale.mean_field[static_cast<std::size_t>(k) * n_nodes];
            double* y = &Ytr[(static_cast<std::size_t>(a) * n_times + k) * n_nodes];
            for (int m = 0; m < n_nodes; ++m)
                y[m] = (tgt[m] / carrier - mfld[m]) / op.tscale.sd[k];
        }
    }

    // shared trunk queries: (x, y, t_norm) for every (time, node)
    const int Q = n_times * n_nodes;
    std::vector<double> QN(static_cast<std::size_t>(Q) * 3);
    {
        std::size_t o = 0;
        for (int k = 0; k < n_times; ++k) {
            double tn = mf.train_times[k] / t_end;
            for (int i = 0; i < grid.n; ++i)
                for (int j = 0; j <= i; ++j) {
                    QN[o++] = grid.x(i);
                    QN[o++] = grid.y(j);
                    QN[o++] = tn;
                }
        }
    }

    // minibatch over trunk queries: each step sees every training sample but
    // only a block of collocation queries, so an epoch makes many cheap
    // adaptive-moment steps while still visiting every target once
    Adam adam(ParamView::of(op).total, cfg);
    ParamView pv = ParamView::of(op);
    const int qbatch = cfg.batch > 0 ? std::min(cfg.batch, Q) : std::min(1024, Q);
    std::vector<int> qorder(Q);
    std::iota(qorder.begin(), qorder.end(), 0);

    op.loss_history.clear();
    op.loss_history.reserve(cfg.epochs);

    MlpBatchCache bcache, tcache;
    std::vector<double> BO, TO;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cosine_lr(cfg, epoch);
        for (int i = Q - 1; i > 0; --i) {
            int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
            std::swap(qorder[i], qorder[j]);
        }
        double epoch_loss = 0.0;
        long epoch_points = 0;
        for (int start = 0; start < Q; start += qbatch) {
            int qb = std::min(qbatch, Q - start);
            std::vector<double> qn(static_cast<std::size_t>(qb) * 3);
            for (int b = 0; b < qb; ++b)
                std::copy_n(&QN[static_cast<std::size_t>(qorder[start + b]) * 3], 3,
                            &qn[static_cast<std::size_t>(b) * 3]);
            mlp_forward_batch(op.branch, FN, n_train, bcache, BO);
            mlp_forward_batch(op.trunk, qn, qb, tcache, TO);

            const double denom = static_cast<double>(n_train) * qb;
            double loss = 0.0;
            std::vector<double> dBO(static_cast<std::size_t>(n_train) * p, 0.0);
            std::vector<double> dTO(static_cast<std::size_t>(qb) * p, 0.0);
            double dbias = 0.0;
            for (int a = 0; a < n_train; ++a) {
                const double* bo = &BO[static_cast<std::size_t>(a) * p];
                const double* y = &Ytr[static_cast<std::size_t>(a) * Q];
                double* dbo = &dBO[static_cast<std::size_t>(a) * p];
                for (int b = 0; b < qb; ++b) {
                    const double* to = &TO[static_cast<std::size_t>(b) * p];
                    double pred = op.bias;
                    for (int k = 0; k < p; ++k) pred += bo[k] * to[k];
                    double resid = pred - y[qorder[start + b]];
                    loss += resid * resid;
                    double d = 2.0 * resid / denom;
                    double* dto = &dTO[static_cast<std::size_t>(b) * p];
                    for (int k = 0; k < p; ++k) {
                        dbo[k] += d * to[k];
                        dto[k] += d * bo[k];
                    }
                    dbias += d;
                }
            }
            loss /= denom;
            OperatorGrads grads = OperatorGrads::zeros_like(op);
            grads.bias = dbias;
            mlp_backward_batch(op.branch, bcache, dBO, n_train, grads.branch, nullptr);
            mlp_backward_batch(op.trunk, tcache, dTO, qb, grads.trunk, nullptr);

            std::vector<double> flat_p, flat_g = flatten_grads(op, grads);
            pv.gather(flat_p);
            adam.update(flat_p, flat_g, lr);
            pv.scatter(flat_p);

            epoch_loss += loss * denom;
            epoch_points += static_cast<long>(denom);
        }
        op.loss_history.push_back(epoch_loss / epoch_points);
    }
    check_history(op.loss_history);
    op.final_train_mse = op.loss_history.empty() ? 0.0 : op.loss_history.back();

    // the same training residuals measured against globally z-scored targets
    // (one mean/variance over every training target value)
    {
        double gmean = 0.0, gvar = 0.0;
        std::size_t count = 0;
        for (int r : ds.train_indices) {
            const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim];
            for (int z = 0; z < mf.target_dim; ++z) gmean += tgt[z];
            count += mf.target_dim;
        }
        gmean /= count;
        for (int r : ds.train_indices) {
            const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim];
            for (int z = 0; z < mf.target_dim; ++z) gvar += (tgt[z] - gmean) * (tgt[z] - gmean);
        }
        gvar /= count;

        MlpBatchCache bc2, tc2;
        std::vector<double> BOF, TOF;
        mlp_forward_batch(op.branch, FN, n_train, bc2, BOF);
        mlp_forward_batch(op.trunk, QN, Q, tc2, TOF);
        double mse_phys = 0.0;
        for (int a = 0; a < n_train; ++a) {
            int r = ds.train_indices[a];
            const double* bo = &BOF[static_cast<std::size_t>(a) * p];
            const double* y = &Ytr[static_cast<std::size_t>(a) * Q];
            for (int q = 0; q < Q; ++q) {
                const double* to = &TOF[static_cast<std::size_t>(q) * p];
                double pred = op.bias;
                for (int k = 0; k < p; ++k) pred += bo[k] * to[k];
                int kt = q / n_nodes;
                double err = (pred - y[q]) * op.tscale.sd[kt] *
                             carriers[static_cast<std::size_t>(r) * n_times + kt];
                mse_phys += err * err;
            }
        }
        mse_phys /= static_cast<double>(n_train) * Q;
        op.final_train_mse_global = gvar > 0 ? mse_phys / gvar : mse_phys;
    }

    // validation: mean relative L2 field error over held-out samples and times
    if (!ds.val_indices.empty()) {
        double acc = 0.0;
        int cnt = 0;
        for (int r : ds.val_indices) {
            std::span<const double> lam{&ds.inputs[static_cast<std::size_t>(r) * fd],
                                        static_cast<std::size_t>(fd)};
            for (int k = 0; k < n_times; ++k) {
                KernelSlice pred = predict_kernel_slice(op, lam, mf.train_times[k], grid);
                const double* tgt = &ds.targets[static_cast<std::size_t>(r) * mf.target_dim +
                                                static_cast<std::size_t>(k) * n_nodes];
                double num = 0.0, den = 0.0;
                for (int m = 0; m < n_nodes; ++m) {
                    double d = pred.values[m] - tgt[m];
                    num += d * d;
                    den += tgt[m] * tgt[m];
                }
                acc += std::sqrt(num / std::max(den, 1e-30));
                ++cnt;
            }
        }
        op.final_val_score = acc / cnt;
    }
    return op;
}

DeepOperator train_feedback_operator(const Dataset& ds, const TrainConfig& cfg,
                                     std::vector<int> hidden, int p) {
    if (ds.manifest.kind != "feedback_triples")
        throw validation_error("train_feedback_operator: dataset kind mismatch");
    if (ds.train_indices.empty()) throw validation_error("train_feedback_operator: empty dataset");

    const auto& mf = ds.manifest;
    const int fd = mf.input_dim; // lambda sensors + v sensors + t
    const double t_end = mf.T - mf.margin;

    DeepOperator op;
    op.kind = OperatorKind::feedback_map;
    op.p = p;
    op.T = mf.T;
    op.margin = mf.margin;
    op.theta = mf.theta;
    op.seed = cfg.seed;
    op.layout = SensorLayout::standard(t_end, mf.sensors_x, mf.sensors_t, mf.sensors_v);

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> bsizes{fd};
    bsizes.insert(bsizes.end(), hidden.begin(), hidden.end());
    bsizes.push_back(p);
    std::vector<int> tsizes{1};
    tsizes.insert(tsizes.end(), hidden.begin(), hidden.end());
    tsizes.push_back(p);
    op.branch = Mlp::make(bsizes, Mlp::Act::tanh_act, rng);
    op.trunk = Mlp::make(tsizes, Mlp::Act::tanh_act, rng);
    op.trunk_norm.shift = {0.0};
    op.trunk_norm.scale = {t_end};

    // scale-normalized records: the map is linear in the state, so inputs carry
    // the state direction and targets U/(||v|| * carrier(t))
    const int lam_dim = op.layout.lambda_dim();
    const int nv = static_cast<int>(op.layout.v_sensors.size());
    const double vdx = op.layout.v_sensors[1] - op.layout.v_sensors[0];
    const int n_train = static_cast<int>(ds.train_indices.size());

    auto normalized_record = [&](int r, double* fn_out, double& target_out) {
        const double* in = &ds.inputs[static_cast<std::size_t>(r) * fd];
        double t = in[fd - 1];
        double vnorm = l2_norm({in + lam_dim, static_cast<std::size_t>(nv)}, vdx);
        double carrier = carrier_scale_at(op, {in, static_cast<std::size_t>(lam_dim)}, t);
        std::copy_n(in, lam_dim, fn_out);
        for (int i = 0; i < nv; ++i)
            fn_out[lam_dim + i] = vnorm > 1e-300 ? in[lam_dim + i] / vnorm : 0.0;
        fn_out[fd - 1] = t;
        target_out = vnorm > 1e-300 ? ds.targets[r] / (vnorm * carrier) : 0.0;
    };

    std::vector<double> raw_fn(static_cast<std::size_t>(ds.manifest.count) * fd);
    std::vector<double> raw_tgt(ds.manifest.count);
    for (int r = 0; r < ds.manifest.count; ++r)
        normalized_record(r, &raw_fn[static_cast<std::size_t>(r) * fd], raw_tgt[r]);

    op.branch_norm = zscore_columns(raw_fn, ds.manifest.count, fd, ds.train_indices);

    double mean = 0.0, var = 0.0;
    for (int r : ds.train_indices) mean += raw_tgt[r];
    mean /= ds.train_indices.size();
    for (int r : ds.train_indices) {
        double d = raw_tgt[r] - mean;
        var += d * d;
    }
    var /= ds.train_indices.size();
    op.target_shift = mean;
    op.target_scale = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;

    GenericBatch all;
    all.count = n_train;
    all.fn.resize(static_cast<std::size_t>(n_train) * fd);
    all.queries.resize(n_train);
    all.targets.resize(n_train);
    for (int a = 0; a < n_train; ++a) {
        int r = ds.train_indices[a];
        std::copy_n(&raw_fn[static_cast<std::size_t>(r) * fd], fd,
                    &all.fn[static_cast<std::size_t>(a) * fd]);
        all.queries[a] = raw_fn[static_cast<std::size_t>(r) * fd + fd - 1];
        all.targets[a] = (raw_tgt[r] - op.target_shift) / op.target_scale;
    }

    Adam adam(ParamView::of(op).total, cfg);
    ParamView pv = ParamView::of(op);
    const int batch = cfg.batch > 0 ? std::min(cfg.batch, n_train) : n_train;
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    op.loss_history.clear();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cosine_lr(cfg, epoch);
        if (batch < n_train) {
            for (int i = n_train - 1; i > 0; --i) {
                int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
                std::swap(order[i], order[j]);
            }
        }
        double epoch_loss = 0.0;
        long count = 0;
        for (int start = 0; start < n_train; start += batch) {
            int bs = std::min(batch, n_train - start);
            GenericBatch gb;
            gb.count = bs;
            gb.fn.resize(static_cast<std::size_t>(bs) * fd);
            gb.queries.resize(bs);
            gb.targets.resize(bs);
            for (int b = 0; b < bs; ++b) {
                int a = order[start + b];
                std::copy_n(&all.fn[static_cast<std::size_t>(a) * fd], fd,
                            &gb.fn[static_cast<std::size_t>(b) * fd]);
                gb.queries[b] = all.queries[a];
                gb.targets[b] = all.targets[a];
            }
            OperatorGrads grads = OperatorGrads::zeros_like(op);
            double loss = loss_and_gradients(op, gb, grads);
            std::vector<double> flat_p, flat_g = flatten_grads(op, grads);
            pv.gather(flat_p);
            adam.update(flat_p, flat_g, lr);
            pv.scatter(flat_p);
            epoch_loss += loss * bs;
            count += bs;
        }
        op.loss_history.push_back(epoch_loss / count);
    }
    check_history(op.loss_history);
    op.final_train_mse = op.loss_history.empty() ? 0.0 : op.loss_history.back();

    if (!ds.val_indices.empty()) {
        double acc = 0.0;
        for (int r : ds.val_indices) {
            const double* in = &ds.inputs[static_cast<std::size_t>(r) * fd];
            std::span<const double> lam{in, static_cast<std::size_t>(lam_dim)};
            std::span<const double> vs{in + lam_dim, static_cast<std::size_t>(nv)};
            double pred = predict_feedback(op, lam, vs, in[fd - 1]);
            double d = pred - ds.targets[r];
            acc = std::max(acc, std::abs(d));
        }
        op.final_val_score = acc; // max control discrepancy on held-out pairs
    }
    return op;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {
void dump_mlp(nlohmann::json& j, const Mlp& net, const char* name) {
    j[name] = {{"sizes", net.sizes},
               {"activation", net.activation == Mlp::Act::tanh_act  ? "tanh"
                              : net.activation == Mlp::Act::relu    ? "relu"
                                                                    : "identity"}};
}
Mlp read_mlp(const nlohmann::json& j, const char* name) {
    Mlp net;
    net.sizes = j.at(name).at("sizes").get<std::vector<int>>();
    std::string act = j.at(name).at("activation");
    net.activation = act == "tanh" ? Mlp::Act::tanh_act
                     : act == "relu" ? Mlp::Act::relu
                                     : Mlp::Act::identity;
    const int L = static_cast<int>(net.sizes.size()) - 1;
    net.weights.resize(L);
    net.biases.resize(L);
    for (int l = 0; l < L; ++l) {
        net.weights[l].resize(static_cast<std::size_t>(net.sizes[l]) * net.sizes[l + 1]);
        net.biases[l].resize(net.sizes[l + 1]);
    }
    return net;
}
} // namespace

void save_operator(const DeepOperator& op, const std::string& manifest_path,
                   const std::string& blob_path) {
    nlohmann::json j;
    j["format"] = "ptstab-operator";
    j["version"] = 1;
    j["kind"] = op.kind == OperatorKind::kernel_map ? "kernel_map" : "feedback_map";
    j["p"] = op.p;
    dump_mlp(j, op.branch, "branch");
    dump_mlp(j, op.trunk, "trunk");
    j["layout"] = {{"x_sensors", op.layout.x_sensors},
                   {"t_sensors", op.layout.t_sensors},
                   {"v_sensors", op.layout.v_sensors}};
    j["branch_norm"] = {{"shift", op.branch_norm.shift}, {"scale", op.branch_norm.scale}};
    j["trunk_norm"] = {{"shift", op.trunk_norm.shift}, {"scale", op.trunk_norm.scale}};
    j["T"] = op.T;
    j["margin"] = op.margin;
    j["theta"] = op.theta;
    j["native_n"] = op.native_n;
    j["carrier_analytic"] = op.carrier_analytic;
    j["tscale"] = {{"times", op.tscale.times}, {"sd", op.tscale.sd}};
    j["mean_field_count"] = op.tscale.mean_field.size();
    j["target_shift"] = op.target_shift;
    j["target_scale"] = op.target_scale;
    j["seed"] = op.seed;
    j["final_train_mse"] = op.final_train_mse;
    j["final_train_mse_global"] = op.final_train_mse_global;
    j["final_val_score"] = op.final_val_score;
    j["loss_history"] = op.loss_history;
    j["blob"] = blob_path;
    j["blob_order"] = "branch weights+biases per layer, trunk weights+biases per layer, bias, mean field";

    std::ofstream mf(manifest_path);
    if (!mf) throw io_error("cannot write " + manifest_path);
    mf << j.dump(2) << "\n";

    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf) throw io_error("cannot write " + blob_path);
    auto wr = [&](const std::vector<double>& v) {
        bf.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    for (std::size_t l = 0; l < op.branch.weights.size(); ++l) {
        wr(op.branch.weights[l]);
        wr(op.branch.biases[l]);
    }
    for (std::size_t l = 0; l < op.trunk.weights.size(); ++l) {
        wr(op.trunk.weights[l]);
        wr(op.trunk.biases[l]);
    }
    bf.write(reinterpret_cast<const char*>(&op.bias), sizeof(double));
    if (!op.tscale.mean_field.empty()) wr(op.tscale.mean_field);
    if (!bf) throw io_error("short write to " + blob_path);
}

DeepOperator load_operator(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw io_error("cannot read " + manifest_path);
    nlohmann::json j;
    mf >> j;
    if (j.value("format", "") != "ptstab-operator")
        throw io_error("not an operator manifest: " + manifest_path);

    DeepOperator op;
    op.kind = j.at("kind") == "kernel_map" ? OperatorKind::kernel_map : OperatorKind::feedback_map;
    op.p = j.at("p");
    op.branch = read_mlp(j, "branch");
    op.trunk = read_mlp(j, "trunk");
    op.layout.x_sensors = j.at("layout").at("x_sensors").get<std::vector<double>>();
    op.layout.t_sensors = j.at("layout").at("t_sensors").get<std::vector<double>>();
    op.layout.v_sensors = j.at("layout").at("v_sensors").get<std::vector<double>>();
    op.branch_norm.shift = j.at("branch_norm").at("shift").get<std::vector<double>>();
    op.branch_norm.scale = j.at("branch_norm").at("scale").get<std::vector<double>>();
    op.trunk_norm.shift = j.at("trunk_norm").at("shift").get<std::vector<double>>();
    op.trunk_norm.scale = j.at("trunk_norm").at("scale").get<std::vector<double>>();
    op.T = j.at("T");
    op.margin = j.at("margin");
    op.theta = j.at("theta");
    op.native_n = j.value("native_n", 21);
    op.carrier_analytic = j.at("carrier_analytic");
    op.tscale.times = j.at("tscale").at("times").get<std::vector<double>>();
    op.tscale.sd = j.at("tscale").at("sd").get<std::vector<double>>();
    op.tscale.mean_field.resize(j.value("mean_field_count", std::size_t{0}));
    op.target_shift = j.at("target_shift");
    op.target_scale = j.at("target_scale");
    op.seed = j.at("seed");
    op.final_train_mse = j.at("final_train_mse");
    op.final_train_mse_global = j.value("final_train_mse_global", 0.0);
    op.final_val_score = j.at("final_val_score");
    op.loss_history = j.value("loss_history", std::vector<double>{});

    std::ifstream bf(j.at("blob").get<std::string>(), std::ios::binary);
    if (!bf) throw io_error("cannot read operator blob");
    auto rd = [&](std::vector<double>& v) {
        bf.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    for (std::size_t l = 0; l < op.branch.weights.size(); ++l) {
        rd(op.branch.weights[l]);
        rd(op.branch.biases[l]);
    }
    for (std::size_t l = 0; l < op.trunk.weights.size(); ++l) {
        rd(op.trunk.weights[l]);
        rd(op.trunk.biases[l]);
    }
    bf.read(reinterpret_cast<char*>(&op.bias), sizeof(double));
    if (!op.tscale.mean_field.empty()) rd(op.tscale.mean_field);
    if (!bf) throw io_error("truncated operator blob");
    return op;
}

} // namespace ptstab
