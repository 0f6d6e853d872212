#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ptstab/deeponet.hpp"
#include "ptstab/mlp.hpp"

using namespace ptstab;

namespace {

double uniform01(std::mt19937_64& rng) { return (rng() >> 11) * (1.0 / 9007199254740992.0); }

DeepOperator tiny_operator(std::uint64_t seed, int fn_dim = 5, int q_dim = 2, int p = 4) {
    DeepOperator op;
    op.kind = OperatorKind::kernel_map;
    op.p = p;
    std::mt19937_64 rng(seed);
    op.branch = Mlp::make({fn_dim, 8, p}, Mlp::Act::tanh_act, rng);
    op.trunk = Mlp::make({q_dim, 8, p}, Mlp::Act::tanh_act, rng);
    op.bias = 0.1;
    op.branch_norm.shift.assign(fn_dim, 0.0);
    op.branch_norm.scale.assign(fn_dim, 1.0);
    op.trunk_norm.shift.assign(q_dim, 0.0);
    op.trunk_norm.scale.assign(q_dim, 1.0);
    return op;
}

GenericBatch random_batch(std::uint64_t seed, int count, int fn_dim, int q_dim) {
    std::mt19937_64 rng(seed);
    GenericBatch b;
    b.count = count;
    b.fn.resize(static_cast<std::size_t>(count) * fn_dim);
    b.queries.resize(static_cast<std::size_t>(count) * q_dim);
    b.targets.resize(count);
    for (auto& v : b.fn) v = 2.0 * uniform01(rng) - 1.0;
    for (auto& v : b.queries) v = 2.0 * uniform01(rng) - 1.0;
    for (auto& v : b.targets) v = 2.0 * uniform01(rng) - 1.0;
    return b;
}

// flatten all trainable parameters for finite differencing
std::vector<double*> param_ptrs(DeepOperator& op) {
    std::vector<double*> ps;
    for (auto& w : op.branch.weights)
        for (auto& v : w) ps.push_back(&v);
    for (auto& b : op.branch.biases)
        for (auto& v : b) ps.push_back(&v);
    for (auto& w : op.trunk.weights)
        for (auto& v : w) ps.push_back(&v);
    for (auto& b : op.trunk.biases)
        for (auto& v : b) ps.push_back(&v);
    ps.push_back(&op.bias);
    return ps;
}

std::vector<double> grad_flat(const DeepOperator& op, const OperatorGrads& g) {
    std::vector<double> out;
    for (auto& w : g.branch.weights) out.insert(out.end(), w.begin(), w.end());
    for (auto& b : g.branch.biases) out.insert(out.end(), b.begin(), b.end());
    for (auto& w : g.trunk.weights) out.insert(out.end(), w.begin(), w.end());
    for (auto& b : g.trunk.biases) out.insert(out.end(), b.begin(), b.end());
    out.push_back(g.bias);
    (void)op;
    return out;
}

} // namespace

TEST_CASE("mlp forward basics") {
    std::mt19937_64 rng(1);
    auto net = Mlp::make({3, 4, 2}, Mlp::Act::tanh_act, rng);
    for (auto& w : net.weights)
        for (auto& v : w) v = 0.0;
    std::vector<double> x{0.3, -0.2, 0.9};
    auto y = net.forward(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);

    // single affine layer equals the matrix-vector product plus bias
    auto lin = Mlp::make({2, 2}, Mlp::Act::tanh_act, rng);
    lin.weights[0] = {1.0, 2.0, -3.0, 0.5};
    lin.biases[0] = {0.25, -1.0};
    auto z = lin.forward(std::vector<double>{2.0, 1.0});
    CHECK(z[0] == doctest::Approx(4.25).epsilon(1e-15));
    CHECK(z[1] == doctest::Approx(-6.5).epsilon(1e-15));

    CHECK_THROWS_AS(lin.forward(std::vector<double>{1.0}), validation_error);
}

TEST_CASE("tanh net output bound") {
    std::mt19937_64 rng(7);
    auto net = Mlp::make({2, 16, 1}, Mlp::Act::tanh_act, rng);
    double wsum = 0.0;
    for (double w : net.weights.back()) wsum += std::abs(w);
    wsum += std::abs(net.biases.back()[0]);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x{100.0 * (trial - 25), -40.0 * trial};
        CHECK(std::abs(net.forward(x)[0]) <= wsum + 1e-12);
    }
}

TEST_CASE("deeponet readout definition") {
    auto op = tiny_operator(3, 4, 2, 1);
    std::vector<double> fn{0.1, -0.2, 0.3, 0.4}, q{0.5, -0.5};
    double b = op.branch.forward(fn)[0];
    double t = op.trunk.forward(q)[0];
    CHECK(deeponet_forward(op, fn, q) == doctest::Approx(b * t + op.bias).epsilon(1e-14));
}

TEST_CASE("zero trunk weights give a constant readout") {
    auto op = tiny_operator(4);
    for (auto& w : op.trunk.weights)
        for (auto& v : w) v = 0.0;
    for (auto& bz : op.trunk.biases)
        for (auto& v : bz) v = 0.0;
    std::vector<double> fn{0.3, 0.1, -0.4, 0.9, 0.2};
    CHECK(deeponet_forward(op, fn, std::vector<double>{0.1, 0.2}) ==
          doctest::Approx(deeponet_forward(op, fn, std::vector<double>{-0.7, 0.9})).epsilon(1e-14));
}

TEST_CASE("loss is zero with zero gradients at a perfect fit") {
    auto op = tiny_operator(11);
    GenericBatch b = random_batch(5, 6, 5, 2);
    for (int i = 0; i < b.count; ++i)
        b.targets[i] = deeponet_forward(op, {&b.fn[static_cast<std::size_t>(i) * 5], 5},
                                        {&b.queries[static_cast<std::size_t>(i) * 2], 2});
    auto g = OperatorGrads::zeros_like(op);
    double loss = loss_and_gradients(op, b, g);
    CHECK(loss < 1e-28);
    for (double v : grad_flat(op, g)) CHECK(std::abs(v) < 1e-13);
}

TEST_CASE("doubling residuals quadruples the loss") {
    auto op = tiny_operator(13);
    GenericBatch b = random_batch(17, 8, 5, 2);
    std::vector<double> preds(b.count);
    for (int i = 0; i < b.count; ++i)
        preds[i] = deeponet_forward(op, {&b.fn[static_cast<std::size_t>(i) * 5], 5},
                                    {&b.queries[static_cast<std::size_t>(i) * 2], 2});
    GenericBatch b2 = b;
    for (int i = 0; i < b.count; ++i) {
        double r = preds[i] - b.targets[i];
        b2.targets[i] = preds[i] - 2.0 * r;
    }
    auto g1 = OperatorGrads::zeros_like(op), g2 = OperatorGrads::zeros_like(op);
    double l1 = loss_and_gradients(op, b, g1);
    double l2 = loss_and_gradients(op, b2, g2);
    CHECK(l2 == doctest::Approx(4.0 * l1).epsilon(1e-12));
}

TEST_CASE("reverse-mode gradients match central finite differences") {
    // property over seeded instances; the acceptance suite runs 20 of these
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto op = tiny_operator(seed);
        GenericBatch batch = random_batch(seed * 101, 7, 5, 2);
        auto g = OperatorGrads::zeros_like(op);
        loss_and_gradients(op, batch, g);
        auto analytic = grad_flat(op, g);
        auto ps = param_ptrs(op);
        REQUIRE(analytic.size() == ps.size());

        double h = 1e-5, worst = 0.0;
        std::mt19937_64 pick(seed * 7 + 3);
        for (int trial = 0; trial < 40; ++trial) {
            std::size_t i = pick() % ps.size();
            double orig = *ps[i];
            auto gtmp = OperatorGrads::zeros_like(op);
            *ps[i] = orig + h;
            double lp = loss_and_gradients(op, batch, gtmp);
            *ps[i] = orig - h;
            double lm = loss_and_gradients(op, batch, gtmp);
            *ps[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
            worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("normalization round trip is exact to 1e-12") {
    AffineNorm n;
    n.shift = {1.0, -2.0, 0.5};
    n.scale = {0.1, 3.0, 7.0};
    std::vector<double> x{0.3, 0.7, -1.9}, y(3), back(3);
    n.apply(x, y);
    n.invert(y, back);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
}

TEST_CASE("sensor lattices") {
    auto lay = SensorLayout::standard(7.6);
    CHECK(lay.lambda_dim() == 99);
    CHECK(lay.x_sensors.front() == 0.0);
    CHECK(lay.x_sensors.back() == 1.0);
    CHECK(lay.t_sensors.back() == doctest::Approx(7.6));
    auto spec = CoeffSpec::chebyshev(3.3, 8.0);
    auto lam = lambda_sensor_values(spec, lay);
    REQUIRE(lam.size() == 99);
    // row-major with x outer: entry (ix=10, it=0) is lambda(1, 0)
    CHECK(lam[10 * 9 + 0] == doctest::Approx(eval_lambda(spec, 1.0, 0.0)).epsilon(1e-14));
}

TEST_CASE("carrier scale grows with the mean gain") {
    CHECK(kernel_carrier_scale(0.0, 1.0) == 1.0);
    double a = kernel_carrier_scale(10.0, 1.0);
    double b = kernel_carrier_scale(50.0, 1.0);
    double c = kernel_carrier_scale(150.0, 1.0);
    CHECK(a < b);
    CHECK(b < c);
    CHECK(std::isfinite(c));
}

TEST_CASE("operator checkpoint round trip is bitwise") {
    auto op = tiny_operator(21);
    op.layout = SensorLayout::standard(7.6);
    op.tscale.times = {0.0, 1.0};
    op.tscale.sd = {1.0, 2.0};
    op.tscale.mean_field.assign(12, 0.25);
    op.native_n = 3; // mean field spans 2 times x 6 nodes
    op.loss_history = {0.5, 0.25, 0.125};
    save_operator(op, "op_test.manifest.json", "op_test.bin");
    auto back = load_operator("op_test.manifest.json");
    CHECK(back.p == op.p);
    CHECK(back.bias == op.bias);
    for (std::size_t l = 0; l < op.branch.weights.size(); ++l)
        for (std::size_t i = 0; i < op.branch.weights[l].size(); ++i)
            CHECK(back.branch.weights[l][i] == op.branch.weights[l][i]);
    for (std::size_t l = 0; l < op.trunk.weights.size(); ++l)
        for (std::size_t i = 0; i < op.trunk.weights[l].size(); ++i)
            CHECK(back.trunk.weights[l][i] == op.trunk.weights[l][i]);
    CHECK(back.loss_history.size() == 3);
}

TEST_CASE("training a linear map with a linear operator reaches machine-level loss") {
    // branch p=3 affine, trunk constant-input affine: the readout spans exactly
    // the linear maps of the inputs, so gradient descent can drive MSE to ~0
    DeepOperator op;
    op.kind = OperatorKind::feedback_map;
    op.p = 3;
    std::mt19937_64 rng(5);
    op.branch = Mlp::make({4, 3}, Mlp::Act::identity, rng);
    op.trunk = Mlp::make({1, 3}, Mlp::Act::identity, rng);
    op.bias = 0.0;
    op.branch_norm.shift.assign(4, 0.0);
    op.branch_norm.scale.assign(4, 1.0);
    op.trunk_norm.shift = {0.0};
    op.trunk_norm.scale = {1.0};

    GenericBatch data;
    data.count = 64;
    data.fn.resize(64 * 4);
    data.queries.assign(64, 1.0);
    data.targets.resize(64);
    std::vector<double> a{0.7, -1.3, 0.2, 2.1};
    std::mt19937_64 r2(11);
    for (int i = 0; i < 64; ++i) {
        double y = 0.3;
        for (int d = 0; d < 4; ++d) {
            double x = 2.0 * uniform01(r2) - 1.0;
            data.fn[static_cast<std::size_t>(i) * 4 + d] = x;
            y += a[d] * x;
        }
        data.targets[i] = y;
    }

    TrainConfig cfg;
    cfg.epochs = 4000;
    cfg.step_size = 0.02;
    cfg.step_size_min_frac = 0.002;
    cfg.seed = 3;

    // plain full-batch loop with the operator's own loss/gradients
    std::vector<double> m, vv;
    auto ps = param_ptrs(op);
    m.assign(ps.size(), 0.0);
    vv.assign(ps.size(), 0.0);
    double last = 1.0;
    for (int e = 0; e < cfg.epochs; ++e) {
        auto g = OperatorGrads::zeros_like(op);
        last = loss_and_gradients(op, data, g);
        auto gf = grad_flat(op, g);
        double lr = cfg.step_size;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * gf[i];
            vv[i] = 0.999 * vv[i] + 0.001 * gf[i] * gf[i];
            double mh = m[i] / (1.0 - std::pow(0.9, e + 1));
            double vh = vv[i] / (1.0 - std::pow(0.999, e + 1));
            *ps[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    CHECK(last < 1e-10);
}
