#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ptstab/kernel.hpp"
#include "ptstab/transform.hpp"

using namespace ptstab;

namespace {

KernelSlice const_kernel(int n, double value) {
    TriGrid g = TriGrid::make(n);
    return {g, std::vector<double>(g.node_count(), value), 0.0};
}

StateVector state_of(int n, const std::function<double(double)>& f) {
    StateVector v;
    v.grid = SpaceGrid::make(n);
    v.values.resize(n);
    for (int i = 0; i < n; ++i) v.values[i] = f(v.grid.x(i));
    return v;
}

} // namespace

TEST_CASE("forward transform basics") {
    auto v = state_of(11, [](double x) { return std::sin(3.0 * x) + 0.2; });
    auto k0 = const_kernel(11, 0.0);
    auto w = forward_transform(v, k0);
    for (int i = 0; i < 11; ++i) CHECK(w.values[i] == v.values[i]);

    auto zero = state_of(11, [](double) { return 0.0; });
    auto w0 = forward_transform(zero, const_kernel(11, -1.0));
    CHECK(w0.max_abs() == 0.0);

    // k = -1, v = 1: w(x) = 1 + x
    auto one = state_of(11, [](double) { return 1.0; });
    auto w1 = forward_transform(one, const_kernel(11, -1.0));
    for (int i = 0; i < 11; ++i)
        CHECK(w1.values[i] == doctest::Approx(1.0 + one.grid.x(i)).epsilon(1e-14));
}

TEST_CASE("inverse transform basics") {
    auto one = state_of(11, [](double) { return 1.0; });
    auto v = inverse_transform(one, const_kernel(11, 1.0));
    for (int i = 0; i < 11; ++i)
        CHECK(v.values[i] == doctest::Approx(1.0 + one.grid.x(i)).epsilon(1e-14));
}

TEST_CASE("transform linearity is exact") {
    int n = 21;
    TriGrid g = TriGrid::make(n);
    std::mt19937_64 rng(42);
    KernelSlice k{g, std::vector<double>(g.node_count()), 0.0};
    for (auto& val : k.values) val = 2.0 * ((rng() >> 11) * (1.0 / 9007199254740992.0)) - 1.0;

    auto v1 = state_of(n, [](double x) { return x * (1 - x); });
    auto v2 = state_of(n, [](double x) { return std::cos(2 * x); });
    double a = 1.7, b = -0.4;
    StateVector comb = v1;
    for (int i = 0; i < n; ++i) comb.values[i] = a * v1.values[i] + b * v2.values[i];

    auto w1 = forward_transform(v1, k), w2 = forward_transform(v2, k), wc = forward_transform(comb, k);
    for (int i = 0; i < n; ++i)
        CHECK(wc.values[i] == doctest::Approx(a * w1.values[i] + b * w2.values[i]).epsilon(1e-12));
}

TEST_CASE("transform is triangular: w below i ignores v above i") {
    int n = 21;
    TriGrid g = TriGrid::make(n);
    KernelSlice k{g, std::vector<double>(g.node_count(), 0.3), 0.0};
    auto v = state_of(n, [](double x) { return 1.0 + x; });
    auto w = forward_transform(v, k);

    StateVector v2 = v;
    int cut = 12;
    for (int i = cut + 1; i < n; ++i) v2.values[i] += 5.0;
    auto w2 = forward_transform(v2, k);
    for (int i = 0; i <= cut; ++i) CHECK(w2.values[i] == w.values[i]);
    CHECK(w2.values[cut + 1] != w.values[cut + 1]);
}

TEST_CASE("round trip through solved kernel pair") {
    int n = 101;
    TriGrid grid = TriGrid::make(n);
    std::vector<double> gam(n, 0.5);
    auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
    auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);

    auto v = state_of(n, [](double x) { return 10.25 * x * (1 - x); });
    auto w = forward_transform(v, k);
    auto v_back = inverse_transform(w, l);
    double mx = 0.0;
    for (int i = 0; i < n; ++i) mx = std::max(mx, std::abs(v_back.values[i] - v.values[i]));
    CHECK(mx < 1e-2);

    // norm comparison: ||v|| <= (1 + ||l||_inf) ||w|| plus quadrature slack
    CHECK(v.l2() <= (1.0 + l.sup_norm()) * w.l2() * 1.05);
}

TEST_CASE("round trip residual shrinks under refinement") {
    auto run = [](int n) {
        TriGrid grid = TriGrid::make(n);
        std::vector<double> gam(n, 0.5);
        auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
        auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);
        StateVector v;
        v.grid = SpaceGrid::make(n);
        v.values.resize(n);
        for (int i = 0; i < n; ++i) {
            double x = v.grid.x(i);
            v.values[i] = 10.25 * x * (1 - x);
        }
        auto back = inverse_transform(forward_transform(v, k), l);
        double mx = 0.0;
        for (int i = 0; i < n; ++i) mx = std::max(mx, std::abs(back.values[i] - v.values[i]));
        return mx;
    };
    double res51 = run(51), res101 = run(101);
    CHECK(res101 < res51);
}

TEST_CASE("control gain extraction and control value") {
    int n = 21;
    auto kz = const_kernel(n, 0.0);
    auto gz = control_gain(kz);
    for (double gv : gz.values) CHECK(gv == 0.0);

    // constant gamma: gain row endpoint at y=1 equals the diagonal value -gamma/(2 theta)
    double g0 = 1.2, theta = 1.0;
    TriGrid grid = TriGrid::make(n);
    std::vector<double> gam(n, g0);
    auto k = solve_stationary_kernel(gam, theta, 1.0, grid);
    auto g = control_gain(k);
    CHECK(g.values[n - 1] == doctest::Approx(-g0 / (2 * theta)).epsilon(1e-12));
    for (int j = 0; j < n; ++j) CHECK(g.values[j] == k.at(n - 1, j));

    auto vz = state_of(n, [](double) { return 0.0; });
    CHECK(control_U(g, vz) == 0.0);

    auto c = state_of(n, [](double) { return 2.0; });
    GainRow gc{c.grid, std::vector<double>(n, 3.0), 0.0};
    CHECK(control_U(gc, c) == doctest::Approx(6.0).epsilon(1e-14));

    // g(y) = y, v(y) = y on 11 nodes reproduces the trapezoid x^2 value
    auto y11 = state_of(11, [](double x) { return x; });
    GainRow gy{y11.grid, y11.values, 0.0};
    CHECK(control_U(gy, y11) == doctest::Approx(0.335).epsilon(1e-14));

    StateVector bad = state_of(11, [](double) { return 1.0; });
    CHECK_THROWS_AS(control_U(g, bad), validation_error);
}
