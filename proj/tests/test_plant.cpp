#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ptstab/analysis.hpp"
#include "ptstab/plant.hpp"

using namespace ptstab;

namespace {

struct Scenario {
    CoeffSpec spec;
    GainSchedule sched;
    TimeGrid tg;
    SpaceGrid sg;
    TriGrid grid;
};

Scenario desk(double sigma = 3.3, double T = 8.0, double margin = 0.4) {
    Scenario s{CoeffSpec::chebyshev(sigma, T), GainSchedule::prescribed(T),
               TimeGrid::make(6.25e-4, T, margin), SpaceGrid::make(21), TriGrid::make(21)};
    return s;
}

} // namespace

TEST_CASE("plant step basics") {
    SpaceGrid sg = SpaceGrid::make(21);
    StateVector zero{sg, std::vector<double>(21, 0.0), 0.0};
    std::vector<double> lam(21, 0.0);

    auto z1 = step_plant(zero, lam, lam, 1.0, 1.0, 0.0, 6.25e-4);
    CHECK(z1.max_abs() == 0.0);

    // dissipative step without reaction shrinks the L2 norm
    StateVector v = default_initial_state(sg);
    auto v1 = step_plant(v, lam, lam, 1.0, 1.0, 0.0, 6.25e-4);
    CHECK(v1.l2() < v.l2());

    // boundary node carries the imposed Dirichlet value exactly
    auto v2 = step_plant(v, lam, lam, 1.0, 1.0, 3.25, 6.25e-4);
    CHECK(v2.values.back() == 3.25);
}

TEST_CASE("open loop is unstable for the blow-up coefficient") {
    auto sc = desk();
    StateVector v0 = default_initial_state(sc.sg);
    auto traj = simulate(sc.spec, sc.sched, Controller::open_loop(), sc.tg, v0);
    double v0n = traj.initial_l2();
    bool exceeded = false;
    for (const auto& s : traj.states)
        if (s.l2() > 10.0 * v0n) exceeded = true;
    CHECK(exceeded);
}

TEST_CASE("open loop blow-up flag on a tighter margin") {
    double T = 8.0;
    auto spec = CoeffSpec::chebyshev(3.3, T);
    auto sched = GainSchedule::prescribed(T);
    TimeGrid tg = TimeGrid::make(6.25e-4, T, 0.08);
    StateVector v0 = default_initial_state(SpaceGrid::make(21));
    auto traj = simulate(spec, sched, Controller::open_loop(), tg, v0);
    CHECK(traj.blown_up);
    CHECK(traj.states.size() < static_cast<std::size_t>(tg.n_t + 1));
}

TEST_CASE("exact-kernel closed loop reaches the prescribed-time target") {
    auto sc = desk();
    auto ktraj = solve_kernel_trajectory(sc.spec, sc.sched, sc.grid, sc.tg);
    StateVector v0 = default_initial_state(sc.sg);
    auto traj = simulate(sc.spec, sc.sched, Controller::analytic(ktraj), sc.tg, v0);
    CHECK_FALSE(traj.blown_up);
    CHECK(traj.terminal_l2() <= 1e-2 * traj.initial_l2());

    auto rep = target_residual(traj, ktraj, sc.sched, 1.0, 1.0);
    CHECK(rep.max_boundary <= 1e-3 * rep.max_state_l2);
}

TEST_CASE("perturbed controller with zero injection reproduces the exact run bitwise") {
    auto sc = desk();
    auto ktraj = solve_kernel_trajectory(sc.spec, sc.sched, sc.grid, sc.tg);
    StateVector v0 = default_initial_state(sc.sg);
    auto a = simulate(sc.spec, sc.sched, Controller::analytic(ktraj), sc.tg, v0);
    auto b = simulate(sc.spec, sc.sched, Controller::perturbed(ktraj, 0.0, 777), sc.tg, v0);
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t m = 0; m < a.states.size(); ++m)
        for (int i = 0; i < 21; ++i)
            CHECK(a.states[m].values[i] == b.states[m].values[i]);
}

TEST_CASE("simulation is deterministic") {
    auto sc = desk();
    auto ktraj = solve_kernel_trajectory(sc.spec, sc.sched, sc.grid, sc.tg);
    StateVector v0 = default_initial_state(sc.sg);
    auto a = simulate(sc.spec, sc.sched, Controller::perturbed(ktraj, 1e-2, 42), sc.tg, v0);
    auto b = simulate(sc.spec, sc.sched, Controller::perturbed(ktraj, 1e-2, 42), sc.tg, v0);
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t m = 0; m < a.states.size(); ++m)
        for (int i = 0; i < 21; ++i)
            CHECK(a.states[m].values[i] == b.states[m].values[i]);
}

TEST_CASE("lyapunov of the transformed state is non-increasing after a transient") {
    auto sc = desk();
    auto ktraj = solve_kernel_trajectory(sc.spec, sc.sched, sc.grid, sc.tg);
    StateVector v0 = default_initial_state(sc.sg);
    auto traj = simulate(sc.spec, sc.sched, Controller::analytic(ktraj), sc.tg, v0);
    double V0 = lyapunov_V(forward_transform(traj.states[0], ktraj.slices[0]));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t m = 5; m < traj.states.size(); m += 16) {
        double V = lyapunov_V(forward_transform(traj.states[m], ktraj.slices[m]));
        if (V < 1e-40 * V0) break; // below this the values are roundoff of the decayed state
        CHECK(V <= prev * (1.0 + 1e-12));
        prev = V;
    }
}

TEST_CASE("closed-loop self-convergence under mesh refinement") {
    auto coarse = desk();
    StateVector v0c = default_initial_state(coarse.sg);
    auto kc = solve_kernel_trajectory(coarse.spec, coarse.sched, coarse.grid, coarse.tg);
    auto tc = simulate(coarse.spec, coarse.sched, Controller::analytic(kc), coarse.tg, v0c);

    Scenario fine{CoeffSpec::chebyshev(3.3, 8.0), GainSchedule::prescribed(8.0),
                  TimeGrid::make(3.125e-4, 8.0, 0.4), SpaceGrid::make(41), TriGrid::make(41)};
    StateVector v0f = default_initial_state(fine.sg);
    auto kf = solve_kernel_trajectory(fine.spec, fine.sched, fine.grid, fine.tg);
    auto tf = simulate(fine.spec, fine.sched, Controller::analytic(kf), fine.tg, v0f);

    // both runs decay by many orders; compare the decay exponents
    double ec = std::log10(tc.terminal_l2() / tc.initial_l2());
    double ef = std::log10(tf.terminal_l2() / tf.initial_l2());
    CHECK(std::abs(ec - ef) / std::abs(ec) < 0.2);
}

TEST_CASE("state csv export carries hash comment and header") {
    auto sc = desk();
    TimeGrid tiny = TimeGrid::make(0.1, 8.0, 0.4);
    StateVector v0 = default_initial_state(sc.sg);
    auto traj = simulate(sc.spec, sc.sched, Controller::open_loop(), tiny, v0);
    write_state_csv("plant_test_state.csv", traj, "cafebabe", 8);
    write_scalar_csv("plant_test_scalar.csv", traj, "cafebabe", 1);

    std::ifstream f("plant_test_state.csv");
    std::string line1, line2;
    std::getline(f, line1);
    std::getline(f, line2);
    CHECK(line1 == "# config=cafebabe");
    CHECK(line2 == "t,x,v");
}
