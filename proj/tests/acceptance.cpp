// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with the measured quantities. Shared fixtures (kernel trajectories,
// the training corpus, the trained operator) are built once and reused.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>

#include "ptstab/analysis.hpp"
#include "ptstab/dataset.hpp"
#include "ptstab/deeponet.hpp"
#include "ptstab/hash.hpp"
#include "ptstab/plant.hpp"

using namespace ptstab;

namespace {

struct Fixture {
    double T = 8.0, margin = 0.4;
    CoeffSpec spec = CoeffSpec::chebyshev(3.3, 8.0);
    GainSchedule sched = GainSchedule::prescribed(8.0);
    TriGrid grid = TriGrid::make(21);
    SpaceGrid sgrid = SpaceGrid::make(21);
    TimeGrid tg = TimeGrid::make(6.25e-4, 8.0, 0.4);

    KernelTrajectory ktraj, ltraj;
    PlantTrajectory closed, open;

    Dataset corpus;
    DeepOperator op;
    bool op_ready = false;

    static Fixture& get() {
        static Fixture f;
        return f;
    }

    void ensure_loops() {
        if (!ktraj.slices.empty()) return;
        ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
        ltraj = solve_inverse_kernel_trajectory(spec, sched, grid, tg);
        StateVector v0 = default_initial_state(sgrid);
        closed = simulate(spec, sched, Controller::analytic(ktraj), tg, v0);
        open = simulate(spec, sched, Controller::open_loop(), tg, v0);
    }

    void ensure_operator() {
        if (op_ready) return;
        GenConfig cfg;
        cfg.out_dir = "acceptance_work";
        cfg.name = "kcorpus";
        cfg.count = 220;
        cfg.seed = 7;
        cfg.split_fraction = 200.0 / 220.0;
        cfg.n_train_times = 17;
        cfg.n_tail_refine = 12;
        generate_kernel_dataset(cfg);
        corpus = load_dataset(manifest_path_for(cfg));

        TrainConfig tcfg;
        tcfg.epochs = 600;
        tcfg.batch = 256;
        tcfg.step_size = 5e-3;
        tcfg.seed = 1;
        op = train_kernel_operator(corpus, tcfg);
        op_ready = true;
    }
};

void report(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d %-28s %s\n", pass ? "PASS" : "FAIL", criterion, name,
                detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

} // namespace

TEST_CASE("criterion 1: kernel reciprocity under refinement") {
    auto t0 = std::chrono::steady_clock::now();
    auto res_at = [](int n) {
        TriGrid grid = TriGrid::make(n);
        std::vector<double> gam(n, 0.5);
        auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
        auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);
        return reciprocity_residual(k, l);
    };
    double r51 = res_at(51), r101 = res_at(101);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = r101 < 1e-2 && r101 < r51 && secs < 30.0;
    report(1, "kernel reciprocity", pass,
           fmt("res51=%.3e res101=%.3e runtime=%.2fs", r51, r101, secs));
    CHECK(r101 < 1e-2);
    CHECK(r101 < r51);
    CHECK(secs < 30.0);
}

TEST_CASE("criterion 2: transform round trip") {
    int n = 101;
    TriGrid grid = TriGrid::make(n);
    std::vector<double> gam(n, 0.5);
    auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
    auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);
    StateVector v = default_initial_state(SpaceGrid::make(n));
    auto back = inverse_transform(forward_transform(v, k), l);
    double mx = 0.0;
    for (int i = 0; i < n; ++i) mx = std::max(mx, std::abs(back.values[i] - v.values[i]));
    report(2, "transform round trip", mx < 1e-2, fmt("max-norm err=%.3e", mx));
    CHECK(mx < 1e-2);
}

TEST_CASE("criterion 3: prescribed-time stabilization") {
    auto t0 = std::chrono::steady_clock::now();
    auto& f = Fixture::get();
    f.ensure_loops();
    double ratio = f.closed.terminal_l2() / f.closed.initial_l2();
    bool open_exceeds = false;
    for (const auto& s : f.open.states)
        if (s.l2() > 10.0 * f.open.initial_l2()) open_exceeds = true;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = !f.closed.blown_up && ratio <= 1e-2 && open_exceeds && secs < 300.0;
    report(3, "prescribed-time decay", pass,
           fmt("terminal ratio=%.3e open>10x=%d runtime=%.1fs", ratio, open_exceeds ? 1 : 0, secs));
    CHECK_FALSE(f.closed.blown_up);
    CHECK(ratio <= 1e-2);
    CHECK(open_exceeds);
    CHECK(secs < 300.0);
}

TEST_CASE("criterion 4: target-system boundary fidelity") {
    auto& f = Fixture::get();
    f.ensure_loops();
    auto rep = target_residual(f.closed, f.ktraj, f.sched, 1.0, 1.0);
    bool pass = rep.max_boundary <= 1e-3 * rep.max_state_l2;
    report(4, "target boundary residual", pass,
           fmt("max|w(1,t)|=%.3e bound=%.3e", rep.max_boundary, 1e-3 * rep.max_state_l2));
    CHECK(rep.max_boundary <= 1e-3 * rep.max_state_l2);
}

TEST_CASE("criterion 5: surrogate kernel accuracy") {
    auto& f = Fixture::get();
    f.ensure_operator();

    // training MSE after the 600-epoch run, in normalized units: targets
    // z-scored to unit variance over the training set
    double mse_norm = f.op.final_train_mse_global;

    // held-out sigma values at t = 5 s and t = 7 s
    int cases = 0, good = 0;
    for (int r : f.corpus.val_indices) {
        double sigma = f.corpus.manifest.sigmas[r];
        CoeffSpec spec = CoeffSpec::chebyshev(sigma, f.T);
        auto oracle = solve_kernel_slices(spec, f.sched, f.grid, f.T - f.margin, {5.0, 7.0});
        auto lam = lambda_sensor_values(spec, f.op.layout);
        for (const auto& truth : oracle) {
            KernelSlice pred = predict_kernel_slice(f.op, lam, truth.t, f.grid);
            std::vector<double> diff(truth.values.size());
            for (std::size_t m = 0; m < diff.size(); ++m)
                diff[m] = pred.values[m] - truth.values[m];
            double err = tri_l2_norm(diff, f.grid);
            ++cases;
            if (err < 0.1) ++good;
        }
    }
    double frac = cases > 0 ? static_cast<double>(good) / cases : 0.0;
    bool pass = mse_norm < 1e-4 && frac >= 0.9 && f.corpus.train_indices.size() >= 200;
    report(5, "surrogate kernel accuracy", pass,
           fmt("train MSE@600=%.3e (residual units %.3e) held-out<0.1: %d/%d", mse_norm,
               f.op.final_train_mse, good, cases));
    CHECK(mse_norm < 1e-4);
    CHECK(frac >= 0.9);
    CHECK(f.corpus.train_indices.size() >= 200);
}

TEST_CASE("criterion 6: surrogate closed loop") {
    auto& f = Fixture::get();
    f.ensure_operator();
    StateVector v0 = default_initial_state(f.sgrid);
    auto traj = simulate(f.spec, f.sched, Controller::surrogate_kernel(f.op), f.tg, v0);
    double ratio = traj.blown_up ? std::numeric_limits<double>::infinity()
                                 : traj.terminal_l2() / traj.initial_l2();
    bool pass = !traj.blown_up && ratio <= 5e-2;
    report(6, "surrogate closed loop", pass,
           fmt("terminal ratio=%.3e blown_up=%d", ratio, traj.blown_up ? 1 : 0));
    CHECK_FALSE(traj.blown_up);
    CHECK(ratio <= 5e-2);
}

TEST_CASE("criterion 7: epsilon scaling of the terminal norm") {
    auto& f = Fixture::get();
    f.ensure_loops();
    StateVector v0 = default_initial_state(f.sgrid);
    std::vector<double> eps{1e-3, 1e-2, 1e-1}, term;
    for (double e : eps) {
        auto traj = simulate(f.spec, f.sched, Controller::perturbed(f.ktraj, e, 20260808), f.tg, v0);
        REQUIRE_FALSE(traj.blown_up);
        term.push_back(traj.terminal_l2());
    }
    // least-squares slope of log10 terminal vs log10 eps
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < 3; ++i) {
        double x = std::log10(eps[i]), y = std::log10(term[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
    bool pass = std::abs(slope - 1.0) <= 0.3;
    report(7, "epsilon scaling law", pass,
           fmt("slope=%.3f terms=%.2e/%.2e/%.2e", slope, term[0], term[1], term[2]));
    CHECK(std::abs(slope - 1.0) <= 0.3);
}

TEST_CASE("criterion 8: speedup scaling") {
    auto& f = Fixture::get();
    f.ensure_operator();
    BenchTable table = benchmark_speedup(f.op, f.spec, f.sched, {0.01, 0.005}, 5, 128);
    REQUIRE(table.rows.size() == 2);
    const auto& coarse = table.rows[0];
    const auto& fine = table.rows[1];
    double surr_ratio = std::max(coarse.surrogate_s, fine.surrogate_s) /
                        std::max(1e-12, std::min(coarse.surrogate_s, fine.surrogate_s));
    bool pass = fine.analytic_s > coarse.analytic_s && surr_ratio <= 3.0 && fine.speedup >= 10.0;
    report(8, "speedup scaling", pass,
           fmt("analytic %.3fs->%.3fs surrogate x%.2f speedup@0.005=%.1f", coarse.analytic_s,
               fine.analytic_s, surr_ratio, fine.speedup));
    CHECK(fine.analytic_s > coarse.analytic_s);
    CHECK(surr_ratio <= 3.0);
    CHECK(fine.speedup >= 10.0);
}

TEST_CASE("criterion 9: gradient oracle") {
    double worst_overall = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        DeepOperator op;
        op.kind = OperatorKind::kernel_map;
        op.p = 4;
        std::mt19937_64 rng(seed);
        op.branch = Mlp::make({5, 8, 8, 4}, Mlp::Act::tanh_act, rng);
        op.trunk = Mlp::make({2, 8, 8, 4}, Mlp::Act::tanh_act, rng);
        op.bias = 0.05;
        op.branch_norm.shift.assign(5, 0.0);
        op.branch_norm.scale.assign(5, 1.0);
        op.trunk_norm.shift.assign(2, 0.0);
        op.trunk_norm.scale.assign(2, 1.0);

        GenericBatch batch;
        batch.count = 6;
        batch.fn.resize(30);
        batch.queries.resize(12);
        batch.targets.resize(6);
        for (auto& v : batch.fn) v = 2.0 * ((rng() >> 11) * (1.0 / 9007199254740992.0)) - 1.0;
        for (auto& v : batch.queries) v = 2.0 * ((rng() >> 11) * (1.0 / 9007199254740992.0)) - 1.0;
        for (auto& v : batch.targets) v = 2.0 * ((rng() >> 11) * (1.0 / 9007199254740992.0)) - 1.0;

        auto grads = OperatorGrads::zeros_like(op);
        loss_and_gradients(op, batch, grads);

        std::vector<double> flat;
        for (auto& w : grads.branch.weights) flat.insert(flat.end(), w.begin(), w.end());
        for (auto& b : grads.branch.biases) flat.insert(flat.end(), b.begin(), b.end());
        for (auto& w : grads.trunk.weights) flat.insert(flat.end(), w.begin(), w.end());
        for (auto& b : grads.trunk.biases) flat.insert(flat.end(), b.begin(), b.end());
        flat.push_back(grads.bias);

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

        const double h = 1e-5;
        std::mt19937_64 pick(seed * 31 + 1);
        for (int trial = 0; trial < 25; ++trial) {
            std::size_t i = pick() % ps.size();
            double orig = *ps[i];
            auto tmp = OperatorGrads::zeros_like(op);
            *ps[i] = orig + h;
            double lp = loss_and_gradients(op, batch, tmp);
            *ps[i] = orig - h;
            double lm = loss_and_gradients(op, batch, tmp);
            *ps[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(flat[i]), 1e-8});
            worst_overall = std::max(worst_overall, std::abs(fd - flat[i]) / denom);
        }
    }
    report(9, "gradient oracle", worst_overall < 1e-5, fmt("worst rel err=%.3e", worst_overall));
    CHECK(worst_overall < 1e-5);
}

TEST_CASE("criterion 10: determinism of gen-data, train, simulate") {
    // dataset regeneration
    GenConfig a;
    a.out_dir = "acceptance_work";
    a.name = "det_a";
    a.count = 4;
    a.seed = 33;
    a.tri_n = 11;
    a.n_train_times = 5;
    a.n_tail_refine = 2;
    GenConfig b = a;
    b.name = "det_b";
    auto ma = generate_kernel_dataset(a);
    auto mb = generate_kernel_dataset(b);
    bool data_ok = ma.inputs_checksum == mb.inputs_checksum &&
                   ma.targets_checksum == mb.targets_checksum;

    // training reproducibility
    Dataset ds = load_dataset(manifest_path_for(a));
    TrainConfig tcfg;
    tcfg.epochs = 12;
    tcfg.seed = 5;
    auto op1 = train_kernel_operator(ds, tcfg, {8, 8}, 4);
    auto op2 = train_kernel_operator(ds, tcfg, {8, 8}, 4);
    save_operator(op1, "acceptance_work/det_op1.manifest.json", "acceptance_work/det_op1.bin");
    save_operator(op2, "acceptance_work/det_op2.manifest.json", "acceptance_work/det_op2.bin");
    bool train_ok = fnv1a64_file_hex("acceptance_work/det_op1.bin") ==
                    fnv1a64_file_hex("acceptance_work/det_op2.bin");

    // simulation reproducibility (CSV bytes)
    auto& f = Fixture::get();
    f.ensure_loops();
    StateVector v0 = default_initial_state(f.sgrid);
    auto t1 = simulate(f.spec, f.sched, Controller::perturbed(f.ktraj, 1e-2, 99), f.tg, v0);
    auto t2 = simulate(f.spec, f.sched, Controller::perturbed(f.ktraj, 1e-2, 99), f.tg, v0);
    write_scalar_csv("acceptance_work/det_sim1.csv", t1, "h", 16);
    write_scalar_csv("acceptance_work/det_sim2.csv", t2, "h", 16);
    bool sim_ok = fnv1a64_file_hex("acceptance_work/det_sim1.csv") ==
                  fnv1a64_file_hex("acceptance_work/det_sim2.csv");

    bool pass = data_ok && train_ok && sim_ok;
    report(10, "determinism", pass,
           fmt("data=%d train=%d simulate=%d", data_ok ? 1 : 0, train_ok ? 1 : 0, sim_ok ? 1 : 0));
    CHECK(data_ok);
    CHECK(train_ok);
    CHECK(sim_ok);
}
