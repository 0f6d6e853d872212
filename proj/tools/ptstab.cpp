// Command-line front end: data generation, operator training, simulation,
// verification, and benchmarking for the prescribed-time boundary control
// toolkit. Every subcommand is deterministic given --seed and its inputs.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ptstab/analysis.hpp"
#include "ptstab/dataset.hpp"
#include "ptstab/deeponet.hpp"
#include "ptstab/hash.hpp"
#include "ptstab/plant.hpp"

using namespace ptstab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

std::uint64_t env_seed_fallback(std::uint64_t cli_seed, bool seed_given) {
    if (seed_given) return cli_seed;
    if (const char* env = std::getenv("PTSTAB_SEED")) return std::strtoull(env, nullptr, 10);
    return cli_seed;
}

// flags override --config; config keys are the long option names without dashes
std::vector<std::string> merge_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") config_path = args[i + 1];
    if (config_path.empty()) return args;

    std::ifstream f(config_path);
    if (!f) throw io_error("cannot read config file " + config_path);
    nlohmann::json j;
    f >> j;
    std::vector<std::string> merged;
    if (!args.empty()) merged.push_back(args[0]); // subcommand first
    for (auto it = j.begin(); it != j.end(); ++it) {
        merged.push_back("--" + it.key());
        if (it.value().is_boolean()) {
            if (!it.value().get<bool>()) merged.pop_back();
        } else if (it.value().is_string()) {
            merged.push_back(it.value().get<std::string>());
        } else {
            merged.push_back(it.value().dump());
        }
    }
    for (std::size_t i = 1; i < args.size(); ++i) merged.push_back(args[i]);
    return merged;
}

struct ScenarioFlags {
    double sigma = 3.3, T = 8.0, margin = -1.0, theta = 1.0, q = 1.0;
    double dx = 0.05, dt = 6.25e-4;
    double v0_amp = 10.25;

    double margin_or_default() const { return margin > 0.0 ? margin : 0.05 * T; }
    int n() const { return static_cast<int>(std::lround(1.0 / dx)) + 1; }
    std::string hash() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "sigma=%g T=%g margin=%g theta=%g q=%g dx=%g dt=%g amp=%g",
                      sigma, T, margin_or_default(), theta, q, dx, dt, v0_amp);
        return fnv1a64_hex(buf);
    }
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& s) {
    cmd->add_option("--sigma", s.sigma, "coefficient shape parameter");
    cmd->add_option("--T", s.T, "prescribed time horizon");
    cmd->add_option("--margin", s.margin, "stop margin before T (default 0.05*T)");
    cmd->add_option("--theta", s.theta, "diffusion coefficient");
    cmd->add_option("--q", s.q, "Robin coefficient at x=0");
    cmd->add_option("--dx", s.dx, "spatial step");
    cmd->add_option("--dt", s.dt, "time step");
    cmd->add_option("--v0-amp", s.v0_amp, "initial state amplitude a in a*x*(1-x)");
}

int cmd_gen_data(const std::string& kind, const GenConfig& cfg) {
    DatasetManifest m = kind == "kernel" ? generate_kernel_dataset(cfg)
                                         : generate_feedback_dataset(cfg);
    std::printf("wrote %s: %d records (%zu failures) -> %s\n", m.kind.c_str(), m.count,
                m.failures.size(), manifest_path_for(cfg).c_str());
    for (const auto& fmsg : m.failures) std::printf("  failure: %s\n", fmsg.c_str());
    return kExitOk;
}

int cmd_train(const std::string& kind, const std::string& data, const std::string& out,
              TrainConfig cfg, int width, int depth, int p) {
    Dataset ds = load_dataset(data);
    std::vector<int> hidden(depth, width);
    DeepOperator op = kind == "kernel" ? train_kernel_operator(ds, cfg, hidden, p)
                                       : train_feedback_operator(ds, cfg, hidden, p);
    save_operator(op, out + ".manifest.json", out + ".bin");

    // windowed loss summary
    const auto& h = op.loss_history;
    std::printf("epochs=%zu final train MSE=%.6e (global units %.6e) val=%.6e\n", h.size(),
                op.final_train_mse, op.final_train_mse_global, op.final_val_score);
    std::size_t window = 50;
    for (std::size_t e = 0; e < h.size(); e += std::max<std::size_t>(1, h.size() / 12)) {
        std::size_t lo = e >= window ? e - window + 1 : 0;
        double ma = 0.0;
        for (std::size_t i = lo; i <= e; ++i) ma += h[i];
        ma /= (e - lo + 1);
        std::printf("  epoch %5zu  loss %.6e  ma50 %.6e\n", e + 1, h[e], ma);
    }
    std::printf("checkpoint: %s.manifest.json\n", out.c_str());
    return kExitOk;
}

int cmd_simulate(const ScenarioFlags& s, const std::string& controller,
                 const std::string& checkpoint, double eps_inj, std::uint64_t seed,
                 const std::string& runid, const std::string& out_dir, int stride) {
    double margin = s.margin_or_default();
    auto spec = CoeffSpec::chebyshev(s.sigma, s.T, s.theta, s.q);
    auto sched = GainSchedule::prescribed(s.T);
    TimeGrid tg = TimeGrid::make(s.dt, s.T, margin);
    SpaceGrid sg = SpaceGrid::make(s.n());
    TriGrid grid = TriGrid::make(s.n());
    StateVector v0 = default_initial_state(sg, s.v0_amp);

    std::optional<KernelTrajectory> ktraj;
    std::optional<DeepOperator> op;
    Controller ctrl;
    if (controller == "open-loop") {
        ctrl = Controller::open_loop();
    } else if (controller == "analytic") {
        ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
        ctrl = Controller::analytic(*ktraj);
    } else if (controller == "perturbed") {
        ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
        ctrl = Controller::perturbed(*ktraj, eps_inj, seed);
    } else if (controller == "no-kernel" || controller == "no-feedback") {
        if (checkpoint.empty())
            throw validation_error("--checkpoint is required for learned controllers");
        op = load_operator(checkpoint);
        ctrl = controller == "no-kernel" ? Controller::surrogate_kernel(*op)
                                         : Controller::surrogate_feedback(*op);
    } else {
        throw validation_error("unknown --controller '" + controller + "'");
    }

    PlantTrajectory traj = simulate(spec, sched, ctrl, tg, v0);
    std::string hash = s.hash();
    std::filesystem::create_directories(out_dir);
    auto base = std::filesystem::path(out_dir) / runid;
    write_state_csv(base.string() + "_state.csv", traj, hash, stride);
    write_scalar_csv(base.string() + "_scalar.csv", traj, hash, stride);

    // stability report against the exact kernel pair
    if (!ktraj) ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
    auto ltraj = solve_inverse_kernel_trajectory(spec, sched, grid, tg);
    auto rep = decay_envelope_check(traj, *ktraj, ltraj, sched, eps_inj, 1.5, s.theta);
    write_stability_json(rep, base.string() + "_report.json");

    double ratio = traj.initial_l2() > 0 ? traj.terminal_l2() / traj.initial_l2() : 0.0;
    std::printf("controller=%s blown_up=%d terminal_ratio=%.6e envelope_pass=%d\n",
                controller.c_str(), traj.blown_up ? 1 : 0, ratio, rep.envelope_pass ? 1 : 0);
    std::printf("wrote %s_state.csv, _scalar.csv, _report.json\n", base.string().c_str());
    if (traj.blown_up && controller != "open-loop") return kExitNumeric;
    return kExitOk;
}

int cmd_bench(const ScenarioFlags& s, const std::string& checkpoint, const std::string& dx_list,
              int reps, int slices, const std::string& out) {
    if (checkpoint.empty()) throw validation_error("--checkpoint is required for bench");
    DeepOperator op = load_operator(checkpoint);
    auto spec = CoeffSpec::chebyshev(s.sigma, s.T, s.theta, s.q);
    auto sched = GainSchedule::prescribed(s.T);

    std::vector<double> dxs;
    std::string token;
    for (char c : dx_list + ",") {
        if (c == ',') {
            if (!token.empty()) dxs.push_back(std::stod(token));
            token.clear();
        } else {
            token += c;
        }
    }
    if (dxs.empty()) throw validation_error("--dx-list is empty");

    BenchTable table = benchmark_speedup(op, spec, sched, dxs, reps, slices);
    write_bench_csv(table, out, s.hash());
    std::printf("dx,analytic_s,surrogate_s,speedup\n");
    for (const auto& r : table.rows)
        std::printf("%g,%.4f,%.4f,%.1f\n", r.dx, r.analytic_s, r.surrogate_s, r.speedup);
    std::printf("wrote %s\n", out.c_str());
    return kExitOk;
}

struct VerifyCounters {
    int passed = 0, failed = 0;
    void report(const char* name, bool ok, const char* detail = "") {
        std::printf("[%s] %s %s\n", ok ? "PASS" : "FAIL", name, detail);
        (ok ? passed : failed) += 1;
    }
};

int cmd_verify(bool quick, bool epsilon_scaling, const std::string& checkpoint,
               const std::string& data, const std::string& out_dir) {
    VerifyCounters vc;
    char detail[160];

    // reciprocity of the direct/inverse stationary pair under refinement
    {
        auto res_at = [](int n) {
            TriGrid grid = TriGrid::make(n);
            std::vector<double> gam(n, 0.5);
            auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
            auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);
            return reciprocity_residual(k, l);
        };
        double r51 = res_at(51), r101 = res_at(101);
        std::snprintf(detail, sizeof(detail), "res51=%.3e res101=%.3e", r51, r101);
        vc.report("kernel-reciprocity", r101 < 1e-2 && r101 < r51, detail);
    }

    // transform round trip
    {
        int n = 101;
        TriGrid grid = TriGrid::make(n);
        std::vector<double> gam(n, 0.5);
        auto k = solve_stationary_kernel(gam, 1.0, 1.0, grid);
        auto l = solve_stationary_kernel(gam, 1.0, 1.0, grid, 1e-8, 200, KernelKind::inverse);
        StateVector v = default_initial_state(SpaceGrid::make(n));
        auto back = inverse_transform(forward_transform(v, k), l);
        double mx = 0.0;
        for (int i = 0; i < n; ++i) mx = std::max(mx, std::abs(back.values[i] - v.values[i]));
        std::snprintf(detail, sizeof(detail), "max err=%.3e", mx);
        vc.report("transform-round-trip", mx < 1e-2, detail);
    }

    double T = 8.0, margin = 0.4;
    auto spec = CoeffSpec::chebyshev(3.3, T);
    auto sched = GainSchedule::prescribed(T);
    TriGrid grid = TriGrid::make(21);
    TimeGrid tg = TimeGrid::make(6.25e-4, T, margin);
    StateVector v0 = default_initial_state(SpaceGrid::make(21));
    auto ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
    auto ltraj = solve_inverse_kernel_trajectory(spec, sched, grid, tg);

    // closed/open loop behavior and envelopes
    {
        auto closed = simulate(spec, sched, Controller::analytic(ktraj), tg, v0);
        double ratio = closed.terminal_l2() / closed.initial_l2();
        auto rep = decay_envelope_check(closed, ktraj, ltraj, sched, 0.0);
        std::snprintf(detail, sizeof(detail), "terminal ratio=%.3e", ratio);
        vc.report("closed-loop-decay", !closed.blown_up && ratio <= 1e-2, detail);
        vc.report("decay-envelope", rep.envelope_pass, "");

        auto tr = target_residual(closed, ktraj, sched, 1.0, 1.0);
        std::snprintf(detail, sizeof(detail), "max|w(1,t)|=%.3e vs %.3e", tr.max_boundary,
                      1e-3 * tr.max_state_l2);
        vc.report("target-boundary", tr.max_boundary <= 1e-3 * tr.max_state_l2, detail);

        auto open = simulate(spec, sched, Controller::open_loop(), tg, v0);
        bool exceeded = false;
        for (const auto& st : open.states)
            if (st.l2() > 10.0 * open.initial_l2()) exceeded = true;
        vc.report("open-loop-instability", exceeded, "");
    }

    if (epsilon_scaling || !quick) {
        std::vector<double> eps{1e-3, 1e-2, 1e-1}, term;
        for (double e : eps) {
            auto traj = simulate(spec, sched, Controller::perturbed(ktraj, e, 20260808), tg, v0);
            term.push_back(traj.terminal_l2());
        }
        double s1 = std::log10(term[1] / term[0]);
        double s2 = std::log10(term[2] / term[1]);
        std::snprintf(detail, sizeof(detail), "slopes %.3f %.3f", s1, s2);
        vc.report("epsilon-scaling", std::abs(s1 - 1.0) < 0.3 && std::abs(s2 - 1.0) < 0.3, detail);
        std::printf("  eps sweep: ");
        for (std::size_t i = 0; i < eps.size(); ++i)
            std::printf("(%g -> %.3e) ", eps[i], term[i]);
        std::printf("\n");
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            std::ofstream f(std::filesystem::path(out_dir) / "epsilon_sweep.csv");
            f << "# config=" << fnv1a64_hex("epsilon-sweep") << "\neps,terminal_l2\n";
            for (std::size_t i = 0; i < eps.size(); ++i)
                f << eps[i] << "," << term[i] << "\n";
        }
    }

    if (!data.empty()) {
        try {
            Dataset ds = load_dataset(data);
            std::snprintf(detail, sizeof(detail), "%d records", ds.manifest.count);
            vc.report("dataset-checksums", true, detail);
        } catch (const io_error& e) {
            vc.report("dataset-checksums", false, e.what());
        }
    }
    if (!checkpoint.empty()) {
        DeepOperator op = load_operator(checkpoint);
        std::snprintf(detail, sizeof(detail), "train MSE=%.3e val=%.3e", op.final_train_mse,
                      op.final_val_score);
        vc.report("checkpoint-load", std::isfinite(op.final_train_mse), detail);
    }

    std::printf("verify: %d passed, %d failed\n", vc.passed, vc.failed);
    return vc.failed == 0 ? kExitOk : kExitNumeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prescribed-time boundary stabilization toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a training corpus");
    std::string gen_kind = "kernel";
    GenConfig gcfg;
    bool gen_seed_given = false;
    gen->add_option("--kind", gen_kind, "kernel | feedback")->check(CLI::IsMember({"kernel", "feedback"}));
    gen->add_option("--n", gcfg.count, "sample count (kernel) or rollouts (feedback)");
    gen->add_option("--stored-steps", gcfg.stored_steps, "stored pairs per rollout");
    gen->add_option("--seed", gcfg.seed, "rng seed")->each([&](const std::string&) { gen_seed_given = true; });
    gen->add_option("--out", gcfg.out_dir, "output directory");
    gen->add_option("--name", gcfg.name, "dataset base name");
    gen->add_option("--sigma-low", gcfg.sigma_low, "sigma range low");
    gen->add_option("--sigma-high", gcfg.sigma_high, "sigma range high");
    double gen_dx = 0.05;
    gen->add_option("--dx", gen_dx, "spatial step of the generation grid");
    gen->add_option("--dt", gcfg.dt, "time step");
    gen->add_option("--T", gcfg.T, "horizon");
    gen->add_option("--margin", gcfg.margin, "stop margin");
    gen->add_option("--theta", gcfg.theta, "diffusion coefficient");
    gen->add_option("--q", gcfg.q, "Robin coefficient");
    gen->add_option("--train-times", gcfg.n_train_times, "uniform stored times per trajectory");
    gen->add_option("--tail-refine", gcfg.n_tail_refine, "extra stored times near T-margin");
    gen->add_option("--split", gcfg.split_fraction, "train fraction");
    gen->add_option("--jobs", gcfg.jobs, "parallel generation workers");

    // train
    auto* tr = app.add_subcommand("train", "train an operator on a corpus");
    std::string tr_kind = "kernel", tr_data, tr_out = "operator";
    TrainConfig tcfg;
    int tr_width = 64, tr_depth = 3, tr_p = 32;
    bool tr_seed_given = false;
    tr->add_option("--kind", tr_kind, "kernel | feedback")->check(CLI::IsMember({"kernel", "feedback"}));
    tr->add_option("--data", tr_data, "dataset manifest path")->required();
    tr->add_option("--out", tr_out, "checkpoint base path");
    tr->add_option("--epochs", tcfg.epochs, "training epochs");
    tr->add_option("--batch", tcfg.batch, "samples per step (0 = full batch)");
    tr->add_option("--lr", tcfg.step_size, "step size");
    tr->add_option("--seed", tcfg.seed, "rng seed")->each([&](const std::string&) { tr_seed_given = true; });
    tr->add_option("--width", tr_width, "hidden width");
    tr->add_option("--depth", tr_depth, "hidden depth");
    tr->add_option("--p", tr_p, "branch/trunk output width");

    // simulate
    auto* sim = app.add_subcommand("simulate", "run the plant under a controller");
    ScenarioFlags sflags;
    add_scenario_flags(sim, sflags);
    std::string sim_controller = "analytic", sim_checkpoint, sim_runid = "run", sim_out = ".";
    double sim_eps = 0.0;
    std::uint64_t sim_seed = 1;
    bool sim_seed_given = false;
    int sim_stride = 1;
    sim->add_option("--controller", sim_controller,
                    "open-loop | analytic | no-kernel | no-feedback | perturbed")
        ->check(CLI::IsMember({"open-loop", "analytic", "no-kernel", "no-feedback", "perturbed"}));
    sim->add_option("--checkpoint", sim_checkpoint, "operator manifest for learned controllers");
    sim->add_option("--eps-inj", sim_eps, "perturbation amplitude for the perturbed controller");
    sim->add_option("--seed", sim_seed, "noise seed")->each([&](const std::string&) { sim_seed_given = true; });
    sim->add_option("--runid", sim_runid, "output file prefix");
    sim->add_option("--out", sim_out, "output directory");
    sim->add_option("--stride", sim_stride, "CSV row stride");

    // verify
    auto* ver = app.add_subcommand("verify", "run the invariant suite");
    bool ver_quick = false, ver_eps = false;
    std::string ver_checkpoint, ver_data, ver_out;
    ver->add_flag("--quick", ver_quick, "skip the epsilon sweep");
    ver->add_flag("--epsilon-scaling", ver_eps, "emit the epsilon sweep table");
    ver->add_option("--checkpoint", ver_checkpoint, "operator manifest to audit");
    ver->add_option("--data", ver_data, "dataset manifest to audit");
    ver->add_option("--out", ver_out, "directory for emitted tables");

    // bench
    auto* ben = app.add_subcommand("bench", "solver-vs-surrogate wall-time benchmark");
    ScenarioFlags bflags;
    add_scenario_flags(ben, bflags);
    std::string ben_checkpoint, ben_dx = "0.01,0.005", ben_out = "bench.csv";
    int ben_reps = 5, ben_slices = 128;
    ben->add_option("--checkpoint", ben_checkpoint, "kernel operator manifest")->required();
    ben->add_option("--dx-list", ben_dx, "comma-separated dx values");
    ben->add_option("--reps", ben_reps, "timing repetitions (median)");
    ben->add_option("--slices", ben_slices, "kernel slices per trajectory");
    ben->add_option("--bench-out", ben_out, "output CSV path");

    std::string config_path;
    for (auto* sub : {gen, tr, sim, ver, ben})
        sub->add_option("--config", config_path, "JSON config file; flags override");

    try {
        auto args = merge_config_args(argc, argv);
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), const_cast<char**>(cargs.data()));

        if (gen->parsed()) {
            gcfg.seed = env_seed_fallback(gcfg.seed, gen_seed_given);
            gcfg.tri_n = static_cast<int>(std::lround(1.0 / gen_dx)) + 1;
            return cmd_gen_data(gen_kind, gcfg);
        }
        if (tr->parsed()) {
            tcfg.seed = env_seed_fallback(tcfg.seed, tr_seed_given);
            return cmd_train(tr_kind, tr_data, tr_out, tcfg, tr_width, tr_depth, tr_p);
        }
        if (sim->parsed()) {
            sim_seed = env_seed_fallback(sim_seed, sim_seed_given);
            return cmd_simulate(sflags, sim_controller, sim_checkpoint, sim_eps, sim_seed,
                                sim_runid, sim_out, sim_stride);
        }
        if (ver->parsed())
            return cmd_verify(ver_quick, ver_eps, ver_checkpoint, ver_data, ver_out);
        if (ben->parsed())
            return cmd_bench(bflags, ben_checkpoint, ben_dx, ben_reps, ben_slices, ben_out);
        return kExitValidation;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    } catch (const validation_error& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
}
