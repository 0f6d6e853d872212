#include "ptstab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "ptstab/hash.hpp"
#include "ptstab/plant.hpp"

namespace ptstab {

namespace {

double uniform01(std::mt19937_64& rng) { return (rng() >> 11) * (1.0 / 9007199254740992.0); }

void write_blob(const std::string& path, const std::vector<double>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw io_error("short write to " + path);
}

std::vector<double> read_blob(const std::string& path, std::size_t count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot read " + path);
    std::vector<double> data(count);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw io_error("truncated blob " + path);
    return data;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["format"] = "ptstab-dataset";
    j["version"] = 1;
    j["kind"] = m.kind;
    j["count"] = m.count;
    j["input_dim"] = m.input_dim;
    j["target_dim"] = m.target_dim;
    j["sigma_low"] = m.sigma_low;
    j["sigma_high"] = m.sigma_high;
    j["seed"] = m.seed;
    j["split_fraction"] = m.split_fraction;
    j["tri_n"] = m.tri_n;
    j["n_x"] = m.n_x;
    j["dt"] = m.dt;
    j["T"] = m.T;
    j["margin"] = m.margin;
    j["theta"] = m.theta;
    j["q"] = m.q;
    j["train_times"] = m.train_times;
    j["sigmas"] = m.sigmas;
    j["amplitudes"] = m.amplitudes;
    j["sensors_x"] = m.sensors_x;
    j["sensors_t"] = m.sensors_t;
    j["sensors_v"] = m.sensors_v;
    j["rollouts"] = m.rollouts;
    j["stored_steps"] = m.stored_steps;
    j["inputs_file"] = m.inputs_file;
    j["targets_file"] = m.targets_file;
    j["inputs_checksum"] = m.inputs_checksum;
    j["targets_checksum"] = m.targets_checksum;
    j["failures"] = m.failures;
    // record layout documentation
    if (m.kind == "kernel_pairs") {
        j["input_record"] = "lambda on x_sensors x t_sensors, row-major, x outer";
        j["target_record"] = "kernel slices at train_times, each lower-triangular row-major";
    } else {
        j["input_record"] = "lambda sensors, then state at v_sensors, then t";
        j["target_record"] = "boundary control U(t)";
    }
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ptstab-dataset") throw io_error("not a dataset manifest");
    if (j.value("version", 0) != 1) throw io_error("unsupported dataset format version");
    DatasetManifest m;
    m.kind = j.at("kind");
    m.count = j.at("count");
    m.input_dim = j.at("input_dim");
    m.target_dim = j.at("target_dim");
    m.sigma_low = j.at("sigma_low");
    m.sigma_high = j.at("sigma_high");
    m.seed = j.at("seed");
    m.split_fraction = j.at("split_fraction");
    m.tri_n = j.at("tri_n");
    m.n_x = j.at("n_x");
    m.dt = j.at("dt");
    m.T = j.at("T");
    m.margin = j.at("margin");
    m.theta = j.at("theta");
    m.q = j.at("q");
    m.train_times = j.at("train_times").get<std::vector<double>>();
    m.sigmas = j.at("sigmas").get<std::vector<double>>();
    m.amplitudes = j.at("amplitudes").get<std::vector<double>>();
    m.sensors_x = j.at("sensors_x");
    m.sensors_t = j.at("sensors_t");
    m.sensors_v = j.at("sensors_v");
    m.rollouts = j.at("rollouts");
    m.stored_steps = j.at("stored_steps");
    m.inputs_file = j.at("inputs_file");
    m.targets_file = j.at("targets_file");
    m.inputs_checksum = j.at("inputs_checksum");
    m.targets_checksum = j.at("targets_checksum");
    m.failures = j.at("failures").get<std::vector<std::string>>();
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path);
    f << manifest_to_json(m).dump(2) << "\n";
}

/// Deterministic split: Fisher-Yates shuffle of indices with the manifest seed.
void make_split(const DatasetManifest& m, std::vector<int>& train, std::vector<int>& val) {
    std::vector<int> idx(m.count);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(m.seed ^ 0x5b1f5eedu);
    for (int i = m.count - 1; i > 0; --i) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    int n_train = static_cast<int>(std::lround(m.split_fraction * m.count));
    n_train = std::clamp(n_train, 1, m.count);
    train.assign(idx.begin(), idx.begin() + n_train);
    val.assign(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
}

void run_indexed_jobs(int count, int jobs, const std::function<void(int)>& work) {
    if (jobs <= 1) {
        for (int i = 0; i < count; ++i) work(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    int n_threads = std::min(jobs, count);
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) work(i);
        });
    for (auto& t : pool) t.join();
}

} // namespace

SensorLayout Dataset::layout() const {
    return SensorLayout::standard(manifest.T - manifest.margin, manifest.sensors_x,
                                  manifest.sensors_t, manifest.sensors_v);
}

std::vector<double> sample_sigma(std::uint64_t seed, int n, double low, double high) {
    if (!(low < high)) throw validation_error("sample_sigma: need low < high");
    if (n < 1) throw validation_error("sample_sigma: need n >= 1");
    std::mt19937_64 rng(seed);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = low + (high - low) * uniform01(rng);
    return out;
}

std::vector<double> training_times(double t_end, int n_uniform, int n_tail) {
    std::vector<double> ts;
    for (int i = 0; i < n_uniform; ++i) ts.push_back(t_end * i / (n_uniform - 1));
    // geometric refinement toward t_end, where the coefficient blow-up makes the
    // kernel's own time scale shrink like the remaining horizon
    if (n_tail > 0) {
        double tail = std::min(2.0, 0.3 * t_end);
        double rho = std::pow(0.04, 1.0 / n_tail);
        for (int j = 0; j <= n_tail; ++j) ts.push_back(t_end - tail * std::pow(rho, j));
    }
    ts.push_back(t_end);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-9; }),
             ts.end());
    return ts;
}

std::string manifest_path_for(const GenConfig& cfg) {
    return (std::filesystem::path(cfg.out_dir) / (cfg.name + ".manifest.json")).string();
}

DatasetManifest generate_kernel_dataset(const GenConfig& cfg) {
    if (!cfl_check(cfg.theta, 1.0 / (cfg.tri_n - 1), cfg.dt))
        throw numeric_error("generate_kernel_dataset: CFL condition violated for the generation grid");
    std::filesystem::create_directories(cfg.out_dir);

    const double t_end = cfg.T - cfg.margin;
    TriGrid grid = TriGrid::make(cfg.tri_n);
    SensorLayout layout = SensorLayout::standard(t_end);
    GainSchedule sched = GainSchedule::prescribed(cfg.T);

    DatasetManifest m;
    m.kind = "kernel_pairs";
    m.sigma_low = cfg.sigma_low;
    m.sigma_high = cfg.sigma_high;
    m.seed = cfg.seed;
    m.split_fraction = cfg.split_fraction;
    m.tri_n = cfg.tri_n;
    m.n_x = cfg.tri_n;
    m.dt = cfg.dt;
    m.T = cfg.T;
    m.margin = cfg.margin;
    m.theta = cfg.theta;
    m.q = cfg.q;
    m.train_times = training_times(t_end, cfg.n_train_times, cfg.n_tail_refine);
    m.input_dim = layout.lambda_dim();
    m.target_dim = static_cast<int>(m.train_times.size() * grid.node_count());

    std::vector<double> sigmas = sample_sigma(cfg.seed, cfg.count, cfg.sigma_low, cfg.sigma_high);
    std::vector<std::vector<double>> inputs(cfg.count), targets(cfg.count);
    std::vector<std::string> failures(cfg.count);

    run_indexed_jobs(cfg.count, cfg.jobs, [&](int s) {
        try {
            CoeffSpec spec = CoeffSpec::chebyshev(sigmas[s], cfg.T, cfg.theta, cfg.q);
            inputs[s] = lambda_sensor_values(spec, layout);
            auto slices = solve_kernel_slices(spec, sched, grid, t_end, m.train_times);
            std::vector<double> tgt;
            tgt.reserve(m.target_dim);
            for (const auto& sl : slices) {
                auto diag = make_diagonal_data(spec, sched, SpaceGrid::make(grid.n), sl.t);
                if (diagonal_violation(sl, diag) > 1e-8)
                    throw numeric_error("kernel slice violates the diagonal condition");
                tgt.insert(tgt.end(), sl.values.begin(), sl.values.end());
            }
            targets[s] = std::move(tgt);
        } catch (const std::exception& e) {
            failures[s] = e.what();
        }
    });

    std::vector<double> in_blob, tgt_blob;
    for (int s = 0; s < cfg.count; ++s) {
        if (!failures[s].empty()) {
            m.failures.push_back("sample " + std::to_string(s) + ": " + failures[s]);
            continue;
        }
        m.sigmas.push_back(sigmas[s]);
        in_blob.insert(in_blob.end(), inputs[s].begin(), inputs[s].end());
        tgt_blob.insert(tgt_blob.end(), targets[s].begin(), targets[s].end());
    }
    m.count = static_cast<int>(m.sigmas.size());

    auto dir = std::filesystem::path(cfg.out_dir);
    m.inputs_file = (dir / (cfg.name + ".inputs.bin")).string();
    m.targets_file = (dir / (cfg.name + ".targets.bin")).string();
    write_blob(m.inputs_file, in_blob);
    write_blob(m.targets_file, tgt_blob);
    m.inputs_checksum = fnv1a64_file_hex(m.inputs_file);
    m.targets_checksum = fnv1a64_file_hex(m.targets_file);
    write_manifest(m, manifest_path_for(cfg));
    return m;
}

DatasetManifest generate_feedback_dataset(const GenConfig& cfg) {
    if (!cfl_check(cfg.theta, 1.0 / (cfg.tri_n - 1), cfg.dt))
        throw numeric_error("generate_feedback_dataset: CFL condition violated");
    std::filesystem::create_directories(cfg.out_dir);

    const double t_end = cfg.T - cfg.margin;
    TriGrid grid = TriGrid::make(cfg.tri_n);
    SpaceGrid sgrid = SpaceGrid::make(cfg.tri_n);
    SensorLayout layout = SensorLayout::standard(t_end);
    GainSchedule sched = GainSchedule::prescribed(cfg.T);
    TimeGrid tg = TimeGrid::make(cfg.dt, cfg.T, cfg.margin);

    DatasetManifest m;
    m.kind = "feedback_triples";
    m.sigma_low = cfg.sigma_low;
    m.sigma_high = cfg.sigma_high;
    m.seed = cfg.seed;
    m.split_fraction = cfg.split_fraction;
    m.tri_n = cfg.tri_n;
    m.n_x = cfg.tri_n;
    m.dt = cfg.dt;
    m.T = cfg.T;
    m.margin = cfg.margin;
    m.theta = cfg.theta;
    m.q = cfg.q;
    m.rollouts = cfg.count;
    m.stored_steps = cfg.stored_steps;
    m.input_dim = layout.lambda_dim() + static_cast<int>(layout.v_sensors.size()) + 1;
    m.target_dim = 1;

    std::vector<double> sigmas = sample_sigma(cfg.seed, cfg.count, cfg.sigma_low, cfg.sigma_high);
    std::vector<double> amplitudes(cfg.count);
    {
        std::mt19937_64 rng(cfg.seed ^ 0xa3f1c9u);
        for (int s = 0; s < cfg.count; ++s) amplitudes[s] = 1.0 + 19.0 * uniform01(rng);
    }

    // stored sample times, uniform over the horizon
    std::vector<int> stored_idx(cfg.stored_steps);
    for (int s = 0; s < cfg.stored_steps; ++s)
        stored_idx[s] = static_cast<int>(std::lround(static_cast<double>(s) * tg.n_t /
                                                     (cfg.stored_steps - 1)));

    std::vector<std::vector<double>> inputs(cfg.count), targets(cfg.count);
    std::vector<std::string> failures(cfg.count);

    run_indexed_jobs(cfg.count, cfg.jobs, [&](int s) {
        try {
            CoeffSpec spec = CoeffSpec::chebyshev(sigmas[s], cfg.T, cfg.theta, cfg.q);
            auto lam = lambda_sensor_values(spec, layout);
            KernelTrajectory ktraj = solve_kernel_trajectory(spec, sched, grid, tg);
            StateVector v0 = default_initial_state(sgrid, amplitudes[s]);
            PlantTrajectory traj = simulate(spec, sched, Controller::analytic(ktraj), tg, v0);
            if (traj.blown_up) throw numeric_error("closed-loop rollout blew up");
            std::vector<double>& in = inputs[s];
            std::vector<double>& tgt = targets[s];
            for (int si : stored_idx) {
                const StateVector& v = traj.states.at(si);
                GainRow g = control_gain(ktraj.slice_at_step(si));
                double U = control_U(g, v);
                in.insert(in.end(), lam.begin(), lam.end());
                auto vs = state_sensor_values(v, layout);
                in.insert(in.end(), vs.begin(), vs.end());
                in.push_back(tg.t(si));
                tgt.push_back(U);
            }
        } catch (const std::exception& e) {
            failures[s] = e.what();
        }
    });

    std::vector<double> in_blob, tgt_blob;
    for (int s = 0; s < cfg.count; ++s) {
        if (!failures[s].empty()) {
            m.failures.push_back("rollout " + std::to_string(s) + ": " + failures[s]);
            continue;
        }
        for (int r = 0; r < cfg.stored_steps; ++r) m.sigmas.push_back(sigmas[s]);
        m.amplitudes.push_back(amplitudes[s]);
        in_blob.insert(in_blob.end(), inputs[s].begin(), inputs[s].end());
        tgt_blob.insert(tgt_blob.end(), targets[s].begin(), targets[s].end());
    }
    m.count = static_cast<int>(m.sigmas.size());

    auto dir = std::filesystem::path(cfg.out_dir);
    m.inputs_file = (dir / (cfg.name + ".inputs.bin")).string();
    m.targets_file = (dir / (cfg.name + ".targets.bin")).string();
    write_blob(m.inputs_file, in_blob);
    write_blob(m.targets_file, tgt_blob);
    m.inputs_checksum = fnv1a64_file_hex(m.inputs_file);
    m.targets_checksum = fnv1a64_file_hex(m.targets_file);
    write_manifest(m, manifest_path_for(cfg));
    return m;
}

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw io_error("cannot read " + manifest_path);
    nlohmann::json j;
    f >> j;
    Dataset ds;
    ds.manifest = manifest_from_json(j);

    if (fnv1a64_file_hex(ds.manifest.inputs_file) != ds.manifest.inputs_checksum)
        throw io_error("dataset corruption: checksum mismatch on " + ds.manifest.inputs_file);
    if (fnv1a64_file_hex(ds.manifest.targets_file) != ds.manifest.targets_checksum)
        throw io_error("dataset corruption: checksum mismatch on " + ds.manifest.targets_file);

    ds.inputs = read_blob(ds.manifest.inputs_file,
                          static_cast<std::size_t>(ds.manifest.count) * ds.manifest.input_dim);
    ds.targets = read_blob(ds.manifest.targets_file,
                           static_cast<std::size_t>(ds.manifest.count) * ds.manifest.target_dim);
    make_split(ds.manifest, ds.train_indices, ds.val_indices);
    return ds;
}

} // namespace ptstab
