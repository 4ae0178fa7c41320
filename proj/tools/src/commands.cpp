#include "pipelearn_cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "pipelearn/orchestrator.hpp"
#include "pipelearn/sim.hpp"

namespace pipelearn::cli {
namespace {

using nlohmann::json;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A violated in-command invariant (score range, conservation, cardinality);
// maps to the dedicated CI exit code.
struct CheckError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shared knobs of the simulation-space commands (efficiency, opt-score,
// trace); equivalence takes a full TrainingConfig instead.
struct StudyConfig {
    std::vector<std::string> model_presets;
    std::vector<std::string> networks;
    std::vector<ScheduleMode> modes;
    std::size_t devices = 2;
    std::size_t dataset_size = 1000;
    std::size_t batch_size = 100;
    double device_speed_factor = 1.0;
    double server_speed_factor = 1.0;
    double fedavg_seconds_per_mb = 1e-4;
    std::size_t cases = 20;           // opt-score draws
    std::size_t split_point = 0;      // trace; 0 = selector's choice
    std::size_t parallel_batches = 0; // trace; 0 = selector's choice
};

StudyConfig study_defaults(std::size_t dataset, std::size_t batch) {
    StudyConfig s;
    s.model_presets = model_preset_names();
    s.networks = network_preset_names();
    s.modes = {ScheduleMode::PipeLearnParallelServer, ScheduleMode::PipeLearnSequentialServer,
               ScheduleMode::ConventionalSplit, ScheduleMode::FederatedLocal};
    s.dataset_size = dataset;
    s.batch_size = batch;
    return s;
}

json study_to_json(const StudyConfig& s) {
    json j;
    j["model_presets"] = s.model_presets;
    j["networks"] = s.networks;
    json modes = json::array();
    for (ScheduleMode m : s.modes) modes.push_back(schedule_mode_name(m));
    j["modes"] = modes;
    j["devices"] = s.devices;
    j["dataset_size"] = s.dataset_size;
    j["batch_size"] = s.batch_size;
    j["device_speed_factor"] = s.device_speed_factor;
    j["server_speed_factor"] = s.server_speed_factor;
    j["fedavg_seconds_per_mb"] = s.fedavg_seconds_per_mb;
    j["cases"] = s.cases;
    j["split_point"] = s.split_point;
    j["parallel_batches"] = s.parallel_batches;
    return j;
}

StudyConfig load_study(const CommandOptions& options, StudyConfig defaults) {
    if (options.config_path.empty()) return defaults;
    std::ifstream in(options.config_path);
    if (!in) throw std::invalid_argument("cannot open config file: " + options.config_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string{"config parse error: "} + e.what());
    }
    StudyConfig s = defaults;
    if (j.contains("model_presets"))
        s.model_presets = j.at("model_presets").get<std::vector<std::string>>();
    if (j.contains("networks")) s.networks = j.at("networks").get<std::vector<std::string>>();
    if (j.contains("modes")) {
        s.modes.clear();
        for (const auto& m : j.at("modes"))
            s.modes.push_back(schedule_mode_from_name(m.get<std::string>()));
    }
    s.devices = j.value("devices", s.devices);
    s.dataset_size = j.value("dataset_size", s.dataset_size);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.device_speed_factor = j.value("device_speed_factor", s.device_speed_factor);
    s.server_speed_factor = j.value("server_speed_factor", s.server_speed_factor);
    s.fedavg_seconds_per_mb = j.value("fedavg_seconds_per_mb", s.fedavg_seconds_per_mb);
    s.cases = j.value("cases", s.cases);
    s.split_point = j.value("split_point", s.split_point);
    s.parallel_batches = j.value("parallel_batches", s.parallel_batches);
    if (s.devices < 1) throw std::invalid_argument("config: devices must be >= 1");
    if (s.cases < 1) throw std::invalid_argument("config: cases must be >= 1");
    if (s.model_presets.empty() || s.networks.empty() || s.modes.empty())
        throw std::invalid_argument("config: presets, networks and modes must be non-empty");
    return s;
}

void apply_filters(const CommandOptions& options, StudyConfig& s) {
    if (!options.network_filter.empty()) {
        network_preset(options.network_filter);  // rejects unknown names
        s.networks = {options.network_filter};
    }
    if (!options.mode_filter.empty()) s.modes = {schedule_mode_from_name(options.mode_filter)};
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t config_hash(const json& canonical, const CommandOptions& options) {
    std::ostringstream key;
    key << canonical.dump() << "|seed=" << options.seed << "|preset="
        << options.network_filter << "|mode=" << options.mode_filter;
    return fnv1a(key.str());
}

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);  // fixed \n endings on every platform
    if (!out) throw IoError("cannot open output file: " + path.string());
    return out;
}

std::filesystem::path ensure_out_dir(const CommandOptions& options) {
    std::filesystem::path dir = options.out_dir.empty() ? "." : options.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + dir.string());
    return dir;
}

void write_header(std::ostream& out, std::string_view command, std::uint64_t hash,
                  std::uint64_t seed) {
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
    out << "# pipelearn " << command << " v1\n";
    out << "# config_hash=" << hex << " seed=" << seed << "\n";
}

// Parameter choice per mode: the selector for the pipelined modes, the best
// N = 1 split for conventional split training, the full model for local-only.
PipelineParams params_for_mode(ScheduleMode mode, const LayerProfiles& profile,
                               const NetworkProfile& net, const EpochShape& shape) {
    const std::size_t q_count = profile.layer_count();
    switch (mode) {
        case ScheduleMode::PipeLearnParallelServer:
        case ScheduleMode::PipeLearnSequentialServer:
            return select_params(profile, net, shape).per_device.at(0);
        case ScheduleMode::ConventionalSplit: {
            PipelineParams best{1, 1};
            double best_s = std::numeric_limits<double>::infinity();
            for (std::size_t p = 1; p <= q_count; ++p) {
                const double s =
                    epoch_time(profile, net, p, 1, shape, ScheduleMode::ConventionalSplit);
                if (s < best_s) {
                    best_s = s;
                    best = {p, 1};
                }
            }
            return best;
        }
        case ScheduleMode::FederatedLocal:
            return {q_count, 1};
    }
    throw std::invalid_argument("unknown schedule mode");
}

int run_guarded(const CommandOptions& options, int (*body)(const CommandOptions&)) {
    try {
        return body(options);
    } catch (const CheckError& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int efficiency_body(const CommandOptions& options) {
    StudyConfig s = load_study(options, study_defaults(1000, 100));
    apply_filters(options, s);
    const std::uint64_t hash = config_hash(study_to_json(s), options);
    const EpochShape shape{s.dataset_size, s.batch_size};

    std::ofstream out = open_out(ensure_out_dir(options) / "efficiency.csv");
    write_header(out, "efficiency", hash, options.seed);
    out << "model,network,mode,device,split_point,parallel_batches,iterations,"
           "estimated_epoch_s,simulated_epoch_s,server_busy_s,server_idle_s,"
           "device_busy_s,device_idle_s,transmitted_mb,throughput_mbps\n";

    std::size_t rows = 0;
    for (std::size_t pi = 0; pi < s.model_presets.size(); ++pi) {
        std::vector<LayerProfiles> profiles;
        for (std::size_t k = 0; k < s.devices; ++k)
            profiles.push_back(profile_model(s.model_presets[pi], s.device_speed_factor,
                                             s.server_speed_factor,
                                             mix(options.seed ^ (pi * 131 + k))));
        for (const std::string& net_name : s.networks) {
            const NetworkProfile net = network_preset(net_name);
            const std::vector<NetworkProfile> nets(s.devices, net);
            for (ScheduleMode mode : s.modes) {
                SimJob job;
                job.mode = mode;
                job.profiles = profiles;
                job.nets = nets;
                job.shape = shape;
                job.fedavg_seconds_per_mb = s.fedavg_seconds_per_mb;
                for (std::size_t k = 0; k < s.devices; ++k)
                    job.params.push_back(params_for_mode(mode, profiles[k], net, shape));
                const RunMetrics m = simulate(job);
                for (std::size_t k = 0; k < s.devices; ++k) {
                    const PipelineParams& p = job.params[k];
                    const bool pipelined = mode == ScheduleMode::PipeLearnParallelServer ||
                                           mode == ScheduleMode::PipeLearnSequentialServer;
                    const std::size_t iters =
                        shape.iterations(pipelined ? p.parallel_batches : 1);
                    const double estimate = epoch_time(profiles[k], net, p.split_point,
                                                       p.parallel_batches, shape, mode);
                    out << s.model_presets[pi] << ',' << net_name << ','
                        << schedule_mode_name(mode) << ',' << k + 1 << ',' << p.split_point
                        << ',' << p.parallel_batches << ',' << iters << ',' << fmt(estimate)
                        << ',' << fmt(m.makespan) << ',' << fmt(m.server_busy) << ','
                        << fmt(m.server_idle) << ',' << fmt(m.device_busy[k]) << ','
                        << fmt(m.device_idle[k]) << ',' << fmt(m.total_transmitted_mb) << ','
                        << fmt(m.avg_throughput_mbps) << '\n';
                    ++rows;
                }
            }
        }
    }
    const std::size_t expected =
        s.model_presets.size() * s.networks.size() * s.modes.size() * s.devices;
    if (rows != expected)
        throw CheckError("efficiency: wrote " + std::to_string(rows) + " rows, expected " +
                         std::to_string(expected));
    if (!options.quiet)
        std::cout << "efficiency: wrote " << rows << " rows to "
                  << (std::filesystem::path(options.out_dir) / "efficiency.csv").string()
                  << "\n";
    return kExitOk;
}

int optimizer_score_body(const CommandOptions& options) {
    StudyConfig s = load_study(options, study_defaults(1000, 100));
    apply_filters(options, s);
    const std::uint64_t hash = config_hash(study_to_json(s), options);
    const EpochShape shape{s.dataset_size, s.batch_size};

    std::ofstream out = open_out(ensure_out_dir(options) / "opt_score.csv");
    write_header(out, "opt-score", hash, options.seed);
    out << "case,model,network,device_speed_factor,server_speed_factor,split_selected,"
           "batches_selected,split_oracle,batches_oracle,estimated_epoch_s,"
           "selected_epoch_s,oracle_epoch_s,score\n";

    double min_score = 1.0;
    std::size_t hits95 = 0;
    std::size_t hits90 = 0;
    for (std::size_t c = 0; c < s.cases; ++c) {
        std::mt19937_64 rng(mix(options.seed ^ (c + 1)));
        std::uniform_real_distribution<double> dev_range(0.1, 0.3);
        std::uniform_real_distribution<double> srv_range(8.0, 16.0);
        const std::string& preset = s.model_presets[c % s.model_presets.size()];
        const std::string& net_name = s.networks[c % s.networks.size()];
        const double dev_factor = dev_range(rng);
        const double srv_factor = srv_range(rng);
        const LayerProfiles profile = profile_model(preset, dev_factor, srv_factor, rng());
        const NetworkProfile net = network_preset(net_name);

        const Selection sel = select_params(profile, net, shape);
        const PipelineParams chosen = sel.per_device.at(0);

        SimJob base;
        base.params = {chosen};
        base.profiles = {profile};
        base.nets = {net};
        base.shape = shape;
        base.fedavg_seconds_per_mb = s.fedavg_seconds_per_mb;
        const SearchResult truth = exhaustive_search(base);
        const auto true_epoch = [&](const PipelineParams& p) {
            const std::size_t idx =
                (p.split_point - 1) * s.batch_size + (p.parallel_batches - 1);
            return truth.table.at(idx).epoch_s;
        };
        const double sc = score(chosen, truth.best, true_epoch);
        if (!(sc > 0.0 && sc <= 1.0 + 1e-12))
            throw CheckError("opt-score: score out of (0, 1] in case " + std::to_string(c + 1));
        if (truth.best_epoch_s > true_epoch(chosen) + 1e-12)
            throw CheckError("opt-score: oracle slower than selection in case " +
                             std::to_string(c + 1));

        min_score = std::min(min_score, sc);
        if (sc >= 0.95) ++hits95;
        if (sc >= 0.90) ++hits90;
        out << c + 1 << ',' << preset << ',' << net_name << ',' << fmt(dev_factor) << ','
            << fmt(srv_factor) << ',' << chosen.split_point << ',' << chosen.parallel_batches
            << ',' << truth.best.split_point << ',' << truth.best.parallel_batches << ','
            << fmt(sel.estimated_epoch_s.at(0)) << ',' << fmt(true_epoch(chosen)) << ','
            << fmt(truth.best_epoch_s) << ',' << fmt(sc) << '\n';
    }
    if (!options.quiet)
        std::cout << "opt-score: " << s.cases << " cases, min score " << fmt(min_score)
                  << ", >=0.95 on " << hits95 << ", >=0.90 on " << hits90 << "\n";
    return kExitOk;
}

TrainingConfig default_equivalence_config() {
    TrainingConfig c;
    c.model.widths = {8, 16, 4};
    c.model.activations = {Activation::ReLU, Activation::Softmax};
    c.devices = 2;
    c.data = {{11, 500}, {12, 500}};
    c.separation = 3.0;
    c.batch_size = 50;
    c.learning_rate = 0.05;
    c.epochs = 10;
    c.validation_samples = 200;
    c.params = {{1, 5}};
    return c;
}

int equivalence_body(const CommandOptions& options) {
    TrainingConfig cfg = options.config_path.empty()
                             ? default_equivalence_config()
                             : load_config_file(options.config_path);
    if (!options.mode_filter.empty())
        cfg.mode = schedule_mode_from_name(options.mode_filter);
    if (!options.network_filter.empty()) {
        network_preset(options.network_filter);
        cfg.network_preset = options.network_filter;
    }
    if (cfg.mode == ScheduleMode::FederatedLocal)
        throw std::invalid_argument(
            "equivalence compares a split mode against the local-update reference; "
            "pick pipelearn, pipelearn-seq or sfl");
    if (options.seed != 1) {
        cfg.init_seed += options.seed - 1;
        for (DeviceDataSpec& d : cfg.data) d.seed += options.seed - 1;
        cfg.validation_seed += options.seed - 1;
    }
    const std::uint64_t hash = config_hash(json::parse(config_to_json(cfg)), options);

    const TrainingResult split = run_training(cfg);
    const TrainingResult reference = run_fl_reference(cfg);
    if (split.history.size() != reference.history.size())
        throw std::runtime_error("equivalence: epoch counts diverged");

    std::ofstream out = open_out(ensure_out_dir(options) / "equivalence.csv");
    write_header(out, "equivalence", hash, options.seed);
    out << "epoch,split_train_loss,reference_train_loss,abs_diff,split_val_loss,"
           "reference_val_loss,split_val_accuracy,reference_val_accuracy\n";
    double max_diff = 0.0;
    for (std::size_t e = 0; e < split.history.size(); ++e) {
        const EpochRecord& a = split.history[e];
        const EpochRecord& b = reference.history[e];
        const double diff = std::fabs(a.train_loss - b.train_loss);
        max_diff = std::max(max_diff, diff);
        out << a.epoch << ',' << fmt(a.train_loss) << ',' << fmt(b.train_loss) << ','
            << fmt(diff) << ',' << fmt(a.val_loss) << ',' << fmt(b.val_loss) << ','
            << fmt(a.val_accuracy) << ',' << fmt(b.val_accuracy) << '\n';
    }
    if (!options.quiet)
        std::cout << "equivalence: max train-loss diff " << fmt(max_diff) << " over "
                  << split.history.size() << " epochs\n";
    return kExitOk;
}

int trace_body(const CommandOptions& options) {
    StudyConfig s = load_study(options, study_defaults(1000, 100));
    apply_filters(options, s);
    const std::uint64_t hash = config_hash(study_to_json(s), options);
    const EpochShape shape{s.dataset_size, s.batch_size};
    const std::string& preset = s.model_presets.front();
    const std::string& net_name = s.networks.front();
    const ScheduleMode mode = s.modes.front();
    const NetworkProfile net = network_preset(net_name);

    SimJob job;
    job.mode = mode;
    job.shape = shape;
    job.fedavg_seconds_per_mb = s.fedavg_seconds_per_mb;
    job.record_trace = true;
    for (std::size_t k = 0; k < s.devices; ++k) {
        job.profiles.push_back(profile_model(preset, s.device_speed_factor,
                                             s.server_speed_factor, mix(options.seed ^ k)));
        job.nets.push_back(net);
        job.params.push_back(s.split_point > 0 && s.parallel_batches > 0
                                 ? PipelineParams{s.split_point, s.parallel_batches}
                                 : params_for_mode(mode, job.profiles[k], net, shape));
    }
    const RunMetrics m = simulate(job);

    const std::filesystem::path dir = ensure_out_dir(options);
    {
        std::ofstream out = open_out(dir / "trace.csv");
        write_header(out, "trace", hash, options.seed);
        write_trace_csv(out, m);
    }
    {
        std::ofstream out = open_out(dir / "lanes.csv");
        write_header(out, "trace", hash, options.seed);
        out << "lane,busy_s,idle_s,makespan_s\n";
        for (const LaneUsage& lane : m.lanes) {
            if (std::fabs(lane.busy + lane.idle - m.makespan) > 1e-9)
                throw CheckError("trace: busy + idle != makespan on lane " + lane.lane);
            out << lane.lane << ',' << fmt(lane.busy) << ',' << fmt(lane.idle) << ','
                << fmt(m.makespan) << '\n';
        }
    }
    {
        // Single-iteration earliest-start schedule of device 1 for plotting.
        const PipelineParams& p = job.params.front();
        const std::size_t n_par =
            mode == ScheduleMode::PipeLearnParallelServer ||
                    mode == ScheduleMode::PipeLearnSequentialServer
                ? p.parallel_batches
                : 1;
        const StageGraph graph = build_iteration_graph(n_par, 1);
        const StageTimes times = stage_times(graph, job.profiles[0], net, p.split_point);
        std::ofstream out = open_out(dir / "schedule.csv");
        write_header(out, "trace", hash, options.seed);
        write_schedule_csv(out, earliest_start_schedule(graph, times));
    }
    if (!options.quiet)
        std::cout << "trace: makespan " << fmt(m.makespan) << " s, " << m.trace.size()
                  << " events, server idle " << fmt(m.server_idle) << " s\n";
    return kExitOk;
}

}  // namespace

int cmd_efficiency(const CommandOptions& options) {
    return run_guarded(options, efficiency_body);
}

int cmd_optimizer_score(const CommandOptions& options) {
    return run_guarded(options, optimizer_score_body);
}

int cmd_equivalence(const CommandOptions& options) {
    return run_guarded(options, equivalence_body);
}

int cmd_trace(const CommandOptions& options) {
    return run_guarded(options, trace_body);
}

}  // namespace pipelearn::cli
