// Acceptance gate: every release criterion of the pipelined-training stack,
// one test case per criterion, each printing a single ACCEPT line. The checks
// recompute expectations through independent routes (longest path vs event
// simulation, dependency table restated, gradients vs the unsplit model,
// micro-batch algebra vs full-batch updates, selector vs exhaustive sweep).

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pipelearn_cli/commands.hpp"
#include "pipelearn/orchestrator.hpp"
#include "test_support.hpp"

using namespace pipelearn;

namespace {

struct Criterion {
    std::string name;
    bool ok = true;
    std::size_t checks = 0;
    std::string log;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    explicit Criterion(std::string n) : name(std::move(n)) {}

    void expect(bool condition, const std::string& detail) {
        ++checks;
        if (condition) return;
        ok = false;
        if (log.size() < 4000) log += "  " + detail + "\n";
    }

    void finish(double budget_s) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        expect(elapsed <= budget_s,
               "runtime " + std::to_string(elapsed) + " s exceeded the " +
                   std::to_string(budget_s) + " s budget");
        std::printf("ACCEPT %s: %s (%zu checks, %.2f s)\n", name.c_str(),
                    ok ? "PASS" : "FAIL", checks, elapsed);
        std::fflush(stdout);
        const std::string message = name + (log.empty() ? std::string{} : "\n" + log);
        CHECK_MESSAGE(ok, message);
    }
};

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = normal(rng);
    return m;
}

Matrix one_hot_rows(std::mt19937_64& rng, std::size_t rows, std::size_t classes) {
    Matrix m(rows, classes);
    for (std::size_t r = 0; r < rows; ++r) m.at(r, rng() % classes) = 1.0;
    return m;
}

SequentialModel random_model(std::mt19937_64& rng, std::size_t max_depth = 4) {
    const std::size_t q_count = 1 + rng() % max_depth;
    std::vector<std::size_t> widths(q_count + 1);
    for (std::size_t& w : widths) w = 1 + rng() % 8;
    std::vector<Activation> acts(q_count, Activation::ReLU);
    for (std::size_t q = 0; q + 1 < q_count; ++q)
        if (rng() % 2 == 0) acts[q] = Activation::Identity;
    acts.back() = rng() % 2 == 0 ? Activation::Softmax : Activation::Identity;
    return make_model(widths, acts, rng());
}

Matrix labels_for(std::mt19937_64& rng, const SequentialModel& model, std::size_t rows) {
    return infer_loss_kind(model) == LossKind::CrossEntropy
               ? one_hot_rows(rng, rows, model.output_dim())
               : random_matrix(rng, rows, model.output_dim());
}

double grads_diff(const ModelGrads& a, const ModelGrads& b, std::size_t a_off = 0) {
    double worst = 0.0;
    for (std::size_t q = 0; q < b.size(); ++q) {
        worst = std::max(worst, max_abs_diff(a[a_off + q].weight_grad, b[q].weight_grad));
        for (std::size_t i = 0; i < b[q].bias_grad.size(); ++i)
            worst = std::max(worst,
                             std::fabs(a[a_off + q].bias_grad[i] - b[q].bias_grad[i]));
    }
    return worst;
}

double model_diff(const SequentialModel& a, const SequentialModel& b) {
    double worst = 0.0;
    for (std::size_t q = 0; q < a.layer_count(); ++q) {
        worst = std::max(worst, max_abs_diff(a.layer(q).weights, b.layer(q).weights));
        for (std::size_t i = 0; i < a.layer(q).bias.size(); ++i)
            worst = std::max(worst, std::fabs(a.layer(q).bias[i] - b.layer(q).bias[i]));
    }
    return worst;
}

// One pipelined iteration exactly as the training loop runs it: device forward
// per mini-batch, server pass summing gradients, one lr/N step on both sides.
SequentialModel split_update(const SequentialModel& model, std::size_t split_point,
                             std::size_t n_par, const Matrix& x, const Matrix& y,
                             double lr) {
    const LossKind kind = infer_loss_kind(model);
    ModelPair pair = split_model(model, split_point);
    const std::vector<Matrix> xs = microbatch(x, n_par);
    const std::vector<Matrix> ys = microbatch(y, n_par);

    std::vector<ForwardCache> caches;
    for (const Matrix& xn : xs) caches.push_back(forward(pair.device_part, xn));

    ModelGrads server_grads = zero_grads_like(pair.server_part);
    std::vector<Matrix> seam_grads;
    for (std::size_t n = 0; n < n_par; ++n) {
        if (pair.server_part.empty()) {
            seam_grads.push_back(loss_and_gradient(caches[n].output, ys[n], kind).output_grad);
        } else {
            BackwardResult bw =
                backward(pair.server_part, forward(pair.server_part, caches[n].output),
                         ys[n], kind);
            accumulate(server_grads, bw.param_grads);
            seam_grads.push_back(std::move(bw.input_grad));
        }
    }
    if (!pair.server_part.empty())
        pair.server_part = sgd_step(std::move(pair.server_part), server_grads, lr, n_par);

    ModelGrads device_grads = zero_grads_like(pair.device_part);
    for (std::size_t n = 0; n < n_par; ++n)
        accumulate(device_grads,
                   backward_from_output_grad(pair.device_part, caches[n], seam_grads[n])
                       .param_grads);
    pair.device_part = sgd_step(std::move(pair.device_part), device_grads, lr, n_par);
    return join_models({pair.device_part, pair.server_part});
}

PipelineParams best_conventional_split(const LayerProfiles& profile, const NetworkProfile& net,
                                       const EpochShape& shape) {
    PipelineParams best{1, 1};
    double best_s = std::numeric_limits<double>::infinity();
    for (std::size_t p = 1; p <= profile.layer_count(); ++p) {
        const double s = epoch_time(profile, net, p, 1, shape, ScheduleMode::ConventionalSplit);
        if (s < best_s) {
            best_s = s;
            best = {p, 1};
        }
    }
    return best;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("acceptance: pipeline model vs simulation") {
    Criterion c("pipeline-model-vs-simulation");
    std::mt19937_64 rng(20260814);
    std::uniform_real_distribution<double> bandwidth(2.0, 60.0);
    for (std::size_t trial = 0; trial < 1000; ++trial) {
        const std::size_t q_count = 2 + rng() % 11;
        const LayerProfiles profile = test_support::random_profiles(rng, q_count);
        const std::size_t split = 1 + rng() % q_count;
        const std::size_t n_par = 1 + rng() % 20;
        NetworkProfile net{bandwidth(rng), bandwidth(rng), "random"};

        const StageGraph graph = build_iteration_graph(n_par);
        const StageDurations durations = stage_durations(profile, net, split, n_par);
        const double dp = estimate_makespan(graph, uniform_stage_times(graph, durations));

        SimJob job;
        job.params = {{split, n_par}};
        job.profiles = {profile};
        job.nets = {net};
        job.shape = EpochShape{400, 20};
        job.contention = ContentionPolicy::NoContention;
        job.include_aggregation = false;
        job.iterations_override = 1;
        const double simulated = simulate(job).makespan;
        c.expect(std::fabs(simulated - dp) <= 1e-9,
                 "trial " + std::to_string(trial) + ": |" + std::to_string(simulated) +
                     " - " + std::to_string(dp) + "| > 1e-9");
    }
    c.finish(10.0);
}

TEST_CASE("acceptance: iteration dependency table") {
    Criterion c("iteration-dependency-table");
    for (std::size_t n_count : {std::size_t{1}, std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
        const StageGraph graph = build_iteration_graph(n_count);
        c.expect(graph.stages.size() == 6 * n_count,
                 "N=" + std::to_string(n_count) + ": wrong stage count");
        for (int k = 0; k < kStageKindCount; ++k) {
            const StageKind kind = static_cast<StageKind>(k);
            for (std::size_t n = 1; n <= n_count; ++n) {
                const std::string at = std::string{stage_kind_name(kind)} + "_" +
                                       std::to_string(n) + " at N=" + std::to_string(n_count);
                c.expect(test_support::graph_predecessors(graph, kind, n) ==
                             test_support::expected_predecessors(kind, n, n_count),
                         "predecessors differ for " + at);
                c.expect(test_support::graph_successors(graph, kind, n) ==
                             test_support::expected_successors(kind, n, n_count),
                         "successors differ for " + at);
            }
        }
    }
    c.finish(1.0);
}

TEST_CASE("acceptance: split gradient equivalence") {
    Criterion c("split-gradient-equivalence");
    std::mt19937_64 rng(777);
    for (std::size_t trial = 0; trial < 200; ++trial) {
        const SequentialModel model = random_model(rng);
        const std::size_t rows = 1 + rng() % 6;
        const Matrix x = random_matrix(rng, rows, model.input_dim());
        const Matrix y = labels_for(rng, model, rows);
        const LossKind kind = infer_loss_kind(model);
        const BackwardResult whole = backward(model, forward(model, x), y, kind);

        const std::size_t split = 1 + rng() % model.layer_count();
        const ModelPair pair = split_model(model, split);
        const ForwardCache device_cache = forward(pair.device_part, x);
        double loss = 0.0;
        Matrix seam_grad;
        ModelGrads server_grads;
        if (pair.server_part.empty()) {
            LossGrad lg = loss_and_gradient(device_cache.output, y, kind);
            loss = lg.loss;
            seam_grad = std::move(lg.output_grad);
        } else {
            BackwardResult bw = backward(
                pair.server_part, forward(pair.server_part, device_cache.output), y, kind);
            loss = bw.loss;
            seam_grad = std::move(bw.input_grad);
            server_grads = std::move(bw.param_grads);
        }
        const PartialBackwardResult device_bw =
            backward_from_output_grad(pair.device_part, device_cache, seam_grad);

        const std::string at = "trial " + std::to_string(trial);
        c.expect(std::fabs(loss - whole.loss) <= 1e-12, at + ": loss differs");
        c.expect(max_abs_diff(device_bw.input_grad, whole.input_grad) <= 1e-12,
                 at + ": input gradient differs");
        c.expect(grads_diff(whole.param_grads, device_bw.param_grads, 0) <= 1e-12,
                 at + ": device-side parameter gradients differ");
        c.expect(grads_diff(whole.param_grads, server_grads, split) <= 1e-12,
                 at + ": server-side parameter gradients differ");
    }
    c.finish(5.0);
}

TEST_CASE("acceptance: micro-batch reorder equivalence") {
    Criterion c("microbatch-reorder-equivalence");
    std::mt19937_64 rng(31337);
    const double lr = 0.05;
    for (std::size_t trial = 0; trial < 100; ++trial) {
        const SequentialModel model = random_model(rng);
        const std::size_t batch = 4 + rng() % 37;
        std::vector<std::size_t> divisors;
        for (std::size_t n = 1; n <= batch; ++n)
            if (batch % n == 0) divisors.push_back(n);
        const std::size_t n_par = divisors[rng() % divisors.size()];
        const std::size_t split = 1 + rng() % model.layer_count();
        const Matrix x = random_matrix(rng, batch, model.input_dim());
        const Matrix y = labels_for(rng, model, batch);

        const SequentialModel pipelined = split_update(model, split, n_par, x, y, lr);
        const SequentialModel full = sgd_step(
            model, backward(model, forward(model, x), y).param_grads, lr, 1);
        c.expect(model_diff(pipelined, full) <= 1e-8,
                 "trial " + std::to_string(trial) + ": N=" + std::to_string(n_par) +
                     " divides B=" + std::to_string(batch) + " but updates differ");
    }
    // Non-divisor N: the iteration trains on the first N*floor(B/N) rows only.
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const SequentialModel model = random_model(rng);
        const std::size_t batch = 5 + rng() % 36;
        std::size_t n_par = 2 + rng() % (batch - 2);
        while (batch % n_par == 0) n_par = 2 + rng() % (batch - 2);
        const std::size_t retained = (batch / n_par) * n_par;
        const std::size_t split = 1 + rng() % model.layer_count();
        const Matrix x = random_matrix(rng, batch, model.input_dim());
        const Matrix y = labels_for(rng, model, batch);

        const SequentialModel pipelined = split_update(model, split, n_par, x, y, lr);
        const SequentialModel full = sgd_step(
            model,
            backward(model, forward(model, x.slice_rows(0, retained)),
                     y.slice_rows(0, retained))
                .param_grads,
            lr, 1);
        c.expect(model_diff(pipelined, full) <= 1e-8,
                 "tail trial " + std::to_string(trial) + ": N=" + std::to_string(n_par) +
                     ", B=" + std::to_string(batch) + " did not match the retained rows");
    }
    c.finish(5.0);
}

TEST_CASE("acceptance: split vs local training parity") {
    Criterion c("split-vs-local-training-parity");
    TrainingConfig config;
    config.model.widths = {8, 16, 2};
    config.model.activations = {Activation::ReLU, Activation::Softmax};
    config.devices = 2;
    config.data = {{101, 500}, {102, 500}};
    config.separation = 3.0;
    config.batch_size = 100;
    config.learning_rate = 0.05;
    config.epochs = 10;
    config.params = {{1, 5}};

    const TrainingResult split = run_training(config);
    const TrainingResult reference = run_fl_reference(config);
    c.expect(split.history.size() == reference.history.size(), "epoch counts differ");
    c.expect(model_diff(split.global_model, reference.global_model) <= 1e-6,
             "final parameters differ by more than 1e-6");
    for (std::size_t e = 0; e < split.history.size(); ++e) {
        c.expect(std::fabs(split.history[e].train_loss - reference.history[e].train_loss) <=
                     1e-6,
                 "epoch " + std::to_string(e + 1) + " losses differ by more than 1e-6");
    }
    c.expect(split.received_samples == reference.received_samples,
             "aggregation weights differ");
    c.finish(30.0);
}

TEST_CASE("acceptance: selector quality against the exhaustive sweep") {
    Criterion c("selector-quality");
    const std::vector<std::string>& presets = model_preset_names();
    const std::vector<std::string>& networks = network_preset_names();
    const EpochShape shape{1000, 100};
    const std::size_t cases = 300;
    std::size_t hits95 = 0;
    std::uniform_real_distribution<double> device_range(0.1, 0.3);
    std::uniform_real_distribution<double> server_range(8.0, 16.0);
    for (std::size_t i = 0; i < cases; ++i) {
        std::mt19937_64 rng(mix(1 ^ (i + 1)));
        const std::string& preset = presets[i % presets.size()];
        const std::string& net_name = networks[i % networks.size()];
        const double device_factor = device_range(rng);
        const double server_factor = server_range(rng);
        const LayerProfiles profile =
            profile_model(preset, device_factor, server_factor, rng());
        const NetworkProfile net = network_preset(net_name);

        const PipelineParams chosen = select_params(profile, net, shape).per_device.at(0);
        SimJob base;
        base.params = {chosen};
        base.profiles = {profile};
        base.nets = {net};
        base.shape = shape;
        const SearchResult truth = exhaustive_search(base);
        const auto true_epoch = [&](const PipelineParams& p) {
            return truth.table.at((p.split_point - 1) * shape.batch_size +
                                  (p.parallel_batches - 1))
                .epoch_s;
        };
        const double sc = score(chosen, truth.best, true_epoch);
        if (sc >= 0.95) ++hits95;
        c.expect(sc >= 0.90, "case " + std::to_string(i + 1) + " (" + preset + ", " +
                                 net_name + "): score " + std::to_string(sc) + " < 0.90");
    }
    c.expect(hits95 * 10 >= cases * 9,
             "only " + std::to_string(hits95) + "/" + std::to_string(cases) +
                 " cases scored >= 0.95");
    c.finish(120.0);
}

TEST_CASE("acceptance: schedule mode comparison") {
    Criterion c("mode-comparison");
    const std::vector<std::string>& presets = model_preset_names();
    const std::vector<std::string>& networks = network_preset_names();
    const EpochShape shape{1000, 100};
    const std::size_t devices = 2;
    const double device_factor = 0.25;
    const double server_factor = 8.0;

    for (std::size_t pi = 0; pi < presets.size(); ++pi) {
        std::vector<LayerProfiles> profiles;
        for (std::size_t k = 0; k < devices; ++k)
            profiles.push_back(profile_model(presets[pi], device_factor, server_factor,
                                             mix(1 ^ (pi * 131 + k))));
        for (const std::string& net_name : networks) {
            const NetworkProfile net = network_preset(net_name);
            const auto run_mode = [&](ScheduleMode mode, std::vector<PipelineParams>& used) {
                SimJob job;
                job.mode = mode;
                job.profiles = profiles;
                job.nets = std::vector<NetworkProfile>(devices, net);
                job.shape = shape;
                for (std::size_t k = 0; k < devices; ++k) {
                    switch (mode) {
                        case ScheduleMode::PipeLearnParallelServer:
                        case ScheduleMode::PipeLearnSequentialServer:
                            job.params.push_back(
                                select_params(profiles[k], net, shape).per_device.at(0));
                            break;
                        case ScheduleMode::ConventionalSplit:
                            job.params.push_back(
                                best_conventional_split(profiles[k], net, shape));
                            break;
                        case ScheduleMode::FederatedLocal:
                            job.params.push_back({profiles[k].layer_count(), 1});
                            break;
                    }
                }
                used = job.params;
                return simulate(job);
            };

            std::vector<PipelineParams> pl_params, sfl_params, fl_params;
            const RunMetrics pl =
                run_mode(ScheduleMode::PipeLearnParallelServer, pl_params);
            const RunMetrics sfl = run_mode(ScheduleMode::ConventionalSplit, sfl_params);
            const RunMetrics fl = run_mode(ScheduleMode::FederatedLocal, fl_params);

            const std::string at = presets[pi] + " on " + net_name;
            c.expect(pl.makespan < sfl.makespan,
                     at + ": pipelined epoch not faster than conventional split");
            c.expect(sfl.makespan < fl.makespan,
                     at + ": conventional split not faster than local-only");
            c.expect(fl.server_idle >= 2.0 * pl.server_idle,
                     at + ": server idle not reduced by at least 2x");
            c.expect(pl.avg_throughput_mbps >= 10.0 * fl.avg_throughput_mbps,
                     at + ": network throughput not raised by at least 10x");
            for (const PipelineParams& p : pl_params)
                c.expect(p.split_point == 1,
                         at + ": selector chose split " + std::to_string(p.split_point));
        }
    }
    c.finish(60.0);
}

TEST_CASE("acceptance: lane conservation") {
    Criterion c("lane-conservation");
    std::mt19937_64 rng(4242);
    const ScheduleMode modes[] = {
        ScheduleMode::PipeLearnParallelServer, ScheduleMode::PipeLearnSequentialServer,
        ScheduleMode::ConventionalSplit, ScheduleMode::FederatedLocal};
    std::uniform_real_distribution<double> bandwidth(2.0, 60.0);
    for (std::size_t trial = 0; trial < 60; ++trial) {
        const std::size_t devices = 1 + rng() % 3;
        const std::size_t batch = 4 + rng() % 20;
        SimJob job;
        job.mode = modes[rng() % 4];
        job.shape = EpochShape{batch * (2 + rng() % 20), batch};
        job.contention = rng() % 2 == 0 ? ContentionPolicy::ProcessorSharing
                                        : ContentionPolicy::NoContention;
        job.include_aggregation = rng() % 2 == 0;
        if (job.mode == ScheduleMode::FederatedLocal) job.fl_epochs_per_round = 1 + rng() % 2;
        for (std::size_t k = 0; k < devices; ++k) {
            const std::size_t q_count = 2 + rng() % 6;
            job.profiles.push_back(test_support::random_profiles(rng, q_count));
            job.nets.push_back({bandwidth(rng), bandwidth(rng), "random"});
            job.params.push_back({1 + rng() % q_count, 1 + rng() % batch});
        }
        const RunMetrics m = simulate(job);

        const std::string at = "trial " + std::to_string(trial);
        c.expect(m.makespan > 0.0, at + ": empty epoch");
        c.expect(m.lanes.size() == 3 * devices + 1, at + ": wrong lane count");
        for (const LaneUsage& lane : m.lanes)
            c.expect(std::fabs(lane.busy + lane.idle - m.makespan) <= 1e-9,
                     at + ": busy + idle != makespan on lane " + lane.lane);
        const double throughput =
            m.makespan > 0.0 ? m.total_transmitted_mb / m.makespan : 0.0;
        c.expect(m.avg_throughput_mbps == throughput, at + ": throughput inconsistent");
    }
    c.finish(20.0);
}

TEST_CASE("acceptance: command determinism") {
    Criterion c("cli-determinism");
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "pipelearn_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);

    const auto run_twice = [&](const std::string& label,
                               int (*command)(const cli::CommandOptions&),
                               cli::CommandOptions options,
                               const std::vector<std::string>& files) {
        options.quiet = true;
        cli::CommandOptions first = options;
        first.out_dir = (root / (label + "_a")).string();
        cli::CommandOptions second = options;
        second.out_dir = (root / (label + "_b")).string();
        c.expect(command(first) == cli::kExitOk, label + ": first run failed");
        c.expect(command(second) == cli::kExitOk, label + ": second run failed");
        for (const std::string& file : files) {
            const std::string a = read_file(fs::path(first.out_dir) / file);
            const std::string b = read_file(fs::path(second.out_dir) / file);
            c.expect(!a.empty(), label + "/" + file + ": empty output");
            c.expect(a == b, label + "/" + file + ": runs differ");
        }
    };

    cli::CommandOptions trace_options;
    trace_options.seed = 7;
    run_twice("trace", cli::cmd_trace, trace_options,
              {"trace.csv", "lanes.csv", "schedule.csv"});

    cli::CommandOptions efficiency_options;
    efficiency_options.seed = 3;
    run_twice("efficiency", cli::cmd_efficiency, efficiency_options, {"efficiency.csv"});

    cli::CommandOptions equivalence_options;
    equivalence_options.seed = 2;
    run_twice("equivalence", cli::cmd_equivalence, equivalence_options,
              {"equivalence.csv"});

    const fs::path score_config = root / "score_config.json";
    std::ofstream(score_config) << "{\"cases\": 6}\n";
    cli::CommandOptions score_options;
    score_options.config_path = score_config.string();
    score_options.seed = 5;
    run_twice("opt_score", cli::cmd_optimizer_score, score_options, {"opt_score.csv"});

    fs::remove_all(root);
    c.finish(120.0);
}
