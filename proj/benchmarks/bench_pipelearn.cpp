#include <benchmark/benchmark.h>

#include <vector>

#include "pipelearn/nn.hpp"
#include "pipelearn/optimizer.hpp"
#include "pipelearn/sim.hpp"

namespace {

using namespace pipelearn;

SequentialModel bench_model() {
    return make_model({64, 128, 128, 64, 10},
                      {Activation::ReLU, Activation::ReLU, Activation::ReLU,
                       Activation::Softmax},
                      1);
}

Matrix bench_batch(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    double v = 0.1;
    for (double& x : m.values()) {
        x = v;
        v = v > 1.0 ? 0.1 : v + 0.013;
    }
    return m;
}

Matrix bench_labels(std::size_t rows, std::size_t classes) {
    Matrix m(rows, classes);
    for (std::size_t r = 0; r < rows; ++r) m.at(r, r % classes) = 1.0;
    return m;
}

void BM_Forward(benchmark::State& state) {
    const SequentialModel model = bench_model();
    const Matrix x = bench_batch(100, model.input_dim());
    for (auto _ : state) benchmark::DoNotOptimize(forward(model, x));
}
BENCHMARK(BM_Forward);

void BM_Backward(benchmark::State& state) {
    const SequentialModel model = bench_model();
    const Matrix x = bench_batch(100, model.input_dim());
    const Matrix y = bench_labels(100, model.output_dim());
    const ForwardCache cache = forward(model, x);
    for (auto _ : state) benchmark::DoNotOptimize(backward(model, cache, y));
}
BENCHMARK(BM_Backward);

void BM_IterationMakespan(benchmark::State& state) {
    const std::size_t n_par = static_cast<std::size_t>(state.range(0));
    const LayerProfiles profile = profile_model("vgg5-like", 0.25, 8.0, 1);
    const NetworkProfile net = network_preset("4g");
    const StageGraph graph = build_iteration_graph(n_par);
    const StageTimes times = stage_times(graph, profile, net, 2);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_makespan(graph, times));
}
BENCHMARK(BM_IterationMakespan)->Arg(4)->Arg(20)->Arg(100);

void BM_SimulateEpoch(benchmark::State& state) {
    SimJob job;
    job.shape = EpochShape{1000, 100};
    for (std::size_t k = 0; k < 2; ++k) {
        job.profiles.push_back(profile_model("vgg5-like", 0.25, 8.0, k + 1));
        job.nets.push_back(network_preset("4g"));
        job.params.push_back({2, static_cast<std::size_t>(state.range(0))});
    }
    for (auto _ : state) benchmark::DoNotOptimize(simulate(job));
}
BENCHMARK(BM_SimulateEpoch)->Arg(5)->Arg(25);

void BM_SelectParams(benchmark::State& state) {
    const LayerProfiles profile = profile_model("resnet18-like", 0.25, 8.0, 1);
    const NetworkProfile net = network_preset("4g");
    const EpochShape shape{1000, 100};
    for (auto _ : state) benchmark::DoNotOptimize(select_params(profile, net, shape));
}
BENCHMARK(BM_SelectParams);

}  // namespace

BENCHMARK_MAIN();
