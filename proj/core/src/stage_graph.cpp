#include "pipelearn/stage_graph.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace pipelearn {

const char* stage_kind_name(StageKind kind) {
    switch (kind) {
        case StageKind::DeviceForward: return "dev_fwd";
        case StageKind::Upload: return "upload";
        case StageKind::ServerForward: return "srv_fwd";
        case StageKind::ServerBackward: return "srv_bwd";
        case StageKind::Download: return "download";
        case StageKind::DeviceBackward: return "dev_bwd";
    }
    return "unknown";
}

const char* stage_lane_name(StageKind kind) {
    switch (kind) {
        case StageKind::DeviceForward:
        case StageKind::DeviceBackward: return "device_compute";
        case StageKind::Upload: return "uplink";
        case StageKind::ServerForward:
        case StageKind::ServerBackward: return "server_compute";
        case StageKind::Download: return "downlink";
    }
    return "unknown";
}

std::string stage_label(const Stage& stage) {
    return std::string(stage_kind_name(stage.kind)) + "_" + std::to_string(stage.batch);
}

std::size_t StageGraph::index_of(StageKind kind, std::size_t batch) const {
    if (batch < 1 || batch > parallel_batches) {
        throw std::out_of_range("StageGraph: batch index " + std::to_string(batch) +
                                " outside [1, " + std::to_string(parallel_batches) + "]");
    }
    return static_cast<std::size_t>(static_cast<int>(kind)) * parallel_batches + (batch - 1);
}

const std::vector<std::size_t>& StageGraph::predecessors(StageKind kind,
                                                         std::size_t batch) const {
    return preds[index_of(kind, batch)];
}

StageGraph build_iteration_graph(std::size_t parallel_batches, std::size_t device) {
    if (parallel_batches < 1) {
        throw std::invalid_argument("build_iteration_graph: need at least one parallel batch");
    }
    const std::size_t n_count = parallel_batches;
    StageGraph g;
    g.parallel_batches = n_count;
    g.device = device;
    g.stages.reserve(kStageKindCount * n_count);
    for (int k = 0; k < kStageKindCount; ++k) {
        for (std::size_t n = 1; n <= n_count; ++n) {
            g.stages.push_back(Stage{static_cast<StageKind>(k), n, device});
        }
    }
    g.preds.assign(g.stages.size(), {});
    g.succs.assign(g.stages.size(), {});

    const auto idx = [&](StageKind kind, std::size_t n) { return g.index_of(kind, n); };
    const auto edge = [&](StageKind from, std::size_t from_n, StageKind to, std::size_t to_n) {
        g.preds[idx(to, to_n)].push_back(idx(from, from_n));
        g.succs[idx(from, from_n)].push_back(idx(to, to_n));
    };

    for (std::size_t n = 1; n <= n_count; ++n) {
        if (n > 1) edge(StageKind::DeviceForward, n - 1, StageKind::DeviceForward, n);

        edge(StageKind::DeviceForward, n, StageKind::Upload, n);
        if (n > 1) edge(StageKind::Upload, n - 1, StageKind::Upload, n);

        edge(StageKind::Upload, n, StageKind::ServerForward, n);
        if (n > 1) edge(StageKind::ServerBackward, n - 1, StageKind::ServerForward, n);

        edge(StageKind::ServerForward, n, StageKind::ServerBackward, n);

        edge(StageKind::ServerBackward, n, StageKind::Download, n);
        if (n > 1) edge(StageKind::Download, n - 1, StageKind::Download, n);

        edge(StageKind::Download, n, StageKind::DeviceBackward, n);
        if (n > 1) edge(StageKind::DeviceBackward, n - 1, StageKind::DeviceBackward, n);
        // Device backward passes start only once every forward has been sent;
        // for N = 1 the chain already implies this.
        if (n == 1 && n_count > 1) {
            edge(StageKind::DeviceForward, n_count, StageKind::DeviceBackward, 1);
        }
    }
    return g;
}

double StageDurations::of(StageKind kind) const {
    switch (kind) {
        case StageKind::DeviceForward: return device_forward;
        case StageKind::Upload: return upload;
        case StageKind::ServerForward: return server_forward;
        case StageKind::ServerBackward: return server_backward;
        case StageKind::Download: return download;
        case StageKind::DeviceBackward: return device_backward;
    }
    throw std::logic_error("StageDurations::of: unknown kind");
}

double StageDurations::chain_total() const {
    return device_forward + upload + server_forward + server_backward + download +
           device_backward;
}

StageDurations stage_durations(const LayerProfiles& profiles, const NetworkProfile& net,
                               std::size_t split_point, std::size_t parallel_batches) {
    profiles.validate();
    if (split_point < 1 || split_point > profiles.layer_count()) {
        throw std::out_of_range("stage_durations: split point " + std::to_string(split_point) +
                                " outside [1, " + std::to_string(profiles.layer_count()) + "]");
    }
    if (parallel_batches < 1) {
        throw std::invalid_argument("stage_durations: need at least one parallel batch");
    }
    if (net.uplink_mbps <= 0.0 || net.downlink_mbps <= 0.0) {
        throw std::invalid_argument("stage_durations: bandwidths must be positive");
    }
    const double n = static_cast<double>(parallel_batches);
    StageDurations d;
    d.device_forward = profiles.device_forward_sum(split_point) / n;
    d.device_backward = profiles.device_backward_sum(split_point) / n;
    d.server_forward = profiles.server_forward_sum(split_point) / n;
    d.server_backward = profiles.server_backward_sum(split_point) / n;
    d.upload = profiles.forward_volume_mb[split_point - 1] / (net.uplink_mbps * n);
    d.download = profiles.backward_volume_mb[split_point - 1] / (net.downlink_mbps * n);
    return d;
}

StageTimes uniform_stage_times(const StageGraph& graph, const StageDurations& durations) {
    StageTimes times;
    times.by_stage.reserve(graph.stages.size());
    for (const Stage& s : graph.stages) times.by_stage.push_back(durations.of(s.kind));
    return times;
}

StageTimes stage_times(const StageGraph& graph, const LayerProfiles& profiles,
                       const NetworkProfile& net, std::size_t split_point) {
    return uniform_stage_times(
        graph, stage_durations(profiles, net, split_point, graph.parallel_batches));
}

std::vector<std::size_t> topological_order(const StageGraph& graph) {
    const std::size_t count = graph.stages.size();
    std::vector<std::size_t> indegree(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t p : graph.preds[i]) {
            if (p >= count) throw std::invalid_argument("topological_order: dangling edge");
            ++indegree[i];
        }
    }
    std::vector<std::size_t> order;
    order.reserve(count);
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < count; ++i) {
        if (indegree[i] == 0) frontier.push_back(i);
    }
    while (!frontier.empty()) {
        // Smallest index first keeps the order deterministic.
        const auto it = std::min_element(frontier.begin(), frontier.end());
        const std::size_t node = *it;
        frontier.erase(it);
        order.push_back(node);
        for (std::size_t s : graph.succs[node]) {
            if (--indegree[s] == 0) frontier.push_back(s);
        }
    }
    if (order.size() != count) {
        throw std::invalid_argument("topological_order: graph has a cycle");
    }
    return order;
}

namespace {

std::vector<double> completion_times(const StageGraph& graph, const StageTimes& times) {
    if (times.by_stage.size() != graph.stages.size()) {
        throw std::invalid_argument("estimate_makespan: need one duration per stage, got " +
                                    std::to_string(times.by_stage.size()) + " for " +
                                    std::to_string(graph.stages.size()) + " stages");
    }
    for (double t : times.by_stage) {
        if (!(t >= 0.0)) {
            throw std::invalid_argument("estimate_makespan: stage times must be non-negative");
        }
    }
    std::vector<double> completion(graph.stages.size(), 0.0);
    for (std::size_t node : topological_order(graph)) {
        double start = 0.0;
        for (std::size_t p : graph.preds[node]) start = std::max(start, completion[p]);
        completion[node] = start + times.by_stage[node];
    }
    return completion;
}

}  // namespace

double estimate_makespan(const StageGraph& graph, const StageTimes& times) {
    const std::vector<double> completion = completion_times(graph, times);
    return completion[graph.index_of(StageKind::DeviceBackward, graph.parallel_batches)];
}

std::vector<ScheduleEntry> earliest_start_schedule(const StageGraph& graph,
                                                   const StageTimes& times) {
    const std::vector<double> completion = completion_times(graph, times);
    std::vector<ScheduleEntry> schedule;
    schedule.reserve(graph.stages.size());
    for (std::size_t i = 0; i < graph.stages.size(); ++i) {
        ScheduleEntry entry;
        entry.stage = graph.stages[i];
        entry.end = completion[i];
        entry.start = completion[i] - times.by_stage[i];
        entry.lane = stage_lane_name(graph.stages[i].kind);
        schedule.push_back(std::move(entry));
    }
    std::sort(schedule.begin(), schedule.end(), [](const ScheduleEntry& a, const ScheduleEntry& b) {
        if (a.start != b.start) return a.start < b.start;
        if (a.stage.kind != b.stage.kind) return a.stage.kind < b.stage.kind;
        return a.stage.batch < b.stage.batch;
    });
    return schedule;
}

void write_schedule_csv(std::ostream& out, const std::vector<ScheduleEntry>& schedule) {
    out << "lane,stage,device,start_s,end_s\n";
    char buffer[64];
    for (const ScheduleEntry& e : schedule) {
        out << e.lane << ',' << stage_label(e.stage) << ',' << e.stage.device << ',';
        std::snprintf(buffer, sizeof buffer, "%.17g", e.start);
        out << buffer << ',';
        std::snprintf(buffer, sizeof buffer, "%.17g", e.end);
        out << buffer << '\n';
    }
}

const char* schedule_mode_name(ScheduleMode mode) {
    switch (mode) {
        case ScheduleMode::PipeLearnParallelServer: return "pipelearn";
        case ScheduleMode::PipeLearnSequentialServer: return "pipelearn-seq";
        case ScheduleMode::ConventionalSplit: return "sfl";
        case ScheduleMode::FederatedLocal: return "fl";
    }
    return "unknown";
}

ScheduleMode schedule_mode_from_name(const std::string& name) {
    if (name == "pipelearn") return ScheduleMode::PipeLearnParallelServer;
    if (name == "pipelearn-seq") return ScheduleMode::PipeLearnSequentialServer;
    if (name == "sfl") return ScheduleMode::ConventionalSplit;
    if (name == "fl") return ScheduleMode::FederatedLocal;
    throw std::invalid_argument("unknown schedule mode: " + name);
}

double epoch_time(const LayerProfiles& profiles, const NetworkProfile& net,
                  std::size_t split_point, std::size_t parallel_batches,
                  const EpochShape& shape, ScheduleMode mode) {
    profiles.validate();
    switch (mode) {
        case ScheduleMode::PipeLearnParallelServer:
        case ScheduleMode::PipeLearnSequentialServer: {
            const StageGraph graph = build_iteration_graph(parallel_batches);
            const StageTimes times = stage_times(graph, profiles, net, split_point);
            return static_cast<double>(shape.iterations(parallel_batches)) *
                   estimate_makespan(graph, times);
        }
        case ScheduleMode::ConventionalSplit: {
            const StageDurations d = stage_durations(profiles, net, split_point, 1);
            return static_cast<double>(shape.iterations(1)) * d.chain_total();
        }
        case ScheduleMode::FederatedLocal: {
            const std::size_t q_count = profiles.layer_count();
            const double compute = profiles.device_forward_sum(q_count) +
                                   profiles.device_backward_sum(q_count);
            return static_cast<double>(shape.iterations(1)) * compute;
        }
    }
    throw std::logic_error("epoch_time: unknown mode");
}

}  // namespace pipelearn
