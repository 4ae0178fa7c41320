#include "pipelearn/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>
#include <queue>
#include <stdexcept>

namespace pipelearn {

namespace {

constexpr int kTaskModelUpload = 6;
constexpr int kTaskFedAvg = 7;
constexpr int kTaskModelDownload = 8;
constexpr std::uint32_t kAggregationPhase = std::numeric_limits<std::uint32_t>::max();

struct Task {
    std::uint32_t lane = 0;
    double duration = 0.0;
    double volume_mb = 0.0;
    // Identity; also the deterministic tie-break order.
    std::uint32_t device = 0;     // 0-based
    std::uint32_t iteration = 0;  // 0-based; kAggregationPhase for the epoch end
    std::uint32_t batch = 0;      // 1-based for pipeline stages
    std::int32_t kind_order = 0;  // StageKind value, or the kTask* constants
    // Runtime state.
    std::uint32_t unmet = 0;
    double ready_time = 0.0;
    double start_time = 0.0;
    double remaining = 0.0;  // processor-sharing bookkeeping
};

std::string task_label(const Task& t) {
    switch (t.kind_order) {
        case kTaskModelUpload: return "model_up";
        case kTaskFedAvg: return "fedavg";
        case kTaskModelDownload: return "model_down";
        default:
            return "it" + std::to_string(t.iteration + 1) + "." +
                   stage_kind_name(static_cast<StageKind>(t.kind_order)) + "_" +
                   std::to_string(t.batch);
    }
}

struct Lane {
    enum class Kind { Exclusive, Pool };
    Kind kind = Kind::Exclusive;
    ContentionPolicy policy = ContentionPolicy::ProcessorSharing;
    std::string name;
    std::size_t device = 0;
    bool is_device_compute = false;
    bool is_server = false;

    // Exclusive state.
    bool busy = false;
    std::size_t running_task = 0;
    double finish_time = 0.0;

    // Pool state: resident task indices.
    std::vector<std::size_t> residents;

    // Busy/idle accounting over the union of occupied intervals.
    std::size_t resident_count = 0;
    double busy_accum = 0.0;
    double idle_accum = 0.0;
    double busy_start = 0.0;
    double prev_end = 0.0;
};

struct ReadyKey {
    double ready_time;
    std::uint32_t device;
    std::uint32_t iteration;
    std::uint32_t batch;
    std::int32_t kind_order;
    std::size_t task;

    friend bool operator>(const ReadyKey& a, const ReadyKey& b) {
        if (a.ready_time != b.ready_time) return a.ready_time > b.ready_time;
        if (a.device != b.device) return a.device > b.device;
        if (a.iteration != b.iteration) return a.iteration > b.iteration;
        if (a.batch != b.batch) return a.batch > b.batch;
        if (a.kind_order != b.kind_order) return a.kind_order > b.kind_order;
        return a.task > b.task;
    }
};

struct TaskGraph {
    std::vector<Task> tasks;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;

    std::uint32_t add(const Task& task) {
        tasks.push_back(task);
        return static_cast<std::uint32_t>(tasks.size() - 1);
    }
    void edge(std::uint32_t from, std::uint32_t to) { edges.emplace_back(from, to); }
};

// CSR successor lists; also fills Task::unmet.
struct Adjacency {
    std::vector<std::uint32_t> offsets;
    std::vector<std::uint32_t> targets;
};

Adjacency build_adjacency(TaskGraph& graph) {
    Adjacency adj;
    adj.offsets.assign(graph.tasks.size() + 1, 0);
    for (const auto& [from, to] : graph.edges) {
        ++adj.offsets[from + 1];
        ++graph.tasks[to].unmet;
    }
    for (std::size_t i = 1; i < adj.offsets.size(); ++i) adj.offsets[i] += adj.offsets[i - 1];
    adj.targets.resize(graph.edges.size());
    std::vector<std::uint32_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
    for (const auto& [from, to] : graph.edges) adj.targets[cursor[from]++] = to;
    return adj;
}

struct LaneSet {
    std::vector<Lane> lanes;
    std::size_t server = 0;
    std::vector<std::size_t> device_compute;
    std::vector<std::size_t> uplink;
    std::vector<std::size_t> downlink;
};

LaneSet make_lanes(std::size_t devices, bool server_exclusive, ContentionPolicy policy) {
    LaneSet set;
    for (std::size_t k = 0; k < devices; ++k) {
        const std::string prefix = "dev" + std::to_string(k + 1);
        Lane compute;
        compute.name = prefix + ".compute";
        compute.device = k;
        compute.is_device_compute = true;
        set.device_compute.push_back(set.lanes.size());
        set.lanes.push_back(compute);

        Lane up;
        up.name = prefix + ".uplink";
        up.device = k;
        set.uplink.push_back(set.lanes.size());
        set.lanes.push_back(up);

        Lane down;
        down.name = prefix + ".downlink";
        down.device = k;
        set.downlink.push_back(set.lanes.size());
        set.lanes.push_back(down);
    }
    Lane server;
    server.name = "server";
    server.is_server = true;
    server.kind = server_exclusive ? Lane::Kind::Exclusive : Lane::Kind::Pool;
    server.policy = policy;
    set.server = set.lanes.size();
    set.lanes.push_back(server);
    return set;
}

void validate_job(const SimJob& job) {
    if (job.profiles.empty()) throw std::invalid_argument("simulate: no devices");
    if (job.nets.size() != job.profiles.size()) {
        throw std::invalid_argument("simulate: need one network profile per device");
    }
    for (const LayerProfiles& p : job.profiles) p.validate();
    for (const NetworkProfile& net : job.nets) {
        if (net.uplink_mbps <= 0.0 || net.downlink_mbps <= 0.0) {
            throw std::invalid_argument("simulate: bandwidths must be positive");
        }
    }
    if (job.mode != ScheduleMode::FederatedLocal && job.params.size() != job.profiles.size()) {
        throw std::invalid_argument("simulate: need pipeline params per device");
    }
    if (job.fedavg_seconds_per_mb < 0.0) {
        throw std::invalid_argument("simulate: fedavg rate must be non-negative");
    }
    if (job.mode == ScheduleMode::FederatedLocal && job.fl_epochs_per_round < 1) {
        throw std::invalid_argument("simulate: fl_epochs_per_round must be at least 1");
    }
}

std::size_t device_iterations(const SimJob& job, std::size_t parallel_batches) {
    if (job.iterations_override > 0) return job.iterations_override;
    std::size_t iterations = job.shape.iterations(parallel_batches);
    if (job.mode == ScheduleMode::FederatedLocal) iterations *= job.fl_epochs_per_round;
    return iterations;
}

double device_model_payload_mb(const SimJob& job, std::size_t k) {
    return job.mode == ScheduleMode::FederatedLocal
               ? job.profiles[k].model_mb()
               : job.profiles[k].device_model_mb(job.params[k].split_point);
}

TaskGraph build_tasks(const SimJob& job, const LaneSet& lanes) {
    const std::size_t devices = job.profiles.size();
    TaskGraph graph;

    std::vector<std::uint32_t> last_task(devices, 0);
    // First/last server stage per device and iteration, for the
    // sequential-server device ordering.
    std::vector<std::vector<std::uint32_t>> first_server(devices);
    std::vector<std::vector<std::uint32_t>> last_server(devices);

    if (job.mode == ScheduleMode::FederatedLocal) {
        for (std::size_t k = 0; k < devices; ++k) {
            const LayerProfiles& p = job.profiles[k];
            const std::size_t q_count = p.layer_count();
            const double fwd = p.device_forward_sum(q_count);
            const double bwd = p.device_backward_sum(q_count);
            const std::size_t iterations = device_iterations(job, 1);
            std::uint32_t prev = 0;
            for (std::size_t i = 0; i < iterations; ++i) {
                Task f;
                f.lane = static_cast<std::uint32_t>(lanes.device_compute[k]);
                f.duration = fwd;
                f.device = static_cast<std::uint32_t>(k);
                f.iteration = static_cast<std::uint32_t>(i);
                f.batch = 1;
                f.kind_order = static_cast<std::int32_t>(StageKind::DeviceForward);
                const std::uint32_t fi = graph.add(f);
                Task b = f;
                b.duration = bwd;
                b.kind_order = static_cast<std::int32_t>(StageKind::DeviceBackward);
                const std::uint32_t bi = graph.add(b);
                graph.edge(fi, bi);
                if (i > 0) graph.edge(prev, fi);
                prev = bi;
            }
            last_task[k] = prev;
        }
    } else {
        for (std::size_t k = 0; k < devices; ++k) {
            const PipelineParams params = job.params[k];
            const std::size_t n_count =
                job.mode == ScheduleMode::ConventionalSplit ? 1 : params.parallel_batches;
            const StageDurations durations =
                stage_durations(job.profiles[k], job.nets[k], params.split_point, n_count);
            const double upload_mb =
                job.profiles[k].forward_volume_mb[params.split_point - 1] /
                static_cast<double>(n_count);
            const double download_mb =
                job.profiles[k].backward_volume_mb[params.split_point - 1] /
                static_cast<double>(n_count);
            const StageGraph stage_graph = build_iteration_graph(n_count, k + 1);
            const std::size_t iterations = device_iterations(job, n_count);
            first_server[k].resize(iterations);
            last_server[k].resize(iterations);

            std::uint32_t prev_sink = 0;
            for (std::size_t i = 0; i < iterations; ++i) {
                const std::uint32_t base = static_cast<std::uint32_t>(graph.tasks.size());
                for (const Stage& stage : stage_graph.stages) {
                    Task t;
                    t.device = static_cast<std::uint32_t>(k);
                    t.iteration = static_cast<std::uint32_t>(i);
                    t.batch = static_cast<std::uint32_t>(stage.batch);
                    t.kind_order = static_cast<std::int32_t>(stage.kind);
                    t.duration = durations.of(stage.kind);
                    switch (stage.kind) {
                        case StageKind::DeviceForward:
                        case StageKind::DeviceBackward:
                            t.lane = static_cast<std::uint32_t>(lanes.device_compute[k]);
                            break;
                        case StageKind::Upload:
                            t.lane = static_cast<std::uint32_t>(lanes.uplink[k]);
                            t.volume_mb = upload_mb;
                            break;
                        case StageKind::Download:
                            t.lane = static_cast<std::uint32_t>(lanes.downlink[k]);
                            t.volume_mb = download_mb;
                            break;
                        case StageKind::ServerForward:
                        case StageKind::ServerBackward:
                            t.lane = static_cast<std::uint32_t>(lanes.server);
                            break;
                    }
                    graph.add(t);
                }
                for (std::size_t to = 0; to < stage_graph.stages.size(); ++to) {
                    for (std::size_t from : stage_graph.preds[to]) {
                        graph.edge(base + static_cast<std::uint32_t>(from),
                                   base + static_cast<std::uint32_t>(to));
                    }
                }
                const std::uint32_t source = base + static_cast<std::uint32_t>(
                    stage_graph.index_of(StageKind::DeviceForward, 1));
                const std::uint32_t sink = base + static_cast<std::uint32_t>(
                    stage_graph.index_of(StageKind::DeviceBackward, n_count));
                // Iterations are serialised by the weight update.
                if (i > 0) graph.edge(prev_sink, source);
                prev_sink = sink;
                first_server[k][i] = base + static_cast<std::uint32_t>(
                    stage_graph.index_of(StageKind::ServerForward, 1));
                last_server[k][i] = base + static_cast<std::uint32_t>(
                    stage_graph.index_of(StageKind::ServerBackward, n_count));
            }
            last_task[k] = prev_sink;
        }

        if (job.mode == ScheduleMode::PipeLearnSequentialServer) {
            for (std::size_t k = 1; k < devices; ++k) {
                const std::size_t shared =
                    std::min(first_server[k].size(), last_server[k - 1].size());
                for (std::size_t i = 0; i < shared; ++i) {
                    graph.edge(last_server[k - 1][i], first_server[k][i]);
                }
            }
        }
    }

    if (job.include_aggregation) {
        double aggregated_mb = 0.0;
        for (const LayerProfiles& p : job.profiles) aggregated_mb += p.model_mb();

        std::vector<std::uint32_t> uploads(devices);
        for (std::size_t k = 0; k < devices; ++k) {
            const double payload = device_model_payload_mb(job, k);
            Task up;
            up.lane = static_cast<std::uint32_t>(lanes.uplink[k]);
            up.duration = payload / job.nets[k].uplink_mbps;
            up.volume_mb = payload;
            up.device = static_cast<std::uint32_t>(k);
            up.iteration = kAggregationPhase;
            up.kind_order = kTaskModelUpload;
            uploads[k] = graph.add(up);
            graph.edge(last_task[k], uploads[k]);
        }

        Task fedavg_task;
        fedavg_task.lane = static_cast<std::uint32_t>(lanes.server);
        fedavg_task.duration = job.fedavg_seconds_per_mb * aggregated_mb;
        fedavg_task.iteration = kAggregationPhase;
        fedavg_task.kind_order = kTaskFedAvg;
        const std::uint32_t agg = graph.add(fedavg_task);
        for (std::size_t k = 0; k < devices; ++k) graph.edge(uploads[k], agg);

        for (std::size_t k = 0; k < devices; ++k) {
            const double payload = device_model_payload_mb(job, k);
            Task down;
            down.lane = static_cast<std::uint32_t>(lanes.downlink[k]);
            down.duration = payload / job.nets[k].downlink_mbps;
            down.volume_mb = payload;
            down.device = static_cast<std::uint32_t>(k);
            down.iteration = kAggregationPhase;
            down.kind_order = kTaskModelDownload;
            graph.edge(agg, graph.add(down));
        }
    }
    return graph;
}

class Engine {
public:
    Engine(TaskGraph graph, LaneSet lane_set, bool record_trace)
        : graph_(std::move(graph)), lane_set_(std::move(lane_set)), record_trace_(record_trace) {
        adjacency_ = build_adjacency(graph_);
        ready_.resize(lane_set_.lanes.size());
    }

    RunMetrics run() {
        auto& lanes = lane_set_.lanes;
        for (std::size_t i = 0; i < graph_.tasks.size(); ++i) {
            if (graph_.tasks[i].unmet == 0) enqueue(i, 0.0);
        }
        double now = 0.0;
        dispatch(now);
        while (true) {
            completing_.clear();
            const double next = plan_next_event(now);
            if (completing_.empty()) break;
            advance_pools(now, next);
            now = next;
            std::sort(completing_.begin(), completing_.end(),
                      [this](std::size_t a, std::size_t b) {
                          const Task& ta = graph_.tasks[a];
                          const Task& tb = graph_.tasks[b];
                          if (ta.device != tb.device) return ta.device < tb.device;
                          if (ta.iteration != tb.iteration) return ta.iteration < tb.iteration;
                          if (ta.batch != tb.batch) return ta.batch < tb.batch;
                          return ta.kind_order < tb.kind_order;
                      });
            for (std::size_t ti : completing_) finish_task(ti, now);
            dispatch(now);
        }
        if (completed_ != graph_.tasks.size()) {
            throw std::logic_error("simulate: schedule deadlocked with " +
                                   std::to_string(graph_.tasks.size() - completed_) +
                                   " tasks pending");
        }

        RunMetrics metrics;
        metrics.makespan = now;
        for (Lane& lane : lanes) {
            lane.idle_accum += now - lane.prev_end;
            metrics.lanes.push_back(LaneUsage{lane.name, lane.busy_accum, lane.idle_accum});
            if (lane.is_server) {
                metrics.server_busy = lane.busy_accum;
                metrics.server_idle = lane.idle_accum;
            }
            if (lane.is_device_compute) {
                metrics.device_busy.push_back(lane.busy_accum);
                metrics.device_idle.push_back(lane.idle_accum);
            }
        }
        if (!metrics.device_idle.empty()) {
            double total = 0.0;
            for (double v : metrics.device_idle) total += v;
            metrics.device_idle_avg = total / static_cast<double>(metrics.device_idle.size());
        }
        metrics.total_transmitted_mb = total_mb_;
        metrics.avg_throughput_mbps = metrics.makespan > 0.0 ? total_mb_ / metrics.makespan : 0.0;
        metrics.trace = std::move(trace_);
        return metrics;
    }

private:
    void enqueue(std::size_t task_index, double time) {
        Task& t = graph_.tasks[task_index];
        t.ready_time = time;
        ready_[t.lane].push(
            ReadyKey{time, t.device, t.iteration, t.batch, t.kind_order, task_index});
    }

    void record(double time, const Lane& lane, const Task& task, bool start) {
        if (record_trace_) trace_.push_back(TraceEvent{time, lane.name, task_label(task), start});
    }

    void start_task(Lane& lane, std::size_t task_index, double now) {
        Task& t = graph_.tasks[task_index];
        t.start_time = now;
        if (lane.kind == Lane::Kind::Exclusive) {
            lane.busy = true;
            lane.running_task = task_index;
            lane.finish_time = now + t.duration;
        } else {
            t.remaining = t.duration;
            lane.residents.push_back(task_index);
        }
        if (lane.resident_count == 0) {
            lane.idle_accum += now - lane.prev_end;
            lane.busy_start = now;
        }
        ++lane.resident_count;
        record(now, lane, t, true);
    }

    void dispatch(double now) {
        for (std::size_t li = 0; li < lane_set_.lanes.size(); ++li) {
            Lane& lane = lane_set_.lanes[li];
            auto& queue = ready_[li];
            if (lane.kind == Lane::Kind::Exclusive) {
                if (!lane.busy && !queue.empty()) {
                    const std::size_t task_index = queue.top().task;
                    queue.pop();
                    start_task(lane, task_index, now);
                }
            } else {
                while (!queue.empty()) {
                    const std::size_t task_index = queue.top().task;
                    queue.pop();
                    start_task(lane, task_index, now);
                }
            }
        }
    }

    // Fills completing_ with the tasks finishing at the returned time.
    double plan_next_event(double now) {
        double best = std::numeric_limits<double>::infinity();
        for (const Lane& lane : lane_set_.lanes) {
            if (lane.kind == Lane::Kind::Exclusive) {
                if (lane.busy) best = std::min(best, lane.finish_time);
            } else if (!lane.residents.empty()) {
                if (lane.policy == ContentionPolicy::ProcessorSharing) {
                    double min_rem = std::numeric_limits<double>::infinity();
                    for (std::size_t ti : lane.residents) {
                        min_rem = std::min(min_rem, graph_.tasks[ti].remaining);
                    }
                    best = std::min(
                        best, now + min_rem * static_cast<double>(lane.residents.size()));
                } else {
                    for (std::size_t ti : lane.residents) {
                        const Task& t = graph_.tasks[ti];
                        best = std::min(best, t.start_time + t.duration);
                    }
                }
            }
        }
        if (best == std::numeric_limits<double>::infinity()) return now;

        for (const Lane& lane : lane_set_.lanes) {
            if (lane.kind == Lane::Kind::Exclusive) {
                if (lane.busy && lane.finish_time == best) {
                    completing_.push_back(lane.running_task);
                }
            } else if (!lane.residents.empty()) {
                if (lane.policy == ContentionPolicy::ProcessorSharing) {
                    const double m = static_cast<double>(lane.residents.size());
                    for (std::size_t ti : lane.residents) {
                        if (now + graph_.tasks[ti].remaining * m == best) {
                            completing_.push_back(ti);
                        }
                    }
                } else {
                    for (std::size_t ti : lane.residents) {
                        const Task& t = graph_.tasks[ti];
                        if (t.start_time + t.duration == best) completing_.push_back(ti);
                    }
                }
            }
        }
        return best;
    }

    // Progress resident pool tasks over [now, next]; completing tasks are
    // removed in finish_task instead.
    void advance_pools(double now, double next) {
        const double dt = next - now;
        if (dt <= 0.0) return;
        for (Lane& lane : lane_set_.lanes) {
            if (lane.kind != Lane::Kind::Pool ||
                lane.policy != ContentionPolicy::ProcessorSharing || lane.residents.empty()) {
                continue;
            }
            const double rate = 1.0 / static_cast<double>(lane.residents.size());
            for (std::size_t ti : lane.residents) {
                graph_.tasks[ti].remaining =
                    std::max(0.0, graph_.tasks[ti].remaining - dt * rate);
            }
        }
    }

    void finish_task(std::size_t task_index, double now) {
        Task& t = graph_.tasks[task_index];
        Lane& lane = lane_set_.lanes[t.lane];
        if (lane.kind == Lane::Kind::Exclusive) {
            lane.busy = false;
        } else {
            lane.residents.erase(
                std::find(lane.residents.begin(), lane.residents.end(), task_index));
        }
        --lane.resident_count;
        if (lane.resident_count == 0) {
            lane.busy_accum += now - lane.busy_start;
            lane.prev_end = now;
        }
        record(now, lane, t, false);
        total_mb_ += t.volume_mb;
        ++completed_;
        const std::uint32_t begin = adjacency_.offsets[task_index];
        const std::uint32_t end = adjacency_.offsets[task_index + 1];
        for (std::uint32_t e = begin; e < end; ++e) {
            Task& succ = graph_.tasks[adjacency_.targets[e]];
            if (--succ.unmet == 0) enqueue(adjacency_.targets[e], now);
        }
    }

    TaskGraph graph_;
    Adjacency adjacency_;
    LaneSet lane_set_;
    bool record_trace_;
    std::vector<std::priority_queue<ReadyKey, std::vector<ReadyKey>, std::greater<ReadyKey>>>
        ready_;
    std::vector<std::size_t> completing_;
    std::vector<TraceEvent> trace_;
    double total_mb_ = 0.0;
    std::size_t completed_ = 0;
};

}  // namespace

RunMetrics simulate(const SimJob& job) {
    validate_job(job);
    const bool server_exclusive = job.mode == ScheduleMode::PipeLearnSequentialServer ||
                                  job.mode == ScheduleMode::ConventionalSplit;
    LaneSet lanes = make_lanes(job.profiles.size(), server_exclusive, job.contention);
    TaskGraph graph = build_tasks(job, lanes);
    Engine engine(std::move(graph), std::move(lanes), job.record_trace);
    return engine.run();
}

RunMetrics simulate_fl(const std::vector<LayerProfiles>& profiles,
                       const std::vector<NetworkProfile>& nets, const EpochShape& shape,
                       std::size_t epochs_per_round) {
    SimJob job;
    job.mode = ScheduleMode::FederatedLocal;
    job.profiles = profiles;
    job.nets = nets;
    job.shape = shape;
    job.fl_epochs_per_round = epochs_per_round;
    return simulate(job);
}

SearchResult exhaustive_search(const SimJob& base) {
    validate_job(base);
    std::size_t q_count = base.profiles.front().layer_count();
    for (const LayerProfiles& p : base.profiles) q_count = std::min(q_count, p.layer_count());
    if (base.shape.dataset_size < base.shape.batch_size) {
        throw std::invalid_argument("exhaustive_search: dataset smaller than one batch");
    }

    SearchResult result;
    SimJob job = base;
    job.record_trace = false;
    bool have_best = false;
    for (std::size_t p = 1; p <= q_count; ++p) {
        for (std::size_t n = 1; n <= base.shape.batch_size; ++n) {
            job.params.assign(base.profiles.size(), PipelineParams{p, n});
            const double epoch_s = simulate(job).makespan;
            result.table.push_back(SweepEntry{PipelineParams{p, n}, epoch_s});
            if (!have_best || epoch_s < result.best_epoch_s) {
                result.best = PipelineParams{p, n};
                result.best_epoch_s = epoch_s;
                have_best = true;
            }
        }
    }
    return result;
}

void write_trace_csv(std::ostream& out, const RunMetrics& metrics) {
    out << "time_s,lane,task,event\n";
    char buffer[64];
    for (const TraceEvent& e : metrics.trace) {
        std::snprintf(buffer, sizeof buffer, "%.17g", e.time);
        out << buffer << ',' << e.lane << ',' << e.task << ','
            << (e.start ? "start" : "finish") << '\n';
    }
}

}  // namespace pipelearn
