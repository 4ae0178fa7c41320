#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "pipelearn/profile.hpp"

namespace pipelearn {

// Pipeline stages of one training iteration, in lane order. The enum order is
// also the tie-break order for simultaneous events.
enum class StageKind : int {
    DeviceForward = 0,
    Upload = 1,
    ServerForward = 2,
    ServerBackward = 3,
    Download = 4,
    DeviceBackward = 5,
};
constexpr int kStageKindCount = 6;

const char* stage_kind_name(StageKind kind);   // "dev_fwd", "upload", ...
const char* stage_lane_name(StageKind kind);   // "device_compute", "uplink", ...

struct Stage {
    StageKind kind = StageKind::DeviceForward;
    std::size_t batch = 1;   // mini-batch index n, 1-based
    std::size_t device = 1;  // device label k

    friend bool operator==(const Stage&, const Stage&) = default;
};

std::string stage_label(const Stage& stage);  // "dev_fwd_3" etc.

// Precedence DAG of the 6N stages of one iteration for one device. Stage
// indices are index_of(kind, n) = int(kind) * N + (n - 1).
struct StageGraph {
    std::size_t parallel_batches = 1;  // N
    std::size_t device = 1;
    std::vector<Stage> stages;
    std::vector<std::vector<std::size_t>> preds;
    std::vector<std::vector<std::size_t>> succs;

    std::size_t index_of(StageKind kind, std::size_t batch) const;
    const std::vector<std::size_t>& predecessors(StageKind kind, std::size_t batch) const;
};

// Builds the iteration DAG:
//   dev_fwd_n  after dev_fwd_{n-1}
//   upload_n   after upload_{n-1}, dev_fwd_n
//   srv_fwd_n  after upload_n, srv_bwd_{n-1}
//   srv_bwd_n  after srv_fwd_n
//   download_n after download_{n-1}, srv_bwd_n
//   dev_bwd_n  after dev_bwd_{n-1}, download_n; dev_bwd_1 also after dev_fwd_N
// For N = 1 this degenerates to the 6-stage chain (5 edges).
StageGraph build_iteration_graph(std::size_t parallel_batches, std::size_t device = 1);

// Per-kind stage durations of one iteration at split point P with N parallel
// batches. Every batch index of a kind gets the same duration:
//   dev_fwd  = sum_{q<=P} device_forward_s[q] / N
//   srv_fwd  = sum_{q>P}  server_forward_s[q] / N     (and likewise backward)
//   upload   = forward_volume_mb[P] / (uplink * N)
//   download = backward_volume_mb[P] / (downlink * N)
struct StageDurations {
    double device_forward = 0.0;
    double upload = 0.0;
    double server_forward = 0.0;
    double server_backward = 0.0;
    double download = 0.0;
    double device_backward = 0.0;

    double of(StageKind kind) const;
    double chain_total() const;
};

StageDurations stage_durations(const LayerProfiles& profiles, const NetworkProfile& net,
                               std::size_t split_point, std::size_t parallel_batches);

// Duration of every stage of a graph, aligned with StageGraph::stages.
struct StageTimes {
    std::vector<double> by_stage;
};

StageTimes stage_times(const StageGraph& graph, const LayerProfiles& profiles,
                       const NetworkProfile& net, std::size_t split_point);
StageTimes uniform_stage_times(const StageGraph& graph, const StageDurations& durations);

// Kahn order; throws on a cycle or a dangling edge.
std::vector<std::size_t> topological_order(const StageGraph& graph);

// Longest-path iteration time: T(r) = t(r) + max over predecessors, answer is
// T at the sink dev_bwd_N.
double estimate_makespan(const StageGraph& graph, const StageTimes& times);

// Earliest-start schedule of the iteration (start = T(r) - t(r)), one row per
// stage, for Gantt rendering.
struct ScheduleEntry {
    Stage stage;
    double start = 0.0;
    double end = 0.0;
    std::string lane;
};

std::vector<ScheduleEntry> earliest_start_schedule(const StageGraph& graph,
                                                   const StageTimes& times);
void write_schedule_csv(std::ostream& out, const std::vector<ScheduleEntry>& schedule);

// Estimated epoch duration: iterations(N) * estimated iteration makespan for
// the pipelined modes. The estimator is contention-free and per-device;
// multi-device contention is the simulator's job. Baseline modes reuse the
// same profile: ConventionalSplit is the N = 1 chain at floor(dataset/batch)
// iterations, FederatedLocal is full-model device compute.
enum class ScheduleMode {
    PipeLearnParallelServer,
    PipeLearnSequentialServer,
    ConventionalSplit,
    FederatedLocal,
};

const char* schedule_mode_name(ScheduleMode mode);
ScheduleMode schedule_mode_from_name(const std::string& name);  // "pipelearn", "sfl", ...

double epoch_time(const LayerProfiles& profiles, const NetworkProfile& net,
                  std::size_t split_point, std::size_t parallel_batches,
                  const EpochShape& shape,
                  ScheduleMode mode = ScheduleMode::PipeLearnParallelServer);

}  // namespace pipelearn
