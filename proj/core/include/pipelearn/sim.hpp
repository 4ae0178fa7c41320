#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pipelearn/optimizer.hpp"

namespace pipelearn {

// How the server compute lane reacts to concurrent guests. ProcessorSharing
// stretches every resident task by the occupancy count; NoContention is the
// idealisation the per-device estimator assumes.
enum class ContentionPolicy { ProcessorSharing, NoContention };

struct TraceEvent {
    double time = 0.0;
    std::string lane;
    std::string task;
    bool start = false;  // false: finish
};

struct LaneUsage {
    std::string lane;
    double busy = 0.0;
    double idle = 0.0;
};

struct RunMetrics {
    double makespan = 0.0;
    double server_busy = 0.0;
    double server_idle = 0.0;
    std::vector<double> device_busy;
    std::vector<double> device_idle;
    double device_idle_avg = 0.0;
    double total_transmitted_mb = 0.0;
    double avg_throughput_mbps = 0.0;  // total_transmitted_mb / makespan
    std::vector<LaneUsage> lanes;      // every lane, for conservation checks
    std::vector<TraceEvent> trace;     // populated when SimJob::record_trace
};

// One simulated epoch. Lanes: one compute, one uplink and one downlink lane
// per device, plus a single server compute lane. Modes:
//   PipeLearnParallelServer   per-device pipelines; server stages of all
//                             devices share the server under `contention`
//   PipeLearnSequentialServer per-device pipelines; within an iteration the
//                             server finishes device k before starting k+1
//   ConventionalSplit         split training without micro-batching (N = 1),
//                             exclusive shared server lane
//   FederatedLocal            full-model local compute, traffic only at the
//                             epoch-end aggregation
// Epoch-end aggregation (device model upload, FedAvg compute, global device
// model download) is part of the epoch unless include_aggregation is off.
struct SimJob {
    ScheduleMode mode = ScheduleMode::PipeLearnParallelServer;
    std::vector<PipelineParams> params;    // per device; ignored for FederatedLocal
    std::vector<LayerProfiles> profiles;   // per device
    std::vector<NetworkProfile> nets;      // per device
    EpochShape shape;
    ContentionPolicy contention = ContentionPolicy::ProcessorSharing;
    bool include_aggregation = true;
    double fedavg_seconds_per_mb = 1e-4;   // server-side FedAvg compute rate
    std::size_t iterations_override = 0;   // > 0 forces the per-device iteration count
    std::size_t fl_epochs_per_round = 1;   // FederatedLocal: local epochs per aggregation
    bool record_trace = false;
};

RunMetrics simulate(const SimJob& job);

// FederatedLocal round: epochs_per_round local epochs, then one aggregation.
RunMetrics simulate_fl(const std::vector<LayerProfiles>& profiles,
                       const std::vector<NetworkProfile>& nets, const EpochShape& shape,
                       std::size_t epochs_per_round = 1);

struct SweepEntry {
    PipelineParams params;
    double epoch_s = 0.0;
};

struct SearchResult {
    PipelineParams best;
    double best_epoch_s = 0.0;
    std::vector<SweepEntry> table;  // (P asc, N asc)
};

// Simulates every grid point P in [1, Q], N in [1, batch_size], applying the
// same (P, N) to all devices of the job; ties break to smaller P then N.
SearchResult exhaustive_search(const SimJob& base);

void write_trace_csv(std::ostream& out, const RunMetrics& metrics);

}  // namespace pipelearn
