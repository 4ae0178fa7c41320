#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipelearn/data.hpp"
#include "pipelearn/partition.hpp"
#include "pipelearn/sim.hpp"

namespace pipelearn {

// Virtual: stage and transfer times are charged from the cost profiles.
// Wall: the profile is measured from the actual model first (live_profile),
// then charged the same way.
enum class ClockMode { Virtual, Wall };

struct ModelSpec {
    std::vector<std::size_t> widths;        // {in, hidden..., out}
    std::vector<Activation> activations;    // one per layer
};

struct DeviceDataSpec {
    std::uint64_t seed = 1;
    std::size_t samples = 0;
};

// Cost source for the virtual clock. live=false derives deterministic layer
// costs from the model architecture (flop counts at the given speeds);
// live=true measures the actual model, as does ClockMode::Wall.
struct ProfileSpec {
    bool live = false;
    double device_speed_factor = 1.0;
    double server_speed_factor = 1.0;
    double seconds_per_gflop = 2.0;
};

struct TrainingConfig {
    ModelSpec model;
    std::size_t devices = 1;
    std::vector<DeviceDataSpec> data;   // one per device
    double separation = 4.0;            // synthetic blob separation
    std::size_t batch_size = 100;
    double learning_rate = 0.05;
    std::size_t epochs = 10;            // 0: run until convergence_check fires
    std::size_t max_epochs = 200;       // cap for the convergence-driven mode
    std::size_t patience = 5;
    double tolerance = 1e-4;
    std::size_t validation_samples = 0; // 0: no validation trace
    std::uint64_t validation_seed = 9901;
    std::uint64_t init_seed = 1;
    std::string network_preset = "4g";
    ScheduleMode mode = ScheduleMode::PipeLearnParallelServer;
    std::vector<PipelineParams> params; // empty: the optimizer picks per device
    ProfileSpec profile;
    ClockMode clock = ClockMode::Virtual;
};

// Transcript entry of the device/server protocol. Channels are per-device and
// per-direction; channel_seq is the FIFO position on that channel.
struct MessageRecord {
    std::size_t device = 0;  // 0-based
    bool uplink = true;
    std::string kind;        // activations, activation_grads, stop_epoch,
                             // device_model, global_device_model, stop_training
    std::size_t epoch = 0;   // 1-based
    std::size_t iteration = 0;
    std::size_t batch = 0;   // n, 1-based; 0 for control messages
    double payload_mb = 0.0;
    std::size_t channel_seq = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;   // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;   // NaN without a validation set
    double val_accuracy = 0.0;
};

struct TrainingResult {
    SequentialModel global_model;
    std::vector<EpochRecord> history;
    std::vector<PipelineParams> params;        // as used, one per device
    RunMetrics epoch_metrics;                  // one epoch under the virtual clock
    std::vector<MessageRecord> messages;
    std::vector<std::size_t> received_samples; // per device, one epoch
    std::size_t epochs_run = 0;
    bool converged = false;
};

// Pipelined split training: per iteration each device runs N forward passes,
// ships activations and labels, receives activation gradients, and both sides
// apply learning_rate/N times the summed gradient; each epoch ends with a
// FedAvg over the joined models weighted by received sample counts. Modes
// ConventionalSplit (forces N = 1) and the two PipeLearn modes share this
// path; FederatedLocal delegates to run_fl_reference.
TrainingResult run_training(const TrainingConfig& config);

// Classic FedAvg baseline on identical data and init: full local model, one
// full-batch update per iteration, aggregation weighted by dataset sizes.
TrainingResult run_fl_reference(const TrainingConfig& config);

// True when the best loss so far has not improved by at least `tolerance`
// for `patience` consecutive epochs.
bool convergence_check(const std::vector<double>& losses, std::size_t patience,
                       double tolerance);

TrainingConfig config_from_json(const std::string& text);
std::string config_to_json(const TrainingConfig& config);
TrainingConfig load_config_file(const std::string& path);

}  // namespace pipelearn
