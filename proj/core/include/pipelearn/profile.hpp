#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pipelearn/nn.hpp"

namespace pipelearn {

// Per-layer cost measurements for one model, taken at the full batch size.
// Times are seconds, volumes megabits. forward_volume_mb[q] is the activation
// output of layer q+1 (1-based q+1), backward_volume_mb[q] the gradient
// flowing back through the same boundary, parameter_mb[q] the weight+bias
// payload of the layer at 64 bits per value.
struct LayerProfiles {
    std::vector<double> device_forward_s;
    std::vector<double> device_backward_s;
    std::vector<double> server_forward_s;
    std::vector<double> server_backward_s;
    std::vector<double> forward_volume_mb;
    std::vector<double> backward_volume_mb;
    std::vector<double> parameter_mb;

    std::size_t layer_count() const { return device_forward_s.size(); }
    void validate() const;

    // Prefix sums over the device share (layers 1..P) and suffix sums over the
    // server share (layers P+1..Q).
    double device_forward_sum(std::size_t split_point) const;
    double device_backward_sum(std::size_t split_point) const;
    double server_forward_sum(std::size_t split_point) const;
    double server_backward_sum(std::size_t split_point) const;
    double model_mb() const;
    double device_model_mb(std::size_t split_point) const;

    friend bool operator==(const LayerProfiles&, const LayerProfiles&) = default;
};

struct NetworkProfile {
    double uplink_mbps = 0.0;
    double downlink_mbps = 0.0;
    std::string name;

    friend bool operator==(const NetworkProfile&, const NetworkProfile&) = default;
};

// Presets: "4g" 10/25, "4g+" 20/40, "wifi" 50/50 (uplink/downlink Mbps).
NetworkProfile network_preset(std::string_view name);
const std::vector<std::string>& network_preset_names();

// Dataset shape seen by one device during one epoch.
struct EpochShape {
    std::size_t dataset_size = 0;
    std::size_t batch_size = 0;

    // Mini-batch rows when the batch is cut into n parallel pieces.
    std::size_t microbatch_rows(std::size_t parallel_batches) const;
    // floor(dataset / (microbatch_rows * n)); throws if that would be zero.
    std::size_t iterations(std::size_t parallel_batches) const;
};

// Synthetic per-layer profile for a named model family. "vgg5-like" has 5
// parameterized layers, "resnet18-like" has 10. Times are a per-preset work
// vector divided by the speed factors with deterministic per-seed jitter;
// volumes follow the preset's activation shapes at a nominal batch of 100.
LayerProfiles profile_model(std::string_view model_preset, double device_speed_factor,
                            double server_speed_factor, std::uint64_t seed);
const std::vector<std::string>& model_preset_names();

// Deterministic per-layer profile derived from a model's architecture: times
// follow dense-layer flop counts (2*rows*in*out forward, twice that backward)
// at 1/seconds_per_gflop GFLOP/s scaled by the speed factors; volumes are the
// exact activation/parameter payloads for `batch_rows` rows at 64-bit values.
LayerProfiles architecture_profile(const SequentialModel& model, std::size_t batch_rows,
                                   double device_speed_factor, double server_speed_factor,
                                   double seconds_per_gflop);

// Measures per-layer forward/backward times of the model on this host by
// averaging `iterations` timed repetitions over the given batch, and fills the
// exact activation/parameter volumes. Device and server columns both carry the
// host measurement; desk-scale runs execute both roles on one machine.
LayerProfiles live_profile(const SequentialModel& model, const Matrix& batch,
                           std::size_t iterations);

// Structured text round-trip for profiles (exact, 17 significant digits).
void write_profile(std::ostream& out, const LayerProfiles& profiles);
LayerProfiles read_profile(std::istream& in);
void write_profile_file(const std::string& path, const LayerProfiles& profiles);
LayerProfiles read_profile_file(const std::string& path);

}  // namespace pipelearn
