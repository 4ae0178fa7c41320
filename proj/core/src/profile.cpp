#include "pipelearn/profile.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pipelearn {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

double sum_range(const std::vector<double>& v, std::size_t first, std::size_t last) {
    return std::accumulate(v.begin() + static_cast<long>(first),
                           v.begin() + static_cast<long>(last), 0.0);
}

constexpr double kBitsPerValue = 64.0;
constexpr double kBitsPerMegabit = 1e6;
constexpr double kNominalProfileBatch = 100.0;

struct PresetSpec {
    std::vector<double> forward_work_s;       // device seconds at speed factor 1
    std::vector<double> output_elems;         // activation elements per sample
    std::vector<double> parameter_counts;     // weights + bias per layer
};

const PresetSpec& preset_spec(std::string_view name) {
    static const PresetSpec vgg5{
        {0.50, 0.70, 0.55, 0.25, 0.04},
        {2048.0, 1024.0, 1024.0, 128.0, 10.0},
        {896.0, 18496.0, 36928.0, 524416.0, 1290.0},
    };
    static const PresetSpec resnet18{
        {0.30, 0.45, 0.45, 0.40, 0.40, 0.38, 0.38, 0.35, 0.35, 0.03},
        {1024.0, 1024.0, 1024.0, 512.0, 512.0, 256.0, 256.0, 128.0, 64.0, 10.0},
        {1184.0, 9256.0, 9256.0, 28776.0, 36928.0, 114976.0, 147584.0, 229856.0,
         295104.0, 5130.0},
    };
    if (name == "vgg5-like") return vgg5;
    if (name == "resnet18-like") return resnet18;
    throw std::invalid_argument("unknown model preset: " + std::string(name));
}

}  // namespace

void LayerProfiles::validate() const {
    const std::size_t q_count = layer_count();
    require(q_count > 0, "LayerProfiles: no layers");
    const auto check = [&](const std::vector<double>& v, const char* field) {
        require(v.size() == q_count, std::string("LayerProfiles: ") + field + " has " +
                                         std::to_string(v.size()) + " entries, expected " +
                                         std::to_string(q_count));
        for (double x : v) {
            require(std::isfinite(x) && x >= 0.0,
                    std::string("LayerProfiles: ") + field + " entries must be non-negative");
        }
    };
    check(device_forward_s, "device_forward_s");
    check(device_backward_s, "device_backward_s");
    check(server_forward_s, "server_forward_s");
    check(server_backward_s, "server_backward_s");
    check(forward_volume_mb, "forward_volume_mb");
    check(backward_volume_mb, "backward_volume_mb");
    check(parameter_mb, "parameter_mb");
}

double LayerProfiles::device_forward_sum(std::size_t split_point) const {
    return sum_range(device_forward_s, 0, split_point);
}
double LayerProfiles::device_backward_sum(std::size_t split_point) const {
    return sum_range(device_backward_s, 0, split_point);
}
double LayerProfiles::server_forward_sum(std::size_t split_point) const {
    return sum_range(server_forward_s, split_point, layer_count());
}
double LayerProfiles::server_backward_sum(std::size_t split_point) const {
    return sum_range(server_backward_s, split_point, layer_count());
}
double LayerProfiles::model_mb() const { return sum_range(parameter_mb, 0, layer_count()); }
double LayerProfiles::device_model_mb(std::size_t split_point) const {
    return sum_range(parameter_mb, 0, split_point);
}

NetworkProfile network_preset(std::string_view name) {
    if (name == "4g") return NetworkProfile{10.0, 25.0, "4g"};
    if (name == "4g+") return NetworkProfile{20.0, 40.0, "4g+"};
    if (name == "wifi") return NetworkProfile{50.0, 50.0, "wifi"};
    throw std::invalid_argument("unknown network preset: " + std::string(name));
}

const std::vector<std::string>& network_preset_names() {
    static const std::vector<std::string> names{"4g", "4g+", "wifi"};
    return names;
}

std::size_t EpochShape::microbatch_rows(std::size_t parallel_batches) const {
    require(parallel_batches >= 1, "EpochShape: need at least one parallel batch");
    require(batch_size >= parallel_batches,
            "EpochShape: batch size " + std::to_string(batch_size) + " smaller than " +
                std::to_string(parallel_batches) + " parallel batches");
    return batch_size / parallel_batches;
}

std::size_t EpochShape::iterations(std::size_t parallel_batches) const {
    const std::size_t rows_per_iteration = microbatch_rows(parallel_batches) * parallel_batches;
    const std::size_t count = dataset_size / rows_per_iteration;
    require(count >= 1, "EpochShape: dataset of " + std::to_string(dataset_size) +
                            " rows does not cover one iteration of " +
                            std::to_string(rows_per_iteration) + " rows");
    return count;
}

LayerProfiles profile_model(std::string_view model_preset, double device_speed_factor,
                            double server_speed_factor, std::uint64_t seed) {
    require(device_speed_factor > 0.0 && server_speed_factor > 0.0,
            "profile_model: speed factors must be positive");
    const PresetSpec& spec = preset_spec(model_preset);
    const std::size_t q_count = spec.forward_work_s.size();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> time_jitter(0.85, 1.2);
    std::uniform_real_distribution<double> backward_ratio(1.8, 2.2);

    LayerProfiles p;
    p.device_forward_s.resize(q_count);
    p.device_backward_s.resize(q_count);
    p.server_forward_s.resize(q_count);
    p.server_backward_s.resize(q_count);
    p.forward_volume_mb.resize(q_count);
    p.backward_volume_mb.resize(q_count);
    p.parameter_mb.resize(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        const double work = spec.forward_work_s[q];
        p.device_forward_s[q] = work * time_jitter(rng) / device_speed_factor;
        p.device_backward_s[q] =
            work * backward_ratio(rng) * time_jitter(rng) / device_speed_factor;
        p.server_forward_s[q] = work * time_jitter(rng) / server_speed_factor;
        p.server_backward_s[q] =
            work * backward_ratio(rng) * time_jitter(rng) / server_speed_factor;
        const double volume =
            spec.output_elems[q] * kNominalProfileBatch * kBitsPerValue / kBitsPerMegabit;
        p.forward_volume_mb[q] = volume;
        p.backward_volume_mb[q] = volume;
        p.parameter_mb[q] = spec.parameter_counts[q] * kBitsPerValue / kBitsPerMegabit;
    }
    return p;
}

const std::vector<std::string>& model_preset_names() {
    static const std::vector<std::string> names{"vgg5-like", "resnet18-like"};
    return names;
}

LayerProfiles architecture_profile(const SequentialModel& model, std::size_t batch_rows,
                                   double device_speed_factor, double server_speed_factor,
                                   double seconds_per_gflop) {
    require(!model.empty(), "architecture_profile: model is empty");
    require(batch_rows >= 1, "architecture_profile: need at least one row");
    require(device_speed_factor > 0.0 && server_speed_factor > 0.0,
            "architecture_profile: speed factors must be positive");
    require(seconds_per_gflop > 0.0, "architecture_profile: seconds_per_gflop must be positive");

    const std::size_t q_count = model.layer_count();
    const double rows = static_cast<double>(batch_rows);
    LayerProfiles p;
    p.device_forward_s.resize(q_count);
    p.device_backward_s.resize(q_count);
    p.server_forward_s.resize(q_count);
    p.server_backward_s.resize(q_count);
    p.forward_volume_mb.resize(q_count);
    p.backward_volume_mb.resize(q_count);
    p.parameter_mb.resize(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        const DenseLayer& l = model.layer(q);
        const double flops =
            2.0 * rows * static_cast<double>(l.in_dim()) * static_cast<double>(l.out_dim());
        const double forward_s = flops * seconds_per_gflop * 1e-9;
        p.device_forward_s[q] = forward_s / device_speed_factor;
        p.device_backward_s[q] = 2.0 * forward_s / device_speed_factor;
        p.server_forward_s[q] = forward_s / server_speed_factor;
        p.server_backward_s[q] = 2.0 * forward_s / server_speed_factor;
        p.forward_volume_mb[q] =
            rows * static_cast<double>(l.out_dim()) * kBitsPerValue / kBitsPerMegabit;
        p.backward_volume_mb[q] = p.forward_volume_mb[q];
        p.parameter_mb[q] = static_cast<double>(l.weights.size() + l.bias.size()) *
                            kBitsPerValue / kBitsPerMegabit;
    }
    return p;
}

LayerProfiles live_profile(const SequentialModel& model, const Matrix& batch,
                           std::size_t iterations) {
    require(iterations >= 1, "live_profile: need at least one iteration");
    require(!model.empty(), "live_profile: model is empty");
    const std::size_t q_count = model.layer_count();
    const double rows = static_cast<double>(batch.rows());

    LayerProfiles p;
    p.device_forward_s.assign(q_count, 0.0);
    p.device_backward_s.assign(q_count, 0.0);
    p.server_forward_s.assign(q_count, 0.0);
    p.server_backward_s.assign(q_count, 0.0);
    p.forward_volume_mb.resize(q_count);
    p.backward_volume_mb.resize(q_count);
    p.parameter_mb.resize(q_count);

    using clock = std::chrono::steady_clock;
    const LossKind kind = infer_loss_kind(model);
    Matrix label(batch.rows(), model.output_dim());
    for (std::size_t r = 0; r < label.rows(); ++r) label.at(r, 0) = 1.0;

    // One single-layer model per layer so each timed call runs exactly one
    // layer of math.
    std::vector<SequentialModel> single;
    single.reserve(q_count);
    for (std::size_t q = 0; q < q_count; ++q) single.emplace_back(std::vector{model.layer(q)});

    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<ForwardCache> caches(q_count);
        Matrix x = batch;
        for (std::size_t q = 0; q < q_count; ++q) {
            const auto t0 = clock::now();
            caches[q] = forward(single[q], x);
            const double dt = std::chrono::duration<double>(clock::now() - t0).count();
            x = caches[q].output;
            p.device_forward_s[q] += dt;
            p.server_forward_s[q] += dt;
        }

        LossGrad lg = loss_and_gradient(x, label, kind);
        Matrix delta = lg.output_grad;
        for (std::size_t qi = q_count; qi-- > 0;) {
            const auto t0 = clock::now();
            PartialBackwardResult step = backward_from_output_grad(single[qi], caches[qi], delta);
            const double dt = std::chrono::duration<double>(clock::now() - t0).count();
            delta = std::move(step.input_grad);
            p.device_backward_s[qi] += dt;
            p.server_backward_s[qi] += dt;
        }
    }

    const double scale = 1.0 / static_cast<double>(iterations);
    for (std::size_t q = 0; q < q_count; ++q) {
        p.device_forward_s[q] *= scale;
        p.device_backward_s[q] *= scale;
        p.server_forward_s[q] *= scale;
        p.server_backward_s[q] *= scale;
        const DenseLayer& l = model.layer(q);
        p.forward_volume_mb[q] =
            rows * static_cast<double>(l.out_dim()) * kBitsPerValue / kBitsPerMegabit;
        p.backward_volume_mb[q] = p.forward_volume_mb[q];
        p.parameter_mb[q] = static_cast<double>(l.weights.size() + l.bias.size()) *
                            kBitsPerValue / kBitsPerMegabit;
    }
    return p;
}

void write_profile(std::ostream& out, const LayerProfiles& profiles) {
    profiles.validate();
    out << "pipelearn-profile v1\n";
    out << "layers " << profiles.layer_count() << "\n";
    out << "units time=seconds volume=megabits\n";
    out << "columns layer device_fwd_s device_bwd_s server_fwd_s server_bwd_s"
           " fwd_volume_mb bwd_volume_mb param_mb\n";
    char buffer[512];
    for (std::size_t q = 0; q < profiles.layer_count(); ++q) {
        std::snprintf(buffer, sizeof buffer,
                      "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", q + 1,
                      profiles.device_forward_s[q], profiles.device_backward_s[q],
                      profiles.server_forward_s[q], profiles.server_backward_s[q],
                      profiles.forward_volume_mb[q], profiles.backward_volume_mb[q],
                      profiles.parameter_mb[q]);
        out << buffer;
    }
}

LayerProfiles read_profile(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "pipelearn-profile v1") {
        throw std::invalid_argument("read_profile: missing 'pipelearn-profile v1' header");
    }
    std::size_t q_count = 0;
    {
        std::string tag;
        if (!(in >> tag >> q_count) || tag != "layers" || q_count == 0) {
            throw std::invalid_argument("read_profile: malformed 'layers' line");
        }
        std::getline(in, line);
    }
    std::getline(in, line);  // units
    std::getline(in, line);  // columns
    LayerProfiles p;
    p.device_forward_s.resize(q_count);
    p.device_backward_s.resize(q_count);
    p.server_forward_s.resize(q_count);
    p.server_backward_s.resize(q_count);
    p.forward_volume_mb.resize(q_count);
    p.backward_volume_mb.resize(q_count);
    p.parameter_mb.resize(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        std::size_t index = 0;
        if (!(in >> index >> p.device_forward_s[q] >> p.device_backward_s[q] >>
              p.server_forward_s[q] >> p.server_backward_s[q] >> p.forward_volume_mb[q] >>
              p.backward_volume_mb[q] >> p.parameter_mb[q]) ||
            index != q + 1) {
            throw std::invalid_argument("read_profile: malformed row for layer " +
                                        std::to_string(q + 1));
        }
    }
    p.validate();
    return p;
}

void write_profile_file(const std::string& path, const LayerProfiles& profiles) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_profile_file: cannot open " + path);
    write_profile(out, profiles);
}

LayerProfiles read_profile_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_profile_file: cannot open " + path);
    return read_profile(in);
}

}  // namespace pipelearn
