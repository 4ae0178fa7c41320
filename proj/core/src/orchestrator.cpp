#include "pipelearn/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "pipelearn/optimizer.hpp"
#include "pipelearn/profile.hpp"

namespace pipelearn {
namespace {

using nlohmann::json;

constexpr double kBitsPerValue = 64.0;
constexpr double kBitsPerMegabit = 1e6;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

void validate(const TrainingConfig& c) {
    if (c.devices < 1) fail("config: devices must be >= 1");
    if (c.data.size() != c.devices) fail("config: need one data spec per device");
    if (c.model.widths.size() < 2) fail("config: model needs input and output widths");
    if (c.model.activations.size() != c.model.widths.size() - 1)
        fail("config: need one activation per layer");
    if (c.batch_size < 1) fail("config: batch_size must be >= 1");
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
        fail("config: learning_rate must be finite and >= 0");
    if (c.epochs == 0 && c.max_epochs == 0)
        fail("config: open-ended training needs max_epochs >= 1");
    if (!c.params.empty() && c.params.size() != 1 && c.params.size() != c.devices)
        fail("config: params must be empty, a single entry, or one per device");
    for (const DeviceDataSpec& d : c.data)
        if (d.samples == 0) fail("config: every device needs samples > 0");
}

double model_megabits(const SequentialModel& model) {
    return static_cast<double>(model.parameter_count()) * kBitsPerValue / kBitsPerMegabit;
}

double activation_megabits(std::size_t rows, std::size_t width) {
    return static_cast<double>(rows) * static_cast<double>(width) * kBitsPerValue /
           kBitsPerMegabit;
}

// Per-device training state plus its message channel cursors.
struct DeviceState {
    SequentialModel device_part;
    SequentialModel server_part;
    Dataset data;
    PipelineParams params;
    LayerProfiles profile;
    std::size_t received = 0;  // samples the server saw this epoch
    std::size_t up_seq = 0;
    std::size_t down_seq = 0;
};

void push_message(std::vector<MessageRecord>& log, DeviceState& st, std::size_t device,
                  bool uplink, const char* kind, std::size_t epoch, std::size_t iteration,
                  std::size_t batch, double payload_mb) {
    MessageRecord m;
    m.device = device;
    m.uplink = uplink;
    m.kind = kind;
    m.epoch = epoch;
    m.iteration = iteration;
    m.batch = batch;
    m.payload_mb = payload_mb;
    m.channel_seq = uplink ? st.up_seq++ : st.down_seq++;
    log.push_back(std::move(m));
}

LayerProfiles make_profile(const TrainingConfig& c, const SequentialModel& model,
                           const Dataset& data) {
    if (c.clock == ClockMode::Wall || c.profile.live) {
        const std::size_t rows = std::min(c.batch_size, data.features.rows());
        return live_profile(model, data.features.slice_rows(0, rows), 3);
    }
    return architecture_profile(model, c.batch_size, c.profile.device_speed_factor,
                                c.profile.server_speed_factor, c.profile.seconds_per_gflop);
}

PipelineParams pick_params(const TrainingConfig& c, const LayerProfiles& profile,
                           const NetworkProfile& net, const EpochShape& shape) {
    const std::size_t q_count = profile.layer_count();
    switch (c.mode) {
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
    fail("config: unknown schedule mode");
}

RunMetrics virtual_epoch_metrics(const TrainingConfig& c, const std::vector<DeviceState>& devs,
                                 const NetworkProfile& net) {
    SimJob job;
    job.mode = c.mode;
    job.shape = EpochShape{devs.front().data.features.rows(), c.batch_size};
    for (const DeviceState& st : devs) {
        job.params.push_back(st.params);
        job.profiles.push_back(st.profile);
        job.nets.push_back(net);
    }
    return simulate(job);
}

}  // namespace

bool convergence_check(const std::vector<double>& losses, std::size_t patience,
                       double tolerance) {
    if (patience < 1) fail("convergence_check: patience must be >= 1");
    if (!(tolerance >= 0.0)) fail("convergence_check: tolerance must be >= 0");
    if (losses.empty()) return false;
    double best = losses.front();
    std::size_t stale = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) {
        if (best - losses[i] >= tolerance) {
            best = losses[i];
            stale = 0;
        } else if (++stale >= patience) {
            return true;
        }
    }
    return false;
}

TrainingResult run_training(const TrainingConfig& config) {
    if (config.mode == ScheduleMode::FederatedLocal) return run_fl_reference(config);
    validate(config);

    SequentialModel global =
        make_model(config.model.widths, config.model.activations, config.init_seed);
    const LossKind kind = infer_loss_kind(global);
    const std::size_t q_count = global.layer_count();
    const std::size_t classes = global.output_dim();
    const NetworkProfile net = network_preset(config.network_preset);

    TrainingResult result;
    std::vector<DeviceState> devs(config.devices);
    for (std::size_t k = 0; k < config.devices; ++k) {
        DeviceState& st = devs[k];
        st.data = make_blobs(config.data[k].samples, global.input_dim(), classes,
                             config.separation, config.data[k].seed);
        st.profile = make_profile(config, global, st.data);
        const EpochShape shape{config.data[k].samples, config.batch_size};
        if (config.params.empty()) {
            st.params = pick_params(config, st.profile, net, shape);
        } else {
            st.params = config.params.size() == 1 ? config.params[0] : config.params[k];
        }
        if (st.params.split_point < 1 || st.params.split_point > q_count)
            fail("config: split_point out of range");
        if (config.mode == ScheduleMode::ConventionalSplit) st.params.parallel_batches = 1;
        if (st.params.parallel_batches < 1 || st.params.parallel_batches > config.batch_size)
            fail("config: parallel_batches out of range");
        shape.iterations(st.params.parallel_batches);  // rejects shapes with zero iterations
        ModelPair pair = split_model(global, st.params.split_point);
        st.device_part = std::move(pair.device_part);
        st.server_part = std::move(pair.server_part);
        result.params.push_back(st.params);
    }

    Dataset validation;
    if (config.validation_samples > 0)
        validation = make_blobs(config.validation_samples, global.input_dim(), classes,
                                config.separation, config.validation_seed);

    std::vector<double> losses;
    const std::size_t epoch_cap = config.epochs > 0 ? config.epochs : config.max_epochs;
    for (std::size_t epoch = 1; epoch <= epoch_cap; ++epoch) {
        double loss_over_devices = 0.0;
        for (std::size_t k = 0; k < config.devices; ++k) {
            DeviceState& st = devs[k];
            const std::size_t n_par = st.params.parallel_batches;
            const EpochShape shape{st.data.features.rows(), config.batch_size};
            const std::size_t micro_rows = shape.microbatch_rows(n_par);
            const std::size_t iter_rows = micro_rows * n_par;
            const std::size_t iters = shape.iterations(n_par);
            const std::size_t seam =
                st.server_part.empty() ? classes : st.server_part.input_dim();
            st.received = 0;

            double loss_over_iters = 0.0;
            for (std::size_t it = 0; it < iters; ++it) {
                const std::size_t base = it * iter_rows;
                const std::vector<Matrix> xs =
                    microbatch(st.data.features.slice_rows(base, iter_rows), n_par);
                const std::vector<Matrix> ys =
                    microbatch(st.data.labels.slice_rows(base, iter_rows), n_par);

                // Device forward wave: all N activations go up before any
                // gradient comes back.
                std::vector<ForwardCache> caches;
                caches.reserve(n_par);
                for (std::size_t n = 0; n < n_par; ++n) {
                    caches.push_back(forward(st.device_part, xs[n]));
                    push_message(result.messages, st, k, true, "activations", epoch, it + 1,
                                 n + 1, activation_megabits(micro_rows, seam));
                }

                // Server pass per mini-batch; parameter gradients are summed
                // and applied once per iteration.
                ModelGrads server_grads = zero_grads_like(st.server_part);
                std::vector<Matrix> seam_grads;
                seam_grads.reserve(n_par);
                double loss_sum = 0.0;
                for (std::size_t n = 0; n < n_par; ++n) {
                    st.received += micro_rows;
                    if (st.server_part.empty()) {
                        LossGrad lg = loss_and_gradient(caches[n].output, ys[n], kind);
                        loss_sum += lg.loss;
                        seam_grads.push_back(std::move(lg.output_grad));
                    } else {
                        ForwardCache sc = forward(st.server_part, caches[n].output);
                        BackwardResult bw = backward(st.server_part, sc, ys[n], kind);
                        loss_sum += bw.loss;
                        accumulate(server_grads, bw.param_grads);
                        seam_grads.push_back(std::move(bw.input_grad));
                    }
                    push_message(result.messages, st, k, false, "activation_grads", epoch,
                                 it + 1, n + 1, activation_megabits(micro_rows, seam));
                }
                if (!st.server_part.empty())
                    st.server_part = sgd_step(std::move(st.server_part), server_grads,
                                              config.learning_rate, n_par);

                // Device backward wave from the returned seam gradients.
                ModelGrads device_grads = zero_grads_like(st.device_part);
                for (std::size_t n = 0; n < n_par; ++n) {
                    PartialBackwardResult pb =
                        backward_from_output_grad(st.device_part, caches[n], seam_grads[n]);
                    accumulate(device_grads, pb.param_grads);
                }
                st.device_part = sgd_step(std::move(st.device_part), device_grads,
                                          config.learning_rate, n_par);

                const double iter_loss = loss_sum / static_cast<double>(n_par);
                if (!std::isfinite(iter_loss)) {
                    std::ostringstream msg;
                    msg << "training diverged: non-finite loss at epoch " << epoch
                        << ", device " << k + 1 << ", iteration " << it + 1;
                    throw std::runtime_error(msg.str());
                }
                loss_over_iters += iter_loss;
            }
            loss_over_devices += loss_over_iters / static_cast<double>(iters);

            push_message(result.messages, st, k, true, "stop_epoch", epoch, 0, 0, 0.0);
            push_message(result.messages, st, k, true, "device_model", epoch, 0, 0,
                         model_megabits(st.device_part));
        }

        // FedAvg over the joined models, weighted by what the server received.
        std::vector<SequentialModel> joined;
        std::vector<std::size_t> weights;
        joined.reserve(config.devices);
        for (DeviceState& st : devs) {
            joined.push_back(join_models({st.device_part, st.server_part}));
            weights.push_back(st.received);
        }
        global = fedavg(joined, weights);
        for (std::size_t k = 0; k < config.devices; ++k) {
            DeviceState& st = devs[k];
            ModelPair pair = split_model(global, st.params.split_point);
            st.device_part = std::move(pair.device_part);
            st.server_part = std::move(pair.server_part);
            push_message(result.messages, st, k, false, "global_device_model", epoch, 0, 0,
                         model_megabits(st.device_part));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_over_devices / static_cast<double>(config.devices);
        rec.val_loss = std::numeric_limits<double>::quiet_NaN();
        if (config.validation_samples > 0) {
            const ForwardCache vc = forward(global, validation.features);
            rec.val_loss = loss_value(vc.output, validation.labels, kind);
            rec.val_accuracy = accuracy(vc.output, validation.labels);
        }
        result.history.push_back(rec);
        losses.push_back(rec.train_loss);
        if (config.epochs == 0 &&
            convergence_check(losses, config.patience, config.tolerance)) {
            result.converged = true;
            break;
        }
    }
    if (config.epochs > 0)
        result.converged = convergence_check(losses, config.patience, config.tolerance);

    for (std::size_t k = 0; k < config.devices; ++k) {
        push_message(result.messages, devs[k], k, false, "stop_training",
                     result.history.size(), 0, 0, 0.0);
        result.received_samples.push_back(devs[k].received);
    }
    result.global_model = std::move(global);
    result.epochs_run = result.history.size();
    result.epoch_metrics = virtual_epoch_metrics(config, devs, net);
    return result;
}

TrainingResult run_fl_reference(const TrainingConfig& config) {
    TrainingConfig local = config;
    local.mode = ScheduleMode::FederatedLocal;
    validate(local);

    SequentialModel global =
        make_model(config.model.widths, config.model.activations, config.init_seed);
    const LossKind kind = infer_loss_kind(global);
    const std::size_t classes = global.output_dim();
    const NetworkProfile net = network_preset(config.network_preset);

    TrainingResult result;
    std::vector<DeviceState> devs(config.devices);
    for (std::size_t k = 0; k < config.devices; ++k) {
        DeviceState& st = devs[k];
        st.data = make_blobs(config.data[k].samples, global.input_dim(), classes,
                             config.separation, config.data[k].seed);
        st.profile = make_profile(local, global, st.data);
        st.params = {global.layer_count(), 1};
        st.device_part = global;
        EpochShape{config.data[k].samples, config.batch_size}.iterations(1);
        result.params.push_back(st.params);
    }

    Dataset validation;
    if (config.validation_samples > 0)
        validation = make_blobs(config.validation_samples, global.input_dim(), classes,
                                config.separation, config.validation_seed);

    std::vector<double> losses;
    const std::size_t epoch_cap = config.epochs > 0 ? config.epochs : config.max_epochs;
    for (std::size_t epoch = 1; epoch <= epoch_cap; ++epoch) {
        double loss_over_devices = 0.0;
        for (std::size_t k = 0; k < config.devices; ++k) {
            DeviceState& st = devs[k];
            const EpochShape shape{st.data.features.rows(), config.batch_size};
            const std::size_t iters = shape.iterations(1);
            double loss_over_iters = 0.0;
            for (std::size_t it = 0; it < iters; ++it) {
                const std::size_t base = it * config.batch_size;
                const Matrix x = st.data.features.slice_rows(base, config.batch_size);
                const Matrix y = st.data.labels.slice_rows(base, config.batch_size);
                const ForwardCache cache = forward(st.device_part, x);
                BackwardResult bw = backward(st.device_part, cache, y, kind);
                if (!std::isfinite(bw.loss)) {
                    std::ostringstream msg;
                    msg << "training diverged: non-finite loss at epoch " << epoch
                        << ", device " << k + 1 << ", iteration " << it + 1;
                    throw std::runtime_error(msg.str());
                }
                loss_over_iters += bw.loss;
                st.device_part = sgd_step(std::move(st.device_part), bw.param_grads,
                                          config.learning_rate, 1);
            }
            loss_over_devices += loss_over_iters / static_cast<double>(iters);
            st.received = st.data.features.rows();
            push_message(result.messages, st, k, true, "device_model", epoch, 0, 0,
                         model_megabits(st.device_part));
        }

        std::vector<SequentialModel> models;
        std::vector<std::size_t> weights;
        for (DeviceState& st : devs) {
            models.push_back(st.device_part);
            weights.push_back(st.data.features.rows());
        }
        global = fedavg(models, weights);
        for (std::size_t k = 0; k < config.devices; ++k) {
            devs[k].device_part = global;
            push_message(result.messages, devs[k], k, false, "global_device_model", epoch, 0,
                         0, model_megabits(global));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_over_devices / static_cast<double>(config.devices);
        rec.val_loss = std::numeric_limits<double>::quiet_NaN();
        if (config.validation_samples > 0) {
            const ForwardCache vc = forward(global, validation.features);
            rec.val_loss = loss_value(vc.output, validation.labels, kind);
            rec.val_accuracy = accuracy(vc.output, validation.labels);
        }
        result.history.push_back(rec);
        losses.push_back(rec.train_loss);
        if (config.epochs == 0 &&
            convergence_check(losses, config.patience, config.tolerance)) {
            result.converged = true;
            break;
        }
    }
    if (config.epochs > 0)
        result.converged = convergence_check(losses, config.patience, config.tolerance);

    for (std::size_t k = 0; k < config.devices; ++k) {
        push_message(result.messages, devs[k], k, false, "stop_training",
                     result.history.size(), 0, 0, 0.0);
        result.received_samples.push_back(devs[k].received);
    }
    result.global_model = std::move(global);
    result.epochs_run = result.history.size();
    result.epoch_metrics = virtual_epoch_metrics(local, devs, net);
    return result;
}

namespace {

std::vector<Activation> activations_from_json(const json& arr) {
    std::vector<Activation> out;
    for (const auto& a : arr) out.push_back(activation_from_name(a.get<std::string>()));
    return out;
}

ClockMode clock_from_name(const std::string& name) {
    if (name == "virtual") return ClockMode::Virtual;
    if (name == "wall") return ClockMode::Wall;
    fail("config: clock must be \"virtual\" or \"wall\"");
}

}  // namespace

TrainingConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        std::size_t column = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        std::ostringstream msg;
        msg << "config parse error at line " << line << ", column " << column << ": "
            << e.what();
        throw std::invalid_argument(msg.str());
    }

    TrainingConfig c;
    if (!j.contains("model")) fail("config: missing \"model\"");
    const json& jm = j.at("model");
    c.model.widths = jm.at("widths").get<std::vector<std::size_t>>();
    c.model.activations = activations_from_json(jm.at("activations"));

    c.devices = j.value("devices", std::size_t{1});
    if (j.contains("data")) {
        for (const auto& jd : j.at("data"))
            c.data.push_back({jd.value("seed", std::uint64_t{1}),
                              jd.at("samples").get<std::size_t>()});
        if (c.devices == 1 && c.data.size() > 1) c.devices = c.data.size();
    } else if (j.contains("samples_per_device")) {
        const auto samples = j.at("samples_per_device").get<std::size_t>();
        const auto base_seed = j.value("data_seed", std::uint64_t{1});
        for (std::size_t k = 0; k < c.devices; ++k)
            c.data.push_back({base_seed + k, samples});
    } else {
        fail("config: need \"data\" or \"samples_per_device\"");
    }

    c.separation = j.value("separation", c.separation);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.validation_samples = j.value("validation_samples", c.validation_samples);
    c.validation_seed = j.value("validation_seed", c.validation_seed);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.network_preset = j.value("network", c.network_preset);
    c.mode = schedule_mode_from_name(j.value("mode", std::string{"pipelearn"}));
    if (j.contains("params") && !j.at("params").is_string()) {
        for (const auto& jp : j.at("params"))
            c.params.push_back({jp.at("split_point").get<std::size_t>(),
                                jp.at("parallel_batches").get<std::size_t>()});
    }
    if (j.contains("profile")) {
        const json& jp = j.at("profile");
        c.profile.live = jp.value("live", false);
        c.profile.device_speed_factor =
            jp.value("device_speed_factor", c.profile.device_speed_factor);
        c.profile.server_speed_factor =
            jp.value("server_speed_factor", c.profile.server_speed_factor);
        c.profile.seconds_per_gflop =
            jp.value("seconds_per_gflop", c.profile.seconds_per_gflop);
    }
    c.clock = clock_from_name(j.value("clock", std::string{"virtual"}));
    validate(c);
    return c;
}

std::string config_to_json(const TrainingConfig& c) {
    json j;
    j["model"]["widths"] = c.model.widths;
    json acts = json::array();
    for (Activation a : c.model.activations) acts.push_back(activation_name(a));
    j["model"]["activations"] = acts;
    j["devices"] = c.devices;
    json data = json::array();
    for (const DeviceDataSpec& d : c.data)
        data.push_back(json{{"seed", d.seed}, {"samples", d.samples}});
    j["data"] = data;
    j["separation"] = c.separation;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["tolerance"] = c.tolerance;
    j["validation_samples"] = c.validation_samples;
    j["validation_seed"] = c.validation_seed;
    j["init_seed"] = c.init_seed;
    j["network"] = c.network_preset;
    j["mode"] = schedule_mode_name(c.mode);
    if (!c.params.empty()) {
        json params = json::array();
        for (const PipelineParams& p : c.params)
            params.push_back(json{{"split_point", p.split_point},
                                  {"parallel_batches", p.parallel_batches}});
        j["params"] = params;
    }
    j["profile"] = json{{"live", c.profile.live},
                        {"device_speed_factor", c.profile.device_speed_factor},
                        {"server_speed_factor", c.profile.server_speed_factor},
                        {"seconds_per_gflop", c.profile.seconds_per_gflop}};
    j["clock"] = c.clock == ClockMode::Wall ? "wall" : "virtual";
    return j.dump(2) + "\n";
}

TrainingConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

}  // namespace pipelearn
