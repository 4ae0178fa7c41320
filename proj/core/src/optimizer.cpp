#include "pipelearn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pipelearn {

std::size_t candidate_parallel_batches(const LayerProfiles& profiles, const NetworkProfile& net,
                                       std::size_t split_point, std::size_t batch_size) {
    profiles.validate();
    if (split_point < 1 || split_point > profiles.layer_count()) {
        throw std::out_of_range("candidate_parallel_batches: split point " +
                                std::to_string(split_point) + " outside [1, " +
                                std::to_string(profiles.layer_count()) + "]");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("candidate_parallel_batches: batch size must be positive");
    }
    if (net.uplink_mbps <= 0.0 || net.downlink_mbps <= 0.0) {
        throw std::invalid_argument("candidate_parallel_batches: bandwidths must be positive");
    }
    const double device_floor = std::min(profiles.device_forward_sum(split_point),
                                         profiles.device_backward_sum(split_point));
    if (device_floor <= 0.0) {
        throw std::invalid_argument(
            "candidate_parallel_batches: degenerate profile, device share of split " +
            std::to_string(split_point) + " has zero compute time");
    }
    const double gap = profiles.forward_volume_mb[split_point - 1] / net.uplink_mbps +
                       profiles.server_forward_sum(split_point) +
                       profiles.server_backward_sum(split_point) +
                       profiles.backward_volume_mb[split_point - 1] / net.downlink_mbps;
    const double raw = 1.0 + std::ceil(gap / device_floor);
    const double clamped = std::clamp(raw, 1.0, static_cast<double>(batch_size));
    return static_cast<std::size_t>(clamped);
}

std::vector<PipelineParams> shortlist(const LayerProfiles& profiles, const NetworkProfile& net,
                                      std::size_t batch_size) {
    std::vector<PipelineParams> out;
    out.reserve(profiles.layer_count());
    for (std::size_t p = 1; p <= profiles.layer_count(); ++p) {
        const PipelineParams params{p, candidate_parallel_batches(profiles, net, p, batch_size)};
        if (std::find(out.begin(), out.end(), params) == out.end()) out.push_back(params);
    }
    return out;
}

Selection select_params(const LayerProfiles& profiles, const NetworkProfile& net,
                        const EpochShape& shape) {
    Selection selection;
    const std::vector<PipelineParams> candidates = shortlist(profiles, net, shape.batch_size);
    selection.evaluated.reserve(candidates.size());
    bool have_best = false;
    Candidate best;
    for (const PipelineParams& params : candidates) {
        const double estimate = epoch_time(profiles, net, params.split_point,
                                           params.parallel_batches, shape);
        selection.evaluated.push_back(Candidate{params, estimate});
        const bool better =
            !have_best || estimate < best.estimated_epoch_s ||
            (estimate == best.estimated_epoch_s &&
             (params.split_point < best.params.split_point ||
              (params.split_point == best.params.split_point &&
               params.parallel_batches < best.params.parallel_batches)));
        if (better) {
            best = Candidate{params, estimate};
            have_best = true;
        }
    }
    selection.per_device = {best.params};
    selection.estimated_epoch_s = {best.estimated_epoch_s};
    selection.global_estimate_s = best.estimated_epoch_s;
    return selection;
}

Selection select_params(const std::vector<LayerProfiles>& profiles,
                        const std::vector<NetworkProfile>& nets, const EpochShape& shape) {
    if (profiles.empty() || profiles.size() != nets.size()) {
        throw std::invalid_argument("select_params: need one network profile per device");
    }
    Selection selection;
    selection.global_estimate_s = 0.0;
    for (std::size_t k = 0; k < profiles.size(); ++k) {
        Selection single = select_params(profiles[k], nets[k], shape);
        selection.per_device.push_back(single.per_device.front());
        selection.estimated_epoch_s.push_back(single.estimated_epoch_s.front());
        selection.global_estimate_s =
            std::max(selection.global_estimate_s, single.global_estimate_s);
        selection.evaluated = std::move(single.evaluated);
    }
    return selection;
}

double score(const PipelineParams& selected, const PipelineParams& oracle_best,
             const std::function<double(const PipelineParams&)>& true_epoch_s) {
    const double t_selected = true_epoch_s(selected);
    const double t_oracle = true_epoch_s(oracle_best);
    if (!(t_selected > 0.0) || !(t_oracle > 0.0)) {
        throw std::invalid_argument("score: epoch times must be positive");
    }
    if (t_oracle > t_selected) {
        throw std::invalid_argument(
            "score: oracle epoch time exceeds the selected one; the oracle must be the sweep "
            "optimum");
    }
    return t_oracle / t_selected;
}

}  // namespace pipelearn
