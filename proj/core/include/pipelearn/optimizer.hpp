#pragma once

#include <functional>
#include <vector>

#include "pipelearn/stage_graph.hpp"

namespace pipelearn {

// Pipeline configuration of one device: split point P and the number of
// parallel batches N per iteration. 1 <= P <= Q, 1 <= N <= batch size.
struct PipelineParams {
    std::size_t split_point = 1;      // P
    std::size_t parallel_batches = 1; // N

    friend bool operator==(const PipelineParams&, const PipelineParams&) = default;
};

struct Candidate {
    PipelineParams params;
    double estimated_epoch_s = 0.0;
};

struct Selection {
    std::vector<PipelineParams> per_device;
    std::vector<double> estimated_epoch_s;
    double global_estimate_s = 0.0;            // max over devices
    std::vector<Candidate> evaluated;          // shortlist of the last device
};

// The N that just hides the round trip behind device compute:
//   N = 1 + ceil((v_f[P]/w_u + sum_{q>P} srv_fwd + sum_{q>P} srv_bwd
//                 + v_b[P]/w_d) / min(sum_{q<=P} dev_fwd, sum_{q<=P} dev_bwd))
// clamped to [1, batch_size]. The device share must have positive compute.
std::size_t candidate_parallel_batches(const LayerProfiles& profiles, const NetworkProfile& net,
                                       std::size_t split_point, std::size_t batch_size);

// One candidate per split point P in [1, Q], each with its candidate N;
// duplicates removed.
std::vector<PipelineParams> shortlist(const LayerProfiles& profiles, const NetworkProfile& net,
                                      std::size_t batch_size);

// Evaluates the shortlist with the epoch estimator and picks the minimum; ties
// break towards the smaller P, then the smaller N.
Selection select_params(const LayerProfiles& profiles, const NetworkProfile& net,
                        const EpochShape& shape);
Selection select_params(const std::vector<LayerProfiles>& profiles,
                        const std::vector<NetworkProfile>& nets, const EpochShape& shape);

// Quality of a selection against the sweep optimum under a ground-truth epoch
// timer: true_epoch_s(oracle_best) / true_epoch_s(selected), in (0, 1].
double score(const PipelineParams& selected, const PipelineParams& oracle_best,
             const std::function<double(const PipelineParams&)>& true_epoch_s);

}  // namespace pipelearn
