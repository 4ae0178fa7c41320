#pragma once

#include <vector>

#include "pipelearn/nn.hpp"

namespace pipelearn {

// Split of a model at layer P: the device keeps layers 1..P, the server the
// rest. P == layer_count() leaves the server part empty.
struct ModelPair {
    SequentialModel device_part;
    SequentialModel server_part;
};

ModelPair split_model(const SequentialModel& model, std::size_t split_point);

// Inverse of split_model; checks that the seam widths line up.
SequentialModel join_models(const ModelPair& pair);

// Slices a batch of B rows into n consecutive mini-batches of floor(B/n) rows.
// The surplus B mod n rows are dropped. Call with features and labels
// separately; slicing is by row index so the two stay aligned.
std::vector<Matrix> microbatch(const Matrix& batch, std::size_t n);

// Weighted parameter mean over models of identical architecture. Weights are
// the per-model sample counts. A single model is returned unchanged.
SequentialModel fedavg(const std::vector<SequentialModel>& models,
                       const std::vector<std::size_t>& sample_counts);

}  // namespace pipelearn
