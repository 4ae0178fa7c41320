#include "pipelearn/partition.hpp"

#include <stdexcept>
#include <string>

namespace pipelearn {

ModelPair split_model(const SequentialModel& model, std::size_t split_point) {
    const std::size_t q_count = model.layer_count();
    if (split_point < 1 || split_point > q_count) {
        throw std::out_of_range("split_model: split point " + std::to_string(split_point) +
                                " outside [1, " + std::to_string(q_count) + "]");
    }
    std::vector<DenseLayer> device(model.layers().begin(),
                                   model.layers().begin() + static_cast<long>(split_point));
    std::vector<DenseLayer> server(model.layers().begin() + static_cast<long>(split_point),
                                   model.layers().end());
    return ModelPair{SequentialModel(std::move(device)), SequentialModel(std::move(server))};
}

SequentialModel join_models(const ModelPair& pair) {
    if (pair.device_part.empty()) {
        throw std::invalid_argument("join_models: device part is empty");
    }
    if (!pair.server_part.empty() &&
        pair.server_part.input_dim() != pair.device_part.output_dim()) {
        throw std::invalid_argument(
            "join_models: seam mismatch, device part produces width " +
            std::to_string(pair.device_part.output_dim()) + " but server part expects " +
            std::to_string(pair.server_part.input_dim()));
    }
    std::vector<DenseLayer> layers = pair.device_part.layers();
    layers.insert(layers.end(), pair.server_part.layers().begin(),
                  pair.server_part.layers().end());
    return SequentialModel(std::move(layers));
}

std::vector<Matrix> microbatch(const Matrix& batch, std::size_t n) {
    if (n < 1) throw std::invalid_argument("microbatch: n must be at least 1");
    if (batch.rows() < n) {
        throw std::invalid_argument("microbatch: batch has " + std::to_string(batch.rows()) +
                                    " rows, fewer than n = " + std::to_string(n));
    }
    const std::size_t slice = batch.rows() / n;
    std::vector<Matrix> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(batch.slice_rows(i * slice, slice));
    return out;
}

SequentialModel fedavg(const std::vector<SequentialModel>& models,
                       const std::vector<std::size_t>& sample_counts) {
    if (models.empty()) throw std::invalid_argument("fedavg: no models");
    if (models.size() != sample_counts.size()) {
        throw std::invalid_argument("fedavg: got " + std::to_string(models.size()) +
                                    " models but " + std::to_string(sample_counts.size()) +
                                    " sample counts");
    }
    if (models.size() == 1) return models.front();

    double total = 0.0;
    for (std::size_t k = 0; k < sample_counts.size(); ++k) {
        if (sample_counts[k] == 0) {
            throw std::invalid_argument("fedavg: sample count for model " + std::to_string(k + 1) +
                                        " is zero");
        }
        total += static_cast<double>(sample_counts[k]);
    }

    const SequentialModel& first = models.front();
    for (std::size_t k = 1; k < models.size(); ++k) {
        const SequentialModel& m = models[k];
        bool same = m.layer_count() == first.layer_count();
        for (std::size_t q = 0; same && q < m.layer_count(); ++q) {
            same = m.layer(q).weights.same_shape(first.layer(q).weights) &&
                   m.layer(q).activation == first.layer(q).activation;
        }
        if (!same) {
            throw std::invalid_argument("fedavg: model " + std::to_string(k + 1) +
                                        " architecture differs from model 1");
        }
    }

    std::vector<DenseLayer> layers = first.layers();
    for (std::size_t q = 0; q < layers.size(); ++q) {
        for (std::size_t i = 0; i < layers[q].weights.size(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < models.size(); ++k) {
                acc += static_cast<double>(sample_counts[k]) *
                       models[k].layer(q).weights.values()[i];
            }
            layers[q].weights.values()[i] = acc / total;
        }
        for (std::size_t i = 0; i < layers[q].bias.size(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < models.size(); ++k) {
                acc += static_cast<double>(sample_counts[k]) * models[k].layer(q).bias[i];
            }
            layers[q].bias[i] = acc / total;
        }
    }
    return SequentialModel(std::move(layers));
}

}  // namespace pipelearn
