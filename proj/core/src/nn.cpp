#include "pipelearn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace pipelearn {

namespace {

// Floor for probabilities entering log/division; only reached on hard
// underflow of a softmax output.
constexpr double kProbFloor = 1e-300;

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

Matrix apply_activation(Activation act, const Matrix& pre) {
    switch (act) {
        case Activation::Identity:
            return pre;
        case Activation::ReLU: {
            Matrix out = pre;
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case Activation::Softmax: {
            Matrix out = pre;
            for (std::size_t r = 0; r < out.rows(); ++r) {
                double* row = out.data() + r * out.cols();
                double hi = row[0];
                for (std::size_t c = 1; c < out.cols(); ++c) hi = std::max(hi, row[c]);
                double sum = 0.0;
                for (std::size_t c = 0; c < out.cols(); ++c) {
                    row[c] = std::exp(row[c] - hi);
                    sum += row[c];
                }
                for (std::size_t c = 0; c < out.cols(); ++c) row[c] /= sum;
            }
            return out;
        }
    }
    throw std::logic_error("apply_activation: unknown activation");
}

// Given dLoss/d(post-activation) and the post-activation values, produce
// dLoss/d(pre-activation).
Matrix activation_backward(Activation act, const Matrix& post, const Matrix& grad) {
    switch (act) {
        case Activation::Identity:
            return grad;
        case Activation::ReLU: {
            Matrix out = grad;
            for (std::size_t i = 0; i < out.size(); ++i) {
                if (post.values()[i] <= 0.0) out.values()[i] = 0.0;
            }
            return out;
        }
        case Activation::Softmax: {
            // Full Jacobian per row: dz_i = p_i * (g_i - sum_j g_j * p_j).
            Matrix out = grad;
            for (std::size_t r = 0; r < out.rows(); ++r) {
                const double* p = post.data() + r * post.cols();
                double* g = out.data() + r * out.cols();
                double dot = 0.0;
                for (std::size_t c = 0; c < out.cols(); ++c) dot += g[c] * p[c];
                for (std::size_t c = 0; c < out.cols(); ++c) g[c] = p[c] * (g[c] - dot);
            }
            return out;
        }
    }
    throw std::logic_error("activation_backward: unknown activation");
}

void validate_cache(const SequentialModel& model, const ForwardCache& cache) {
    const std::size_t q_count = model.layer_count();
    require(cache.layer_inputs.size() == q_count,
            "backward: cache holds " + std::to_string(cache.layer_inputs.size()) +
                " layer inputs but the model has " + std::to_string(q_count) + " layers");
    for (std::size_t q = 0; q < q_count; ++q) {
        require(cache.layer_inputs[q].cols() == model.layer(q).in_dim(),
                "backward: cached input " + std::to_string(q + 1) + " has width " +
                    std::to_string(cache.layer_inputs[q].cols()) + " but layer " +
                    std::to_string(q + 1) + " expects " +
                    std::to_string(model.layer(q).in_dim()));
        require(cache.layer_inputs[q].rows() == cache.output.rows(),
                "backward: cached input " + std::to_string(q + 1) +
                    " row count does not match the cached output");
    }
    if (q_count > 0) {
        require(cache.output.cols() == model.output_dim(),
                "backward: cached output width " + std::to_string(cache.output.cols()) +
                    " does not match the model output width " +
                    std::to_string(model.output_dim()));
    }
}

}  // namespace

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::ReLU: return "relu";
        case Activation::Softmax: return "softmax";
    }
    return "unknown";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::ReLU;
    if (name == "softmax") return Activation::Softmax;
    throw std::invalid_argument("unknown activation name: " + name);
}

SequentialModel::SequentialModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t q = 0; q < layers_.size(); ++q) {
        const DenseLayer& l = layers_[q];
        require(l.weights.rows() > 0 && l.weights.cols() > 0,
                "SequentialModel: layer " + std::to_string(q + 1) + " has empty weights");
        require(l.bias.size() == l.out_dim(),
                "SequentialModel: layer " + std::to_string(q + 1) + " bias length " +
                    std::to_string(l.bias.size()) + " does not match out width " +
                    std::to_string(l.out_dim()));
        if (q > 0) {
            require(l.in_dim() == layers_[q - 1].out_dim(),
                    "SequentialModel: layer " + std::to_string(q + 1) + " expects input width " +
                        std::to_string(l.in_dim()) + " but layer " + std::to_string(q) +
                        " produces " + std::to_string(layers_[q - 1].out_dim()));
        }
    }
}

std::size_t SequentialModel::input_dim() const {
    require(!layers_.empty(), "input_dim: model is empty");
    return layers_.front().in_dim();
}

std::size_t SequentialModel::output_dim() const {
    require(!layers_.empty(), "output_dim: model is empty");
    return layers_.back().out_dim();
}

std::size_t SequentialModel::parameter_count() const {
    std::size_t count = 0;
    for (const DenseLayer& l : layers_) count += l.weights.size() + l.bias.size();
    return count;
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.activation == b.activation && a.weights == b.weights && a.bias == b.bias;
}

bool operator==(const SequentialModel& a, const SequentialModel& b) {
    return a.layers_ == b.layers_;
}

ForwardCache forward(const SequentialModel& model, const Matrix& batch) {
    require(batch.rows() > 0, "forward: batch is empty");
    ForwardCache cache;
    cache.layer_inputs.reserve(model.layer_count());
    Matrix x = batch;
    for (std::size_t q = 0; q < model.layer_count(); ++q) {
        const DenseLayer& l = model.layer(q);
        require(x.cols() == l.in_dim(), "forward: layer " + std::to_string(q + 1) +
                                            " expects input width " + std::to_string(l.in_dim()) +
                                            " but got " + std::to_string(x.cols()));
        cache.layer_inputs.push_back(x);
        Matrix pre = matmul_transposed(x, l.weights);
        for (std::size_t r = 0; r < pre.rows(); ++r) {
            double* row = pre.data() + r * pre.cols();
            for (std::size_t c = 0; c < pre.cols(); ++c) row[c] += l.bias[c];
        }
        x = apply_activation(l.activation, pre);
    }
    cache.output = std::move(x);
    return cache;
}

LossKind infer_loss_kind(const SequentialModel& model) {
    if (!model.empty() && model.layers().back().activation == Activation::Softmax) {
        return LossKind::CrossEntropy;
    }
    return LossKind::MeanSquaredError;
}

double loss_value(const Matrix& prediction, const Matrix& label, LossKind kind) {
    require(prediction.same_shape(label), "loss: prediction and label shapes differ");
    require(prediction.rows() > 0, "loss: empty batch");
    const double batch = static_cast<double>(prediction.rows());
    double total = 0.0;
    if (kind == LossKind::MeanSquaredError) {
        for (std::size_t i = 0; i < prediction.size(); ++i) {
            const double d = prediction.values()[i] - label.values()[i];
            total += d * d;
        }
    } else {
        for (std::size_t i = 0; i < prediction.size(); ++i) {
            const double y = label.values()[i];
            if (y != 0.0) {
                total -= y * std::log(std::max(prediction.values()[i], kProbFloor));
            }
        }
    }
    return total / batch;
}

LossGrad loss_and_gradient(const Matrix& prediction, const Matrix& label, LossKind kind) {
    LossGrad out;
    out.loss = loss_value(prediction, label, kind);
    const double batch = static_cast<double>(prediction.rows());
    out.output_grad = Matrix(prediction.rows(), prediction.cols());
    if (kind == LossKind::MeanSquaredError) {
        for (std::size_t i = 0; i < prediction.size(); ++i) {
            out.output_grad.values()[i] =
                2.0 * (prediction.values()[i] - label.values()[i]) / batch;
        }
    } else {
        for (std::size_t i = 0; i < prediction.size(); ++i) {
            const double y = label.values()[i];
            if (y != 0.0) {
                out.output_grad.values()[i] =
                    -y / (std::max(prediction.values()[i], kProbFloor) * batch);
            }
        }
    }
    return out;
}

PartialBackwardResult backward_from_output_grad(const SequentialModel& model,
                                                const ForwardCache& cache,
                                                const Matrix& output_grad) {
    validate_cache(model, cache);
    require(output_grad.same_shape(cache.output),
            "backward: output gradient shape does not match the cached output");
    PartialBackwardResult result;
    result.param_grads.resize(model.layer_count());
    Matrix delta = output_grad;  // dLoss/d(post-activation of the current layer)
    for (std::size_t qi = model.layer_count(); qi-- > 0;) {
        const DenseLayer& l = model.layer(qi);
        const Matrix& post =
            (qi + 1 < model.layer_count()) ? cache.layer_inputs[qi + 1] : cache.output;
        Matrix dz = activation_backward(l.activation, post, delta);
        result.param_grads[qi].weight_grad = matmul(transpose(dz), cache.layer_inputs[qi]);
        result.param_grads[qi].bias_grad = column_sums(dz);
        delta = matmul(dz, l.weights);
    }
    result.input_grad = std::move(delta);
    return result;
}

BackwardResult backward(const SequentialModel& model, const ForwardCache& cache,
                        const Matrix& label, LossKind kind) {
    LossGrad lg = loss_and_gradient(cache.output, label, kind);
    PartialBackwardResult partial = backward_from_output_grad(model, cache, lg.output_grad);
    return BackwardResult{std::move(partial.param_grads), std::move(partial.input_grad), lg.loss};
}

BackwardResult backward(const SequentialModel& model, const ForwardCache& cache,
                        const Matrix& label) {
    return backward(model, cache, label, infer_loss_kind(model));
}

ModelGrads zero_grads_like(const SequentialModel& model) {
    ModelGrads grads(model.layer_count());
    for (std::size_t q = 0; q < model.layer_count(); ++q) {
        const DenseLayer& l = model.layer(q);
        grads[q].weight_grad = Matrix(l.out_dim(), l.in_dim());
        grads[q].bias_grad.assign(l.bias.size(), 0.0);
    }
    return grads;
}

void accumulate(ModelGrads& into, const ModelGrads& grads) {
    require(into.size() == grads.size(), "accumulate: gradient layer counts differ");
    for (std::size_t q = 0; q < into.size(); ++q) {
        require(into[q].weight_grad.same_shape(grads[q].weight_grad) &&
                    into[q].bias_grad.size() == grads[q].bias_grad.size(),
                "accumulate: gradient shapes differ at layer " + std::to_string(q + 1));
        for (std::size_t i = 0; i < into[q].weight_grad.size(); ++i) {
            into[q].weight_grad.values()[i] += grads[q].weight_grad.values()[i];
        }
        for (std::size_t i = 0; i < into[q].bias_grad.size(); ++i) {
            into[q].bias_grad[i] += grads[q].bias_grad[i];
        }
    }
}

SequentialModel sgd_step(SequentialModel model, const ModelGrads& summed_grads,
                         double learning_rate, std::size_t n_microbatches) {
    require(n_microbatches >= 1, "sgd_step: n_microbatches must be at least 1");
    require(summed_grads.size() == model.layer_count(),
            "sgd_step: gradient layer count does not match the model");
    const double step = learning_rate / static_cast<double>(n_microbatches);
    for (std::size_t q = 0; q < model.layer_count(); ++q) {
        DenseLayer& l = model.layer(q);
        require(summed_grads[q].weight_grad.same_shape(l.weights) &&
                    summed_grads[q].bias_grad.size() == l.bias.size(),
                "sgd_step: gradient shapes differ at layer " + std::to_string(q + 1));
        for (std::size_t i = 0; i < l.weights.size(); ++i) {
            l.weights.values()[i] -= step * summed_grads[q].weight_grad.values()[i];
        }
        for (std::size_t i = 0; i < l.bias.size(); ++i) {
            l.bias[i] -= step * summed_grads[q].bias_grad[i];
        }
    }
    return model;
}

SequentialModel make_model(const std::vector<std::size_t>& widths,
                           const std::vector<Activation>& activations, std::uint64_t seed) {
    require(widths.size() >= 2, "make_model: need at least an input and an output width");
    require(activations.size() == widths.size() - 1,
            "make_model: need one activation per layer");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-0.5, 0.5);
    std::vector<DenseLayer> layers;
    layers.reserve(activations.size());
    for (std::size_t q = 0; q + 1 < widths.size(); ++q) {
        DenseLayer l;
        l.weights = Matrix(widths[q + 1], widths[q]);
        for (double& v : l.weights.values()) v = uniform(rng);
        l.bias.resize(widths[q + 1]);
        for (double& v : l.bias) v = uniform(rng);
        l.activation = activations[q];
        layers.push_back(std::move(l));
    }
    return SequentialModel(std::move(layers));
}

std::string model_to_json(const SequentialModel& model) {
    nlohmann::json doc;
    doc["format"] = "pipelearn-model-v1";
    doc["layers"] = nlohmann::json::array();
    for (const DenseLayer& l : model.layers()) {
        nlohmann::json jl;
        jl["in"] = l.in_dim();
        jl["out"] = l.out_dim();
        jl["activation"] = activation_name(l.activation);
        jl["weights"] = l.weights.values();  // row-major, out x in
        jl["bias"] = l.bias;
        doc["layers"].push_back(std::move(jl));
    }
    return doc.dump();
}

SequentialModel model_from_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    if (doc.value("format", "") != "pipelearn-model-v1") {
        throw std::invalid_argument("model_from_json: unknown format tag");
    }
    std::vector<DenseLayer> layers;
    for (const auto& jl : doc.at("layers")) {
        DenseLayer l;
        const std::size_t in = jl.at("in").get<std::size_t>();
        const std::size_t out = jl.at("out").get<std::size_t>();
        const auto weights = jl.at("weights").get<std::vector<double>>();
        if (weights.size() != in * out) {
            throw std::invalid_argument("model_from_json: weight count does not match dims");
        }
        l.weights = Matrix(out, in);
        l.weights.values() = weights;
        l.bias = jl.at("bias").get<std::vector<double>>();
        l.activation = activation_from_name(jl.at("activation").get<std::string>());
        layers.push_back(std::move(l));
    }
    return SequentialModel(std::move(layers));
}

}  // namespace pipelearn
