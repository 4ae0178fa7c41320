#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipelearn/matrix.hpp"

namespace pipelearn {

enum class Activation { Identity, ReLU, Softmax };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Loss follows the model head: Softmax output pairs with mean cross-entropy,
// Identity (or ReLU) output with mean squared error.
enum class LossKind { MeanSquaredError, CrossEntropy };

struct DenseLayer {
    Matrix weights;             // out x in
    std::vector<double> bias;   // out
    Activation activation = Activation::Identity;

    std::size_t in_dim() const { return weights.cols(); }
    std::size_t out_dim() const { return weights.rows(); }
};

// A stack of dense layers with matching seam widths. May be empty: the empty
// model maps any input to itself (the server part when the split sits at the
// last layer).
class SequentialModel {
public:
    SequentialModel() = default;
    explicit SequentialModel(std::vector<DenseLayer> layers);

    std::size_t layer_count() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    const DenseLayer& layer(std::size_t q) const { return layers_.at(q); }
    DenseLayer& layer(std::size_t q) { return layers_.at(q); }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;

    friend bool operator==(const SequentialModel&, const SequentialModel&);

private:
    std::vector<DenseLayer> layers_;
};

bool operator==(const DenseLayer&, const DenseLayer&);

// One cached input per executed layer plus the final output; consumed by the
// backward pass.
struct ForwardCache {
    std::vector<Matrix> layer_inputs;  // x^0 .. x^{Q-1}
    Matrix output;                     // y_hat
};

struct LayerGrads {
    Matrix weight_grad;             // same shape as weights
    std::vector<double> bias_grad;  // same length as bias
};
using ModelGrads = std::vector<LayerGrads>;

struct BackwardResult {
    ModelGrads param_grads;
    Matrix input_grad;  // dLoss/d(batch)
    double loss = 0.0;
};

struct PartialBackwardResult {
    ModelGrads param_grads;
    Matrix input_grad;
};

struct LossGrad {
    double loss = 0.0;
    Matrix output_grad;  // dLoss/d(prediction)
};

ForwardCache forward(const SequentialModel& model, const Matrix& batch);

LossKind infer_loss_kind(const SequentialModel& model);
LossGrad loss_and_gradient(const Matrix& prediction, const Matrix& label, LossKind kind);
double loss_value(const Matrix& prediction, const Matrix& label, LossKind kind);

// Full backward pass: loss at the head, gradients for every parameter and for
// the batch itself. The loss kind defaults to infer_loss_kind(model).
BackwardResult backward(const SequentialModel& model, const ForwardCache& cache,
                        const Matrix& label);
BackwardResult backward(const SequentialModel& model, const ForwardCache& cache,
                        const Matrix& label, LossKind kind);

// Backward pass seeded by an externally supplied gradient of the model output.
// This is the device half of a split model: the server sends back
// dLoss/d(activations) and the device continues from there.
PartialBackwardResult backward_from_output_grad(const SequentialModel& model,
                                                const ForwardCache& cache,
                                                const Matrix& output_grad);

ModelGrads zero_grads_like(const SequentialModel& model);
void accumulate(ModelGrads& into, const ModelGrads& grads);

// params -= learning_rate / n_microbatches * summed_grads
SequentialModel sgd_step(SequentialModel model, const ModelGrads& summed_grads,
                         double learning_rate, std::size_t n_microbatches);

// Seeded uniform [-0.5, 0.5] initialisation. widths = {in, h1, ..., out};
// activations has one entry per layer.
SequentialModel make_model(const std::vector<std::size_t>& widths,
                           const std::vector<Activation>& activations, std::uint64_t seed);

std::string model_to_json(const SequentialModel& model);
SequentialModel model_from_json(const std::string& text);

}  // namespace pipelearn
