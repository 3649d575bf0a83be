#pragma once

// Feed-forward classifier trained from scratch: dense and strided-convolution
// layers, softmax cross-entropy, backpropagation, SGD and Adam.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdfl::nn {

class NnError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Activation { relu, identity };

/// Geometry of a square-kernel, unpadded convolution over a channels-last
/// image. A conv layer's weight matrix is [out_channels x (k*k*in_channels)].
struct ConvShape {
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::size_t in_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;

    std::size_t out_height() const { return (in_height - kernel) / stride + 1; }
    std::size_t out_width() const { return (in_width - kernel) / stride + 1; }
    std::size_t patch_size() const { return kernel * kernel * in_channels; }

    friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

enum class LayerKind { dense, conv };

struct Layer {
    LayerKind kind = LayerKind::dense;
    Matrix weight;             // [out x in] for dense
    std::vector<double> bias;  // [out]
    Activation activation = Activation::identity;
    ConvShape conv{};          // conv layers only

    std::size_t input_size() const;
    std::size_t output_size() const;

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Ordered layers; gradients and Adam moments reuse this type.
struct ModelParams {
    std::vector<Layer> layers;

    std::size_t input_size() const { return layers.front().input_size(); }
    std::size_t output_size() const { return layers.back().output_size(); }
    std::size_t parameter_count() const;

    /// Zero-filled copy with the same shapes.
    ModelParams zeros_like() const;
    /// Throws NnError unless `other` has identical layer kinds and shapes.
    void require_same_shape(const ModelParams& other) const;
    /// Layers chain and every entry is finite.
    bool is_valid() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Dense net with ReLU hidden layers and a linear output layer. Weights are
/// Glorot-uniform from `rng`, biases zero.
ModelParams make_mlp(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t classes,
                     std::mt19937_64& rng);

/// Two stride-2 3x3 conv layers (4 and 8 channels) followed by a 32-unit dense
/// layer and the output layer.
ModelParams make_tiny_cnn(std::size_t height, std::size_t width, std::size_t channels, std::size_t classes,
                          std::mt19937_64& rng);

struct Batch {
    Matrix inputs;            // [B x d]
    std::vector<int> labels;  // [B]
};

struct ForwardResult {
    Matrix logits;
    /// h_0 = x, then the post-activation output of every hidden layer.
    std::vector<Matrix> activations;
};

ForwardResult forward(const ModelParams& params, const Matrix& x);

/// Row-wise softmax, computed with the max-shift.
Matrix softmax(const Matrix& logits);

struct LossAndGrads {
    double loss = 0.0;
    ModelParams grads;
};

/// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrads loss_and_grads(const ModelParams& params, const Batch& batch);

/// Mean cross-entropy only.
double loss(const ModelParams& params, const Batch& batch);

void sgd_step(ModelParams& params, const ModelParams& grads, double learning_rate);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double delta = 1e-7;

    void validate() const;
};

struct AdamState {
    AdamConfig config;
    ModelParams m;
    ModelParams v;
    std::uint64_t step = 0;

    AdamState() = default;
    AdamState(const ModelParams& shape, AdamConfig cfg);
};

/// One Adam update. Bias correction uses the post-increment step count, so
/// the first call applies sqrt(1 - beta2) / (1 - beta1).
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state);

/// Labeled samples viewed as rows of a feature matrix.
struct DataView {
    const Matrix* features = nullptr;  // all samples, one per row
    std::span<const std::size_t> rows; // which rows belong to this view
    std::span<const int> labels;       // label per entry of `rows`

    std::size_t size() const { return rows.size(); }
    Batch gather(std::span<const std::size_t> positions) const;
    Batch all() const;
};

/// Local training: `epochs` passes of Adam over `data` in shuffled mini-batches
/// of `batch_size` (the last batch may be short). Batch sizes at or above the
/// dataset size fall back to full-batch steps.
ModelParams model_update(ModelParams params, const DataView& data, std::size_t epochs, std::size_t batch_size,
                         AdamState& state, std::mt19937_64& rng);

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
double evaluate(const ModelParams& params, const DataView& test);

} // namespace cdfl::nn
