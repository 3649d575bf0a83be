#include "cdfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cdfl::nn {

std::size_t Layer::input_size() const {
    if (kind == LayerKind::conv) return conv.in_height * conv.in_width * conv.in_channels;
    return weight.cols;
}

std::size_t Layer::output_size() const {
    if (kind == LayerKind::conv) return conv.out_height() * conv.out_width() * weight.rows;
    return weight.rows;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams out = *this;
    for (auto& l : out.layers) {
        std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    return out;
}

void ModelParams::require_same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) throw NnError("shape mismatch: layer count");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (a.kind != b.kind || a.weight.rows != b.weight.rows || a.weight.cols != b.weight.cols ||
            a.bias.size() != b.bias.size() || a.conv != b.conv)
            throw NnError("shape mismatch: layer " + std::to_string(i));
    }
}

bool ModelParams::is_valid() const {
    if (layers.empty()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.bias.size() != l.weight.rows || l.weight.data.size() != l.weight.rows * l.weight.cols) return false;
        if (l.kind == LayerKind::conv && l.weight.cols != l.conv.patch_size()) return false;
        if (i + 1 < layers.size() && l.output_size() != layers[i + 1].input_size()) return false;
        for (double w : l.weight.data)
            if (!std::isfinite(w)) return false;
        for (double b : l.bias)
            if (!std::isfinite(b)) return false;
    }
    return true;
}

namespace {

void glorot_fill(Matrix& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& x : w.data) x = dist(rng);
}

Layer dense_layer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng) {
    Layer l;
    l.kind = LayerKind::dense;
    l.weight = Matrix(out, in);
    l.bias.assign(out, 0.0);
    l.activation = act;
    glorot_fill(l.weight, in, out, rng);
    return l;
}

Layer conv_layer(ConvShape shape, std::size_t out_channels, std::mt19937_64& rng) {
    Layer l;
    l.kind = LayerKind::conv;
    l.conv = shape;
    l.weight = Matrix(out_channels, shape.patch_size());
    l.bias.assign(out_channels, 0.0);
    l.activation = Activation::relu;
    glorot_fill(l.weight, shape.patch_size(), shape.kernel * shape.kernel * out_channels, rng);
    return l;
}

// Input offset of patch element (ky, kx, c) for output pixel (oy, ox).
inline std::size_t conv_input_index(const ConvShape& s, std::size_t oy, std::size_t ox, std::size_t ky,
                                    std::size_t kx, std::size_t c) {
    return ((oy * s.stride + ky) * s.in_width + ox * s.stride + kx) * s.in_channels + c;
}

Matrix layer_forward(const Layer& l, const Matrix& x) {
    const std::size_t batch = x.rows;
    Matrix z(batch, l.output_size());
    if (l.kind == LayerKind::dense) {
        for (std::size_t b = 0; b < batch; ++b) {
            const auto xr = x.row(b);
            auto zr = z.row(b);
            for (std::size_t o = 0; o < l.weight.rows; ++o) {
                const auto wr = l.weight.row(o);
                double acc = l.bias[o];
                for (std::size_t i = 0; i < wr.size(); ++i) acc += wr[i] * xr[i];
                zr[o] = acc;
            }
        }
    } else {
        const auto& s = l.conv;
        const std::size_t oh = s.out_height(), ow = s.out_width(), oc = l.weight.rows;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto xr = x.row(b);
            auto zr = z.row(b);
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t o = 0; o < oc; ++o) {
                        const auto wr = l.weight.row(o);
                        double acc = l.bias[o];
                        std::size_t p = 0;
                        for (std::size_t ky = 0; ky < s.kernel; ++ky)
                            for (std::size_t kx = 0; kx < s.kernel; ++kx)
                                for (std::size_t c = 0; c < s.in_channels; ++c, ++p)
                                    acc += wr[p] * xr[conv_input_index(s, oy, ox, ky, kx, c)];
                        zr[(oy * ow + ox) * oc + o] = acc;
                    }
        }
    }
    if (l.activation == Activation::relu)
        for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    return z;
}

// Accumulates weight/bias gradients from dz and returns the gradient wrt x.
Matrix layer_backward(const Layer& l, const Matrix& x, const Matrix& dz, Layer& grad, bool need_dx) {
    const std::size_t batch = x.rows;
    Matrix dx;
    if (need_dx) dx = Matrix(batch, x.cols);
    if (l.kind == LayerKind::dense) {
        for (std::size_t b = 0; b < batch; ++b) {
            const auto xr = x.row(b);
            const auto dzr = dz.row(b);
            for (std::size_t o = 0; o < l.weight.rows; ++o) {
                const double g = dzr[o];
                if (g == 0.0) continue;
                grad.bias[o] += g;
                auto gw = grad.weight.row(o);
                for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += g * xr[i];
                if (need_dx) {
                    const auto wr = l.weight.row(o);
                    auto dxr = dx.row(b);
                    for (std::size_t i = 0; i < wr.size(); ++i) dxr[i] += g * wr[i];
                }
            }
        }
    } else {
        const auto& s = l.conv;
        const std::size_t oh = s.out_height(), ow = s.out_width(), oc = l.weight.rows;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto xr = x.row(b);
            const auto dzr = dz.row(b);
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t o = 0; o < oc; ++o) {
                        const double g = dzr[(oy * ow + ox) * oc + o];
                        if (g == 0.0) continue;
                        grad.bias[o] += g;
                        auto gw = grad.weight.row(o);
                        const auto wr = l.weight.row(o);
                        std::size_t p = 0;
                        for (std::size_t ky = 0; ky < s.kernel; ++ky)
                            for (std::size_t kx = 0; kx < s.kernel; ++kx)
                                for (std::size_t c = 0; c < s.in_channels; ++c, ++p) {
                                    const std::size_t idx = conv_input_index(s, oy, ox, ky, kx, c);
                                    gw[p] += g * xr[idx];
                                    if (need_dx) dx(b, idx) += g * wr[p];
                                }
                    }
        }
    }
    return dx;
}

void check_input(const ModelParams& params, const Matrix& x) {
    if (params.layers.empty()) throw NnError("model has no layers");
    if (x.cols != params.input_size())
        throw NnError("dimension mismatch: input has " + std::to_string(x.cols) + " columns, model expects " +
                      std::to_string(params.input_size()));
}

double row_logsumexp(std::span<const double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return mx + std::log(s);
}

void check_labels(const Batch& batch, std::size_t classes) {
    if (batch.inputs.rows == 0 || batch.labels.size() != batch.inputs.rows) throw NnError("malformed batch");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw NnError("label out of range");
}

} // namespace

ModelParams make_mlp(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t classes,
                     std::mt19937_64& rng) {
    ModelParams p;
    std::size_t in = inputs;
    for (std::size_t h : hidden) {
        p.layers.push_back(dense_layer(in, h, Activation::relu, rng));
        in = h;
    }
    p.layers.push_back(dense_layer(in, classes, Activation::identity, rng));
    return p;
}

ModelParams make_tiny_cnn(std::size_t height, std::size_t width, std::size_t channels, std::size_t classes,
                          std::mt19937_64& rng) {
    ModelParams p;
    ConvShape c1{height, width, channels, 3, 2};
    p.layers.push_back(conv_layer(c1, 4, rng));
    ConvShape c2{c1.out_height(), c1.out_width(), 4, 3, 2};
    p.layers.push_back(conv_layer(c2, 8, rng));
    const std::size_t flat = c2.out_height() * c2.out_width() * 8;
    p.layers.push_back(dense_layer(flat, 32, Activation::relu, rng));
    p.layers.push_back(dense_layer(32, classes, Activation::identity, rng));
    return p;
}

ForwardResult forward(const ModelParams& params, const Matrix& x) {
    check_input(params, x);
    ForwardResult out;
    out.activations.reserve(params.layers.size());
    out.activations.push_back(x);
    for (std::size_t n = 0; n + 1 < params.layers.size(); ++n)
        out.activations.push_back(layer_forward(params.layers[n], out.activations.back()));
    out.logits = layer_forward(params.layers.back(), out.activations.back());
    return out;
}

Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const auto z = logits.row(b);
        const double lse = row_logsumexp(z);
        auto pr = p.row(b);
        for (std::size_t c = 0; c < z.size(); ++c) pr[c] = std::exp(z[c] - lse);
    }
    return p;
}

double loss(const ModelParams& params, const Batch& batch) {
    const Matrix logits = forward(params, batch.inputs).logits;
    check_labels(batch, logits.cols);
    double total = 0.0;
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const auto z = logits.row(b);
        total += row_logsumexp(z) - z[static_cast<std::size_t>(batch.labels[b])];
    }
    const double mean = total / static_cast<double>(logits.rows);
    if (!std::isfinite(mean)) throw NnError("numeric overflow");
    return std::max(mean, 0.0);
}

LossAndGrads loss_and_grads(const ModelParams& params, const Batch& batch) {
    ForwardResult fw = forward(params, batch.inputs);
    const Matrix& logits = fw.logits;
    check_labels(batch, logits.cols);

    const std::size_t batch_size = logits.rows;
    const double inv_b = 1.0 / static_cast<double>(batch_size);
    Matrix dz(batch_size, logits.cols);
    double total = 0.0;
    for (std::size_t b = 0; b < batch_size; ++b) {
        const auto z = logits.row(b);
        const double lse = row_logsumexp(z);
        const auto y = static_cast<std::size_t>(batch.labels[b]);
        total += lse - z[y];
        auto dr = dz.row(b);
        for (std::size_t c = 0; c < z.size(); ++c) dr[c] = std::exp(z[c] - lse) * inv_b;
        dr[y] -= inv_b;
    }

    LossAndGrads out;
    out.loss = std::max(total * inv_b, 0.0);
    if (!std::isfinite(out.loss)) throw NnError("numeric overflow");
    out.grads = params.zeros_like();

    for (std::size_t n = params.layers.size(); n-- > 0;) {
        const Matrix& input = fw.activations[n];
        Matrix dx = layer_backward(params.layers[n], input, dz, out.grads.layers[n], n > 0);
        if (n == 0) break;
        // input is the post-activation output of layer n-1.
        if (params.layers[n - 1].activation == Activation::relu)
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                if (input.data[i] <= 0.0) dx.data[i] = 0.0;
        dz = std::move(dx);
    }

    for (const auto& l : out.grads.layers) {
        for (double g : l.weight.data)
            if (!std::isfinite(g)) throw NnError("numeric overflow");
    }
    return out;
}

void sgd_step(ModelParams& params, const ModelParams& grads, double learning_rate) {
    if (!(learning_rate > 0.0)) throw NnError("learning rate must be positive");
    params.require_same_shape(grads);
    for (std::size_t n = 0; n < params.layers.size(); ++n) {
        auto& l = params.layers[n];
        const auto& g = grads.layers[n];
        for (std::size_t i = 0; i < l.weight.data.size(); ++i) l.weight.data[i] -= learning_rate * g.weight.data[i];
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= learning_rate * g.bias[i];
    }
}

void AdamConfig::validate() const {
    if (!(learning_rate > 0.0)) throw NnError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw NnError("adam: betas must lie in [0,1)");
    if (!(delta > 0.0)) throw NnError("adam: delta must be positive");
}

AdamState::AdamState(const ModelParams& shape, AdamConfig cfg)
    : config(cfg), m(shape.zeros_like()), v(shape.zeros_like()) {
    config.validate();
}

namespace {

void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                 const AdamConfig& c, double scale) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        w[i] -= scale * m[i] / (std::sqrt(v[i]) + c.delta);
    }
}

} // namespace

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
    params.require_same_shape(grads);
    params.require_same_shape(state.m);
    params.require_same_shape(state.v);

    const auto& c = state.config;
    const double t = static_cast<double>(state.step + 1);
    const double scale = c.learning_rate * std::sqrt(1.0 - std::pow(c.beta2, t)) / (1.0 - std::pow(c.beta1, t));
    for (std::size_t n = 0; n < params.layers.size(); ++n) {
        auto& l = params.layers[n];
        const auto& g = grads.layers[n];
        adam_update(l.weight.data, g.weight.data, state.m.layers[n].weight.data, state.v.layers[n].weight.data, c,
                    scale);
        adam_update(l.bias, g.bias, state.m.layers[n].bias, state.v.layers[n].bias, c, scale);
    }
    ++state.step;
}

Batch DataView::gather(std::span<const std::size_t> positions) const {
    Batch b;
    b.inputs = Matrix(positions.size(), features->cols);
    b.labels.reserve(positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const std::size_t pos = positions[r];
        const auto src = features->row(rows[pos]);
        std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
        b.labels.push_back(labels[pos]);
    }
    return b;
}

Batch DataView::all() const {
    std::vector<std::size_t> pos(size());
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    return gather(pos);
}

ModelParams model_update(ModelParams params, const DataView& data, std::size_t epochs, std::size_t batch_size,
                         AdamState& state, std::mt19937_64& rng) {
    if (data.size() == 0) throw NnError("empty dataset");
    if (batch_size == 0) throw NnError("batch size must be positive");
    const std::size_t n = data.size();
    const std::size_t bs = std::min(batch_size, n);

    std::vector<std::size_t> order(n);
    for (std::size_t e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            const Batch batch = data.gather(std::span<const std::size_t>(order).subspan(start, len));
            const auto lg = loss_and_grads(params, batch);
            adam_step(params, lg.grads, state);
        }
    }
    return params;
}

double evaluate(const ModelParams& params, const DataView& test) {
    if (test.size() == 0) throw NnError("empty test set");
    const Batch batch = test.all();
    const Matrix logits = forward(params, batch.inputs).logits;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const auto z = logits.row(b);
        // max_element returns the first maximum, so ties go to the lowest class.
        const auto pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        if (pred == batch.labels[b]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

} // namespace cdfl::nn
