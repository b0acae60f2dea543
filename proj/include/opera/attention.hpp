#pragma once

#include <opera/mask.hpp>
#include <opera/matrix.hpp>
#include <opera/regularization.hpp>
#include <opera/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace opera {

/// softmax(mask(Q K^T / sqrt(d))), masked logits set to -inf.
inline Tensor attention_weights(const Tensor& q, const Tensor& k, const CausalMask& mask) {
    if (q.shape() != k.shape() || q.rank() != 2) {
        throw ShapeError("attention_weights: Q " + shape_string(q.shape()) + " vs K " + shape_string(k.shape()));
    }
    if (q.rows() != mask.size()) {
        throw ShapeError("attention_weights: " + std::to_string(q.rows()) + " frames vs mask of " +
                         std::to_string(mask.size()));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Tensor logits = scale(matmul_nt(q, k), inv_sqrt_d);
    return softmax_rows(masked_fill(logits, mask.bits(), -std::numeric_limits<double>::infinity()));
}

inline Tensor attention_output(const Tensor& attention, const Tensor& v) {
    if (attention.rank() != 2 || v.rank() != 2 || attention.cols() != v.rows()) {
        throw ShapeError("attention_output: A " + shape_string(attention.shape()) + " vs V " + shape_string(v.shape()));
    }
    return matmul(attention, v);
}

/// PE[pos][2i] = sin(pos / 10000^(2i/width)), PE[pos][2i+1] = cos(same).
inline Matrix sinusoidal_pe(std::size_t frames, std::size_t width) {
    if (width % 2 != 0) throw std::invalid_argument("sinusoidal_pe: width must be even, got " + std::to_string(width));
    Matrix pe(frames, width);
    for (std::size_t pos = 0; pos < frames; ++pos) {
        for (std::size_t i = 0; i < width / 2; ++i) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
            pe(pos, 2 * i) = std::sin(angle);
            pe(pos, 2 * i + 1) = std::cos(angle);
        }
    }
    return pe;
}

struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t dim = 64;
    std::size_t layers = 11;
    std::size_t classes = 7;
    bool use_pe = false;
    double ln_eps = 1e-5;

    void validate() const {
        if (input_dim == 0 || dim == 0 || classes == 0) throw std::invalid_argument("ModelConfig: zero dimension");
        if (layers == 0) throw std::invalid_argument("ModelConfig: at least one encoder layer is required");
        if (use_pe && input_dim % 2 != 0)
            throw std::invalid_argument("ModelConfig: positional encoding needs an even input width");
        if (!(ln_eps > 0.0)) throw std::invalid_argument("ModelConfig: ln_eps must be positive");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One encoder block: a joint Q/K/V projection, masked attention, residual and
/// post-norm. The first block has input width != d and takes V as residual.
struct EncoderLayer {
    Tensor w_qkv;  // [in x 3d]
    Tensor b_qkv;  // [3d]
    Tensor ln_gamma;
    Tensor ln_beta;
    bool residual_from_value = false;

    std::size_t input_dim() const { return w_qkv.rows(); }
    std::size_t dim() const { return w_qkv.cols() / 3; }
};

struct LayerOutput {
    Tensor hidden;
    Tensor attention;
};

inline LayerOutput encoder_layer_forward(const EncoderLayer& layer, const Tensor& x, const CausalMask& mask,
                                         double ln_eps) {
    if (x.rank() != 2 || x.cols() != layer.input_dim()) {
        throw ShapeError("encoder_layer_forward: input " + shape_string(x.shape()) + " for layer expecting width " +
                         std::to_string(layer.input_dim()));
    }
    const std::size_t d = layer.dim();
    const Tensor qkv = add_row_vector(matmul(x, layer.w_qkv), layer.b_qkv);
    const Tensor q = slice_cols(qkv, 0, d);
    const Tensor k = slice_cols(qkv, d, 2 * d);
    const Tensor v = slice_cols(qkv, 2 * d, 3 * d);
    Tensor a = attention_weights(q, k, mask);
    const Tensor h = attention_output(a, v);
    const Tensor residual = layer.residual_from_value ? v : x;
    return {layer_norm(add(h, residual), layer.ln_gamma, layer.ln_beta, ln_eps), std::move(a)};
}

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

/// Stack of causal encoder layers followed by a linear + softmax head.
class OperaModel {
public:
    OperaModel() = default;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, gamma = 1, beta = 0.
    static OperaModel initialize(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        std::mt19937_64 rng(seed);
        auto uniform = [&rng](Shape shape, std::size_t fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            std::vector<double> v(shape_numel(shape));
            for (double& x : v) x = dist(rng);
            return Tensor::from(std::move(shape), std::move(v), true);
        };
        OperaModel model;
        model.config_ = config;
        const std::size_t d = config.dim;
        for (std::size_t l = 0; l < config.layers; ++l) {
            const std::size_t in = l == 0 ? config.input_dim : d;
            EncoderLayer layer;
            layer.w_qkv = uniform({in, 3 * d}, in);
            layer.b_qkv = uniform({3 * d}, in);
            layer.ln_gamma = Tensor::full({d}, 1.0, true);
            layer.ln_beta = Tensor::zeros({d}, true);
            layer.residual_from_value = l == 0;
            model.layers_.push_back(std::move(layer));
        }
        model.head_w_ = uniform({d, config.classes}, d);
        model.head_b_ = uniform({config.classes}, d);
        return model;
    }

    const ModelConfig& config() const { return config_; }
    const std::vector<EncoderLayer>& layers() const { return layers_; }
    const Tensor& head_weight() const { return head_w_; }
    const Tensor& head_bias() const { return head_b_; }

    std::vector<NamedParameter> parameters() const {
        std::vector<NamedParameter> out;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            out.push_back({p + "w_qkv", layers_[l].w_qkv});
            out.push_back({p + "b_qkv", layers_[l].b_qkv});
            out.push_back({p + "ln_gamma", layers_[l].ln_gamma});
            out.push_back({p + "ln_beta", layers_[l].ln_beta});
        }
        out.push_back({"head.w", head_w_});
        out.push_back({"head.b", head_b_});
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    std::vector<double> flat_parameters() const {
        std::vector<double> flat;
        for (const auto& p : parameters()) flat.insert(flat.end(), p.tensor.values().begin(), p.tensor.values().end());
        return flat;
    }

    void set_flat_parameters(std::span<const double> flat) {
        if (flat.size() != parameter_count()) {
            throw std::invalid_argument("set_flat_parameters: expected " + std::to_string(parameter_count()) +
                                        " values, got " + std::to_string(flat.size()));
        }
        std::size_t offset = 0;
        for (auto& p : parameters()) {
            auto dst = p.tensor.values_mut();
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
            offset += dst.size();
        }
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }

    /// Independent copy with fresh parameter storage.
    OperaModel clone() const {
        OperaModel copy;
        copy.config_ = config_;
        auto fresh = [](const Tensor& t) {
            return Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true);
        };
        for (const auto& layer : layers_) {
            copy.layers_.push_back({fresh(layer.w_qkv), fresh(layer.b_qkv), fresh(layer.ln_gamma), fresh(layer.ln_beta),
                                    layer.residual_from_value});
        }
        copy.head_w_ = fresh(head_w_);
        copy.head_b_ = fresh(head_b_);
        return copy;
    }

private:
    ModelConfig config_;
    std::vector<EncoderLayer> layers_;
    Tensor head_w_;
    Tensor head_b_;
};

/// Per-layer attention maps of one forward pass plus the derived frame scores.
struct AttentionRecord {
    std::vector<Tensor> attention;       // L maps, T x T, on the tape
    Tensor n_first;                      // normalized frame attention of layer 1, on the tape
    std::vector<double> frame_scores;    // sum over layers of normalized frame attention
    std::size_t frames = 0;

    std::vector<double> normalized(std::size_t layer) const {
        const CausalMask mask(frames);
        NoGradGuard guard;
        const Tensor n = normalized_frame_attention(attention.at(layer), mask);
        return {n.values().begin(), n.values().end()};
    }
};

struct ForwardResult {
    Tensor probs;  // T x c
    AttentionRecord record;
};

inline ForwardResult model_forward(const OperaModel& model, const Matrix& features) {
    const ModelConfig& cfg = model.config();
    if (features.cols != cfg.input_dim) {
        throw ShapeError("model_forward: feature width " + std::to_string(features.cols) + ", model expects " +
                         std::to_string(cfg.input_dim));
    }
    if (features.rows == 0) throw ShapeError("model_forward: empty sequence");
    const std::size_t frames = features.rows;
    const CausalMask mask(frames);

    Matrix input = features;
    if (cfg.use_pe) {
        const Matrix pe = sinusoidal_pe(frames, cfg.input_dim);
        for (std::size_t i = 0; i < input.values.size(); ++i) input.values[i] += pe.values[i];
    }

    ForwardResult result;
    result.record.frames = frames;
    result.record.frame_scores.assign(frames, 0.0);
    Tensor x = Tensor::from_matrix(input);
    for (const auto& layer : model.layers()) {
        LayerOutput out = encoder_layer_forward(layer, x, mask, cfg.ln_eps);
        const Tensor n = normalized_frame_attention(out.attention, mask);
        for (std::size_t j = 0; j < frames; ++j) result.record.frame_scores[j] += n[j];
        if (result.record.attention.empty()) result.record.n_first = n;
        result.record.attention.push_back(std::move(out.attention));
        x = std::move(out.hidden);
    }
    result.probs = softmax_rows(add_row_vector(matmul(x, model.head_weight()), model.head_bias()));
    return result;
}

// Argmax per row, ties toward the lowest class index.
inline std::vector<int> argmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols) {
    std::vector<int> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j)
            if (values[i * cols + j] > values[i * cols + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

inline std::vector<int> argmax_rows(const Tensor& t) { return argmax_rows(t.values(), t.rows(), t.cols()); }
inline std::vector<int> argmax_rows(const Matrix& m) { return argmax_rows(m.values, m.rows, m.cols); }

}  // namespace opera
