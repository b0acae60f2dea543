#pragma once

#include <opera/mask.hpp>
#include <opera/matrix.hpp>
#include <opera/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opera {

inline constexpr double kProbabilityFloor = 1e-12;

/// Per-frame cross-entropy of the frozen backbone against ground truth.
/// Constant with respect to every trainable parameter.
struct FrameConfidence {
    std::vector<double> cee;
};

/// Median-frequency class weights.
struct ClassWeights {
    std::vector<double> w;
};

/// n_j = sum_i A_ij / sum_i M_ij: attention received by frame j, divided by
/// the number of rows in which j is visible.
inline Tensor normalized_frame_attention(const Tensor& attention, const CausalMask& mask) {
    if (attention.rank() != 2 || attention.rows() != mask.size() || attention.cols() != mask.size()) {
        throw ShapeError("normalized_frame_attention: attention " + shape_string(attention.shape()) + " vs mask " +
                         std::to_string(mask.size()));
    }
    std::vector<double> inv_counts = mask.column_counts();
    for (double& c : inv_counts) c = 1.0 / c;
    return mul(column_sum(attention), Tensor::vector(std::move(inv_counts)));
}

inline FrameConfidence cee_vector(const Matrix& backbone_probs, std::span<const int> labels) {
    if (labels.size() != backbone_probs.rows) {
        throw ShapeError("cee_vector: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(backbone_probs.rows) + " frames");
    }
    FrameConfidence conf;
    conf.cee.resize(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= backbone_probs.cols) {
            throw std::out_of_range("cee_vector: label " + std::to_string(labels[t]) + " at frame " +
                                    std::to_string(t) + " outside [0, " + std::to_string(backbone_probs.cols) + ")");
        }
        const double p = std::clamp(backbone_probs(t, static_cast<std::size_t>(labels[t])), kProbabilityFloor, 1.0);
        conf.cee[t] = -std::log(p);
    }
    return conf;
}

/// <n, CEE>. Gradient reaches `n` only.
inline Tensor attention_reg_loss(const Tensor& n, const FrameConfidence& conf) {
    if (n.numel() != conf.cee.size()) {
        throw ShapeError("attention_reg_loss: n has " + std::to_string(n.numel()) + " entries, cee has " +
                         std::to_string(conf.cee.size()));
    }
    return dot(n, Tensor::vector(conf.cee));
}

/// w_k = median(freq over present classes) / freq_k. Absent classes receive the
/// largest present weight.
inline ClassWeights median_freq_weights(std::span<const std::size_t> counts) {
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    if (total == 0) throw std::invalid_argument("median_freq_weights: all class counts are zero");

    std::vector<double> present;
    for (std::size_t c : counts)
        if (c > 0) present.push_back(static_cast<double>(c) / static_cast<double>(total));
    std::sort(present.begin(), present.end());
    const std::size_t mid = present.size() / 2;
    const double median = present.size() % 2 ? present[mid] : 0.5 * (present[mid - 1] + present[mid]);

    ClassWeights weights;
    weights.w.assign(counts.size(), 0.0);
    double max_w = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) continue;
        weights.w[k] = median / (static_cast<double>(counts[k]) / static_cast<double>(total));
        max_w = std::max(max_w, weights.w[k]);
    }
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] == 0) weights.w[k] = max_w;
    return weights;
}

/// (1/T) sum_t w[y_t] * -ln(clamp(p_t[y_t], 1e-12, 1)).
inline Tensor balanced_cross_entropy(const Tensor& probs, std::span<const int> labels, const ClassWeights& weights) {
    if (probs.rank() != 2 || probs.cols() != weights.w.size()) {
        throw ShapeError("balanced_cross_entropy: probs " + shape_string(probs.shape()) + " with " +
                         std::to_string(weights.w.size()) + " class weights");
    }
    const Tensor picked = gather_rows(probs, labels);  // validates labels
    const double inv_t = 1.0 / static_cast<double>(labels.size());
    std::vector<double> coeff(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) coeff[t] = -weights.w[static_cast<std::size_t>(labels[t])] * inv_t;
    return dot(log_clamped(picked, kProbabilityFloor, 1.0), Tensor::vector(std::move(coeff)));
}

inline Tensor total_loss(const Tensor& classification, const Tensor& regularization, double lambda) {
    return add(classification, scale(regularization, lambda));
}

}  // namespace opera
