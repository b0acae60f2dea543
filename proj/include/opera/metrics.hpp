#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opera {

struct VideoMetrics {
    double accuracy = 0.0;   // percent
    double precision = 0.0;  // percent, mean over phases present in ground truth
    double recall = 0.0;     // percent, mean over phases present in ground truth
};

/// Video-level metrics, all in percent.
///
/// Aggregation: accuracy is the frame-correct fraction per video, averaged
/// over videos. Precision and recall are computed per video for every phase
/// present in that video's ground truth (0/0 counts as 0), averaged over those
/// phases, then over videos. F1 is the harmonic mean of the aggregated
/// precision and recall, 0 when both are 0.
struct MetricsReport {
    std::vector<VideoMetrics> per_video;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double harmonic_f1(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline VideoMetrics video_metrics(std::span<const int> predictions, std::span<const int> truth) {
    if (predictions.size() != truth.size()) {
        throw std::invalid_argument("video_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                                    std::to_string(truth.size()) + " labels");
    }
    if (truth.empty()) throw std::invalid_argument("video_metrics: empty video");
    int max_class = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) max_class = std::max({max_class, truth[i], predictions[i]});
    const auto classes = static_cast<std::size_t>(max_class) + 1;
    std::vector<std::size_t> tp(classes, 0), predicted(classes, 0), actual(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || predictions[i] < 0) throw std::invalid_argument("video_metrics: negative class id");
        ++predicted[static_cast<std::size_t>(predictions[i])];
        ++actual[static_cast<std::size_t>(truth[i])];
        if (predictions[i] == truth[i]) {
            ++correct;
            ++tp[static_cast<std::size_t>(truth[i])];
        }
    }
    VideoMetrics m;
    m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
    std::size_t phases = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        if (actual[k] == 0) continue;
        ++phases;
        if (predicted[k] > 0) m.precision += static_cast<double>(tp[k]) / static_cast<double>(predicted[k]);
        m.recall += static_cast<double>(tp[k]) / static_cast<double>(actual[k]);
    }
    m.precision = 100.0 * m.precision / static_cast<double>(phases);
    m.recall = 100.0 * m.recall / static_cast<double>(phases);
    return m;
}

inline MetricsReport evaluate_metrics(const std::vector<std::vector<int>>& predictions,
                                      const std::vector<std::vector<int>>& truth) {
    if (predictions.size() != truth.size()) {
        throw std::invalid_argument("evaluate_metrics: " + std::to_string(predictions.size()) +
                                    " prediction sequences for " + std::to_string(truth.size()) + " videos");
    }
    if (truth.empty()) throw std::invalid_argument("evaluate_metrics: no videos");
    MetricsReport r;
    for (std::size_t v = 0; v < truth.size(); ++v) {
        r.per_video.push_back(video_metrics(predictions[v], truth[v]));
        r.accuracy += r.per_video.back().accuracy;
        r.precision += r.per_video.back().precision;
        r.recall += r.per_video.back().recall;
    }
    const auto n = static_cast<double>(truth.size());
    r.accuracy /= n;
    r.precision /= n;
    r.recall /= n;
    r.f1 = harmonic_f1(r.precision, r.recall);
    return r;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

inline MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean_std: empty sample");
    MeanStd r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return r;
}

/// Mean and population standard deviation of fold-level reports.
struct AggregateMetrics {
    MeanStd accuracy, precision, recall, f1;
};

inline AggregateMetrics aggregate(std::span<const MetricsReport> reports) {
    std::vector<double> acc, prec, rec, f1;
    for (const auto& r : reports) {
        acc.push_back(r.accuracy);
        prec.push_back(r.precision);
        rec.push_back(r.recall);
        f1.push_back(r.f1);
    }
    return {mean_std(acc), mean_std(prec), mean_std(rec), mean_std(f1)};
}

// Ranks starting at 1, ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t p = i; p <= j; ++p) ranks[idx[p]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation (Pearson on average ranks). 0 if either side is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
    if (a.size() < 2) return 0.0;
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return va > 0.0 && vb > 0.0 ? cov / std::sqrt(va * vb) : 0.0;
}

}  // namespace opera
