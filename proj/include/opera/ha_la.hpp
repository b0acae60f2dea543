#pragma once

#include <opera/attention.hpp>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opera {

// Highest- and lowest-attention frame of one phase.
struct HaLaEntry {
    int phase = 0;
    std::size_t ha_index = 0;
    double ha_score = 0.0;
    int ha_prediction = 0;
    double ha_cee = 0.0;
    std::size_t la_index = 0;
    double la_score = 0.0;
    int la_prediction = 0;
    double la_cee = 0.0;

    bool ha_correct() const { return ha_prediction == phase; }
    bool la_correct() const { return la_prediction == phase; }
};

struct HaLaReport {
    std::vector<HaLaEntry> phases;  // ascending phase id, absent phases omitted
};

/// Per phase present in `labels`: argmax / argmin of the frame scores over that
/// phase's frames, ties resolved to the earliest frame.
inline HaLaReport extract_ha_la(std::span<const double> frame_scores, std::span<const int> labels,
                                std::span<const int> predictions, std::span<const double> cee) {
    const std::size_t frames = frame_scores.size();
    if (labels.size() != frames || predictions.size() != frames || cee.size() != frames) {
        throw std::invalid_argument("extract_ha_la: inconsistent lengths (scores " + std::to_string(frames) +
                                    ", labels " + std::to_string(labels.size()) + ", predictions " +
                                    std::to_string(predictions.size()) + ", cee " + std::to_string(cee.size()) + ")");
    }
    int max_phase = -1;
    for (int y : labels) max_phase = std::max(max_phase, y);
    HaLaReport report;
    for (int phase = 0; phase <= max_phase; ++phase) {
        bool found = false;
        HaLaEntry e;
        e.phase = phase;
        for (std::size_t t = 0; t < frames; ++t) {
            if (labels[t] != phase) continue;
            if (!found || frame_scores[t] > e.ha_score) {
                e.ha_index = t;
                e.ha_score = frame_scores[t];
            }
            if (!found || frame_scores[t] < e.la_score) {
                e.la_index = t;
                e.la_score = frame_scores[t];
            }
            found = true;
        }
        if (!found) continue;
        e.ha_prediction = predictions[e.ha_index];
        e.la_prediction = predictions[e.la_index];
        e.ha_cee = cee[e.ha_index];
        e.la_cee = cee[e.la_index];
        report.phases.push_back(e);
    }
    return report;
}

inline HaLaReport extract_ha_la(const AttentionRecord& rec, std::span<const int> labels,
                                std::span<const int> predictions, std::span<const double> cee) {
    return extract_ha_la(rec.frame_scores, labels, predictions, cee);
}

}  // namespace opera
