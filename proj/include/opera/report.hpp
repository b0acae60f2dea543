#pragma once

#include <opera/ha_la.hpp>
#include <opera/io.hpp>
#include <opera/metrics.hpp>
#include <opera/training.hpp>

#include <json.hpp>

#include <charconv>
#include <string>
#include <vector>

namespace opera {

// Shortest decimal that round-trips, always with '.' as separator.
inline std::string format_number(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

inline nlohmann::json to_json(const AggregateMetrics& a) {
    return {{"accuracy", to_json(a.accuracy)},
            {"precision", to_json(a.precision)},
            {"recall", to_json(a.recall)},
            {"f1", to_json(a.f1)}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json per_video = nlohmann::json::array();
    for (const auto& v : r.per_video)
        per_video.push_back({{"accuracy", v.accuracy}, {"precision", v.precision}, {"recall", v.recall}});
    return {{"accuracy", r.accuracy},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"per_video", per_video}};
}

inline nlohmann::json to_json(const HaLaReport& r) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : r.phases) {
        out.push_back({{"phase", e.phase},
                       {"ha", {{"index", e.ha_index}, {"score", e.ha_score}, {"prediction", e.ha_prediction},
                               {"cee", e.ha_cee}, {"correct", e.ha_correct()}}},
                       {"la", {{"index", e.la_index}, {"score", e.la_score}, {"prediction", e.la_prediction},
                               {"cee", e.la_cee}, {"correct", e.la_correct()}}}});
    }
    return out;
}

inline nlohmann::json to_json(const CrossValidationResult& cv) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : cv.folds) {
        nlohmann::json history = nlohmann::json::array();
        for (const auto& h : f.training.history) {
            history.push_back({{"epoch", h.epoch},
                               {"train_loss", h.train_loss},
                               {"train_cls_loss", h.train_cls_loss},
                               {"train_reg_loss", h.train_reg_loss},
                               {"val_accuracy", h.val_accuracy}});
        }
        folds.push_back({{"fold", f.index},
                         {"split", {{"train", f.split.train}, {"val", f.split.val}, {"test", f.split.test}}},
                         {"best_epoch", f.training.best_epoch},
                         {"history", history},
                         {"test", to_json(f.test)},
                         {"baseline", to_json(f.baseline)}});
    }
    return {{"folds", folds}, {"aggregate", to_json(cv.model)}, {"baseline_aggregate", to_json(cv.baseline)}};
}

/// One row per fold plus a final "mean" row (std columns are only filled there).
inline std::string metrics_csv(const CrossValidationResult& cv) {
    std::string out = "fold,accuracy,accuracy_std,precision,precision_std,recall,recall_std,f1,f1_std,"
                      "backbone_accuracy,backbone_f1,best_epoch\n";
    for (const auto& f : cv.folds) {
        out += std::to_string(f.index) + ',' + format_number(f.test.accuracy) + ",," + format_number(f.test.precision) +
               ",," + format_number(f.test.recall) + ",," + format_number(f.test.f1) + ",," +
               format_number(f.baseline.accuracy) + ',' + format_number(f.baseline.f1) + ',' +
               std::to_string(f.training.best_epoch) + '\n';
    }
    const auto& m = cv.model;
    out += "mean," + format_number(m.accuracy.mean) + ',' + format_number(m.accuracy.std) + ',' +
           format_number(m.precision.mean) + ',' + format_number(m.precision.std) + ',' + format_number(m.recall.mean) +
           ',' + format_number(m.recall.std) + ',' + format_number(m.f1.mean) + ',' + format_number(m.f1.std) + ',' +
           format_number(cv.baseline.accuracy.mean) + ',' + format_number(cv.baseline.f1.mean) + ",\n";
    return out;
}

}  // namespace opera
