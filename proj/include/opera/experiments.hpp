#pragma once

#include <opera/ha_la.hpp>
#include <opera/report.hpp>
#include <opera/training.hpp>

#include <json.hpp>

#include <string>
#include <vector>

namespace opera {

struct AblationConfig {
    std::vector<std::size_t> layers{2, 4};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t folds = 5;
    std::size_t jobs = 1;
};

struct AblationCell {
    std::size_t layers = 0;
    bool use_reg = false;
    std::vector<AggregateMetrics> per_seed;  // fold aggregate of each seed's cross-validation
    AggregateMetrics pooled;                 // mean/std over every fold of every seed
};

/// The {layers} x {reg off, reg on} grid. Each (cell, seed) pair is exactly
/// the cross-validation a `train` run with that seed would perform.
inline std::vector<AblationCell> run_ablation(const Dataset& ds, const TrainConfig& base, const AblationConfig& ab) {
    if (ab.layers.empty() || ab.seeds.empty()) throw std::invalid_argument("run_ablation: empty layer or seed list");
    std::vector<AblationCell> cells;
    for (std::size_t layers : ab.layers) {
        for (bool reg : {false, true}) {
            AblationCell cell;
            cell.layers = layers;
            cell.use_reg = reg;
            std::vector<MetricsReport> pooled;
            for (std::uint64_t seed : ab.seeds) {
                TrainConfig cfg = base;
                cfg.layers = layers;
                cfg.use_reg = reg;
                cfg.seed = seed;
                const auto cv = cross_validate(ds, ab.folds, cfg, ab.jobs);
                cell.per_seed.push_back(cv.model);
                for (const auto& f : cv.folds) pooled.push_back(f.test);
            }
            cell.pooled = aggregate(pooled);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

inline std::string ablation_csv(const std::vector<AblationCell>& cells) {
    std::string out = "layers,reg,accuracy_mean,accuracy_std,f1_mean,f1_std,precision_mean,precision_std,"
                      "recall_mean,recall_std,seeds\n";
    for (const auto& c : cells) {
        const auto& p = c.pooled;
        out += std::to_string(c.layers) + ',' + (c.use_reg ? "on" : "off") + ',' + format_number(p.accuracy.mean) +
               ',' + format_number(p.accuracy.std) + ',' + format_number(p.f1.mean) + ',' + format_number(p.f1.std) +
               ',' + format_number(p.precision.mean) + ',' + format_number(p.precision.std) + ',' +
               format_number(p.recall.mean) + ',' + format_number(p.recall.std) + ',' +
               std::to_string(c.per_seed.size()) + '\n';
    }
    return out;
}

inline nlohmann::json to_json(const std::vector<AblationCell>& cells, const AblationConfig& ab) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : cells) {
        nlohmann::json seeds = nlohmann::json::array();
        for (std::size_t s = 0; s < c.per_seed.size(); ++s)
            seeds.push_back({{"seed", ab.seeds[s]}, {"aggregate", to_json(c.per_seed[s])}});
        out.push_back({{"layers", c.layers}, {"use_reg", c.use_reg}, {"pooled", to_json(c.pooled)}, {"per_seed", seeds}});
    }
    return out;
}

/// Everything needed to redraw a per-frame attention ribbon for one video.
struct AttentionTrace {
    std::string video_id;
    std::vector<double> frame_scores;
    std::vector<std::vector<double>> normalized;  // per layer
    std::vector<int> predictions;
    std::vector<int> backbone_predictions;
    std::vector<int> labels;
    std::vector<double> cee;
    std::vector<std::uint8_t> corrupted;
    HaLaReport ha_la;
};

inline AttentionTrace attention_trace(const OperaModel& model, const VideoSequence& video) {
    NoGradGuard guard;
    const ForwardResult fwd = model_forward(model, video.features);
    AttentionTrace t;
    t.video_id = video.video_id;
    t.frame_scores = fwd.record.frame_scores;
    for (std::size_t l = 0; l < fwd.record.attention.size(); ++l) t.normalized.push_back(fwd.record.normalized(l));
    t.predictions = argmax_rows(fwd.probs);
    t.backbone_predictions = argmax_rows(video.backbone_probs);
    t.labels = video.labels;
    t.cee = cee_vector(video.backbone_probs, video.labels).cee;
    t.corrupted = video.corrupted;
    t.ha_la = extract_ha_la(fwd.record, t.labels, t.predictions, t.cee);
    return t;
}

inline nlohmann::json to_json(const AttentionTrace& t) {
    return {{"video_id", t.video_id},
            {"frames", t.labels.size()},
            {"frame_scores", t.frame_scores},
            {"normalized_attention", t.normalized},
            {"predictions", t.predictions},
            {"backbone_predictions", t.backbone_predictions},
            {"labels", t.labels},
            {"cee", t.cee},
            {"corrupted", t.corrupted},
            {"ha_la", to_json(t.ha_la)}};
}

/// Mean over videos of Spearman(layer-1 normalized attention, backbone CEE).
inline double attention_cee_spearman(const OperaModel& model, const Dataset& ds, std::span<const std::size_t> videos) {
    double total = 0.0;
    for (std::size_t v : videos) {
        NoGradGuard guard;
        const auto& video = ds.videos[v];
        const ForwardResult fwd = model_forward(model, video.features);
        const auto cee = cee_vector(video.backbone_probs, video.labels).cee;
        total += spearman(fwd.record.n_first.values(), cee);
    }
    return total / static_cast<double>(videos.size());
}

/// HA/LA frame statistics pooled over (video, phase) pairs.
struct HaLaSummary {
    std::size_t entries = 0;
    double ha_cee = 0.0;       // mean backbone CEE at HA frames
    double la_cee = 0.0;
    double ha_accuracy = 0.0;  // percent of HA frames the model labels correctly
    double la_accuracy = 0.0;
};

inline HaLaSummary summarize_ha_la(const std::vector<HaLaReport>& reports) {
    HaLaSummary s;
    for (const auto& r : reports) {
        for (const auto& e : r.phases) {
            ++s.entries;
            s.ha_cee += e.ha_cee;
            s.la_cee += e.la_cee;
            s.ha_accuracy += e.ha_correct() ? 100.0 : 0.0;
            s.la_accuracy += e.la_correct() ? 100.0 : 0.0;
        }
    }
    if (s.entries > 0) {
        const auto n = static_cast<double>(s.entries);
        s.ha_cee /= n;
        s.la_cee /= n;
        s.ha_accuracy /= n;
        s.la_accuracy /= n;
    }
    return s;
}

}  // namespace opera
