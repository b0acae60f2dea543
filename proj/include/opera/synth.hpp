#pragma once

#include <opera/io.hpp>
#include <opera/matrix.hpp>
#include <opera/seed.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace opera {

/// Generator settings for phase-structured synthetic videos and the simulated
/// frozen frame-wise backbone.
struct SynthConfig {
    std::size_t classes = 7;
    std::size_t feature_dim = 32;
    std::size_t min_frames = 200;
    std::size_t max_frames = 400;
    // Relative phase durations are drawn uniformly from [dwell_min, dwell_max].
    double dwell_min = 0.5;
    double dwell_max = 1.5;
    double skip_prob = 0.0;  // chance of dropping each phase after the first
    double noise_sigma = 0.3;
    double corruption_rate = 0.2;
    double corruption_strength = 0.6;  // pull toward a wrong-phase prototype
    double artifact_scale = 1.0;  // magnitude of the shared off-prototype artifact on corrupted frames
    double prototype_scale = 1.0;
    double readout_gain = 12.0;
    double readout_noise = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("SynthConfig: " + what); };
        if (classes == 0) fail("classes must be positive");
        if (feature_dim <= classes) fail("feature_dim must exceed classes (prototypes and artifact are orthonormal)");
        if (min_frames == 0 || max_frames < min_frames) fail("frame range must be nonempty and positive");
        if (!(dwell_min > 0.0) || dwell_max < dwell_min) fail("dwell range must be positive and nonempty");
        if (!(skip_prob >= 0.0 && skip_prob < 1.0)) fail("skip_prob must lie in [0, 1)");
        if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
        if (!(corruption_rate >= 0.0 && corruption_rate < 1.0)) fail("corruption_rate must lie in [0, 1)");
        if (!(corruption_strength >= 0.0 && corruption_strength <= 1.0)) fail("corruption_strength must lie in [0, 1]");
        if (!(artifact_scale >= 0.0)) fail("artifact_scale must be >= 0");
        if (!(prototype_scale > 0.0)) fail("prototype_scale must be positive");
        if (!(readout_gain > 0.0)) fail("readout_gain must be positive");
        if (!(readout_noise >= 0.0)) fail("readout_noise must be >= 0");
    }

    friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, classes, feature_dim, min_frames, max_frames, dwell_min,
                                                dwell_max, skip_prob, noise_sigma, corruption_rate,
                                                corruption_strength, artifact_scale, prototype_scale, readout_gain,
                                                readout_noise,
                                                seed)

struct VideoSequence {
    std::string video_id;
    Matrix features;        // T x feature_dim
    Matrix backbone_probs;  // T x classes
    std::vector<int> labels;
    std::vector<std::uint8_t> corrupted;  // generator ground truth, 1 = corrupted frame

    std::size_t frames() const { return labels.size(); }

    // Frames [0, n).
    VideoSequence prefix(std::size_t n) const {
        VideoSequence p;
        p.video_id = video_id;
        p.features = features.top_rows(n);
        p.backbone_probs = backbone_probs.top_rows(n);
        p.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
        p.corrupted.assign(corrupted.begin(), corrupted.begin() + static_cast<std::ptrdiff_t>(n));
        return p;
    }

    friend bool operator==(const VideoSequence&, const VideoSequence&) = default;
};

/// Phase prototypes and the readout of the simulated frozen backbone. Both are
/// fixed by SynthConfig::seed and shared by every video of a dataset.
class SyntheticBackbone {
public:
    explicit SyntheticBackbone(const SynthConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        std::mt19937_64 rng(derive_seed(cfg.seed, {tag(SeedStream::backbone)}));
        std::normal_distribution<double> normal(0.0, 1.0);
        const std::size_t c = cfg.classes, dim = cfg.feature_dim;

        // Gram-Schmidt over random Gaussian vectors.
        // Row c is the artifact direction, orthogonal to every prototype.
        prototypes_ = Matrix(c + 1, dim);
        for (std::size_t k = 0; k <= c; ++k) {
            for (;;) {
                std::vector<double> v(dim);
                for (double& x : v) x = normal(rng);
                for (std::size_t p = 0; p < k; ++p) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) proj += v[i] * prototypes_(p, i);
                    for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * prototypes_(p, i);
                }
                const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
                if (norm < 1e-6) continue;
                for (std::size_t i = 0; i < dim; ++i) prototypes_(k, i) = v[i] / norm;
                break;
            }
        }
        readout_ = Matrix(c, dim);
        const double jitter = cfg.readout_noise / std::sqrt(static_cast<double>(dim));
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t i = 0; i < dim; ++i) readout_(k, i) = prototypes_(k, i) + jitter * normal(rng);
        artifact_.assign(prototypes_.row(c), prototypes_.row(c) + dim);
        prototypes_ = prototypes_.top_rows(c);
        for (double& x : prototypes_.values) x *= cfg.prototype_scale;
        for (double& x : artifact_) x *= cfg.prototype_scale;
    }

    const Matrix& prototypes() const { return prototypes_; }
    std::span<const double> artifact() const { return artifact_; }

    // Softmax of gain * readout . feature / scale^2; a function of this frame alone.
    std::vector<double> probabilities(std::span<const double> feature) const {
        const std::size_t c = cfg_.classes;
        const double gain = cfg_.readout_gain / cfg_.prototype_scale;
        std::vector<double> logits(c);
        for (std::size_t k = 0; k < c; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < cfg_.feature_dim; ++i) s += readout_(k, i) * feature[i];
            logits[k] = gain * s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double total = 0.0;
        for (double& z : logits) total += (z = std::exp(z - mx));
        for (double& z : logits) z /= total;
        return logits;
    }

private:
    SynthConfig cfg_;
    Matrix prototypes_;
    Matrix readout_;
    std::vector<double> artifact_;
};

namespace detail {

// Monotone phase labels for T frames.
inline std::vector<int> sample_phase_labels(const SynthConfig& cfg, std::size_t frames, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> dwell(cfg.dwell_min, cfg.dwell_max);
    std::vector<int> phases{0};
    for (std::size_t k = 1; k < cfg.classes; ++k)
        if (unit(rng) >= cfg.skip_prob) phases.push_back(static_cast<int>(k));
    if (phases.size() > frames) phases.resize(frames);

    std::vector<double> weight(phases.size());
    for (double& w : weight) w = dwell(rng);
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    std::vector<double> raw(phases.size());
    std::vector<std::size_t> len(phases.size());
    std::size_t used = 0;
    for (std::size_t p = 0; p < phases.size(); ++p) {
        raw[p] = static_cast<double>(frames) * weight[p] / total;
        len[p] = std::max<std::size_t>(1, static_cast<std::size_t>(raw[p]));
        used += len[p];
    }
    while (used < frames) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < len.size(); ++p)
            if (raw[p] - static_cast<double>(len[p]) > raw[best] - static_cast<double>(len[best])) best = p;
        ++len[best];
        ++used;
    }
    while (used > frames) {
        const auto it = std::max_element(len.begin(), len.end());
        --*it;
        --used;
    }
    std::vector<int> labels;
    labels.reserve(frames);
    for (std::size_t p = 0; p < phases.size(); ++p) labels.insert(labels.end(), len[p], phases[p]);
    return labels;
}

}  // namespace detail

inline std::string video_name(std::size_t index) {
    std::ostringstream os;
    os << "video_" << std::setw(3) << std::setfill('0') << index;
    return os.str();
}

/// Deterministic in (cfg, video_seed).
inline VideoSequence generate_video(const SyntheticBackbone& backbone, const SynthConfig& cfg, std::uint64_t video_seed,
                                    std::string video_id = "video") {
    std::mt19937_64 rng(video_seed);
    std::uniform_int_distribution<std::size_t> length(cfg.min_frames, cfg.max_frames);
    const std::size_t frames = length(rng);

    VideoSequence video;
    video.video_id = std::move(video_id);
    video.labels = detail::sample_phase_labels(cfg, frames, rng);
    video.features = Matrix(frames, cfg.feature_dim);
    video.backbone_probs = Matrix(frames, cfg.classes);
    video.corrupted.assign(frames, 0);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> other(1, cfg.classes > 1 ? cfg.classes - 1 : 1);
    const Matrix& proto = backbone.prototypes();
    const double sigma = cfg.noise_sigma * cfg.prototype_scale;
    const double s = cfg.corruption_strength;
    const auto artifact = backbone.artifact();
    for (std::size_t t = 0; t < frames; ++t) {
        const auto y = static_cast<std::size_t>(video.labels[t]);
        double* f = video.features.row(t);
        for (std::size_t i = 0; i < cfg.feature_dim; ++i) f[i] = proto(y, i) + sigma * noise(rng);
        const bool corrupt = unit(rng) < cfg.corruption_rate && cfg.classes > 1;
        if (corrupt) {
            const std::size_t wrong = (y + other(rng)) % cfg.classes;
            for (std::size_t i = 0; i < cfg.feature_dim; ++i)
                f[i] = (1.0 - s) * f[i] + s * (proto(wrong, i) + sigma * noise(rng)) + cfg.artifact_scale * artifact[i];
            video.corrupted[t] = 1;
        }
        const auto p = backbone.probabilities({f, cfg.feature_dim});
        std::copy(p.begin(), p.end(), video.backbone_probs.row(t));
    }
    return video;
}

inline VideoSequence generate_video(const SynthConfig& cfg, std::uint64_t video_seed) {
    return generate_video(SyntheticBackbone(cfg), cfg, video_seed);
}

struct Dataset {
    SynthConfig config;
    std::vector<VideoSequence> videos;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset generate_dataset(const SynthConfig& cfg, std::size_t n_videos) {
    const SyntheticBackbone backbone(cfg);
    Dataset ds{cfg, {}};
    ds.videos.reserve(n_videos);
    for (std::size_t v = 0; v < n_videos; ++v) {
        ds.videos.push_back(generate_video(backbone, cfg, derive_seed(cfg.seed, {tag(SeedStream::video),
                                                                              static_cast<std::uint32_t>(v)}),
                                           video_name(v)));
    }
    return ds;
}

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// k disjoint test sets covering every video; the remaining videos of each
/// fold are split 80/20 into train/val.
inline std::vector<Fold> make_folds(std::size_t n_videos, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: need at least 2 folds, got " + std::to_string(k));
    if (n_videos < k) {
        throw std::invalid_argument("make_folds: " + std::to_string(n_videos) + " videos cannot fill " +
                                    std::to_string(k) + " folds");
    }
    std::vector<std::size_t> order(n_videos);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {tag(SeedStream::folds)}));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < n_videos; ++i) folds[i % k].test.push_back(order[i]);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n_videos; ++i)
            if (i % k != f) rest.push_back(order[i]);
        const auto n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(rest.size())));
        const std::size_t val = std::max<std::size_t>(1, n_val);
        if (rest.size() < val + 1) {
            throw std::invalid_argument("make_folds: " + std::to_string(n_videos) + " videos leave fold " +
                                        std::to_string(f) + " without a train/val split");
        }
        folds[f].val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(val));
        folds[f].train.assign(rest.begin() + static_cast<std::ptrdiff_t>(val), rest.end());
        std::sort(folds[f].test.begin(), folds[f].test.end());
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Dataset container (JSON, format "opera-synth-dataset", version 1).
// Doubles are written in shortest round-trip form, so reload is bit-exact.
// ---------------------------------------------------------------------------

inline constexpr const char* kDatasetFormat = "opera-synth-dataset";
inline constexpr int kDatasetVersion = 1;

inline nlohmann::json dataset_to_json(const Dataset& ds) {
    nlohmann::json j;
    j["format"] = kDatasetFormat;
    j["version"] = kDatasetVersion;
    j["config"] = ds.config;
    auto& videos = j["videos"] = nlohmann::json::array();
    for (const auto& v : ds.videos) {
        videos.push_back({{"id", v.video_id},
                          {"frames", v.frames()},
                          {"labels", v.labels},
                          {"corrupted", v.corrupted},
                          {"features", v.features.values},
                          {"backbone_probs", v.backbone_probs.values}});
    }
    return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kDatasetFormat) throw std::runtime_error("dataset: unrecognized format tag");
    if (j.value("version", 0) != kDatasetVersion) {
        throw std::runtime_error("dataset: unsupported version " + j.value("version", nlohmann::json()).dump());
    }
    Dataset ds;
    ds.config = j.at("config").get<SynthConfig>();
    for (const auto& jv : j.at("videos")) {
        VideoSequence v;
        v.video_id = jv.at("id").get<std::string>();
        const auto frames = jv.at("frames").get<std::size_t>();
        v.labels = jv.at("labels").get<std::vector<int>>();
        v.corrupted = jv.at("corrupted").get<std::vector<std::uint8_t>>();
        v.features = Matrix(frames, ds.config.feature_dim, jv.at("features").get<std::vector<double>>());
        v.backbone_probs = Matrix(frames, ds.config.classes, jv.at("backbone_probs").get<std::vector<double>>());
        if (v.labels.size() != frames || v.corrupted.size() != frames) {
            throw std::runtime_error("dataset: video " + v.video_id + " has inconsistent frame counts");
        }
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    write_json_file(path, dataset_to_json(ds), false);
}

inline Dataset load_dataset(const std::string& path) { return dataset_from_json(read_json_file(path)); }

}  // namespace opera
