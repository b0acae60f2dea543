#include <opera/attention.hpp>
#include <opera/regularization.hpp>
#include <opera/synth.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace opera;

namespace {

SynthConfig short_videos(std::uint64_t seed = 0) {
    SynthConfig c;
    c.min_frames = 40;
    c.max_frames = 60;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(Synth, SameSeedIsBitIdentical) {
    const auto cfg = short_videos(3);
    EXPECT_EQ(generate_video(cfg, 42), generate_video(cfg, 42));
    EXPECT_NE(generate_video(cfg, 42).features, generate_video(cfg, 43).features);
    EXPECT_EQ(generate_dataset(cfg, 4), generate_dataset(cfg, 4));
}

TEST(Synth, NoiselessBackboneIsPerfect) {
    auto cfg = short_videos(1);
    cfg.corruption_rate = 0.0;
    cfg.noise_sigma = 0.0;
    const auto ds = generate_dataset(cfg, 5);
    for (const auto& v : ds.videos) EXPECT_EQ(argmax_rows(v.backbone_probs), v.labels) << v.video_id;
}

TEST(Synth, CorruptedFractionConcentrates) {
    SynthConfig cfg;
    cfg.min_frames = cfg.max_frames = 1000;
    cfg.corruption_rate = 0.2;
    std::size_t corrupted = 0, frames = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto v = generate_video(cfg, s);
        frames += v.frames();
        for (auto c : v.corrupted) corrupted += c;
    }
    ASSERT_EQ(frames, 10000u);
    EXPECT_NEAR(static_cast<double>(corrupted) / static_cast<double>(frames), 0.2, 0.02);
}

TEST(SynthProperty, CorruptedFramesHaveHigherCee) {
    SynthConfig cfg;
    const auto ds = generate_dataset(cfg, 20);
    double clean = 0.0, dirty = 0.0;
    std::size_t n_clean = 0, n_dirty = 0;
    for (const auto& v : ds.videos) {
        const auto cee = cee_vector(v.backbone_probs, v.labels).cee;
        for (std::size_t t = 0; t < v.frames(); ++t) {
            if (v.corrupted[t]) {
                dirty += cee[t];
                ++n_dirty;
            } else {
                clean += cee[t];
                ++n_clean;
            }
        }
    }
    EXPECT_GT((dirty / static_cast<double>(n_dirty)) / (clean / static_cast<double>(n_clean)), 2.0);
}

TEST(SynthProperty, LabelsAreMonotoneAndProbabilitiesNormalized) {
    auto cfg = short_videos(5);
    cfg.skip_prob = 0.3;
    for (const auto& v : generate_dataset(cfg, 10).videos) {
        EXPECT_GE(v.frames(), cfg.min_frames);
        EXPECT_LE(v.frames(), cfg.max_frames);
        EXPECT_EQ(v.labels.front(), 0);
        for (std::size_t t = 1; t < v.frames(); ++t) EXPECT_LE(v.labels[t - 1], v.labels[t]);
        for (std::size_t t = 0; t < v.frames(); ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < cfg.classes; ++k) s += v.backbone_probs(t, k);
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(SynthProperty, BackboneIsFrameWise) {
    const auto cfg = short_videos(6);
    const SyntheticBackbone backbone(cfg);
    const auto v = generate_video(backbone, cfg, 9);
    // Re-scoring a frame in isolation reproduces the stored row exactly.
    for (std::size_t t = 0; t < v.frames(); t += 7) {
        const auto p = backbone.probabilities({v.features.row(t), cfg.feature_dim});
        for (std::size_t k = 0; k < cfg.classes; ++k) EXPECT_EQ(p[k], v.backbone_probs(t, k));
    }
}

TEST(Synth, PrototypesAndArtifactAreOrthonormal) {
    const SyntheticBackbone b(short_videos(7));
    const auto& p = b.prototypes();
    for (std::size_t i = 0; i <= p.rows; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double* u = i < p.rows ? p.row(i) : b.artifact().data();
            const double* w = j < p.rows ? p.row(j) : b.artifact().data();
            double d = 0.0;
            for (std::size_t k = 0; k < p.cols; ++k) d += u[k] * w[k];
            EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-12);
        }
    }
}

TEST(Synth, InvalidConfigRejected) {
    SynthConfig c;
    c.corruption_rate = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SynthConfig{};
    c.feature_dim = c.classes;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SynthConfig{};
    c.min_frames = 10;
    c.max_frames = 5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Folds, TenVideosFiveFolds) {
    const auto folds = make_folds(10, 5, 1);
    ASSERT_EQ(folds.size(), 5u);
    std::set<std::size_t> seen;
    for (const auto& f : folds) {
        EXPECT_EQ(f.test.size(), 2u);
        for (auto v : f.test) EXPECT_TRUE(seen.insert(v).second) << "video in two test sets";
    }
    EXPECT_EQ(seen.size(), 10u);
}

TEST(FoldsProperty, PartitionAndSplitRatio) {
    for (std::size_t n : {5u, 12u, 20u, 60u}) {
        const auto folds = make_folds(n, 5, n);
        std::set<std::size_t> tests;
        for (const auto& f : folds) {
            std::set<std::size_t> all(f.train.begin(), f.train.end());
            all.insert(f.val.begin(), f.val.end());
            all.insert(f.test.begin(), f.test.end());
            EXPECT_EQ(all.size(), n);
            EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), n);
            EXPECT_FALSE(f.train.empty());
            EXPECT_FALSE(f.val.empty());
            tests.insert(f.test.begin(), f.test.end());
        }
        EXPECT_EQ(tests.size(), n);
    }
    // 48 non-test videos, 20% of them (rounded) go to validation.
    const auto f60 = make_folds(60, 5, 0);
    EXPECT_EQ(f60[0].val.size(), 10u);
    EXPECT_EQ(f60[0].train.size(), 38u);
}

TEST(Folds, DeterministicAndValidated) {
    const auto a = make_folds(20, 5, 3), b = make_folds(20, 5, 3);
    for (std::size_t f = 0; f < 5; ++f) {
        EXPECT_EQ(a[f].test, b[f].test);
        EXPECT_EQ(a[f].train, b[f].train);
    }
    EXPECT_THROW(make_folds(4, 5, 0), std::invalid_argument);
    EXPECT_THROW(make_folds(10, 1, 0), std::invalid_argument);
    EXPECT_THROW(make_folds(2, 2, 0), std::invalid_argument);  // one non-test video cannot fill train and val
}

TEST(DatasetFile, RoundTripIsBitExact) {
    const auto ds = generate_dataset(short_videos(8), 3);
    const auto path = (std::filesystem::temp_directory_path() / "opera_dataset_roundtrip.json").string();
    save_dataset(path, ds);
    const auto back = load_dataset(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back, ds);
}

TEST(DatasetFile, MissingFileIsIoError) { EXPECT_THROW(load_dataset("/nonexistent/dir/x.json"), IoError); }

TEST(DatasetFile, ForeignFormatRejected) {
    auto j = dataset_to_json(generate_dataset(short_videos(9), 1));
    j["format"] = "other";
    EXPECT_THROW(dataset_from_json(j), std::runtime_error);
}
