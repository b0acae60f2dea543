#pragma once

#include <opera/attention.hpp>
#include <opera/metrics.hpp>
#include <opera/optim.hpp>
#include <opera/regularization.hpp>
#include <opera/seed.hpp>
#include <opera/synth.hpp>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

namespace opera {

struct TrainConfig {
    double lr = 1e-5;
    std::size_t epochs = 30;
    double lambda = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::uint64_t seed = 0;
    bool use_reg = true;
    std::size_t layers = 11;
    std::size_t dim = 64;
    bool use_pe = false;

    // lr == 0 is accepted so that a run can be a deliberate no-op.
    void validate() const {
        if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
        if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (!(lambda >= 0.0)) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
        if (layers == 0 || dim == 0) throw std::invalid_argument("TrainConfig: layers and dim must be positive");
    }

    double effective_lambda() const { return use_reg ? lambda : 0.0; }

    ModelConfig model_config(const SynthConfig& data) const {
        ModelConfig m;
        m.input_dim = data.feature_dim;
        m.classes = data.classes;
        m.dim = dim;
        m.layers = layers;
        m.use_pe = use_pe;
        return m;
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, epochs, lambda, beta1, beta2, eps_adam, seed, use_reg,
                                                layers, dim, use_pe)

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;       // mean total loss over training videos
    double train_cls_loss = 0.0;
    double train_reg_loss = 0.0;
    double val_accuracy = 0.0;     // percent
};

struct TrainResult {
    OperaModel best;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
};

inline std::vector<int> predict(const OperaModel& model, const VideoSequence& video) {
    NoGradGuard guard;
    return argmax_rows(model_forward(model, video.features).probs);
}

inline std::vector<std::size_t> class_counts(const Dataset& ds, std::span<const std::size_t> videos) {
    std::vector<std::size_t> counts(ds.config.classes, 0);
    for (std::size_t v : videos)
        for (int y : ds.videos.at(v).labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

inline double mean_accuracy(const OperaModel& model, const Dataset& ds, std::span<const std::size_t> videos) {
    double acc = 0.0;
    for (std::size_t v : videos) acc += video_metrics(predict(model, ds.videos[v]), ds.videos[v].labels).accuracy;
    return acc / static_cast<double>(videos.size());
}

struct VideoLoss {
    Tensor total;
    double classification = 0.0;
    double regularization = 0.0;
};

/// L = L_c + lambda * L_reg for one whole video; L_reg uses layer-1 attention.
inline VideoLoss video_loss(const OperaModel& model, const VideoSequence& video, const ClassWeights& weights,
                            const FrameConfidence& conf, double lambda) {
    ForwardResult fwd = model_forward(model, video.features);
    const Tensor lc = balanced_cross_entropy(fwd.probs, video.labels, weights);
    if (lambda == 0.0) return {lc, lc.item(), 0.0};
    const Tensor reg = attention_reg_loss(fwd.record.n_first, conf);
    return {total_loss(lc, reg, lambda), lc.item(), reg.item()};
}

/// Full-video Adam training. After each epoch the validation accuracy is
/// measured; the snapshot with the best value wins, ties to the earlier epoch.
inline TrainResult train(const OperaModel& init, const Dataset& ds, const Fold& fold, const TrainConfig& cfg) {
    cfg.validate();
    if (fold.train.empty() || fold.val.empty()) throw std::invalid_argument("train: empty train or val split");

    OperaModel model = init.clone();
    const ClassWeights weights = median_freq_weights(class_counts(ds, fold.train));
    const double lambda = cfg.effective_lambda();
    std::vector<FrameConfidence> conf;
    for (std::size_t v : fold.train) conf.push_back(cee_vector(ds.videos[v].backbone_probs, ds.videos[v].labels));

    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    AdamState state;
    const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam};
    std::mt19937_64 rng(derive_seed(cfg.seed, {tag(SeedStream::shuffle)}));

    TrainResult result;
    double best_acc = -1.0;
    std::vector<std::size_t> order(fold.train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t i : order) {
            const VideoLoss loss = video_loss(model, ds.videos[fold.train[i]], weights, conf[i], lambda);
            backward(loss.total);
            adam_step(params, state, adam);
            rec.train_loss += loss.total.item();
            rec.train_cls_loss += loss.classification;
            rec.train_reg_loss += loss.regularization;
        }
        const auto n = static_cast<double>(order.size());
        rec.train_loss /= n;
        rec.train_cls_loss /= n;
        rec.train_reg_loss /= n;
        rec.val_accuracy = mean_accuracy(model, ds, fold.val);
        if (rec.val_accuracy > best_acc) {
            best_acc = rec.val_accuracy;
            result.best = model.clone();
            result.best_epoch = epoch;
        }
        result.history.push_back(rec);
    }
    return result;
}

struct FoldResult {
    std::size_t index = 0;
    Fold split;
    TrainResult training;
    MetricsReport test;      // trained model on the test videos
    MetricsReport baseline;  // frame-wise backbone argmax on the same videos
};

struct CrossValidationResult {
    std::vector<FoldResult> folds;
    AggregateMetrics model;
    AggregateMetrics baseline;
};

inline MetricsReport evaluate_model(const OperaModel& model, const Dataset& ds, std::span<const std::size_t> videos) {
    std::vector<std::vector<int>> preds, truth;
    for (std::size_t v : videos) {
        preds.push_back(predict(model, ds.videos[v]));
        truth.push_back(ds.videos[v].labels);
    }
    return evaluate_metrics(preds, truth);
}

inline MetricsReport evaluate_backbone(const Dataset& ds, std::span<const std::size_t> videos) {
    std::vector<std::vector<int>> preds, truth;
    for (std::size_t v : videos) {
        preds.push_back(argmax_rows(ds.videos[v].backbone_probs));
        truth.push_back(ds.videos[v].labels);
    }
    return evaluate_metrics(preds, truth);
}

inline TrainConfig fold_config(const TrainConfig& cfg, std::size_t fold) {
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, {static_cast<std::uint32_t>(fold)});
    return c;
}

inline FoldResult run_fold(const Dataset& ds, const std::vector<Fold>& folds, std::size_t f, const TrainConfig& cfg) {
    const TrainConfig fc = fold_config(cfg, f);
    const OperaModel init =
        OperaModel::initialize(cfg.model_config(ds.config), derive_seed(fc.seed, {tag(SeedStream::init)}));
    FoldResult r;
    r.index = f;
    r.split = folds[f];
    r.training = train(init, ds, folds[f], fc);
    r.test = evaluate_model(r.training.best, ds, folds[f].test);
    r.baseline = evaluate_backbone(ds, folds[f].test);
    return r;
}

/// Trains and tests every fold; folds may run on `jobs` threads without
/// changing any result.
inline CrossValidationResult cross_validate(const Dataset& ds, std::size_t k, const TrainConfig& cfg,
                                            std::size_t jobs = 1) {
    cfg.validate();
    const std::vector<Fold> folds = make_folds(ds.videos.size(), k, cfg.seed);
    CrossValidationResult out;
    out.folds.resize(k);

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(k);
    auto worker = [&] {
        for (std::size_t f; (f = next.fetch_add(1)) < k;) {
            try {
                out.folds[f] = run_fold(ds, folds, f, cfg);
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, k);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<MetricsReport> model_reports, base_reports;
    for (const auto& f : out.folds) {
        model_reports.push_back(f.test);
        base_reports.push_back(f.baseline);
    }
    out.model = aggregate(model_reports);
    out.baseline = aggregate(base_reports);
    return out;
}

}  // namespace opera
