#pragma once

#include <opera/attention.hpp>
#include <opera/regularization.hpp>
#include <opera/synth.hpp>

#include <random>
#include <string>
#include <vector>

namespace opera {

struct GradcheckOptions {
    std::size_t frames = 6;
    std::size_t input_dim = 6;
    std::size_t dim = 8;
    std::size_t layers = 2;
    std::size_t classes = 3;
    double lambda = 1.0;
    double h = 1e-5;
    double tolerance = 1e-5;
    std::uint64_t seed = 0;
    // Test fixture: perturb the analytic gradient of one block so the
    // comparison must fail.
    bool corrupt_analytic = false;
};

enum class BlockStatus { pass, fail, zero, skipped };

inline const char* to_string(BlockStatus s) {
    switch (s) {
        case BlockStatus::pass: return "pass";
        case BlockStatus::fail: return "FAIL";
        case BlockStatus::zero: return "zero";
        case BlockStatus::skipped: return "skipped";
    }
    return "?";
}

struct GradcheckBlock {
    std::string objective;  // "L_c", "L_reg" or "L_total"
    std::string block;      // parameter name
    double max_rel_error = 0.0;
    BlockStatus status = BlockStatus::pass;
};

struct GradcheckReport {
    std::vector<GradcheckBlock> blocks;
    bool passed = true;
};

/// Compares backward() against central differences for L_c, L_reg and
/// L_c + lambda * L_reg on a tiny random model and synthetic video.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    SynthConfig sc;
    sc.classes = opt.classes;
    sc.feature_dim = opt.input_dim;
    sc.min_frames = sc.max_frames = opt.frames;
    sc.corruption_rate = 0.3;
    sc.readout_gain = 3.0;
    sc.seed = opt.seed;
    const VideoSequence video = generate_video(sc, derive_seed(opt.seed, {tag(SeedStream::video)}));

    ModelConfig mc;
    mc.input_dim = opt.input_dim;
    mc.dim = opt.dim;
    mc.layers = opt.layers;
    mc.classes = opt.classes;
    OperaModel model = OperaModel::initialize(mc, derive_seed(opt.seed, {tag(SeedStream::init)}));
    {
        // Move layer-norm affine terms away from (1, 0) so their gradients are generic.
        std::mt19937_64 rng(opt.seed);
        std::uniform_real_distribution<double> jitter(-0.5, 0.5);
        for (auto& p : model.parameters())
            if (p.name.ends_with("ln_gamma") || p.name.ends_with("ln_beta"))
                for (double& v : p.tensor.values_mut()) v += jitter(rng);
    }

    std::vector<std::size_t> counts(opt.classes, 0);
    for (int y : video.labels) ++counts[static_cast<std::size_t>(y)];
    const ClassWeights weights = median_freq_weights(counts);
    const FrameConfidence conf = cee_vector(video.backbone_probs, video.labels);

    struct Objective {
        std::string name;
        double cls, reg;
    };
    std::vector<Objective> objectives{{"L_c", 1.0, 0.0}, {"L_reg", 0.0, 1.0}, {"L_total", 1.0, opt.lambda}};

    auto loss_of = [&](const OperaModel& m, const Objective& o) {
        const ForwardResult fwd = model_forward(m, video.features);
        Tensor loss = scale(balanced_cross_entropy(fwd.probs, video.labels, weights), o.cls);
        if (o.reg != 0.0) loss = add(loss, scale(attention_reg_loss(fwd.record.n_first, conf), o.reg));
        return loss;
    };

    GradcheckReport report;
    const auto params = model.parameters();
    for (const auto& obj : objectives) {
        if (obj.name == "L_reg" && opt.lambda == 0.0) {
            for (const auto& p : params) report.blocks.push_back({obj.name, p.name, 0.0, BlockStatus::skipped});
            continue;
        }
        model.zero_grad();
        backward(loss_of(model, obj));
        std::vector<double> analytic;
        for (const auto& p : params) analytic.insert(analytic.end(), p.tensor.grad().begin(), p.tensor.grad().end());
        if (opt.corrupt_analytic && !analytic.empty()) analytic[0] += 1e-3 * (1.0 + std::abs(analytic[0]));

        OperaModel probe = model.clone();
        const auto numeric = finite_diff_gradient(
            [&](const std::vector<double>& x) {
                probe.set_flat_parameters(x);
                return loss_of(probe, obj).item();
            },
            model.flat_parameters(), opt.h);

        std::size_t offset = 0;
        for (const auto& p : params) {
            const std::size_t n = p.tensor.numel();
            const std::span<const double> a(analytic.data() + offset, n);
            const std::span<const double> f(numeric.data() + offset, n);
            offset += n;
            double magnitude = 0.0;
            for (std::size_t i = 0; i < n; ++i) magnitude = std::max({magnitude, std::abs(a[i]), std::abs(f[i])});
            GradcheckBlock b{obj.name, p.name, max_relative_error(a, f), BlockStatus::pass};
            if (magnitude < 1e-10) {
                b.status = BlockStatus::zero;
                b.max_rel_error = 0.0;
            } else if (!(b.max_rel_error < opt.tolerance)) {
                b.status = BlockStatus::fail;
                report.passed = false;
            }
            report.blocks.push_back(b);
        }
    }
    model.zero_grad();
    return report;
}

}  // namespace opera
