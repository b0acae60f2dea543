// opera: synthetic data, training, ablation, attention traces and gradient checks.
//
// Exit codes: 0 ok, 1 unexpected error, 2 usage error, 3 I/O error, 4 check failed.
//
// Every subcommand accepts --config FILE.json: a flat object whose keys are the
// subcommand's long flag names without dashes (e.g. {"lr": 0.003, "reg": false}).
// Flags given on the command line override values from the file. Unknown keys
// are usage errors.

#include <opera/checkpoint.hpp>
#include <opera/experiments.hpp>
#include <opera/gradcheck.hpp>
#include <opera/report.hpp>
#include <opera/synth.hpp>
#include <opera/training.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kError = 1, kUsage = 2, kIo = 3, kCheckFailed = 4 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> config_inputs(const std::string& key, const json& value) {
    std::vector<std::string> inputs;
    for (const auto& v : value.is_array() ? value : json::array({value})) {
        if (v.is_string())
            inputs.push_back(v.get<std::string>());
        else if (v.is_boolean())
            inputs.push_back(v.get<bool>() ? "true" : "false");
        else if (v.is_number())
            inputs.push_back(v.dump());
        else
            throw UsageError("config key '" + key + "': expected a string, number, boolean or array of those");
    }
    return inputs;
}

// Fills options the command line left unset from the --config file.
void apply_config_file(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    if (!fs::is_regular_file(path)) throw opera::IoError("config file not found: " + path);
    const json j = opera::read_json_file(path);
    if (!j.is_object()) throw UsageError("config file " + path + ": top level must be an object");
    for (const auto& [key, value] : j.items()) {
        CLI::Option* op = key == "config" ? nullptr : cmd->get_option_no_throw("--" + key);
        if (op == nullptr) throw UsageError("config file " + path + ": unknown key '" + key + "' for " + cmd->get_name());
        if (op->count() > 0) continue;
        for (auto& input : config_inputs(key, value))
            op->add_result(op->get_expected_min() == 0 ? op->get_flag_value(key, input) : input);
        try {
            op->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError("config file " + path + ": " + e.what());
        }
    }
}

void require_value(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("--") + flag + " is required");
}

void require_file(const std::string& path, const char* what) {
    require_value(path, what);
    if (!fs::is_regular_file(path)) throw opera::IoError(std::string(what) + " not found: " + path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw opera::IoError("cannot create output directory " + dir);
}

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void add_synth_options(CLI::App* app, opera::SynthConfig& c) {
    app->add_option("--classes", c.classes, "Number of phases")->capture_default_str();
    app->add_option("--feature-dim", c.feature_dim, "Feature width")->capture_default_str();
    app->add_option("--min-frames", c.min_frames, "Shortest video")->capture_default_str();
    app->add_option("--max-frames", c.max_frames, "Longest video")->capture_default_str();
    app->add_option("--dwell-min", c.dwell_min, "Smallest relative phase duration")->capture_default_str();
    app->add_option("--dwell-max", c.dwell_max, "Largest relative phase duration")->capture_default_str();
    app->add_option("--skip-prob", c.skip_prob, "Chance of dropping a phase")->capture_default_str();
    app->add_option("--noise-sigma", c.noise_sigma, "Feature noise")->capture_default_str();
    app->add_option("--corruption-rate", c.corruption_rate, "Fraction of corrupted frames")->capture_default_str();
    app->add_option("--corruption-strength", c.corruption_strength, "Pull toward a wrong phase")->capture_default_str();
    app->add_option("--artifact-scale", c.artifact_scale, "Artifact magnitude on corrupted frames")
        ->capture_default_str();
    app->add_option("--prototype-scale", c.prototype_scale, "Phase prototype norm")->capture_default_str();
    app->add_option("--readout-gain", c.readout_gain, "Backbone softmax gain")->capture_default_str();
    app->add_option("--readout-noise", c.readout_noise, "Backbone readout jitter")->capture_default_str();
}

void add_train_options(CLI::App* app, opera::TrainConfig& c) {
    app->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
    app->add_option("--lambda", c.lambda, "Regularization weight")->capture_default_str();
    app->add_option("--beta1", c.beta1)->capture_default_str();
    app->add_option("--beta2", c.beta2)->capture_default_str();
    app->add_option("--eps-adam", c.eps_adam)->capture_default_str();
    app->add_option("--dim", c.dim, "Model width")->capture_default_str();
    app->add_flag("--reg,!--no-reg", c.use_reg, "Attention regularization on/off")->capture_default_str();
    app->add_flag("--pe,!--no-pe", c.use_pe, "Sinusoidal positional encoding on/off")->capture_default_str();
}

// Subcommands

struct SynthArgs {
    opera::SynthConfig synth;
    std::size_t videos = 20;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    require_value(a.out, "out");
    if (a.videos == 0) throw UsageError("--videos must be positive");
    a.synth.validate();
    const opera::Dataset ds = opera::generate_dataset(a.synth, a.videos);
    opera::save_dataset(a.out, ds);
    std::vector<std::size_t> hist(a.synth.classes, 0);
    std::size_t frames = 0, corrupted = 0;
    for (const auto& v : ds.videos) {
        frames += v.frames();
        for (int y : v.labels) ++hist[static_cast<std::size_t>(y)];
        for (auto c : v.corrupted) corrupted += c;
    }
    std::cout << "wrote " << a.out << ": " << ds.videos.size() << " videos, " << frames << " frames, " << corrupted
              << " corrupted\nclass histogram:";
    for (auto h : hist) std::cout << ' ' << h;
    std::cout << '\n';
    return kOk;
}

struct TrainArgs {
    opera::TrainConfig train;
    std::string dataset, out;
    std::size_t folds = 5;
    std::size_t jobs = 1;
};

json train_echo(const TrainArgs& a, const opera::Dataset& ds) {
    return {{"dataset", a.dataset}, {"folds", a.folds}, {"train", a.train}, {"synth", ds.config}};
}

int cmd_train(TrainArgs a) {
    require_file(a.dataset, "dataset");
    require_value(a.out, "out");
    a.train.validate();
    const opera::Dataset ds = opera::load_dataset(a.dataset);
    ensure_dir(a.out);
    const json echo = train_echo(a, ds);
    opera::write_json_file(join_path(a.out, "run_config.json"), {{"command", "train"}, {"config", echo}, {"jobs", a.jobs}});

    const auto cv = opera::cross_validate(ds, a.folds, a.train, a.jobs);
    for (const auto& f : cv.folds) {
        opera::save_checkpoint(join_path(a.out, "fold" + std::to_string(f.index) + ".checkpoint.json"),
                               f.training.best,
                               {{"fold", f.index}, {"best_epoch", f.training.best_epoch}, {"config", echo}});
    }
    json metrics = opera::to_json(cv);
    metrics["config"] = echo;
    opera::write_json_file(join_path(a.out, "metrics.json"), metrics);
    opera::write_text_file(join_path(a.out, "metrics.csv"), opera::metrics_csv(cv));

    std::cout << "accuracy " << cv.model.accuracy.mean << " +- " << cv.model.accuracy.std << ", f1 " << cv.model.f1.mean
              << " +- " << cv.model.f1.std << " (backbone accuracy " << cv.baseline.accuracy.mean << ")\n";
    return kOk;
}

struct AblateArgs {
    TrainArgs base;
    std::size_t layers_small = 6;
    std::size_t layers_large = 11;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

int cmd_ablate(AblateArgs a) {
    require_file(a.base.dataset, "dataset");
    require_value(a.base.out, "out");
    a.base.train.validate();
    const opera::Dataset ds = opera::load_dataset(a.base.dataset);
    ensure_dir(a.base.out);
    opera::AblationConfig ab;
    ab.layers = {a.layers_small, a.layers_large};
    ab.seeds = a.seeds;
    ab.folds = a.base.folds;
    ab.jobs = a.base.jobs;
    json echo = train_echo(a.base, ds);
    echo["layers"] = ab.layers;
    echo["seeds"] = ab.seeds;
    echo["train"].erase("layers");
    echo["train"].erase("use_reg");
    echo["train"].erase("seed");
    opera::write_json_file(join_path(a.base.out, "run_config.json"),
                           {{"command", "ablate"}, {"config", echo}, {"jobs", a.base.jobs}});

    const auto cells = opera::run_ablation(ds, a.base.train, ab);
    opera::write_text_file(join_path(a.base.out, "ablation.csv"), opera::ablation_csv(cells));
    opera::write_json_file(join_path(a.base.out, "ablation.json"), {{"config", echo}, {"cells", opera::to_json(cells, ab)}});
    for (const auto& c : cells) {
        std::cout << "layers " << c.layers << " reg " << (c.use_reg ? "on " : "off") << ": accuracy "
                  << c.pooled.accuracy.mean << " +- " << c.pooled.accuracy.std << ", f1 " << c.pooled.f1.mean << " +- "
                  << c.pooled.f1.std << '\n';
    }
    return kOk;
}

struct AttnArgs {
    std::string checkpoint, dataset, out;
    std::vector<std::string> videos;
};

int cmd_attn(const AttnArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    require_file(a.dataset, "dataset");
    const opera::OperaModel model = opera::load_checkpoint(a.checkpoint);
    const opera::Dataset ds = opera::load_dataset(a.dataset);

    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ds.videos.size(); ++i) by_id[ds.videos[i].video_id] = i;
    std::vector<std::size_t> selected;
    for (const auto& id : a.videos) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            std::string valid;
            for (const auto& v : ds.videos) valid += (valid.empty() ? "" : ", ") + v.video_id;
            throw UsageError("unknown video id '" + id + "'; valid ids: " + valid);
        }
        selected.push_back(it->second);
    }
    if (a.videos.empty())
        for (std::size_t i = 0; i < ds.videos.size(); ++i) selected.push_back(i);

    json traces = json::array();
    for (std::size_t v : selected) traces.push_back(opera::to_json(opera::attention_trace(model, ds.videos[v])));
    const json out = {{"config", {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"videos", a.videos}}},
                      {"traces", traces}};
    if (a.out.empty()) {
        std::cout << out.dump(2) << '\n';
    } else {
        opera::write_json_file(a.out, out);
        std::cout << "wrote " << selected.size() << " attention traces to " << a.out << '\n';
    }
    return kOk;
}

struct GradcheckArgs {
    opera::GradcheckOptions opt;
    std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    if (a.opt.frames == 0 || a.opt.frames > 6 || a.opt.dim == 0 || a.opt.dim > 8)
        throw UsageError("gradcheck expects 1 <= frames <= 6 and 1 <= dim <= 8");
    const auto report = opera::run_gradcheck(a.opt);
    json blocks = json::array();
    for (const auto& b : report.blocks) {
        std::cout << std::left << std::setw(8) << b.objective << ' ' << std::setw(16) << b.block << ' '
                  << std::setw(14) << opera::format_number(b.max_rel_error) << ' ' << opera::to_string(b.status)
                  << '\n';
        blocks.push_back({{"objective", b.objective},
                          {"block", b.block},
                          {"max_rel_error", b.max_rel_error},
                          {"status", opera::to_string(b.status)}});
    }
    std::cout << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance "
              << opera::format_number(a.opt.tolerance) << ")\n";
    if (!a.out.empty()) {
        const json config = {{"frames", a.opt.frames}, {"input_dim", a.opt.input_dim}, {"dim", a.opt.dim},
                             {"layers", a.opt.layers}, {"classes", a.opt.classes}, {"lambda", a.opt.lambda},
                             {"h", a.opt.h},           {"tolerance", a.opt.tolerance}, {"seed", a.opt.seed}};
        opera::write_json_file(a.out, {{"config", config}, {"passed", report.passed}, {"blocks", blocks}});
    }
    return report.passed ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OperA phase labeling: synthetic data, training, ablation, attention traces, gradient checks"};
    app.require_subcommand(1);

    SynthArgs synth;
    std::map<CLI::App*, std::string> config_paths;
    auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", config_paths[cmd], "JSON config file"); };

    auto* s = app.add_subcommand("synth", "Generate a synthetic dataset file");
    add_config(s);
    s->add_option("--out", synth.out, "Dataset file to write");
    s->add_option("--videos", synth.videos, "Number of videos")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--seed", synth.synth.seed, "Generator seed")->capture_default_str();
    add_synth_options(s, synth.synth);

    auto add_run_options = [&](CLI::App* cmd, TrainArgs& t) {
        add_config(cmd);
        cmd->add_option("--dataset", t.dataset, "Dataset file");
        cmd->add_option("--out", t.out, "Output directory");
        cmd->add_option("--folds", t.folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
        cmd->add_option("--jobs", t.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber)->capture_default_str();
        add_train_options(cmd, t.train);
    };

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Cross-validated training; writes checkpoints and metrics");
    add_run_options(t, train);
    t->add_option("--seed", train.train.seed, "Run seed (folds, init, shuffling)")->capture_default_str();
    t->add_option("--layers", train.train.layers, "Encoder layers")->capture_default_str();

    AblateArgs ablate;
    auto* ab = app.add_subcommand("ablate", "Layers x regularization grid over several seeds");
    add_run_options(ab, ablate.base);
    ab->add_option("--layers-small", ablate.layers_small)->check(CLI::PositiveNumber)->capture_default_str();
    ab->add_option("--layers-large", ablate.layers_large)->check(CLI::PositiveNumber)->capture_default_str();
    ab->add_option("--seeds", ablate.seeds, "Run seeds")->delimiter(',')->capture_default_str();

    AttnArgs attn;
    auto* at = app.add_subcommand("attn", "Per-frame attention traces and HA/LA frames");
    add_config(at);
    at->add_option("--checkpoint", attn.checkpoint, "Checkpoint file");
    at->add_option("--dataset", attn.dataset, "Dataset file");
    at->add_option("--video", attn.videos, "Video id (repeatable; default all)")->delimiter(',');
    at->add_option("--out", attn.out, "JSON file to write (default stdout)");

    GradcheckArgs grad;
    auto* g = app.add_subcommand("gradcheck", "Compare backward() with central finite differences");
    add_config(g);
    g->add_option("--seed", grad.opt.seed)->capture_default_str();
    g->add_option("--lambda", grad.opt.lambda)->capture_default_str();
    g->add_option("--frames", grad.opt.frames)->capture_default_str();
    g->add_option("--dim", grad.opt.dim)->capture_default_str();
    g->add_option("--tolerance", grad.opt.tolerance)->capture_default_str();
    g->add_option("--fd-step", grad.opt.h, "Finite-difference step")->capture_default_str();
    g->add_flag("--corrupt-analytic", grad.opt.corrupt_analytic, "Perturb one analytic gradient (self-test)");
    g->add_option("--out", grad.out, "JSON report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        for (auto& [cmd, path] : config_paths)
            if (cmd->parsed()) apply_config_file(cmd, path);
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(train);
        if (*ab) return cmd_ablate(ablate);
        if (*at) return cmd_attn(attn);
        if (*g) return cmd_gradcheck(grad);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const opera::IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kError;
    }
    return kError;
}
