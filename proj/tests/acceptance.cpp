// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: opera_acceptance [criterion numbers...]   (default: all)

#include <opera/experiments.hpp>
#include <opera/gradcheck.hpp>
#include <opera/regularization.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace opera;
namespace fs = std::filesystem;

#ifndef OPERA_CLI
#error "OPERA_CLI must name the opera executable"
#endif

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

int run(const std::string& args) {
    const std::string cmd = std::string(OPERA_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative path -> contents for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return files;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("opera_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> dist;
    Matrix m(r, c);
    for (double& v : m.values) v = dist(rng);
    return m;
}

Matrix head_rows(const Matrix& m, std::size_t rows) {
    return Matrix(rows, m.cols, std::vector<double>(m.values.begin(), m.values.begin() + rows * m.cols));
}

// Data and training setup shared by criteria 4, 6 and 7.
SynthConfig direction_data() {
    SynthConfig c;
    c.min_frames = 100;
    c.max_frames = 150;
    c.corruption_rate = 0.2;
    return c;
}

constexpr std::size_t kDirectionVideos = 20;

TrainConfig direction_train() {
    TrainConfig t;
    t.lr = 3e-3;
    t.epochs = 15;
    t.dim = 16;
    t.layers = 2;
    return t;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

Outcome gradient_oracle() {
    const fs::path dir = scratch_dir("gradcheck");
    const auto t0 = Clock::now();
    const int code = run("gradcheck --out " + (dir / "report.json").string());
    const double secs = seconds_since(t0);
    const auto report = read_json_file((dir / "report.json").string());
    double worst = 0.0;
    std::size_t checked = 0;
    std::set<std::string> objectives;
    for (const auto& b : report.at("blocks")) {
        if (b.at("status") == "skipped") continue;
        worst = std::max(worst, b.at("max_rel_error").get<double>());
        objectives.insert(b.at("objective").get<std::string>());
        ++checked;
    }
    const bool ok = code == 0 && objectives.size() == 3 && worst < 1e-5 && secs < 30.0;
    return {ok, "exit " + std::to_string(code) + ", " + std::to_string(checked) + " blocks over " +
                    std::to_string(objectives.size()) + " objectives, max rel err " + fmt(worst, 3) + " (< 1e-05), " +
                    fmt(secs, 3) + " s (< 30 s)"};
}

Outcome causality() {
    const auto t0 = Clock::now();
    double prefix_err = 0.0, future_err = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        std::mt19937_64 rng(s);
        ModelConfig c;
        c.input_dim = 6;
        c.dim = 8;
        c.layers = 1 + s % 3;
        c.classes = 4;
        c.use_pe = s % 2 == 1;
        const auto model = OperaModel::initialize(c, s);
        const std::size_t frames = 4 + s % 29;
        const Matrix x = random_matrix(frames, c.input_dim, rng);
        NoGradGuard guard;
        const auto full = model_forward(model, x).probs;
        const std::size_t cut = 1 + rng() % frames;
        const auto prefix = model_forward(model, head_rows(x, cut)).probs;
        for (std::size_t i = 0; i < prefix.numel(); ++i)
            prefix_err = std::max(prefix_err, std::abs(prefix[i] - full[i]));
        Matrix moved = x;
        std::normal_distribution<double> kick(0.0, 5.0);
        for (std::size_t i = cut * c.input_dim; i < moved.values.size(); ++i) moved.values[i] += kick(rng);
        const auto perturbed = model_forward(model, moved).probs;
        for (std::size_t i = 0; i < cut * c.classes; ++i)
            future_err = std::max(future_err, std::abs(perturbed[i] - full[i]));
    }
    const double secs = seconds_since(t0);
    const bool ok = prefix_err <= 1e-12 && future_err <= 1e-12 && secs < 60.0;
    return {ok, "100 models, max prefix deviation " + fmt(prefix_err, 3) + ", max future-perturbation deviation " +
                    fmt(future_err, 3) + " (<= 1e-12), " + fmt(secs, 3) + " s"};
}

Outcome normalized_attention_oracle() {
    double n_err = 0.0, mass_err = 0.0;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> dist(0.0, 3.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t t = 1 + rng() % 64, width = 1 + rng() % 8;
        std::vector<double> q(t * width), k(t * width);
        for (double& v : q) v = dist(rng);
        for (double& v : k) v = dist(rng);
        const CausalMask mask(t);
        NoGradGuard guard;
        const Tensor a = attention_weights(Tensor::from({t, width}, q), Tensor::from({t, width}, k), mask);
        const Tensor n = normalized_frame_attention(a, mask);
        double conserved = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            double mass = 0.0, count = 0.0;
            for (std::size_t i = 0; i < t; ++i) {
                mass += a.at(i, j);
                if (mask.allows(i, j)) count += 1.0;
            }
            n_err = std::max(n_err, std::abs(n[j] - mass / count));
            conserved += n[j] * count;
        }
        mass_err = std::max(mass_err, std::abs(conserved - static_cast<double>(t)));
    }
    const bool ok = n_err <= 1e-9 && mass_err <= 1e-9;
    return {ok, "1000 maps, max |n - brute force| " + fmt(n_err, 3) + ", max |sum n*count - T| " + fmt(mass_err, 3) +
                    " (<= 1e-09)"};
}

// Cross-validated models of one (use_reg, seed) cell of the direction setup.
struct DirectionRuns {
    Dataset ds;
    std::map<std::pair<bool, std::uint64_t>, CrossValidationResult> runs;
};

const DirectionRuns& direction_runs() {
    static const DirectionRuns cache = [] {
        DirectionRuns d;
        d.ds = generate_dataset(direction_data(), kDirectionVideos);
        for (bool reg : {false, true}) {
            for (std::uint64_t seed : kSeeds) {
                TrainConfig cfg = direction_train();
                cfg.use_reg = reg;
                cfg.seed = seed;
                d.runs[{reg, seed}] = cross_validate(d.ds, 5, cfg);
            }
        }
        return d;
    }();
    return cache;
}

Outcome regularization_direction() {
    const auto t0 = Clock::now();
    const auto& d = direction_runs();
    std::map<bool, double> mean_rho;
    std::string per_seed;
    for (bool reg : {false, true}) {
        for (std::uint64_t seed : kSeeds) {
            const auto& cv = d.runs.at({reg, seed});
            double rho = 0.0;
            for (const auto& f : cv.folds) rho += attention_cee_spearman(f.training.best, d.ds, f.split.test);
            rho /= static_cast<double>(cv.folds.size());
            mean_rho[reg] += rho / static_cast<double>(kSeeds.size());
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = mean_rho[true] < mean_rho[false] && secs < 600.0;
    return {ok, "mean Spearman(layer-1 n, CEE) over " + std::to_string(kSeeds.size()) + " seeds: lambda=1 " +
                    fmt(mean_rho[true]) + " vs lambda=0 " + fmt(mean_rho[false]) + ", " + fmt(secs, 3) + " s"};
}

Outcome temporal_gain() {
    const auto t0 = Clock::now();
    SynthConfig data;
    data.min_frames = 200;
    data.max_frames = 300;
    const auto ds = generate_dataset(data, 20);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.epochs = 12;
    cfg.dim = 16;
    cfg.layers = 4;
    const auto cv = cross_validate(ds, 5, cfg);
    const double model = cv.model.accuracy.mean, backbone = cv.baseline.accuracy.mean;
    const double secs = seconds_since(t0);
    const bool ok = backbone >= 70.0 && backbone <= 85.0 && model >= backbone + 5.0 && secs < 900.0;
    return {ok, "5-fold accuracy: model " + fmt(model) + " vs backbone " + fmt(backbone) + " (backbone in [70, 85], gain " +
                    fmt(model - backbone) + " >= 5), " + fmt(secs, 3) + " s"};
}

Outcome ablation() {
    const auto t0 = Clock::now();
    const fs::path dir = scratch_dir("ablate");
    const auto data = direction_data();
    const auto train = direction_train();
    std::string synth_args = "synth --out " + (dir / "data.json").string() + " --videos " +
                             std::to_string(kDirectionVideos) + " --min-frames " + std::to_string(data.min_frames) +
                             " --max-frames " + std::to_string(data.max_frames);
    if (run(synth_args) != 0) return {false, "synth failed"};
    const std::string ablate_args = "ablate --dataset " + (dir / "data.json").string() + " --out " +
                                    (dir / "run").string() + " --layers-small 2 --layers-large 4 --seeds 0,1,2,3,4" +
                                    " --lr " + format_number(train.lr) + " --epochs " + std::to_string(train.epochs) +
                                    " --dim " + std::to_string(train.dim);
    if (const int code = run(ablate_args); code != 0) return {false, "ablate exited " + std::to_string(code)};

    std::ifstream csv(dir / "run" / "ablation.csv");
    std::string line;
    std::getline(csv, line);
    std::map<std::size_t, std::map<std::string, double>> acc;
    while (std::getline(csv, line)) {
        std::stringstream row(line);
        std::string layers, reg, mean;
        std::getline(row, layers, ',');
        std::getline(row, reg, ',');
        std::getline(row, mean, ',');
        acc[std::stoul(layers)][reg] = std::stod(mean);
    }
    bool ok = acc.size() == 2;
    std::string detail;
    for (const auto& [layers, r] : acc) {
        ok = ok && r.at("on") >= r.at("off");
        detail += "L=" + std::to_string(layers) + ": reg on " + fmt(r.at("on")) + " vs off " + fmt(r.at("off")) + "; ";
    }
    return {ok, detail + "5 seeds x 5 folds, " + fmt(seconds_since(t0), 3) + " s"};
}

Outcome ha_la_quality() {
    const auto& d = direction_runs();
    std::vector<HaLaReport> reports;
    std::set<std::size_t> videos;
    for (std::uint64_t seed : kSeeds) {
        for (const auto& f : d.runs.at({true, seed}).folds) {
            for (std::size_t v : f.split.test) {
                reports.push_back(attention_trace(f.training.best, d.ds.videos[v]).ha_la);
                videos.insert(v);
            }
        }
    }
    const auto s = summarize_ha_la(reports);
    const bool ok = videos.size() >= 20 && s.ha_cee < s.la_cee && s.ha_accuracy > s.la_accuracy;
    return {ok, std::to_string(videos.size()) + " videos, " + std::to_string(s.entries) + " (video, phase) pairs: CEE HA " +
                    fmt(s.ha_cee) + " < LA " + fmt(s.la_cee) + ", accuracy HA " + fmt(s.ha_accuracy) + " > LA " +
                    fmt(s.la_accuracy)};
}

Outcome metrics_golden() {
    using Seqs = std::vector<std::vector<int>>;
    const auto hand = evaluate_metrics(Seqs{{0, 1, 1, 1}}, Seqs{{0, 0, 1, 1}});
    const double p = (1.0 + 2.0 / 3.0) / 2.0, r = (0.5 + 1.0) / 2.0;
    const double f1 = 100.0 * 2.0 * p * r / (p + r);
    const auto perfect = evaluate_metrics(Seqs{{0, 1, 2, 2}}, Seqs{{0, 1, 2, 2}});
    const auto worst = evaluate_metrics(Seqs{{1, 1, 0}}, Seqs{{0, 0, 1}});
    const bool ok = hand.accuracy == 75.0 && std::abs(hand.f1 - f1) <= 1e-9 && std::abs(hand.f1 - 78.95) < 5e-3 &&
                    perfect.accuracy == 100.0 && perfect.f1 == 100.0 && worst.accuracy == 0.0 && worst.f1 == 0.0;
    return {ok, "hand example Acc " + fmt(hand.accuracy) + " F1 " + fmt(hand.f1, 6) + ", perfect Acc/F1 " +
                    fmt(perfect.accuracy) + "/" + fmt(perfect.f1) + ", worst Acc/F1 " + fmt(worst.accuracy) + "/" +
                    fmt(worst.f1)};
}

Outcome determinism() {
    const fs::path dir = scratch_dir("determinism");
    const std::string data = (dir / "data.json").string();
    const std::string common = " --lr 0.003 --epochs 3 --dim 8 --folds 3";
    const std::string small = common + " --layers 2 --seed 11";
    std::vector<std::string> mismatches;
    auto twice = [&](const std::string& name, const std::function<std::string(const fs::path&)>& args) {
        std::map<std::string, std::string> first;
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path out = dir / (name + std::to_string(rep));
            fs::create_directories(out);
            if (run(args(out)) != 0) {
                mismatches.push_back(name + " failed");
                return std::map<std::string, std::string>{};
            }
            auto files = snapshot(out);
            if (rep == 0) {
                first = std::move(files);
            } else if (files != first || first.empty()) {
                mismatches.push_back(name);
            }
        }
        return first;
    };

    twice("synth", [&](const fs::path& out) {
        return "synth --videos 6 --min-frames 30 --max-frames 50 --seed 5 --out " + (out / "data.json").string();
    });
    if (run("synth --videos 6 --min-frames 30 --max-frames 50 --seed 5 --out " + data) != 0) return {false, "synth"};
    const auto data_before = slurp(data);
    const auto serial = twice("train", [&](const fs::path& out) {
        return "train --dataset " + data + " --out " + out.string() + small;
    });
    auto parallel = twice("train-jobs", [&](const fs::path& out) {
        return "train --dataset " + data + " --out " + out.string() + small + " --jobs 3";
    });
    // run_config.json records the job count itself; every result file must agree.
    auto serial_results = serial;
    serial_results.erase("run_config.json");
    parallel.erase("run_config.json");
    if (serial_results != parallel) mismatches.push_back("train --jobs 1 vs 3");
    twice("ablate", [&](const fs::path& out) {
        return "ablate --dataset " + data + " --out " + out.string() + common + " --layers-small 1 --layers-large 2 --seeds 0,1";
    });
    twice("attn", [&](const fs::path& out) {
        return "attn --checkpoint " + (dir / "train0" / "fold0.checkpoint.json").string() + " --dataset " + data +
               " --out " + (out / "trace.json").string();
    });
    twice("gradcheck", [&](const fs::path& out) { return "gradcheck --seed 3 --out " + (out / "g.json").string(); });
    if (slurp(data) != data_before) mismatches.push_back("dataset modified");

    std::string detail = "synth, train (jobs 1 and 3), ablate, attn, gradcheck rerun byte-identical";
    if (!mismatches.empty()) {
        detail = "mismatch:";
        for (const auto& m : mismatches) detail += " " + m;
    }
    return {mismatches.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
        {"gradient oracle", gradient_oracle},
        {"causality", causality},
        {"normalized attention oracle", normalized_attention_oracle},
        {"regularization direction", regularization_direction},
        {"temporal modeling gain", temporal_gain},
        {"ablation, reg on >= reg off", ablation},
        {"HA/LA quality", ha_la_quality},
        {"metrics golden values", metrics_golden},
        {"determinism", determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!wanted.empty() && !wanted.contains(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
