// Command-line frontend: train / analyze / plot / sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "dst/config.hpp"
#include "dst/errors.hpp"
#include "dst/metrics.hpp"
#include "dst/plots.hpp"
#include "dst/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 ok, 1 usage, 2 bad config, 3 parse failure, 4 I/O failure,
// 5 internal error.
enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kParse = 3, kIo = 4, kInternal = 5 };

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

struct TrainOverrides {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;
    std::string strategy;
    std::string distribution;
    double sparsity = -1.0;
    std::int64_t epochs = -1;
    bool quiet = false;
};

dst::RunConfig resolve_config(const TrainOverrides& opt) {
    dst::RunConfig cfg = opt.config_path.empty() ? dst::RunConfig{}
                                                 : dst::parse_config_file(opt.config_path);
    if (opt.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(opt.seed);
    if (!opt.strategy.empty()) cfg.train.strategy = dst::strategy_from_string(opt.strategy);
    if (!opt.distribution.empty()) {
        cfg.train.distribution = dst::distribution_from_string(opt.distribution);
    }
    if (opt.sparsity >= 0.0) cfg.train.sparsity = opt.sparsity;
    if (opt.epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(opt.epochs);
    return cfg;
}

struct RunArtifacts {
    double final_accuracy = 0.0;
    std::size_t shrunk = 0;
    double wall_seconds = 0.0;
};

RunArtifacts run_and_write(const dst::RunConfig& cfg, const std::string& out_dir, bool quiet) {
    fs::create_directories(out_dir);
    dst::LoadedData data = dst::load_data(cfg.data, cfg.model);

    dst::TrainObserver observer;
    if (!quiet) {
        observer = [](const dst::Model&, const dst::MetricsRecord& rec) {
            std::cerr << "epoch " << rec.epoch << "  lr " << fmt(rec.lr, "%.5f") << "  loss "
                      << fmt(rec.train_loss) << "  test_acc " << fmt(rec.test_accuracy, "%.2f")
                      << "%\n";
        };
    }
    dst::RunResult result = dst::run_experiment(cfg.model, data.train, data.test, cfg.train,
                                                observer);

    const std::string csv_path = out_dir + "/metrics.csv";
    dst::write_metrics_csv(result.metrics, csv_path);
    dst::save_checkpoint(result.model, out_dir + "/model.ckpt");

    dst::RunSummary summary;
    summary.config_echo = dst::config_echo(cfg);
    auto join = [](const std::vector<double>& xs) {
        std::string s;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i) s += ',';
            s += fmt(xs[i], "%.9g");
        }
        return s;
    };
    summary.config_echo.emplace_back("data.norm_mean", join(data.stats.mean));
    summary.config_echo.emplace_back("data.norm_std", join(data.stats.stddev));
    for (const auto& layer : result.model.layers) {
        summary.layer_sizes.push_back(layer.weight_count());
    }
    summary.final_test_accuracy = result.final_test_accuracy;
    summary.metrics_csv = csv_path;
    summary.shrunk_params = dst::shrunk_param_count(result.model);
    summary.total_weights = result.model.total_weights();
    summary.total_active = result.model.total_active();
    summary.wall_seconds = result.wall_seconds;
    dst::write_run_summary(summary, out_dir + "/run_summary.json");

    return {result.final_test_accuracy, summary.shrunk_params, result.wall_seconds};
}

int cmd_train(const TrainOverrides& opt) {
    const dst::RunConfig cfg = resolve_config(opt);
    const RunArtifacts art = run_and_write(cfg, opt.out_dir, opt.quiet);
    std::cout << "final test accuracy: " << fmt(art.final_accuracy, "%.2f") << "%\n"
              << "outputs written to " << opt.out_dir << "\n";
    return kOk;
}

int cmd_analyze(const std::string& checkpoint, const std::string& out_dir) {
    const dst::Model model = dst::load_checkpoint(checkpoint);
    const auto stats = dst::collect_layer_stats(model);

    std::printf("%-6s %-7s %-18s %10s %9s %10s %10s\n", "layer", "kind", "shape", "active",
                "density", "empty_out", "empty_in");
    for (const auto& s : stats) {
        std::string shape = std::to_string(s.shape.n_out) + "x" + std::to_string(s.shape.n_in);
        if (s.kind == dst::LayerKind::Conv) {
            shape += "x" + std::to_string(s.shape.kernel_h) + "x" +
                     std::to_string(s.shape.kernel_w);
        }
        std::printf("%-6zu %-7s %-18s %10zu %9.4f %10zu %10zu\n", s.layer_index,
                    s.kind == dst::LayerKind::Conv ? "conv" : "linear", shape.c_str(), s.active,
                    s.density, s.empty_outputs, s.empty_inputs);
    }
    const std::size_t total = model.total_weights();
    const std::size_t active = model.total_active();
    const std::size_t shrunk = dst::shrunk_param_count(model);
    std::printf("total weights %zu, active %zu (density %.4f)\n", total, active,
                static_cast<double>(active) / static_cast<double>(total));
    std::printf("params* after removing empty units: %zu (%.2f%% of dense)\n", shrunk,
                100.0 * static_cast<double>(shrunk) / static_cast<double>(total));

    fs::create_directories(out_dir);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const std::string path = out_dir + "/mask_layer" + std::to_string(li) + ".pgm";
        dst::export_mask_image(model.layers[li], path);
    }
    std::cout << "mask bitmaps written to " << out_dir << "\n";
    return kOk;
}

int cmd_plot(const std::string& csv, const std::string& out_dir, std::string summary_path,
             std::vector<std::size_t> sizes) {
    if (sizes.empty()) {
        if (summary_path.empty()) {
            const fs::path candidate = fs::path(csv).parent_path() / "run_summary.json";
            if (fs::exists(candidate)) summary_path = candidate.string();
        }
        if (summary_path.empty()) {
            throw dst::ConfigError(
                "plot needs layer sizes: pass --sizes or --summary (or keep "
                "run_summary.json beside the CSV)");
        }
        std::ifstream is(summary_path);
        if (!is) throw dst::IoError("cannot open summary: " + summary_path);
        json j = json::parse(is, nullptr, false);
        if (j.is_discarded() || !j.contains("layer_sizes")) {
            throw dst::ParseError(summary_path + ": not a run summary with layer_sizes", 1);
        }
        std::string packed = j["layer_sizes"].get<std::string>();
        std::size_t pos = 0;
        while (pos < packed.size()) {
            std::size_t next = packed.find(',', pos);
            if (next == std::string::npos) next = packed.size();
            sizes.push_back(std::stoull(packed.substr(pos, next - pos)));
            pos = next + 1;
        }
    }
    fs::create_directories(out_dir);
    for (const std::string& path : dst::emit_plots(csv, out_dir, sizes)) {
        std::cout << "wrote " << path << "\n";
    }
    return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::vector<std::string> strategies, std::vector<double> sparsities,
              std::vector<std::string> distributions, unsigned jobs) {
    const dst::RunConfig base = config_path.empty() ? dst::RunConfig{}
                                                    : dst::parse_config_file(config_path);
    if (strategies.empty()) strategies = {"set", "rigl", "dsr", "ggr"};
    if (sparsities.empty()) sparsities = {0.9, 0.97, 0.99};
    if (distributions.empty()) distributions = {"erk", "uniform"};
    if (jobs == 0) jobs = 1;

    struct Job {
        dst::RunConfig cfg;
        std::string name;
        std::string dir;
    };
    std::vector<Job> grid;
    for (const auto& strat : strategies) {
        for (double s : sparsities) {
            for (const auto& dist : distributions) {
                dst::RunConfig cfg = base;
                cfg.train.strategy = dst::strategy_from_string(strat);
                cfg.train.sparsity = s;
                cfg.train.distribution = dst::distribution_from_string(dist);
                std::string name = strat + "_s" + fmt(s, "%.2f") + "_" + dist;
                grid.push_back({cfg, name, out_dir + "/" + name});
            }
        }
    }

    fs::create_directories(out_dir);
    std::vector<RunArtifacts> results(grid.size());
    std::vector<std::string> failures(grid.size());
    std::mutex io_mutex;
    std::size_t next = 0;
    std::mutex next_mutex;

    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(next_mutex);
                if (next >= grid.size()) return;
                i = next++;
            }
            try {
                results[i] = run_and_write(grid[i].cfg, grid[i].dir, /*quiet=*/true);
                std::lock_guard lock(io_mutex);
                std::cout << grid[i].name << "  acc " << fmt(results[i].final_accuracy, "%.2f")
                          << "%  params* " << results[i].shrunk << "\n";
            } catch (const std::exception& e) {
                std::lock_guard lock(io_mutex);
                failures[i] = e.what();
                std::cerr << grid[i].name << " failed: " << e.what() << "\n";
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned n_workers = std::min<unsigned>(jobs, static_cast<unsigned>(grid.size()));
    for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    const std::string summary_path = out_dir + "/sweep_summary.csv";
    std::ofstream os(summary_path, std::ios::binary);
    if (!os) throw dst::IoError("cannot open sweep summary for writing: " + summary_path);
    os << "strategy,sparsity,distribution,final_test_acc,shrunk_params,wall_seconds,status\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        os << dst::to_string(grid[i].cfg.train.strategy) << ','
           << fmt(grid[i].cfg.train.sparsity, "%.4g") << ','
           << dst::to_string(grid[i].cfg.train.distribution) << ','
           << fmt(results[i].final_accuracy, "%.4f") << ',' << results[i].shrunk << ','
           << fmt(results[i].wall_seconds, "%.3f") << ','
           << (failures[i].empty() ? "ok" : "failed") << "\n";
    }
    std::cout << "sweep summary written to " << summary_path << "\n";
    const bool any_failed = std::any_of(failures.begin(), failures.end(),
                                        [](const std::string& f) { return !f.empty(); });
    return any_failed ? kInternal : kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic sparse training toolkit"};
    app.require_subcommand(1);

    TrainOverrides train_opt;
    auto* train = app.add_subcommand("train", "train one configuration");
    train->add_option("--config", train_opt.config_path, "config file (key = value)");
    train->add_option("--out-dir", train_opt.out_dir, "output directory");
    train->add_option("--seed", train_opt.seed, "override seed");
    train->add_option("--strategy", train_opt.strategy, "override strategy (set|rigl|dsr|ggr)");
    train->add_option("--sparsity", train_opt.sparsity, "override global sparsity");
    train->add_option("--distribution", train_opt.distribution, "override density distribution");
    train->add_option("--epochs", train_opt.epochs, "override epoch count");
    train->add_flag("--quiet", train_opt.quiet, "suppress per-epoch progress");

    std::string checkpoint;
    std::string analyze_out = "analysis";
    auto* analyze = app.add_subcommand("analyze", "inspect a trained checkpoint");
    analyze->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    analyze->add_option("--out-dir", analyze_out, "directory for mask bitmaps");

    std::string plot_csv;
    std::string plot_out = "plots";
    std::string plot_summary;
    std::vector<std::size_t> plot_sizes;
    auto* plot = app.add_subcommand("plot", "render SVG charts from a metrics CSV");
    plot->add_option("--csv", plot_csv, "metrics CSV")->required();
    plot->add_option("--out-dir", plot_out, "output directory");
    plot->add_option("--summary", plot_summary, "run summary JSON (for layer sizes)");
    plot->add_option("--sizes", plot_sizes, "comma-free list of per-layer weight counts");

    std::string sweep_config;
    std::string sweep_out = "sweep";
    std::vector<std::string> sweep_strategies;
    std::vector<double> sweep_sparsities;
    std::vector<std::string> sweep_distributions;
    unsigned sweep_jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "strategy x sparsity x distribution grid");
    sweep->add_option("--config", sweep_config, "base config file");
    sweep->add_option("--out-dir", sweep_out, "output directory");
    sweep->add_option("--strategies", sweep_strategies, "subset of set,rigl,dsr,ggr");
    sweep->add_option("--sparsities", sweep_sparsities, "sparsity levels");
    sweep->add_option("--distributions", sweep_distributions, "subset of erk,uniform");
    sweep->add_option("--jobs", sweep_jobs, "parallel runs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_opt);
        if (analyze->parsed()) return cmd_analyze(checkpoint, analyze_out);
        if (plot->parsed()) return cmd_plot(plot_csv, plot_out, plot_summary, plot_sizes);
        if (sweep->parsed()) {
            return cmd_sweep(sweep_config, sweep_out, sweep_strategies, sweep_sparsities,
                             sweep_distributions, sweep_jobs);
        }
    } catch (const dst::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const dst::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const dst::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}
