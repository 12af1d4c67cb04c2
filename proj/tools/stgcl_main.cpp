// stgcl command-line driver: synthesize data, train, evaluate, aggregate
// reports, and run the gradient checker.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stgcl/config.hpp"
#include "stgcl/gradcheck.hpp"
#include "stgcl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stgcl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string fmt(double v, const char* spec = "%.2f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::string mean_std_cell(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1
                          ? std::sqrt(var / static_cast<double>(values.size() - 1))
                          : 0.0;
    return fmt(mean) + "±" + fmt(sd);
}

int cmd_synth(i64 nodes, i64 days, i64 steps_per_day, u64 seed, double noise,
              const std::string& out_dir) {
    SynthConfig cfg;
    cfg.nodes = nodes;
    cfg.days = days;
    cfg.steps_per_day = steps_per_day;
    cfg.seed = seed;
    cfg.noise_sigma = noise;
    SynthResult result = synth_generate(cfg);
    fs::create_directories(out_dir);
    save_series(out_dir + "/series.stgs", result.series, cfg.steps_per_day,
                1440 / cfg.steps_per_day);
    save_edge_list(out_dir + "/edges.csv", result.edges);
    std::cout << "wrote " << out_dir << "/series.stgs (" << result.series.shape()[0] << " steps x "
              << result.series.shape()[1] << " nodes) and " << out_dir << "/edges.csv ("
              << result.edges.size() << " entries)\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& scheme_override, i64 seed_override,
              i64 seeds) {
    ExperimentConfig config = load_experiment_config(config_path);
    if (!scheme_override.empty()) config.train.scheme = parse_scheme(scheme_override);
    if (seed_override >= 0) config.train.seed = static_cast<u64>(seed_override);

    PreparedExperiment prepared = prepare_experiment(config);
    TrainContext ctx;
    ctx.dataset = &prepared.dataset;
    ctx.graph = &prepared.graph;
    ctx.encoder = config.encoder;
    ctx.config_echo = config.echo().dump();
    ctx.out_dir = config.output_dir;

    if (seeds <= 1) {
        RunReport report = run_training(ctx, config.train);
        std::cout << "run complete: best_epoch=" << report.best_epoch
                  << " best_val_mae=" << fmt(report.best_val_mae, "%.4f")
                  << " test_mae=" << fmt(report.test_avg.mae, "%.4f") << " ("
                  << fmt(report.wall_clock_sec, "%.1f") << "s)\n";
        if (!ctx.out_dir.empty()) std::cout << "artifacts in " << ctx.out_dir << "\n";
        return kExitOk;
    }

    std::vector<u64> seed_list;
    for (i64 i = 0; i < seeds; ++i) seed_list.push_back(config.train.seed + static_cast<u64>(i));
    const auto reports = run_multi_seed(ctx, config.train, seed_list);
    std::vector<double> maes;
    for (const RunReport& r : reports) {
        std::cout << "seed " << r.seed << ": test_mae=" << fmt(r.test_avg.mae, "%.4f") << "\n";
        maes.push_back(r.test_avg.mae);
    }
    std::cout << "test MAE over " << seeds << " seeds: " << mean_std_cell(maes) << "\n";
    return kExitOk;
}

StgModel model_from_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& config,
                               i64 output_steps) {
    ModelBlocks blocks;
    blocks.decoder = ckpt.blocks.count("decoder.fc1.w") > 0;
    blocks.projection = ckpt.blocks.count("proj.fc1.w") > 0;
    StgModel model(config.encoder, 2, output_steps, config.train.seed, blocks);
    model.load_state(ckpt.blocks);
    return model;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split) {
    Partition partition;
    if (split == "train") {
        partition = Partition::kTrain;
    } else if (split == "val") {
        partition = Partition::kVal;
    } else if (split == "test") {
        partition = Partition::kTest;
    } else {
        throw ConfigError("--split must be train, val, or test");
    }
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ExperimentConfig config = parse_experiment_config(json::parse(ckpt.config_echo));
    PreparedExperiment prepared = prepare_experiment(config);
    StgModel model = model_from_checkpoint(ckpt, config, prepared.dataset.output_steps());
    MetricsAccumulator acc =
        evaluate_split(model, prepared.dataset, prepared.graph, partition,
                       config.train.batch, config.train.report_horizons);
    std::cout << "split=" << split << "\n";
    for (i64 h : config.train.report_horizons) {
        const HorizonMetrics m = acc.horizon(h);
        std::cout << "  step " << h << " (" << h * prepared.dataset.interval_min()
                  << " min): mae=" << fmt(m.mae, "%.4f") << " rmse=" << fmt(m.rmse, "%.4f")
                  << " mape=" << fmt(m.mape, "%.2f") << "%\n";
    }
    const HorizonMetrics avg = acc.average();
    std::cout << "  avg: mae=" << fmt(avg.mae, "%.4f") << " rmse=" << fmt(avg.rmse, "%.4f")
              << " mape=" << fmt(avg.mape, "%.2f") << "%\n";
    return kExitOk;
}

std::vector<RunReport> load_reports(const std::vector<std::string>& dirs) {
    std::vector<RunReport> reports;
    for (const std::string& dir : dirs) {
        std::ifstream in(dir + "/report.json");
        if (!in) throw DataError("no report.json in " + dir);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        reports.push_back(report_from_json(text));
    }
    return reports;
}

void print_arm_table(const std::string& label, const std::vector<RunReport>& runs) {
    if (runs.empty()) return;
    const auto& horizons = runs[0].test_by_horizon;
    for (const char* metric : {"mae", "rmse", "mape"}) {
        std::cout << "  " << label << " " << metric << ":";
        for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
            std::vector<double> vals;
            for (const RunReport& r : runs) {
                const HorizonMetrics& m = r.test_by_horizon[hi].second;
                vals.push_back(std::string(metric) == "mae"
                                   ? m.mae
                                   : (std::string(metric) == "rmse" ? m.rmse : m.mape));
            }
            std::cout << "  h" << horizons[hi].first << "=" << mean_std_cell(vals);
        }
        std::vector<double> avg;
        for (const RunReport& r : runs) {
            avg.push_back(std::string(metric) == "mae"
                              ? r.test_avg.mae
                              : (std::string(metric) == "rmse" ? r.test_avg.rmse
                                                               : r.test_avg.mape));
        }
        std::cout << "  avg=" << mean_std_cell(avg) << "\n";
    }
}

int cmd_report(const std::vector<std::string>& runs_a, const std::vector<std::string>& runs_b,
               const std::string& curves_path) {
    const auto reports_a = load_reports(runs_a);
    std::cout << "arm A (" << reports_a.size() << " runs):\n";
    print_arm_table("A", reports_a);

    if (!curves_path.empty()) {
        std::ofstream out(curves_path);
        if (!out) throw DataError("cannot write curves file: " + curves_path);
        out << "run\tepoch\tl_pred\tl_cl\tval_mae\n";
        auto dump_runs = [&out](const std::vector<std::string>& dirs) {
            for (const std::string& dir : dirs) {
                std::ifstream in(dir + "/metrics.jsonl");
                if (!in) throw DataError("no metrics.jsonl in " + dir);
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    const json j = json::parse(line);
                    out << dir << "\t" << j.value("epoch", 0) << "\t" << j.value("l_pred", 0.0)
                        << "\t" << j.value("l_cl", 0.0) << "\t" << j.value("val_mae", 0.0)
                        << "\n";
                }
            }
        };
        dump_runs(runs_a);
        dump_runs(runs_b);
        std::cout << "loss curves written to " << curves_path << "\n";
    }

    if (!runs_b.empty()) {
        const auto reports_b = load_reports(runs_b);
        std::cout << "arm B (" << reports_b.size() << " runs):\n";
        print_arm_table("B", reports_b);
        const SignificanceReport sig = significance_report(reports_a, reports_b);
        auto show = [](const char* name, const WelchResult& w) {
            std::cout << "  " << name << ": t=" << fmt(w.t, "%.4f") << " p=" << fmt(w.p, "%.6f")
                      << " dof=" << fmt(w.dof, "%.2f")
                      << (w.degenerate ? " (degenerate variance)" : "") << "\n";
        };
        std::cout << "welch t-test (A vs B):\n";
        show("mae", sig.mae);
        show("rmse", sig.rmse);
        show("mape", sig.mape);
    }
    return kExitOk;
}

int cmd_gradcheck(u64 seed, int instances) {
    const auto checks = gradcheck::run_all(seed, instances);
    gradcheck::print_checks(std::cout, checks);
    if (!gradcheck::all_pass(checks)) {
        std::cerr << "error: gradient check failed\n";
        return kExitNumeric;
    }
    std::cout << "all " << checks.size() << " op families within tolerance\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatio-temporal graph forecasting with auxiliary contrastive learning"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset + sensor graph");
    i64 nodes = 15, days = 30, steps_per_day = 48;
    u64 synth_seed = 1;
    double noise = 8.0;
    std::string out_dir = "synth_out";
    synth->add_option("--nodes", nodes, "sensor count")->capture_default_str();
    synth->add_option("--days", days, "days of data")->capture_default_str();
    synth->add_option("--steps-per-day", steps_per_day, "samples per day")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
    synth->add_option("--noise", noise, "noise sigma")->capture_default_str();
    synth->add_option("--out", out_dir, "output directory")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "train per an experiment config");
    std::string config_path;
    std::string scheme_override;
    i64 seed_override = -1;
    i64 seeds = 1;
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--scheme", scheme_override, "override: base_only|joint|pretrain_finetune");
    train->add_option("--seed", seed_override, "override the config seed");
    train->add_option("--seeds", seeds, "run this many replicate seeds")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ckpt_path, split = "test";
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--split", split, "train|val|test")->capture_default_str();

    // report
    auto* report = app.add_subcommand("report", "aggregate run directories");
    std::vector<std::string> runs_a, runs_b;
    std::string curves_path;
    report->add_option("--runs", runs_a, "run directories (arm A)")->required();
    report->add_option("--runs-b", runs_b, "second arm for the significance test");
    report->add_option("--curves", curves_path, "write loss curves TSV here");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
    u64 gc_seed = 7;
    int gc_instances = 20;
    gc->add_option("--seed", gc_seed, "rng seed")->capture_default_str();
    gc->add_option("--instances", gc_instances, "instances per op")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(nodes, days, steps_per_day, synth_seed, noise, out_dir);
        if (train->parsed()) return cmd_train(config_path, scheme_override, seed_override, seeds);
        if (eval->parsed()) return cmd_eval(ckpt_path, split);
        if (report->parsed()) return cmd_report(runs_a, runs_b, curves_path);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_instances);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}
