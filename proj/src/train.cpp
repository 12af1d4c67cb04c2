#include "stgcl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace stgcl {

using nlohmann::json;

TrainScheme parse_scheme(const std::string& name) {
    if (name == "base_only") return TrainScheme::kBaseOnly;
    if (name == "joint") return TrainScheme::kJoint;
    if (name == "pretrain_finetune") return TrainScheme::kPretrainFinetune;
    throw ConfigError("unknown training scheme '" + name + "'");
}

std::string scheme_name(TrainScheme s) {
    switch (s) {
        case TrainScheme::kBaseOnly: return "base_only";
        case TrainScheme::kJoint: return "joint";
        case TrainScheme::kPretrainFinetune: return "pretrain_finetune";
    }
    return "?";
}

ContrastLevel parse_level(const std::string& name) {
    if (name == "node") return ContrastLevel::kNode;
    if (name == "graph") return ContrastLevel::kGraph;
    throw ConfigError("unknown contrast level '" + name + "'");
}

std::string level_name(ContrastLevel l) {
    return l == ContrastLevel::kNode ? "node" : "graph";
}

namespace {

namespace fs = std::filesystem;

struct JsonlWriter {
    std::ofstream out;

    explicit JsonlWriter(const std::string& path) {
        if (path.empty()) return;
        out.open(path, std::ios::trunc);
        if (!out) throw DataError("cannot write metrics file: " + path);
    }
    void line(const json& j) {
        if (out.is_open()) {
            out << j.dump() << "\n";
            out.flush();
        }
    }
};

std::vector<i32> batch_slots(const InstanceBatch& batch) {
    std::vector<i32> slots;
    slots.reserve(batch.items.size());
    for (const Instance& inst : batch.items) slots.push_back(inst.start_slot);
    return slots;
}

[[noreturn]] void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const ShapeError& e) {
        throw ShapeError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    }
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
}

// Contrastive term for one pair of representation batches.
Var contrast_loss(Tape& tape, StgModel& model, Var h1, Var h2, ContrastLevel level,
                  const NegativeSets& negatives, double tau) {
    if (level == ContrastLevel::kGraph) {
        Var z1 = model.project(tape, model.readout(tape, h1));
        Var z2 = model.project(tape, model.readout(tape, h2));
        return graph_infonce(tape, z1, z2, negatives, tau);
    }
    Var z1 = model.project_nodes(tape, h1);
    Var z2 = model.project_nodes(tape, h2);
    return node_infonce(tape, z1, z2, negatives, tau);
}

struct ForecastEpoch {
    double l_pred = 0.0;
    double l_cl = 0.0;
};

}  // namespace

MetricsAccumulator evaluate_split(StgModel& model, const TimeSeriesDataset& dataset,
                                  const SensorGraph& graph, Partition partition, i64 batch_size,
                                  const std::vector<i64>& report_horizons) {
    MetricsAccumulator acc(dataset.output_steps(), report_horizons);
    const auto batches = dataset.batch_plan(partition, batch_size, 0, 0, false, false);
    rng::Stream unused{rng::Key(0)};
    for (const auto& items : batches) {
        InstanceBatch batch = dataset.make_batch(items);
        Tape tape(Tape::Mode::kEval);
        Var inputs = tape.constant(batch.inputs);
        Var h = model.encode(tape, inputs, graph.norm_adjacency, unused);
        Var preds = model.decode(tape, h, dataset.zscore());
        acc.add(tape.value(preds), batch.targets);
    }
    return acc;
}

namespace {

// Shared loop for base-only training, joint training, and fine-tuning.
// `contrast` enables the auxiliary branch; `adam` carries the parameter
// groups (fine-tuning uses per-block learning rates).
RunReport forecast_loop(const TrainContext& ctx, const TrainConfig& cfg, StgModel& model,
                        Adam& adam, bool contrast, const std::string& metrics_path,
                        const std::string& ckpt_path) {
    const TimeSeriesDataset& ds = *ctx.dataset;
    const SensorGraph& graph = *ctx.graph;
    const rng::Key root(cfg.seed);
    const auto t_start = std::chrono::steady_clock::now();

    FilterSpec fspec{cfg.r_f_minutes, cfg.spatial_filter, ds.steps_per_day(), ds.interval_min()};

    RunReport report;
    report.seed = cfg.seed;
    JsonlWriter metrics(metrics_path);

    double best_val = 1e300;
    std::map<std::string, Tensor> best_state;
    i64 since_best = 0;

    for (i64 epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = ds.batch_plan(Partition::kTrain, cfg.batch, cfg.seed, epoch,
                                           /*shuffle=*/true, contrast);
        ForecastEpoch sums;
        const rng::Key epoch_aug_key = root.fold("aug").fold(static_cast<u64>(epoch));
        for (std::size_t step = 0; step < batches.size(); ++step) {
            try {
                InstanceBatch batch = ds.make_batch(batches[step]);
                Tape tape(Tape::Mode::kTrain);
                Var inputs = tape.constant(batch.inputs);
                rng::Stream drop_main(root.fold("dropout")
                                          .fold(static_cast<u64>(epoch))
                                          .fold(static_cast<u64>(step))
                                          .fold(u64{0}));
                Var h1 = model.encode(tape, inputs, graph.norm_adjacency, drop_main);
                Var preds = model.decode(tape, h1, ds.zscore());
                Var target = tape.constant(batch.targets);
                Var l_pred = tape.mean_all(tape.abs_val(tape.sub(preds, target)));
                Var total = l_pred;
                double l_cl_value = 0.0;
                if (contrast) {
                    const rng::Key batch_key = root.fold("augbatch")
                                                   .fold(static_cast<u64>(epoch))
                                                   .fold(static_cast<u64>(step));
                    AugmentedBatch aug = apply_augmentations(cfg.augment, batch, ds, graph,
                                                             epoch_aug_key, batch_key);
                    const Tensor& adj2 =
                        aug.graph.has_value() ? aug.graph->norm_adjacency : graph.norm_adjacency;
                    rng::Stream drop_aug(root.fold("dropout")
                                             .fold(static_cast<u64>(epoch))
                                             .fold(static_cast<u64>(step))
                                             .fold(u64{1}));
                    Var inputs2 = tape.constant(aug.inputs);
                    Var h2 = model.encode(tape, inputs2, adj2, drop_aug);
                    // filtering always runs on the original graph
                    const NegativeSets negatives = build_negative_sets(
                        batch_slots(batch), fspec,
                        cfg.level == ContrastLevel::kNode ? &graph : nullptr);
                    Var l_cl = contrast_loss(tape, model, h1, h2, cfg.level, negatives, cfg.tau);
                    l_cl_value = tape.value(l_cl).item();
                    total = tape.add(l_pred, tape.scale(l_cl, cfg.lambda));
                }
                sums.l_pred += tape.value(l_pred).item();
                sums.l_cl += l_cl_value;
                tape.backward(total);
                adam.step();
            } catch (...) {
                rethrow_with_context("epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(step));
            }
        }
        const double n_steps = static_cast<double>(batches.size());
        EpochStats stats;
        stats.epoch = epoch;
        stats.l_pred = sums.l_pred / n_steps;
        stats.l_cl = sums.l_cl / n_steps;
        stats.val_mae = evaluate_split(model, ds, graph, Partition::kVal, cfg.batch,
                                       cfg.report_horizons)
                            .mean_abs_error();
        report.epochs.push_back(stats);
        metrics.line(json{{"epoch", stats.epoch},
                          {"l_pred", stats.l_pred},
                          {"l_cl", stats.l_cl},
                          {"val_mae", stats.val_mae}});

        if (stats.val_mae < best_val) {
            best_val = stats.val_mae;
            report.best_epoch = epoch;
            best_state = model.state();
            since_best = 0;
            if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model, ctx.config_echo);
        } else {
            ++since_best;
            if (cfg.patience > 0 && since_best >= cfg.patience) break;
        }
    }
    report.best_val_mae = best_val;

    // test metrics with the selected checkpoint
    model.load_state(best_state);
    MetricsAccumulator test_acc =
        evaluate_split(model, ds, graph, Partition::kTest, cfg.batch, cfg.report_horizons);
    for (i64 h : cfg.report_horizons) {
        report.test_by_horizon.emplace_back(h, test_acc.horizon(h));
    }
    report.test_avg = test_acc.average();
    report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

PretrainInfo pretrain_loop(const TrainContext& ctx, const TrainConfig& cfg, StgModel& model,
                           const std::string& metrics_path, const std::string& ckpt_path) {
    const TimeSeriesDataset& ds = *ctx.dataset;
    const SensorGraph& graph = *ctx.graph;
    const rng::Key root(cfg.seed);
    FilterSpec fspec{cfg.r_f_minutes, cfg.spatial_filter, ds.steps_per_day(), ds.interval_min()};

    std::vector<Parameter*> params = model.encoder_params();
    for (Parameter* p : model.projection_params()) params.push_back(p);
    Adam adam({{params, cfg.lr}}, AdamConfig{.clip_norm = cfg.clip_norm, .clip = cfg.clip_norm > 0});

    JsonlWriter metrics(metrics_path);
    PretrainInfo info;
    double best_loss = 1e300;
    std::map<std::string, Tensor> best_state;
    i64 since_best = 0;

    for (i64 epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
        const auto batches =
            ds.batch_plan(Partition::kTrain, cfg.batch, cfg.seed, epoch, true, true);
        double sum_cl = 0.0;
        for (std::size_t step = 0; step < batches.size(); ++step) {
            try {
                InstanceBatch batch = ds.make_batch(batches[step]);
                Tape tape(Tape::Mode::kTrain);
                // both views are augmented in the two-stage scheme
                Var h[2];
                for (u64 view = 0; view < 2; ++view) {
                    const rng::Key view_key = root.fold("view").fold(view);
                    AugmentedBatch aug = apply_augmentations(
                        cfg.augment, batch, ds, graph,
                        view_key.fold("aug").fold(static_cast<u64>(epoch)),
                        view_key.fold("augbatch")
                            .fold(static_cast<u64>(epoch))
                            .fold(static_cast<u64>(step)));
                    const Tensor& adj =
                        aug.graph.has_value() ? aug.graph->norm_adjacency : graph.norm_adjacency;
                    rng::Stream drop(root.fold("dropout")
                                         .fold(static_cast<u64>(epoch))
                                         .fold(static_cast<u64>(step))
                                         .fold(view));
                    Var inputs = tape.constant(aug.inputs);
                    h[view] = model.encode(tape, inputs, adj, drop);
                }
                const NegativeSets negatives = build_negative_sets(
                    batch_slots(batch), fspec,
                    cfg.level == ContrastLevel::kNode ? &graph : nullptr);
                Var l_cl = contrast_loss(tape, model, h[0], h[1], cfg.level, negatives, cfg.tau);
                sum_cl += tape.value(l_cl).item();
                tape.backward(l_cl);
                adam.step();
            } catch (...) {
                rethrow_with_context("pretrain epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(step));
            }
        }
        const double train_loss = sum_cl / static_cast<double>(batches.size());
        metrics.line(json{{"epoch", epoch}, {"l_cl", train_loss}});
        info.epochs_run = epoch;

        // early stop on the training loss
        if (train_loss < best_loss) {
            best_loss = train_loss;
            info.best_epoch = epoch;
            best_state = model.state();
            since_best = 0;
            if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model, ctx.config_echo);
        } else {
            ++since_best;
            if (since_best >= cfg.pretrain_patience) break;
        }
    }
    info.best_loss = best_loss;
    model.load_state(best_state);
    return info;
}

}  // namespace

RunReport run_training(const TrainContext& ctx, const TrainConfig& cfg) {
    if (ctx.dataset == nullptr || ctx.graph == nullptr) {
        throw ConfigError("run_training: dataset and graph must be set");
    }
    if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    ensure_dir(ctx.out_dir);
    const std::string prefix = ctx.out_dir.empty() ? "" : ctx.out_dir + "/";

    switch (cfg.scheme) {
        case TrainScheme::kBaseOnly:
        case TrainScheme::kJoint: {
            // at lambda = 0 the auxiliary branch is skipped entirely, which
            // makes joint(lambda=0) and base_only share one trace
            const bool contrast =
                cfg.scheme == TrainScheme::kJoint && cfg.lambda > 0.0;
            StgModel model(ctx.encoder, 2, ctx.dataset->output_steps(), cfg.seed,
                           ModelBlocks{.decoder = true, .projection = contrast});
            Adam adam({{model.all_params(), cfg.lr}},
                      AdamConfig{.clip_norm = cfg.clip_norm, .clip = cfg.clip_norm > 0});
            RunReport report =
                forecast_loop(ctx, cfg, model, adam, contrast,
                              prefix.empty() ? "" : prefix + "metrics.jsonl",
                              prefix.empty() ? "" : prefix + "ckpt_best.stgc");
            if (!prefix.empty()) {
                std::ofstream out(prefix + "report.json");
                out << report_to_json(report, ctx.config_echo) << "\n";
            }
            return report;
        }
        case TrainScheme::kPretrainFinetune: {
            // stage 1: contrastive pretraining of encoder + projection head
            StgModel pre_model(ctx.encoder, 2, ctx.dataset->output_steps(), cfg.seed,
                               ModelBlocks{.decoder = false, .projection = true});
            PretrainInfo info =
                pretrain_loop(ctx, cfg, pre_model,
                              prefix.empty() ? "" : prefix + "pretrain_metrics.jsonl",
                              prefix.empty() ? "" : prefix + "ckpt_pretrain.stgc");

            // stage 2: fine-tune with a fresh decoder; the projection head
            // is discarded and absent from the optimizer
            StgModel model(ctx.encoder, 2, ctx.dataset->output_steps(), cfg.seed,
                           ModelBlocks{.decoder = true, .projection = false});
            model.load_state(pre_model.state(), /*encoder_only=*/true);
            std::vector<Adam::Group> groups;
            if (!cfg.freeze_encoder) {
                groups.push_back({model.encoder_params(), cfg.finetune_encoder_lr});
            }
            groups.push_back({model.decoder_params(), cfg.finetune_decoder_lr});
            Adam adam(std::move(groups),
                      AdamConfig{.clip_norm = cfg.clip_norm, .clip = cfg.clip_norm > 0});
            RunReport report =
                forecast_loop(ctx, cfg, model, adam, /*contrast=*/false,
                              prefix.empty() ? "" : prefix + "metrics.jsonl",
                              prefix.empty() ? "" : prefix + "ckpt_best.stgc");
            report.pretrain = info;
            if (!prefix.empty()) {
                std::ofstream out(prefix + "report.json");
                out << report_to_json(report, ctx.config_echo) << "\n";
            }
            return report;
        }
    }
    throw ConfigError("run_training: unknown scheme");
}

std::vector<RunReport> run_multi_seed(const TrainContext& ctx, const TrainConfig& config,
                                      const std::vector<u64>& seeds) {
    if (seeds.empty()) throw ConfigError("run_multi_seed: need at least one seed");
    std::size_t max_threads = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("STGCL_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) max_threads = static_cast<std::size_t>(cap);
    }
    max_threads = std::min(max_threads, seeds.size());

    std::vector<RunReport> reports(seeds.size());
    std::vector<std::string> errors(seeds.size());
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t idx;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= seeds.size()) return;
                idx = next++;
            }
            TrainContext run_ctx = ctx;
            if (!ctx.out_dir.empty()) {
                run_ctx.out_dir = ctx.out_dir + "/seed" + std::to_string(seeds[idx]);
            }
            TrainConfig run_cfg = config;
            run_cfg.seed = seeds[idx];
            try {
                reports[idx] = run_training(run_ctx, run_cfg);
            } catch (const std::exception& e) {
                errors[idx] = e.what();
            }
        }
    };
    if (max_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < max_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!errors[i].empty()) {
            throw NumericError("seed " + std::to_string(seeds[i]) + " failed: " + errors[i]);
        }
    }
    return reports;
}

SignificanceReport significance_report(const std::vector<RunReport>& runs_a,
                                       const std::vector<RunReport>& runs_b) {
    auto collect = [](const std::vector<RunReport>& runs, auto proj) {
        std::vector<double> out;
        out.reserve(runs.size());
        for (const RunReport& r : runs) out.push_back(proj(r));
        return out;
    };
    const auto mae_a = collect(runs_a, [](const RunReport& r) { return r.test_avg.mae; });
    const auto mae_b = collect(runs_b, [](const RunReport& r) { return r.test_avg.mae; });
    const auto rmse_a = collect(runs_a, [](const RunReport& r) { return r.test_avg.rmse; });
    const auto rmse_b = collect(runs_b, [](const RunReport& r) { return r.test_avg.rmse; });
    const auto mape_a = collect(runs_a, [](const RunReport& r) { return r.test_avg.mape; });
    const auto mape_b = collect(runs_b, [](const RunReport& r) { return r.test_avg.mape; });
    SignificanceReport rep;
    rep.mae = welch_t_test(mae_a, mae_b);
    rep.rmse = welch_t_test(rmse_a, rmse_b);
    rep.mape = welch_t_test(mape_a, mape_b);
    return rep;
}

// ===========================================================================
// Report serialization
// ===========================================================================

namespace {

json horizon_json(const HorizonMetrics& m) {
    return json{{"mae", m.mae}, {"rmse", m.rmse}, {"mape", m.mape}};
}

HorizonMetrics horizon_from_json(const json& j) {
    HorizonMetrics m;
    m.mae = j.at("mae").get<double>();
    m.rmse = j.at("rmse").get<double>();
    m.mape = j.at("mape").get<double>();
    return m;
}

}  // namespace

std::string report_to_json(const RunReport& report, const std::string& config_echo) {
    json j;
    j["version"] = kVersion;
    j["seed"] = report.seed;
    j["config"] = config_echo.empty() ? json::object() : json::parse(config_echo);
    j["best_epoch"] = report.best_epoch;
    j["best_val_mae"] = report.best_val_mae;
    j["epochs_run"] = report.epochs.size();
    json horizons = json::object();
    for (const auto& [h, m] : report.test_by_horizon) {
        horizons["h" + std::to_string(h)] = horizon_json(m);
    }
    j["test"] = {{"by_horizon", horizons}, {"avg", horizon_json(report.test_avg)}};
    j["wall_clock_sec"] = report.wall_clock_sec;
    if (report.pretrain.has_value()) {
        j["pretrain"] = {{"epochs_run", report.pretrain->epochs_run},
                         {"best_epoch", report.pretrain->best_epoch},
                         {"best_loss", report.pretrain->best_loss}};
    }
    return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    RunReport r;
    r.seed = j.at("seed").get<u64>();
    r.best_epoch = j.at("best_epoch").get<i64>();
    r.best_val_mae = j.at("best_val_mae").get<double>();
    for (const auto& [key, value] : j.at("test").at("by_horizon").items()) {
        r.test_by_horizon.emplace_back(std::stoll(key.substr(1)), horizon_from_json(value));
    }
    std::sort(r.test_by_horizon.begin(), r.test_by_horizon.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    r.test_avg = horizon_from_json(j.at("test").at("avg"));
    r.wall_clock_sec = j.value("wall_clock_sec", 0.0);
    if (j.contains("pretrain")) {
        PretrainInfo info;
        info.epochs_run = j["pretrain"].at("epochs_run").get<i64>();
        info.best_epoch = j["pretrain"].at("best_epoch").get<i64>();
        info.best_loss = j["pretrain"].at("best_loss").get<double>();
        r.pretrain = info;
    }
    return r;
}

}  // namespace stgcl
