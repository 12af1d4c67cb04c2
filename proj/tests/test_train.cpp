#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stgcl/config.hpp"
#include "stgcl/train.hpp"

using namespace stgcl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small synthetic experiment everything in this file shares.
struct TinyExperiment {
    TimeSeriesDataset dataset;
    SensorGraph graph;
    EncoderConfig encoder;

    static TinyExperiment make() {
        SynthConfig cfg;
        cfg.nodes = 4;
        cfg.days = 4;
        cfg.steps_per_day = 48;
        cfg.seed = 17;
        cfg.noise_sigma = 6.0;
        SynthResult synth = synth_generate(cfg);
        TimeSeriesDataset ds(std::move(synth.series), 48, 30);
        ds.prepare(SplitRatios{0.6, 0.2, 0.2}, 4, 4);
        EncoderConfig enc;
        enc.dilations = {1, 2};  // receptive field 4
        enc.hidden = 4;
        enc.diffusion_steps = 1;
        enc.dropout = 0.1;
        return TinyExperiment{std::move(ds), std::move(synth.graph), enc};
    }

    TrainContext context(const std::string& out_dir = "") const {
        TrainContext ctx;
        ctx.dataset = &dataset;
        ctx.graph = &graph;
        ctx.encoder = encoder;
        ctx.config_echo = "{\"tiny\":true}";
        ctx.out_dir = out_dir;
        return ctx;
    }

    TrainConfig config(TrainScheme scheme) const {
        TrainConfig cfg;
        cfg.scheme = scheme;
        cfg.level = ContrastLevel::kGraph;
        cfg.lambda = 0.5;
        cfg.tau = 0.1;
        cfg.r_f_minutes = 60.0;
        cfg.epochs = 3;
        cfg.batch = 16;
        cfg.lr = 1e-3;
        cfg.seed = 5;
        cfg.report_horizons = {1, 2, 4};
        cfg.pretrain_epochs = 4;
        cfg.pretrain_patience = 2;
        return cfg;
    }
};

}  // namespace

TEST_CASE("prediction loss basics and loop oracle") {
    rng::Stream s{rng::Key(1)};
    Tensor y({3, 4});
    for (i64 i = 0; i < y.numel(); ++i) y[i] = s.uniform(-5.0, 5.0);
    CHECK(mean_absolute_error(y, y) == 0.0);

    Tensor plus1 = y;
    for (i64 i = 0; i < plus1.numel(); ++i) plus1[i] += 1.0;
    CHECK(mean_absolute_error(plus1, y) == doctest::Approx(1.0).epsilon(1e-14));

    Tensor pred({3, 4});
    for (i64 i = 0; i < pred.numel(); ++i) pred[i] = s.uniform(-5.0, 5.0);
    double oracle = 0.0;
    for (i64 i = 0; i < pred.numel(); ++i) oracle += std::fabs(pred[i] - y[i]);
    oracle /= static_cast<double>(pred.numel());
    CHECK(std::fabs(mean_absolute_error(pred, y) - oracle) <= 1e-12);

    Tensor other({4, 3});
    CHECK_THROWS_AS(mean_absolute_error(other, y), ShapeError);
}

TEST_CASE("metrics: exact values on a scalar case") {
    MetricsAccumulator acc(1, {1});
    Tensor pred({1, 1, 1, 1}, {90.0});
    Tensor target({1, 1, 1, 1}, {100.0});
    acc.add(pred, target);
    const HorizonMetrics m = acc.horizon(1);
    CHECK(m.mae == doctest::Approx(10.0));
    CHECK(m.rmse == doctest::Approx(10.0));
    CHECK(m.mape == doctest::Approx(10.0));  // percent

    MetricsAccumulator perfect(1, {1});
    perfect.add(target, target);
    CHECK(perfect.horizon(1).mae == 0.0);
    CHECK(perfect.horizon(1).rmse == 0.0);
    CHECK(perfect.horizon(1).mape == 0.0);
}

TEST_CASE("metrics: average over steps matches pooled computation") {
    rng::Stream s{rng::Key(2)};
    const i64 m = 3, t = 12, n = 2;
    Tensor pred({m, t, n, 1});
    Tensor target({m, t, n, 1});
    for (i64 i = 0; i < pred.numel(); ++i) {
        target[i] = s.uniform(50.0, 150.0);
        pred[i] = target[i] + s.uniform(-20.0, 20.0);
    }
    MetricsAccumulator acc(t, {3, 6, 12});
    acc.add(pred, target);
    CHECK(acc.average().mae == doctest::Approx(mean_absolute_error(pred, target)).epsilon(1e-12));
}

TEST_CASE("metrics: MAPE support excludes near-zero targets, errors when empty") {
    MetricsAccumulator acc(1, {1});
    Tensor pred({1, 1, 2, 1}, {90.0, 5.0});
    Tensor target({1, 1, 2, 1}, {100.0, 0.0});
    acc.add(pred, target);
    CHECK(acc.horizon(1).mape == doctest::Approx(10.0));  // zero target excluded

    MetricsAccumulator empty(1, {1});
    Tensor zeros({1, 1, 1, 1});
    empty.add(zeros, zeros);
    CHECK_THROWS_AS(empty.horizon(1), DataError);
}

TEST_CASE("welch t-test: identical arms give t=0 p=1") {
    std::vector<double> a = {1.0, 2.0, 3.0};
    const WelchResult r = welch_t_test(a, a);
    CHECK(r.t == 0.0);
    CHECK(r.p == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("welch t-test: zero-variance disjoint arms are flagged degenerate") {
    std::vector<double> a = {1.0, 1.0, 1.0};
    std::vector<double> b = {2.0, 2.0, 2.0};
    const WelchResult r = welch_t_test(a, b);
    CHECK(r.degenerate);
    CHECK(std::isinf(r.t));
    CHECK(r.p == 0.0);
}

TEST_CASE("welch t-test matches a reference computation") {
    // frozen from an independent statistics package on these exact numbers
    std::vector<double> a = {1.1, 2.3, 0.7, 1.9, 1.5};
    std::vector<double> b = {2.0, 2.8, 3.1, 2.2, 2.6};
    const WelchResult r = welch_t_test(a, b);
    CHECK(r.t == doctest::Approx(-3.00723764622445).epsilon(1e-10));
    CHECK(r.p == doctest::Approx(0.019151487182942).epsilon(1e-8));
    CHECK(r.dof == doctest::Approx(7.18065902291119).epsilon(1e-10));
    CHECK(r.mean_a == doctest::Approx(1.5));
    CHECK(r.std_a == doctest::Approx(0.632455532033676).epsilon(1e-10));

    CHECK_THROWS_AS(welch_t_test(std::vector<double>{1.0}, a), DataError);
}

TEST_CASE("lambda sweep constant carries the documented values") {
    CHECK(kLambdaSweep == std::vector<double>{0.01, 0.05, 0.1, 0.5, 1.0});
}

TEST_CASE("joint at lambda=0 reproduces base-only exactly") {
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig base = exp.config(TrainScheme::kBaseOnly);
    TrainConfig joint = exp.config(TrainScheme::kJoint);
    joint.lambda = 0.0;
    const RunReport rb = run_training(exp.context(), base);
    const RunReport rj = run_training(exp.context(), joint);
    REQUIRE(rb.epochs.size() == rj.epochs.size());
    for (std::size_t i = 0; i < rb.epochs.size(); ++i) {
        CHECK(rb.epochs[i].l_pred == rj.epochs[i].l_pred);  // bit-identical
        CHECK(rb.epochs[i].val_mae == rj.epochs[i].val_mae);
        CHECK(rb.epochs[i].l_cl == 0.0);
        CHECK(rj.epochs[i].l_cl == 0.0);
    }
    CHECK(rb.test_avg.mae == rj.test_avg.mae);
}

TEST_CASE("joint training writes artifacts and selects the best epoch") {
    TempDir dir("stgcl_train_test");
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig cfg = exp.config(TrainScheme::kJoint);
    cfg.epochs = 4;
    const RunReport report = run_training(exp.context(dir.str()), cfg);

    REQUIRE(report.epochs.size() == 4);
    // selection correctness: chosen epoch has the minimum validation MAE
    double best = 1e300;
    i64 best_epoch = -1;
    for (const EpochStats& e : report.epochs) {
        if (e.val_mae < best) {
            best = e.val_mae;
            best_epoch = e.epoch;
        }
    }
    CHECK(report.best_epoch == best_epoch);
    CHECK(report.best_val_mae == best);
    for (const EpochStats& e : report.epochs) CHECK(report.best_val_mae <= e.val_mae);

    CHECK(fs::exists(dir.path / "metrics.jsonl"));
    CHECK(fs::exists(dir.path / "report.json"));
    CHECK(fs::exists(dir.path / "ckpt_best.stgc"));

    // the checkpoint reloads into a fresh model and reproduces test MAE
    Checkpoint ckpt = load_checkpoint((dir.path / "ckpt_best.stgc").string());
    StgModel model(exp.encoder, 2, exp.dataset.output_steps(), 123,
                   ModelBlocks{true, true});
    restore_model(model, ckpt);
    MetricsAccumulator acc = evaluate_split(model, exp.dataset, exp.graph, Partition::kTest,
                                            cfg.batch, cfg.report_horizons);
    CHECK(acc.average().mae == doctest::Approx(report.test_avg.mae).epsilon(1e-12));

    // report round trip
    const RunReport loaded = report_from_json(slurp(dir.path / "report.json"));
    CHECK(loaded.best_epoch == report.best_epoch);
    CHECK(loaded.test_avg.mae == doctest::Approx(report.test_avg.mae));
    REQUIRE(loaded.test_by_horizon.size() == 3);
    CHECK(loaded.test_by_horizon[0].first == 1);
}

TEST_CASE("node-level joint training runs end to end") {
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig cfg = exp.config(TrainScheme::kJoint);
    cfg.level = ContrastLevel::kNode;
    cfg.epochs = 2;
    const RunReport report = run_training(exp.context(), cfg);
    CHECK(report.epochs.size() == 2);
    for (const EpochStats& e : report.epochs) CHECK(std::isfinite(e.l_cl));
}

TEST_CASE("identical seed and config give byte-identical metrics files") {
    TempDir dir_a("stgcl_det_a");
    TempDir dir_b("stgcl_det_b");
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig cfg = exp.config(TrainScheme::kJoint);
    run_training(exp.context(dir_a.str()), cfg);
    run_training(exp.context(dir_b.str()), cfg);
    CHECK(slurp(dir_a.path / "metrics.jsonl") == slurp(dir_b.path / "metrics.jsonl"));
}

TEST_CASE("pretrain and fine-tune: artifacts, head discard, early-stop bookkeeping") {
    TempDir dir("stgcl_pf_test");
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig cfg = exp.config(TrainScheme::kPretrainFinetune);
    cfg.epochs = 2;
    const RunReport report = run_training(exp.context(dir.str()), cfg);

    REQUIRE(report.pretrain.has_value());
    CHECK(report.pretrain->epochs_run <= cfg.pretrain_epochs);
    if (report.pretrain->epochs_run < cfg.pretrain_epochs) {
        // early stop fires after exactly `patience` non-improving epochs
        CHECK(report.pretrain->epochs_run ==
              report.pretrain->best_epoch + cfg.pretrain_patience);
    }
    CHECK(fs::exists(dir.path / "pretrain_metrics.jsonl"));
    CHECK(fs::exists(dir.path / "ckpt_pretrain.stgc"));
    CHECK(fs::exists(dir.path / "report.json"));

    // pretrain checkpoint carries encoder + projection but no decoder;
    // the fine-tuned checkpoint carries encoder + decoder but no projection
    Checkpoint pre = load_checkpoint((dir.path / "ckpt_pretrain.stgc").string());
    CHECK(pre.blocks.count("proj.fc1.w") == 1);
    CHECK(pre.blocks.count("decoder.fc1.w") == 0);
    Checkpoint fin = load_checkpoint((dir.path / "ckpt_best.stgc").string());
    CHECK(fin.blocks.count("proj.fc1.w") == 0);
    CHECK(fin.blocks.count("decoder.fc1.w") == 1);
    CHECK(fin.blocks.count("encoder.start.w") == 1);
}

TEST_CASE("frozen-encoder fine-tuning leaves the encoder untouched and still learns") {
    TempDir dir("stgcl_frozen_test");
    TinyExperiment exp = TinyExperiment::make();
    TrainConfig cfg = exp.config(TrainScheme::kPretrainFinetune);
    cfg.freeze_encoder = true;
    cfg.epochs = 10;
    const RunReport report = run_training(exp.context(dir.str()), cfg);

    Checkpoint pre = load_checkpoint((dir.path / "ckpt_pretrain.stgc").string());
    Checkpoint fin = load_checkpoint((dir.path / "ckpt_best.stgc").string());
    for (const auto& [name, tensor] : fin.blocks) {
        if (name.rfind("encoder.", 0) != 0) continue;
        const Tensor& before = pre.blocks.at(name);
        for (i64 i = 0; i < tensor.numel(); ++i) CHECK(tensor[i] == before[i]);
    }
    // decoder-only training still reduces the training loss
    double best_later = 1e300;
    for (std::size_t i = 1; i < report.epochs.size(); ++i) {
        best_later = std::min(best_later, report.epochs[i].l_pred);
    }
    CHECK(best_later < report.epochs.front().l_pred);
}

TEST_CASE("significance report wires per-seed MAE into the t-test") {
    auto mk = [](double mae) {
        RunReport r;
        r.test_avg = HorizonMetrics{mae, mae + 1.0, mae / 2.0};
        return r;
    };
    std::vector<RunReport> a = {mk(10.0), mk(10.5), mk(9.5)};
    std::vector<RunReport> b = {mk(12.0), mk(12.5), mk(11.5)};
    const SignificanceReport rep = significance_report(a, b);
    CHECK(rep.mae.mean_a == doctest::Approx(10.0));
    CHECK(rep.mae.mean_b == doctest::Approx(12.0));
    CHECK(rep.mae.t < 0.0);
    CHECK(rep.mae.p < 0.05);
}

TEST_CASE("experiment config: strict validation lists every unknown key") {
    nlohmann::json doc = {
        {"dataset", {{"synth", {{"nodes", 6}, {"days", 3}, {"bogus", 1}}}}},
        {"train", {{"scheme", "joint"}, {"typo_key", 2}}},
        {"whole_block", 5},
    };
    try {
        parse_experiment_config(doc);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dataset.synth.bogus") != std::string::npos);
        CHECK(msg.find("train.typo_key") != std::string::npos);
        CHECK(msg.find("whole_block") != std::string::npos);
    }
}

TEST_CASE("experiment config: defaults, echo, and preparation") {
    nlohmann::json doc = {
        {"dataset", {{"synth", {{"nodes", 5}, {"days", 4}, {"steps_per_day", 48}, {"seed", 9}}}}},
        {"window", {{"input_steps", 4}, {"output_steps", 4}}},
        {"model", {{"preset", "desk"}, {"dilations", {1, 2}}, {"hidden", 4}}},
        {"train", {{"scheme", "joint"}, {"epochs", 2}, {"batch", 8}}},
        {"output", "somewhere"},
    };
    ExperimentConfig cfg = parse_experiment_config(doc);
    CHECK(cfg.train.lambda == 0.5);
    CHECK(cfg.train.tau == 0.1);
    CHECK(cfg.train.r_f_minutes == 60.0);
    REQUIRE(cfg.train.augment.size() == 1);
    CHECK(cfg.train.augment[0].method == AugmentMethod::kInputMask);
    CHECK(cfg.train.augment[0].rate == 0.01);
    CHECK(cfg.encoder.hidden == 4);

    const nlohmann::json echo = cfg.echo();
    CHECK(echo.at("train").at("lambda") == 0.5);
    CHECK(echo.at("model").at("hidden") == 4);
    // the echo itself parses back cleanly (minus the unknown-key question)
    ExperimentConfig again = parse_experiment_config(echo);
    CHECK(again.train.batch == cfg.train.batch);

    PreparedExperiment prepared = prepare_experiment(cfg);
    CHECK(prepared.dataset.nodes() == 5);
    CHECK(prepared.graph.n == 5);
    CHECK(prepared.dataset.input_steps() == 4);
}

TEST_CASE("experiment config: series without edges is rejected") {
    nlohmann::json doc = {{"dataset", {{"series", "foo.stgs"}}}};
    CHECK_THROWS_AS(parse_experiment_config(doc), ConfigError);
}
