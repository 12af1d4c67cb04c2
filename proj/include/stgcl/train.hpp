#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stgcl/augment.hpp"
#include "stgcl/contrast.hpp"
#include "stgcl/data.hpp"
#include "stgcl/metrics.hpp"
#include "stgcl/model.hpp"

namespace stgcl {

enum class TrainScheme { kBaseOnly, kJoint, kPretrainFinetune };

TrainScheme parse_scheme(const std::string& name);
std::string scheme_name(TrainScheme s);
std::string level_name(ContrastLevel l);
ContrastLevel parse_level(const std::string& name);

// The lambda values worth sweeping when tuning the trade-off weight.
inline const std::vector<double> kLambdaSweep = {0.01, 0.05, 0.1, 0.5, 1.0};

struct TrainConfig {
    TrainScheme scheme = TrainScheme::kJoint;
    ContrastLevel level = ContrastLevel::kGraph;
    double lambda = 0.5;
    double tau = 0.1;
    double r_f_minutes = 60.0;
    bool spatial_filter = true;
    std::vector<AugmentSpec> augment = {AugmentSpec{AugmentMethod::kInputMask, 0.01, 20}};
    i64 epochs = 30;
    i64 batch = 64;
    double lr = 1e-3;
    double clip_norm = 5.0;
    i64 patience = 0;  // 0 disables early stopping on validation MAE
    u64 seed = 1;
    // pretraining & fine-tuning
    i64 pretrain_epochs = 100;
    i64 pretrain_patience = 10;
    double finetune_encoder_lr = 1e-4;
    double finetune_decoder_lr = 1e-3;
    bool freeze_encoder = false;
    std::vector<i64> report_horizons = {3, 6, 12};
};

struct EpochStats {
    i64 epoch = 0;
    double l_pred = 0.0;
    double l_cl = 0.0;  // may be negative: the denominator excludes the numerator
    double val_mae = 0.0;
};

struct PretrainInfo {
    i64 epochs_run = 0;
    i64 best_epoch = 0;
    double best_loss = 0.0;
};

struct RunReport {
    std::vector<EpochStats> epochs;
    i64 best_epoch = -1;
    double best_val_mae = 0.0;
    std::vector<std::pair<i64, HorizonMetrics>> test_by_horizon;
    HorizonMetrics test_avg;
    double wall_clock_sec = 0.0;
    u64 seed = 0;
    std::optional<PretrainInfo> pretrain;
};

struct TrainContext {
    const TimeSeriesDataset* dataset = nullptr;
    const SensorGraph* graph = nullptr;
    EncoderConfig encoder;
    std::string config_echo;  // JSON text embedded in reports and checkpoints
    std::string out_dir;      // empty: keep everything in memory
};

// Dispatches on the scheme: base-only / joint training, or contrastive
// pretraining followed by fine-tuning. Artifacts written to out_dir:
// metrics.jsonl, report.json, ckpt_best.stgc (plus pretrain_metrics.jsonl
// and ckpt_pretrain.stgc for the two-stage scheme).
RunReport run_training(const TrainContext& ctx, const TrainConfig& config);

// Evaluates a model on one partition; predictions on the original scale.
MetricsAccumulator evaluate_split(StgModel& model, const TimeSeriesDataset& dataset,
                                  const SensorGraph& graph, Partition partition, i64 batch_size,
                                  const std::vector<i64>& report_horizons);

// Multiple replicate runs; worker threads capped by STGCL_THREADS.
std::vector<RunReport> run_multi_seed(const TrainContext& ctx, const TrainConfig& config,
                                      const std::vector<u64>& seeds);

// Welch t-tests on per-seed test metrics (averaged over all horizons).
struct SignificanceReport {
    WelchResult mae;
    WelchResult rmse;
    WelchResult mape;
};

SignificanceReport significance_report(const std::vector<RunReport>& runs_a,
                                       const std::vector<RunReport>& runs_b);

std::string report_to_json(const RunReport& report, const std::string& config_echo);
RunReport report_from_json(const std::string& text);

}  // namespace stgcl
