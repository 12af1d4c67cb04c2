#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "stgcl/train.hpp"

namespace stgcl {

// One JSON document describes an experiment end to end. Unknown keys are
// rejected; validation errors list every offending key at once.
struct DatasetSource {
    std::optional<std::string> series_path;  // STGS binary or CSV
    std::string format = "stgs";             // "stgs" | "csv"
    std::optional<std::string> edges_path;
    i64 csv_steps_per_day = 288;
    i64 csv_interval_min = 5;
    std::optional<SynthConfig> synth;
};

struct ExperimentConfig {
    DatasetSource dataset;
    SplitRatios split;
    i64 input_steps = 12;
    i64 output_steps = 12;
    double graph_threshold = 0.1;
    EncoderConfig encoder;
    TrainConfig train;
    std::string output_dir;

    // effective configuration with defaults materialized
    nlohmann::json echo() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::string& path);

struct PreparedExperiment {
    TimeSeriesDataset dataset;
    SensorGraph graph;
};

// Loads or synthesizes the series, builds the sensor graph, fits z-score
// stats, and windows each partition.
PreparedExperiment prepare_experiment(const ExperimentConfig& config);

}  // namespace stgcl
