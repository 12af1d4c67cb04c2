#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stgcl/graph.hpp"
#include "stgcl/tensor.hpp"

namespace stgcl {

struct ZScore {
    double mean = 0.0;
    double std = 1.0;

    double apply(double x) const { return (x - mean) / std; }
    double invert(double z) const { return z * std + mean; }
};

struct SplitCounts {
    i64 train = 0;
    i64 val = 0;
    i64 test = 0;
    i64 total() const { return train + val + test; }
};

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

enum class Partition : int { kTrain = 0, kVal = 1, kTest = 2 };

// A windowed forecasting instance. The input covers steps
// [abs_start, abs_start + S); the target covers [abs_start + S, abs_start + S + T).
struct Instance {
    i64 abs_start = 0;
    Partition partition = Partition::kTrain;
    i32 start_slot = 0;     // abs_start mod steps_per_day
    bool has_next = false;  // an instance starting at abs_start+1 fits the partition
};

struct InstanceBatch {
    std::vector<Instance> items;
    Tensor inputs;   // (M,S,N,2): z-scored target + time-of-day in [0,1)
    Tensor targets;  // (M,T,N,1): original scale
    i64 size() const { return static_cast<i64>(items.size()); }
};

class TimeSeriesDataset {
public:
    // series has shape (T_total, N)
    TimeSeriesDataset(Tensor series, i64 steps_per_day, i64 interval_min);

    // Fits z-score stats on the train partition only and builds the
    // per-partition instance lists.
    void prepare(SplitRatios ratios, i64 input_steps, i64 output_steps);

    i64 nodes() const { return series_.shape()[1]; }
    i64 total_steps() const { return series_.shape()[0]; }
    i64 steps_per_day() const { return steps_per_day_; }
    i64 interval_min() const { return interval_min_; }
    i64 input_steps() const { return input_steps_; }
    i64 output_steps() const { return output_steps_; }
    const Tensor& series() const { return series_; }
    const ZScore& zscore() const;
    const SplitCounts& splits() const;

    const std::vector<Instance>& instances(Partition p) const;

    // Raw and normalized windows (length rows x N), bounds-checked.
    Tensor raw_window(i64 abs_start, i64 length) const;
    Tensor normalized_window(i64 abs_start, i64 length) const;

    // Assembles the (M,S,N,2) inputs and (M,T,N,1) targets for a batch.
    InstanceBatch make_batch(const std::vector<Instance>& items) const;

    // Epoch-deterministic shuffled batches; the final short batch is kept,
    // except that a trailing singleton is merged into the previous batch
    // when contrast is enabled (contrast needs at least one candidate).
    std::vector<std::vector<Instance>> batch_plan(Partition p, i64 batch_size, u64 seed,
                                                  i64 epoch, bool shuffle,
                                                  bool contrast_enabled) const;

private:
    void check_prepared() const;

    Tensor series_;
    i64 steps_per_day_ = 0;
    i64 interval_min_ = 0;
    i64 input_steps_ = 0;
    i64 output_steps_ = 0;
    bool prepared_ = false;
    ZScore zscore_{};
    SplitCounts splits_{};
    std::vector<Instance> instances_[3];
};

// floor/floor/remainder split arithmetic
SplitCounts split_steps(i64 total_steps, SplitRatios ratios, i64 input_steps, i64 output_steps);

i64 window_count(i64 partition_steps, i64 input_steps, i64 output_steps);

// ---------------------------------------------------------------------------
// Synthetic data: daily sinusoid + weekly modulation + graph-correlated
// component + i.i.d. Gaussian noise. Deterministic given the seed.
// ---------------------------------------------------------------------------
struct SynthConfig {
    i64 nodes = 15;
    i64 days = 30;
    i64 steps_per_day = 48;
    u64 seed = 1;
    double level = 100.0;
    double daily_amp = 30.0;
    double weekly_amp = 10.0;
    double mix_rho = 0.4;       // weight of the graph-smoothed component
    double noise_sigma = 8.0;
    double kernel_threshold = 0.1;
};

struct SynthResult {
    Tensor series;              // (days*steps_per_day, nodes)
    std::vector<Edge> edges;    // pairwise distances of the latent geometry
    SensorGraph graph;
};

// Base signal of one node before graph mixing and noise (exposed so tests
// can evaluate the generator formula pointwise).
double synth_base_value(const SynthConfig& config, i64 node, i64 step);

SynthResult synth_generate(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Serialization. Binary series format:
//   magic "STGS", version u16, N u32, T_total u32, steps_per_day u32,
//   interval_min u16, then row-major little-endian float64 (T_total x N).
// ---------------------------------------------------------------------------
void save_series(const std::string& path, const Tensor& series, i64 steps_per_day,
                 i64 interval_min);
TimeSeriesDataset load_series(const std::string& path);

// CSV import: header row of node ids, one row of values per step.
TimeSeriesDataset load_series_csv(const std::string& path, i64 steps_per_day, i64 interval_min);

}  // namespace stgcl
