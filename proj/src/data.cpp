#include "stgcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stgcl {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

i64 partition_offset(const SplitCounts& s, Partition p) {
    switch (p) {
        case Partition::kTrain: return 0;
        case Partition::kVal: return s.train;
        case Partition::kTest: return s.train + s.val;
    }
    return 0;
}

i64 partition_length(const SplitCounts& s, Partition p) {
    switch (p) {
        case Partition::kTrain: return s.train;
        case Partition::kVal: return s.val;
        case Partition::kTest: return s.test;
    }
    return 0;
}

}  // namespace

// ===========================================================================
// Split arithmetic
// ===========================================================================

SplitCounts split_steps(i64 total_steps, SplitRatios ratios, i64 input_steps, i64 output_steps) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
    }
    SplitCounts c;
    c.train = static_cast<i64>(std::floor(ratios.train * static_cast<double>(total_steps)));
    c.val = static_cast<i64>(std::floor(ratios.val * static_cast<double>(total_steps)));
    c.test = total_steps - c.train - c.val;
    const i64 min_len = input_steps + output_steps;
    if (c.train < min_len || c.val < min_len || c.test < min_len) {
        throw DataError("split: a partition is shorter than one window (S+T=" +
                        std::to_string(min_len) + "): train=" + std::to_string(c.train) +
                        " val=" + std::to_string(c.val) + " test=" + std::to_string(c.test));
    }
    return c;
}

i64 window_count(i64 partition_steps, i64 input_steps, i64 output_steps) {
    return partition_steps - (input_steps + output_steps) + 1;
}

// ===========================================================================
// TimeSeriesDataset
// ===========================================================================

TimeSeriesDataset::TimeSeriesDataset(Tensor series, i64 steps_per_day, i64 interval_min)
    : series_(std::move(series)), steps_per_day_(steps_per_day), interval_min_(interval_min) {
    if (series_.ndim() != 2) {
        throw DataError("series must be 2-d (steps, nodes), got " + shape_str(series_.shape()));
    }
    if (steps_per_day_ < 1 || interval_min_ < 1 || steps_per_day_ * interval_min_ != 1440) {
        throw DataError("steps_per_day * interval_min must equal 1440, got " +
                        std::to_string(steps_per_day_) + " * " + std::to_string(interval_min_));
    }
    if (!series_.finite()) throw DataError("series contains non-finite values");
}

void TimeSeriesDataset::prepare(SplitRatios ratios, i64 input_steps, i64 output_steps) {
    if (input_steps < 1 || output_steps < 1) {
        throw ConfigError("window lengths must be positive");
    }
    input_steps_ = input_steps;
    output_steps_ = output_steps;
    splits_ = split_steps(total_steps(), ratios, input_steps, output_steps);

    // z-score stats from the train partition only
    const i64 n = nodes();
    const i64 train_values = splits_.train * n;
    double sum = 0.0;
    for (i64 i = 0; i < train_values; ++i) sum += series_[i];
    const double mean = sum / static_cast<double>(train_values);
    double var = 0.0;
    for (i64 i = 0; i < train_values; ++i) {
        var += (series_[i] - mean) * (series_[i] - mean);
    }
    var /= static_cast<double>(train_values);
    const double std_dev = std::sqrt(var);
    if (std_dev == 0.0) throw DataError("z-score: training series is constant");
    zscore_ = ZScore{mean, std_dev};

    // per-partition windows; none crosses a partition boundary
    for (int p = 0; p < 3; ++p) {
        instances_[p].clear();
        const Partition part = static_cast<Partition>(p);
        const i64 offset = partition_offset(splits_, part);
        const i64 length = partition_length(splits_, part);
        const i64 count = window_count(length, input_steps, output_steps);
        instances_[p].reserve(static_cast<std::size_t>(count));
        for (i64 w = 0; w < count; ++w) {
            Instance inst;
            inst.abs_start = offset + w;
            inst.partition = part;
            inst.start_slot = static_cast<i32>(inst.abs_start % steps_per_day_);
            inst.has_next = w + 1 < count;
            instances_[p].push_back(inst);
        }
    }
    prepared_ = true;
}

void TimeSeriesDataset::check_prepared() const {
    if (!prepared_) throw DataError("dataset not prepared: call prepare() first");
}

const ZScore& TimeSeriesDataset::zscore() const {
    check_prepared();
    return zscore_;
}

const SplitCounts& TimeSeriesDataset::splits() const {
    check_prepared();
    return splits_;
}

const std::vector<Instance>& TimeSeriesDataset::instances(Partition p) const {
    check_prepared();
    return instances_[static_cast<int>(p)];
}

Tensor TimeSeriesDataset::raw_window(i64 abs_start, i64 length) const {
    const i64 n = nodes();
    if (abs_start < 0 || abs_start + length > total_steps()) {
        throw DataError("window [" + std::to_string(abs_start) + "," +
                        std::to_string(abs_start + length) + ") out of series range");
    }
    Tensor out({length, n});
    std::copy(series_.data().begin() + abs_start * n,
              series_.data().begin() + (abs_start + length) * n, out.data().begin());
    return out;
}

Tensor TimeSeriesDataset::normalized_window(i64 abs_start, i64 length) const {
    check_prepared();
    Tensor out = raw_window(abs_start, length);
    for (i64 i = 0; i < out.numel(); ++i) out[i] = zscore_.apply(out[i]);
    return out;
}

InstanceBatch TimeSeriesDataset::make_batch(const std::vector<Instance>& items) const {
    check_prepared();
    const i64 m = static_cast<i64>(items.size());
    const i64 s = input_steps_, t = output_steps_, n = nodes();
    InstanceBatch batch;
    batch.items = items;
    batch.inputs = Tensor({m, s, n, 2});
    batch.targets = Tensor({m, t, n, 1});
    for (i64 b = 0; b < m; ++b) {
        const Instance& inst = items[static_cast<std::size_t>(b)];
        for (i64 step = 0; step < s; ++step) {
            const i64 abs_step = inst.abs_start + step;
            const double tod = static_cast<double>(abs_step % steps_per_day_) /
                               static_cast<double>(steps_per_day_);
            for (i64 node = 0; node < n; ++node) {
                const double raw = series_[abs_step * n + node];
                batch.inputs[((b * s + step) * n + node) * 2 + 0] = zscore_.apply(raw);
                batch.inputs[((b * s + step) * n + node) * 2 + 1] = tod;
            }
        }
        for (i64 step = 0; step < t; ++step) {
            const i64 abs_step = inst.abs_start + s + step;
            for (i64 node = 0; node < n; ++node) {
                batch.targets[(b * t + step) * n + node] = series_[abs_step * n + node];
            }
        }
    }
    return batch;
}

std::vector<std::vector<Instance>> TimeSeriesDataset::batch_plan(Partition p, i64 batch_size,
                                                                 u64 seed, i64 epoch, bool shuffle,
                                                                 bool contrast_enabled) const {
    check_prepared();
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (contrast_enabled && batch_size < 2) {
        throw ConfigError("batch size must be at least 2 when contrast is enabled");
    }
    std::vector<Instance> order = instances(p);
    if (contrast_enabled && order.size() < 2) {
        throw DataError("contrast needs at least 2 instances, have " +
                        std::to_string(order.size()));
    }
    if (shuffle) {
        rng::Stream stream(rng::Key(seed).fold("shuffle").fold(static_cast<u64>(epoch)));
        rng::shuffle(order, stream);
    }
    std::vector<std::vector<Instance>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (contrast_enabled && batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

// ===========================================================================
// Synthetic generator
// ===========================================================================

double synth_base_value(const SynthConfig& config, i64 node, i64 step) {
    const double spd = static_cast<double>(config.steps_per_day);
    const double phase =
        kTwoPi * static_cast<double>(node) / static_cast<double>(config.nodes);
    const double slot = static_cast<double>(step % config.steps_per_day);
    const double week_pos = static_cast<double>(step % (7 * config.steps_per_day));
    const double daily = config.daily_amp * std::sin(kTwoPi * slot / spd + phase);
    const double weekly = config.weekly_amp * std::sin(kTwoPi * week_pos / (7.0 * spd));
    return config.level + daily + weekly;
}

SynthResult synth_generate(const SynthConfig& config) {
    if (config.nodes < 2) throw ConfigError("synth: need at least 2 nodes");
    if (config.days < 3) throw ConfigError("synth: need at least 3 days");
    if (config.steps_per_day < 1 || 1440 % config.steps_per_day != 0) {
        throw ConfigError("synth: steps_per_day must divide 1440");
    }

    const i64 n = config.nodes;
    const i64 total = config.days * config.steps_per_day;
    const rng::Key root(config.seed);

    // latent geometry: nodes on the unit square
    std::vector<double> px(static_cast<std::size_t>(n)), py(static_cast<std::size_t>(n));
    {
        rng::Stream pos(root.fold("pos"));
        for (i64 i = 0; i < n; ++i) {
            px[static_cast<std::size_t>(i)] = pos.next_unit();
            py[static_cast<std::size_t>(i)] = pos.next_unit();
        }
    }
    Tensor dist({n, n});
    std::vector<Edge> edges;
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            const double dx = px[static_cast<std::size_t>(i)] - px[static_cast<std::size_t>(j)];
            const double dy = py[static_cast<std::size_t>(i)] - py[static_cast<std::size_t>(j)];
            dist[i * n + j] = std::sqrt(dx * dx + dy * dy);
            if (i != j) {
                edges.push_back(Edge{static_cast<i32>(i), static_cast<i32>(j), dist[i * n + j]});
            }
        }
    }
    SensorGraph graph;
    try {
        graph = build_adjacency(dist, config.kernel_threshold);
    } catch (const DataError&) {
        // degenerate geometry (all pairwise distances equal, e.g. N=2):
        // fall back to the edgeless graph, whose normalization is identity
        graph = from_weighted_adjacency(Tensor({n, n}));
    }

    // two-step smoothing weights, columns of the mixing are convex
    const Tensor& na = graph.norm_adjacency;
    Tensor na2({n, n});
    for (i64 i = 0; i < n; ++i) {
        for (i64 k = 0; k < n; ++k) {
            const double a = na[i * n + k];
            if (a == 0.0) continue;
            for (i64 j = 0; j < n; ++j) na2[i * n + j] += a * na[k * n + j];
        }
    }

    Tensor series({total, n});
    std::vector<double> base(static_cast<std::size_t>(n));
    for (i64 step = 0; step < total; ++step) {
        for (i64 node = 0; node < n; ++node) {
            base[static_cast<std::size_t>(node)] = synth_base_value(config, node, step);
        }
        for (i64 node = 0; node < n; ++node) {
            double smoothed = 0.0;
            for (i64 j = 0; j < n; ++j) smoothed += na2[node * n + j] * base[static_cast<std::size_t>(j)];
            series[step * n + node] =
                (1.0 - config.mix_rho) * base[static_cast<std::size_t>(node)] +
                config.mix_rho * smoothed;
        }
    }
    if (config.noise_sigma > 0.0) {
        for (i64 step = 0; step < total; ++step) {
            for (i64 node = 0; node < n; ++node) {
                rng::Stream noise(root.fold("noise").fold(static_cast<u64>(step * n + node)));
                series[step * n + node] += config.noise_sigma * noise.normal();
            }
        }
    }

    SynthResult result;
    result.series = std::move(series);
    result.edges = std::move(edges);
    result.graph = std::move(graph);
    return result;
}

// ===========================================================================
// Serialization
// ===========================================================================

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated file: " + path);
    return v;
}

}  // namespace

void save_series(const std::string& path, const Tensor& series, i64 steps_per_day,
                 i64 interval_min) {
    if (series.ndim() != 2) throw DataError("save_series: series must be 2-d");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write series file: " + path);
    out.write("STGS", 4);
    write_pod<u16>(out, 1);
    write_pod<u32>(out, static_cast<u32>(series.shape()[1]));
    write_pod<u32>(out, static_cast<u32>(series.shape()[0]));
    write_pod<u32>(out, static_cast<u32>(steps_per_day));
    write_pod<u16>(out, static_cast<u16>(interval_min));
    out.write(reinterpret_cast<const char*>(series.data().data()),
              static_cast<std::streamsize>(series.numel() * sizeof(double)));
    if (!out) throw DataError("write failed: " + path);
}

TimeSeriesDataset load_series(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open series file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "STGS", 4) != 0) {
        throw DataError("not a series file (bad magic): " + path);
    }
    const u16 version = read_pod<u16>(in, path);
    if (version != 1) {
        throw DataError("unsupported series version " + std::to_string(version) + ": " + path);
    }
    const u32 n = read_pod<u32>(in, path);
    const u32 total = read_pod<u32>(in, path);
    const u32 steps_per_day = read_pod<u32>(in, path);
    const u16 interval = read_pod<u16>(in, path);
    Tensor series({static_cast<i64>(total), static_cast<i64>(n)});
    in.read(reinterpret_cast<char*>(series.data().data()),
            static_cast<std::streamsize>(series.numel() * sizeof(double)));
    if (!in) throw DataError("truncated series data: " + path);
    return TimeSeriesDataset(std::move(series), steps_per_day, interval);
}

TimeSeriesDataset load_series_csv(const std::string& path, i64 steps_per_day, i64 interval_min) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty csv: " + path);
    i64 n = line.empty() ? 0 : 1;
    for (char c : line) {
        if (c == ',') ++n;
    }
    if (n < 1) throw DataError("csv header has no columns: " + path);
    std::vector<double> values;
    i64 rows = 0;
    i64 lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        i64 cols = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("bad number at line " + std::to_string(lineno) + " in " + path);
            }
            ++cols;
        }
        if (cols != n) {
            throw DataError("line " + std::to_string(lineno) + " has " + std::to_string(cols) +
                            " columns, expected " + std::to_string(n) + ": " + path);
        }
        ++rows;
    }
    return TimeSeriesDataset(Tensor({rows, n}, std::move(values)), steps_per_day, interval_min);
}

}  // namespace stgcl
