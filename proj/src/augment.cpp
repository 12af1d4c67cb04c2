#include "stgcl/augment.hpp"

#include <cmath>

namespace stgcl {

namespace {
constexpr double kPi = 3.1415926535897932384626433832795;
}

AugmentMethod parse_augment_method(const std::string& name) {
    if (name == "edge_mask") return AugmentMethod::kEdgeMask;
    if (name == "input_mask") return AugmentMethod::kInputMask;
    if (name == "temporal_shift") return AugmentMethod::kTemporalShift;
    if (name == "input_smooth") return AugmentMethod::kInputSmooth;
    throw ConfigError("unknown augmentation method '" + name + "'");
}

std::string augment_method_name(AugmentMethod m) {
    switch (m) {
        case AugmentMethod::kEdgeMask: return "edge_mask";
        case AugmentMethod::kInputMask: return "input_mask";
        case AugmentMethod::kTemporalShift: return "temporal_shift";
        case AugmentMethod::kInputSmooth: return "input_smooth";
    }
    return "?";
}

Tensor edge_mask(const Tensor& adjacency, double r_em, rng::Stream& stream) {
    if (r_em < 0.0 || r_em > 1.0) throw ConfigError("edge_mask: rate must be in [0,1]");
    Tensor out = adjacency;
    for (i64 i = 0; i < out.numel(); ++i) {
        if (stream.next_unit() < r_em) out[i] = 0.0;
    }
    return out;
}

Tensor input_mask(const Tensor& window, double r_im, rng::Stream& stream) {
    if (r_im < 0.0 || r_im > 1.0) throw ConfigError("input_mask: rate must be in [0,1]");
    Tensor out = window;
    for (i64 i = 0; i < out.numel(); ++i) {
        if (stream.next_unit() < r_im) out[i] = -1.0;
    }
    return out;
}

Tensor temporal_shift(const Tensor& window, const Tensor& next_window, double alpha) {
    if (!window.same_shape(next_window)) {
        throw ShapeError("temporal_shift: window shapes differ: " + shape_str(window.shape()) +
                         " vs " + shape_str(next_window.shape()));
    }
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("temporal_shift: alpha must be in [0,1]");
    Tensor out = Tensor::zeros_like(window);
    for (i64 i = 0; i < out.numel(); ++i) {
        out[i] = alpha * window[i] + (1.0 - alpha) * next_window[i];
    }
    return out;
}

// Orthonormal DCT-II: X_k = c_k * sum_n x_n cos(pi (n + 1/2) k / L),
// c_0 = sqrt(1/L), c_k = sqrt(2/L). The inverse transposes the same basis.
std::vector<double> dct(const std::vector<double>& x) {
    const std::size_t len = x.size();
    if (len == 0) throw ShapeError("dct: empty sequence");
    const double c0 = std::sqrt(1.0 / static_cast<double>(len));
    const double ck = std::sqrt(2.0 / static_cast<double>(len));
    std::vector<double> out(len, 0.0);
    for (std::size_t k = 0; k < len; ++k) {
        double acc = 0.0;
        for (std::size_t n = 0; n < len; ++n) {
            acc += x[n] * std::cos(kPi * (static_cast<double>(n) + 0.5) * static_cast<double>(k) /
                                   static_cast<double>(len));
        }
        out[k] = (k == 0 ? c0 : ck) * acc;
    }
    return out;
}

std::vector<double> idct(const std::vector<double>& coeffs) {
    const std::size_t len = coeffs.size();
    if (len == 0) throw ShapeError("idct: empty sequence");
    const double c0 = std::sqrt(1.0 / static_cast<double>(len));
    const double ck = std::sqrt(2.0 / static_cast<double>(len));
    std::vector<double> out(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
        double acc = c0 * coeffs[0];
        for (std::size_t k = 1; k < len; ++k) {
            acc += ck * coeffs[k] *
                   std::cos(kPi * (static_cast<double>(n) + 0.5) * static_cast<double>(k) /
                            static_cast<double>(len));
        }
        out[n] = acc;
    }
    return out;
}

Tensor input_smooth_full(const Tensor& block, const Tensor* norm_adjacency, i64 keep_low,
                         double r_is, rng::Stream& stream) {
    if (block.ndim() != 2) {
        throw ShapeError("input_smooth: block must be (L,N), got " + shape_str(block.shape()));
    }
    const i64 len = block.shape()[0];
    const i64 n = block.shape()[1];
    if (keep_low < 0 || keep_low > len) {
        throw ConfigError("input_smooth: keep_low must be in [0,L], got " +
                          std::to_string(keep_low) + " for L=" + std::to_string(len));
    }
    if (r_is < 0.0 || r_is > 1.0) throw ConfigError("input_smooth: rate must be in [0,1]");

    const i64 high = len - keep_low;
    // scaling factors, drawn row-major (frequency, node)
    Tensor scales({high, n});
    for (i64 i = 0; i < scales.numel(); ++i) scales[i] = stream.uniform(r_is, 1.0);

    // average over two hops of the adjacency: smoothed[f,i] = sum_j A2[i,j] M[f,j].
    // A2 rows sum to 1, so entries stay inside [r_is, 1].
    if (norm_adjacency != nullptr && high > 0) {
        const Tensor& na = *norm_adjacency;
        if (na.ndim() != 2 || na.shape()[0] != n || na.shape()[1] != n) {
            throw ShapeError("input_smooth: adjacency shape " + shape_str(na.shape()) +
                             " does not match " + std::to_string(n) + " nodes");
        }
        Tensor na2({n, n});
        for (i64 i = 0; i < n; ++i) {
            for (i64 k = 0; k < n; ++k) {
                const double a = na[i * n + k];
                if (a == 0.0) continue;
                for (i64 j = 0; j < n; ++j) na2[i * n + j] += a * na[k * n + j];
            }
        }
        Tensor smoothed({high, n});
        for (i64 f = 0; f < high; ++f) {
            for (i64 i = 0; i < n; ++i) {
                double acc = 0.0;
                for (i64 j = 0; j < n; ++j) acc += na2[i * n + j] * scales[f * n + j];
                smoothed[f * n + i] = acc;
            }
        }
        scales = std::move(smoothed);
    }

    Tensor out({len, n});
    std::vector<double> column(static_cast<std::size_t>(len));
    for (i64 node = 0; node < n; ++node) {
        for (i64 step = 0; step < len; ++step) {
            column[static_cast<std::size_t>(step)] = block[step * n + node];
        }
        std::vector<double> coeffs = dct(column);
        for (i64 f = keep_low; f < len; ++f) {
            coeffs[static_cast<std::size_t>(f)] *= scales[(f - keep_low) * n + node];
        }
        std::vector<double> rebuilt = idct(coeffs);
        for (i64 step = 0; step < len; ++step) {
            out[step * n + node] = rebuilt[static_cast<std::size_t>(step)];
        }
    }
    return out;
}

Tensor input_smooth(const Tensor& block, const Tensor* norm_adjacency, i64 keep_low, double r_is,
                    i64 input_steps, rng::Stream& stream) {
    if (input_steps < 1 || input_steps > block.shape()[0]) {
        throw ShapeError("input_smooth: input_steps out of range");
    }
    Tensor full = input_smooth_full(block, norm_adjacency, keep_low, r_is, stream);
    const i64 n = full.shape()[1];
    Tensor out({input_steps, n});
    std::copy(full.data().begin(), full.data().begin() + input_steps * n, out.data().begin());
    return out;
}

// ===========================================================================
// Batch driver
// ===========================================================================

namespace {

// views of the (M,S,N,2) input tensor: target channel only
Tensor extract_target_channel(const Tensor& inputs, i64 b) {
    const i64 s = inputs.shape()[1], n = inputs.shape()[2];
    Tensor out({s, n});
    for (i64 step = 0; step < s; ++step) {
        for (i64 node = 0; node < n; ++node) {
            out[step * n + node] = inputs[((b * s + step) * n + node) * 2 + 0];
        }
    }
    return out;
}

void store_target_channel(Tensor& inputs, i64 b, const Tensor& window) {
    const i64 s = inputs.shape()[1], n = inputs.shape()[2];
    for (i64 step = 0; step < s; ++step) {
        for (i64 node = 0; node < n; ++node) {
            inputs[((b * s + step) * n + node) * 2 + 0] = window[step * n + node];
        }
    }
}

}  // namespace

AugmentedBatch apply_augmentations(const std::vector<AugmentSpec>& specs,
                                   const InstanceBatch& batch, const TimeSeriesDataset& dataset,
                                   const SensorGraph& graph, rng::Key epoch_key,
                                   rng::Key batch_key) {
    AugmentedBatch out;
    out.inputs = batch.inputs;
    const i64 m = batch.size();
    const i64 s = dataset.input_steps();
    const i64 t = dataset.output_steps();

    for (std::size_t spec_idx = 0; spec_idx < specs.size(); ++spec_idx) {
        const AugmentSpec& spec = specs[spec_idx];
        const rng::Key method_key = epoch_key.fold(static_cast<u64>(spec_idx));
        switch (spec.method) {
            case AugmentMethod::kEdgeMask: {
                rng::Stream stream(batch_key.fold(static_cast<u64>(spec_idx)).fold("edge"));
                const Tensor& base =
                    out.graph.has_value() ? out.graph->adjacency : graph.adjacency;
                out.graph = from_weighted_adjacency(edge_mask(base, spec.rate, stream));
                break;
            }
            case AugmentMethod::kInputMask: {
                for (i64 b = 0; b < m; ++b) {
                    const Instance& inst = batch.items[static_cast<std::size_t>(b)];
                    rng::Stream stream(method_key.fold(static_cast<u64>(inst.abs_start)));
                    Tensor window = extract_target_channel(out.inputs, b);
                    store_target_channel(out.inputs, b, input_mask(window, spec.rate, stream));
                }
                break;
            }
            case AugmentMethod::kTemporalShift: {
                for (i64 b = 0; b < m; ++b) {
                    const Instance& inst = batch.items[static_cast<std::size_t>(b)];
                    if (!inst.has_next) continue;  // last window of a partition: identity
                    rng::Stream stream(method_key.fold(static_cast<u64>(inst.abs_start)));
                    const double alpha = stream.uniform(spec.rate, 1.0);
                    Tensor window = extract_target_channel(out.inputs, b);
                    Tensor next = dataset.normalized_window(inst.abs_start + 1, s);
                    store_target_channel(out.inputs, b, temporal_shift(window, next, alpha));
                }
                break;
            }
            case AugmentMethod::kInputSmooth: {
                for (i64 b = 0; b < m; ++b) {
                    const Instance& inst = batch.items[static_cast<std::size_t>(b)];
                    rng::Stream stream(method_key.fold(static_cast<u64>(inst.abs_start)));
                    // history + future, normalized scale
                    Tensor block = dataset.normalized_window(inst.abs_start, s + t);
                    // earlier steps of the pipeline may have modified the
                    // input channel; keep those edits for the history part
                    Tensor current = extract_target_channel(out.inputs, b);
                    const i64 n = dataset.nodes();
                    for (i64 step = 0; step < s; ++step) {
                        for (i64 node = 0; node < n; ++node) {
                            block[step * n + node] = current[step * n + node];
                        }
                    }
                    Tensor smoothed = input_smooth(block, &graph.norm_adjacency, spec.keep_low,
                                                   spec.rate, s, stream);
                    store_target_channel(out.inputs, b, smoothed);
                }
                break;
            }
        }
    }
    return out;
}

}  // namespace stgcl
