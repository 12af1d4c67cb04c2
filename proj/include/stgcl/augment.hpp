#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stgcl/data.hpp"
#include "stgcl/graph.hpp"
#include "stgcl/tensor.hpp"

namespace stgcl {

enum class AugmentMethod { kEdgeMask, kInputMask, kTemporalShift, kInputSmooth };

// One augmentation step. `rate` is r_em / r_im / r_ts / r_is depending on
// the method; `keep_low` is the number of low-frequency coefficients kept
// untouched by input smoothing.
struct AugmentSpec {
    AugmentMethod method = AugmentMethod::kInputMask;
    double rate = 0.01;
    i64 keep_low = 20;
};

AugmentMethod parse_augment_method(const std::string& name);
std::string augment_method_name(AugmentMethod m);

// A'_ij = A_ij if U(0,1) >= r_em else 0. One mask per batch.
Tensor edge_mask(const Tensor& adjacency, double r_em, rng::Stream& stream);

// Entries of the (already normalized) target channel are replaced by -1
// with probability r_im.
Tensor input_mask(const Tensor& window, double r_im, rng::Stream& stream);

// alpha * window + (1-alpha) * next_window, alpha in [r_ts, 1].
Tensor temporal_shift(const Tensor& window, const Tensor& next_window, double alpha);

// Orthonormal DCT-II and its inverse (DCT-III).
std::vector<double> dct(const std::vector<double>& x);
std::vector<double> idct(const std::vector<double>& coeffs);

// Smooths an (L,N) history+future block per node in the DCT domain: the
// lowest keep_low coefficients pass through, the rest are scaled by random
// factors U(r_is,1) that are averaged over two hops of the normalized
// adjacency. Returns the full reconstructed (L,N) block.
Tensor input_smooth_full(const Tensor& block, const Tensor* norm_adjacency, i64 keep_low,
                         double r_is, rng::Stream& stream);

// First input_steps rows of the reconstruction (what the encoder consumes).
Tensor input_smooth(const Tensor& block, const Tensor* norm_adjacency, i64 keep_low, double r_is,
                    i64 input_steps, rng::Stream& stream);

// Second view of a batch: augmented inputs plus, for edge masking, the
// graph the encoder should use instead of the original one.
struct AugmentedBatch {
    Tensor inputs;  // (M,S,N,2)
    std::optional<SensorGraph> graph;
};

// Applies the spec list left-to-right. Per-instance randomness is keyed by
// (epoch_key, method index, absolute start), so results do not depend on
// batch composition; the edge mask is drawn once per batch from batch_key.
AugmentedBatch apply_augmentations(const std::vector<AugmentSpec>& specs,
                                   const InstanceBatch& batch, const TimeSeriesDataset& dataset,
                                   const SensorGraph& graph, rng::Key epoch_key,
                                   rng::Key batch_key);

}  // namespace stgcl
