#pragma once

#include <span>
#include <vector>

#include "stgcl/graph.hpp"
#include "stgcl/tensor.hpp"

namespace stgcl {

double cosine_sim(std::span<const double> u, std::span<const double> v);

// Temporal negative filtering over instance start slots. Closeness is
// measured on the circular time-of-day axis: two slots 20 minutes apart
// across midnight count as 20 minutes, not 23h40m. r_f = 0 disables
// filtering entirely (every other instance is allowed).
struct FilterSpec {
    double r_f_minutes = 60.0;
    bool spatial = true;
    i64 steps_per_day = 288;
    i64 interval_min = 5;
};

// Per-anchor allowed negatives. The anchor itself is never a member; the
// positive is excluded from the denominator in both loss variants.
struct NegativeSets {
    std::vector<std::vector<i32>> instance_allowed;  // per anchor m
    std::vector<std::vector<i32>> node_allowed;      // per node i (node level only)
    double r_f_minutes = 0.0;                        // echoed in error messages
};

std::vector<std::vector<i32>> temporal_filter(const std::vector<i32>& start_slots,
                                              const FilterSpec& spec);

// Allowed node set per node: everyone else, minus first-order neighbors
// when spatial filtering is on.
std::vector<std::vector<i32>> spatial_allowed(const SensorGraph& graph, bool filter_on);

NegativeSets build_negative_sets(const std::vector<i32>& start_slots, const FilterSpec& spec,
                                 const SensorGraph* graph);

// Graph-level InfoNCE over z' and z'' of shape (M,D). Cosine similarities,
// temperature tau, per-anchor denominator restricted to the allowed set,
// stabilized by max subtraction. Differentiable.
Var graph_infonce(Tape& tape, Var z1, Var z2, const NegativeSets& negatives, double tau);

// Node-level factorized InfoNCE over Z' and Z'' of shape (M,N,D). For
// anchor (m,i) the negatives are the allowed other nodes at the same
// instance plus the same node at allowed other instances.
Var node_infonce(Tape& tape, Var z1, Var z2, const NegativeSets& negatives, double tau);

}  // namespace stgcl
