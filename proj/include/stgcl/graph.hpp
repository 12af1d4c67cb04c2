#pragma once

#include <string>
#include <vector>

#include "stgcl/tensor.hpp"

namespace stgcl {

// Sensor graph: weighted adjacency from a Gaussian kernel over pairwise
// distances, a row-stochastic normalized adjacency, and first-order
// neighborhoods. Immutable after construction.
struct SensorGraph {
    i64 n = 0;
    Tensor adjacency;        // (N,N), weights in [0,1]
    Tensor norm_adjacency;   // (N,N), D^-1 (A + I), rows sum to 1
    std::vector<std::vector<i32>> neighbors;  // {j != i : A_ij > 0 or A_ji > 0}
};

struct Edge {
    i32 from = 0;
    i32 to = 0;
    double cost = 0.0;
};

// W_ij = exp(-dist^2 / sigma^2), kept iff W_ij >= threshold. sigma is the
// population standard deviation of the finite off-diagonal distances.
// Missing entries (inf/nan) get weight zero; the diagonal is always 1.
SensorGraph build_adjacency(const Tensor& distances, double threshold);
SensorGraph build_adjacency(i64 n, const std::vector<Edge>& edges, double threshold);

// Wraps a precomputed weighted adjacency (used for edge-masked views).
SensorGraph from_weighted_adjacency(Tensor adjacency);

Tensor normalize_adjacency(const Tensor& adjacency);

std::vector<i32> first_order_neighbors(const SensorGraph& graph, i64 node);

// Text format: header "from,to,cost", one directed edge per line.
std::vector<Edge> load_edge_list(const std::string& path);
void save_edge_list(const std::string& path, const std::vector<Edge>& edges);

}  // namespace stgcl
