#include "stgcl/graph.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace stgcl {

namespace {

std::vector<std::vector<i32>> neighbor_lists(const Tensor& a) {
    const i64 n = a.shape()[0];
    std::vector<std::vector<i32>> out(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            if (j == i) continue;
            if (a[i * n + j] > 0.0 || a[j * n + i] > 0.0) {
                out[static_cast<std::size_t>(i)].push_back(static_cast<i32>(j));
            }
        }
    }
    return out;
}

SensorGraph finish(Tensor adjacency) {
    SensorGraph g;
    g.n = adjacency.shape()[0];
    g.norm_adjacency = normalize_adjacency(adjacency);
    g.neighbors = neighbor_lists(adjacency);
    g.adjacency = std::move(adjacency);
    return g;
}

Tensor kernel_weights(const Tensor& distances, double threshold) {
    const i64 n = distances.shape()[0];
    // sigma over finite off-diagonal entries (population std)
    double sum = 0.0;
    i64 count = 0;
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = distances[i * n + j];
            if (!std::isfinite(d)) continue;
            if (d < 0.0) throw DataError("build_adjacency: negative distance");
            sum += d;
            ++count;
        }
    }
    if (count == 0) throw DataError("build_adjacency: no finite off-diagonal distances");
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = distances[i * n + j];
            if (!std::isfinite(d)) continue;
            var += (d - mean) * (d - mean);
        }
    }
    var /= static_cast<double>(count);
    const double sigma = std::sqrt(var);
    if (sigma == 0.0) {
        throw DataError("build_adjacency: all distances identical, kernel width is zero");
    }

    Tensor w({n, n});
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < n; ++j) {
            if (i == j) {
                w[i * n + j] = 1.0;  // dist(v,v) = 0
                continue;
            }
            const double d = distances[i * n + j];
            if (!std::isfinite(d)) continue;
            const double weight = std::exp(-(d * d) / (sigma * sigma));
            // threshold applies to the kernel weight, not the raw distance
            if (weight >= threshold) w[i * n + j] = weight;
        }
    }
    return w;
}

}  // namespace

SensorGraph build_adjacency(const Tensor& distances, double threshold) {
    if (distances.ndim() != 2 || distances.shape()[0] != distances.shape()[1]) {
        throw ShapeError("build_adjacency: distances must be square, got " +
                         shape_str(distances.shape()));
    }
    if (distances.shape()[0] < 1) throw DataError("build_adjacency: empty graph");
    return finish(kernel_weights(distances, threshold));
}

SensorGraph build_adjacency(i64 n, const std::vector<Edge>& edges, double threshold) {
    if (n < 1) throw DataError("build_adjacency: node count must be positive");
    Tensor dist = Tensor::full({n, n}, std::numeric_limits<double>::infinity());
    for (const Edge& e : edges) {
        if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n) {
            throw DataError("build_adjacency: edge (" + std::to_string(e.from) + "," +
                            std::to_string(e.to) + ") out of range for " + std::to_string(n) +
                            " nodes");
        }
        dist[static_cast<i64>(e.from) * n + e.to] = e.cost;
    }
    for (i64 i = 0; i < n; ++i) dist[i * n + i] = 0.0;
    return finish(kernel_weights(dist, threshold));
}

SensorGraph from_weighted_adjacency(Tensor adjacency) {
    if (adjacency.ndim() != 2 || adjacency.shape()[0] != adjacency.shape()[1]) {
        throw ShapeError("from_weighted_adjacency: expected square matrix, got " +
                         shape_str(adjacency.shape()));
    }
    for (i64 i = 0; i < adjacency.numel(); ++i) {
        if (adjacency[i] < 0.0 || adjacency[i] > 1.0) {
            throw DataError("from_weighted_adjacency: weights must lie in [0,1]");
        }
    }
    return finish(std::move(adjacency));
}

Tensor normalize_adjacency(const Tensor& adjacency) {
    const i64 n = adjacency.shape()[0];
    Tensor out({n, n});
    for (i64 i = 0; i < n; ++i) {
        double degree = 1.0;  // self loop from A + I
        for (i64 j = 0; j < n; ++j) degree += adjacency[i * n + j];
        for (i64 j = 0; j < n; ++j) {
            const double v = adjacency[i * n + j] + (i == j ? 1.0 : 0.0);
            out[i * n + j] = v / degree;
        }
    }
    return out;
}

std::vector<i32> first_order_neighbors(const SensorGraph& graph, i64 node) {
    if (node < 0 || node >= graph.n) {
        throw DataError("first_order_neighbors: node " + std::to_string(node) +
                        " out of range for " + std::to_string(graph.n) + " nodes");
    }
    return graph.neighbors[static_cast<std::size_t>(node)];
}

std::vector<Edge> load_edge_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge list: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty edge list: " + path);
    std::vector<Edge> edges;
    i64 lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Edge e;
        char c1 = 0, c2 = 0;
        if (!(ss >> e.from >> c1 >> e.to >> c2 >> e.cost) || c1 != ',' || c2 != ',') {
            throw DataError("bad edge list line " + std::to_string(lineno) + " in " + path);
        }
        edges.push_back(e);
    }
    return edges;
}

void save_edge_list(const std::string& path, const std::vector<Edge>& edges) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write edge list: " + path);
    out << "from,to,cost\n";
    char buf[64];
    for (const Edge& e : edges) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.cost);
        out << e.from << "," << e.to << "," << buf << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace stgcl
