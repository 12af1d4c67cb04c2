#include "stgcl/contrast.hpp"

#include <algorithm>
#include <cmath>

namespace stgcl {

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine_sim: length mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw NumericError("cosine_sim: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

// ===========================================================================
// Negative filtering
// ===========================================================================

std::vector<std::vector<i32>> temporal_filter(const std::vector<i32>& start_slots,
                                              const FilterSpec& spec) {
    if (spec.r_f_minutes < 0.0) throw ConfigError("temporal_filter: r_f must be >= 0");
    const double half_day = 720.0;
    if (spec.r_f_minutes >= half_day) {
        throw ConfigError("temporal_filter: r_f of " + std::to_string(spec.r_f_minutes) +
                          " min reaches half a day; circular distances never exceed it");
    }
    const i64 spd = spec.steps_per_day;
    const std::size_t m = start_slots.size();
    for (i32 s : start_slots) {
        if (s < 0 || s >= spd) {
            throw DataError("temporal_filter: slot " + std::to_string(s) + " outside [0," +
                            std::to_string(spd) + ")");
        }
    }
    std::vector<std::vector<i32>> allowed(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            if (spec.r_f_minutes == 0.0) {
                allowed[i].push_back(static_cast<i32>(j));  // no filtering at r_f = 0
                continue;
            }
            const i64 diff = std::abs(static_cast<i64>(start_slots[i]) -
                                      static_cast<i64>(start_slots[j]));
            const i64 circ = std::min(diff, spd - diff);
            const double minutes = static_cast<double>(circ * spec.interval_min);
            if (minutes > spec.r_f_minutes) allowed[i].push_back(static_cast<i32>(j));
        }
    }
    return allowed;
}

std::vector<std::vector<i32>> spatial_allowed(const SensorGraph& graph, bool filter_on) {
    const i64 n = graph.n;
    std::vector<std::vector<i32>> allowed(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        const auto& excluded = graph.neighbors[static_cast<std::size_t>(i)];
        for (i64 j = 0; j < n; ++j) {
            if (j == i) continue;
            if (filter_on &&
                std::binary_search(excluded.begin(), excluded.end(), static_cast<i32>(j))) {
                continue;
            }
            allowed[static_cast<std::size_t>(i)].push_back(static_cast<i32>(j));
        }
    }
    return allowed;
}

NegativeSets build_negative_sets(const std::vector<i32>& start_slots, const FilterSpec& spec,
                                 const SensorGraph* graph) {
    NegativeSets sets;
    sets.instance_allowed = temporal_filter(start_slots, spec);
    if (graph != nullptr) sets.node_allowed = spatial_allowed(*graph, spec.spatial);
    sets.r_f_minutes = spec.r_f_minutes;
    return sets;
}

// ===========================================================================
// InfoNCE losses
// ===========================================================================

namespace {

void validate_allowed(const std::vector<std::vector<i32>>& allowed, i64 extent, i64 anchors,
                      const char* what) {
    if (static_cast<i64>(allowed.size()) != anchors) {
        throw ShapeError(std::string(what) + ": allowed-set count " +
                         std::to_string(allowed.size()) + " does not match " +
                         std::to_string(anchors) + " anchors");
    }
    for (i64 i = 0; i < anchors; ++i) {
        for (i32 j : allowed[static_cast<std::size_t>(i)]) {
            if (j < 0 || j >= extent) throw ShapeError(std::string(what) + ": index out of range");
            if (j == i) throw NumericError(std::string(what) + ": anchor inside its own set");
        }
    }
}

double dot_rows(const double* a, const double* b, i64 d) {
    double acc = 0.0;
    for (i64 i = 0; i < d; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

Var graph_infonce(Tape& tape, Var z1, Var z2, const NegativeSets& negatives, double tau) {
    if (tau <= 0.0) throw ConfigError("graph_infonce: temperature must be positive");
    const Tensor& v1 = tape.value(z1);
    const Tensor& v2 = tape.value(z2);
    if (v1.ndim() != 2 || !v1.same_shape(v2)) {
        throw ShapeError("graph_infonce: expected matching (M,D) inputs, got " +
                         shape_str(v1.shape()) + " vs " + shape_str(v2.shape()));
    }
    const i64 m = v1.shape()[0];
    const i64 d = v1.shape()[1];
    if (m < 2) throw NumericError("graph_infonce: need at least 2 instances");
    const auto& allowed = negatives.instance_allowed;
    validate_allowed(allowed, m, m, "graph_infonce");
    for (i64 i = 0; i < m; ++i) {
        if (allowed[static_cast<std::size_t>(i)].empty()) {
            throw NumericError("graph_infonce: anchor " + std::to_string(i) +
                               " has no allowed negatives (r_f=" +
                               std::to_string(negatives.r_f_minutes) + " min over-filters)");
        }
    }

    Var n1 = tape.l2_normalize_rows(z1);
    Var n2 = tape.l2_normalize_rows(z2);
    const Tensor& a = tape.value(n1);
    const Tensor& b = tape.value(n2);

    // forward: per anchor, -pos/tau + logsumexp over allowed sims/tau
    double total = 0.0;
    for (i64 i = 0; i < m; ++i) {
        const double* ai = a.data().data() + i * d;
        const double pos = dot_rows(ai, b.data().data() + i * d, d) / tau;
        double max_s = -1e300;
        for (i32 j : allowed[static_cast<std::size_t>(i)]) {
            const double s = dot_rows(ai, b.data().data() + static_cast<i64>(j) * d, d) / tau;
            max_s = std::max(max_s, s);
        }
        double denom = 0.0;
        for (i32 j : allowed[static_cast<std::size_t>(i)]) {
            const double s = dot_rows(ai, b.data().data() + static_cast<i64>(j) * d, d) / tau;
            denom += std::exp(s - max_s);
        }
        total += -pos + max_s + std::log(denom);
    }
    total /= static_cast<double>(m);

    auto backward = [allowed, m, d, tau](Tape& t, Var out, const std::vector<Var>& ins) {
        const double g = t.grad(out)[0];
        const Tensor& a2 = t.value(ins[0]);
        const Tensor& b2 = t.value(ins[1]);
        Tensor ga = Tensor::zeros_like(a2);
        Tensor gb = Tensor::zeros_like(b2);
        const double scale = g / (static_cast<double>(m) * tau);
        for (i64 i = 0; i < m; ++i) {
            const double* ai = a2.data().data() + i * d;
            const double* bi = b2.data().data() + i * d;
            // positive term
            for (i64 k = 0; k < d; ++k) {
                ga[i * d + k] -= scale * bi[k];
                gb[i * d + k] -= scale * ai[k];
            }
            // softmax over the allowed set
            double max_s = -1e300;
            for (i32 j : allowed[static_cast<std::size_t>(i)]) {
                max_s = std::max(max_s,
                                 dot_rows(ai, b2.data().data() + static_cast<i64>(j) * d, d) / tau);
            }
            double denom = 0.0;
            for (i32 j : allowed[static_cast<std::size_t>(i)]) {
                denom += std::exp(
                    dot_rows(ai, b2.data().data() + static_cast<i64>(j) * d, d) / tau - max_s);
            }
            for (i32 j : allowed[static_cast<std::size_t>(i)]) {
                const double* bj = b2.data().data() + static_cast<i64>(j) * d;
                const double w =
                    std::exp(dot_rows(ai, bj, d) / tau - max_s) / denom;
                for (i64 k = 0; k < d; ++k) {
                    ga[i * d + k] += scale * w * bj[k];
                    gb[static_cast<i64>(j) * d + k] += scale * w * ai[k];
                }
            }
        }
        t.accum_grad(ins[0], ga.data());
        t.accum_grad(ins[1], gb.data());
    };
    return tape.custom("graph_infonce", {n1, n2}, Tensor::scalar(total), backward);
}

Var node_infonce(Tape& tape, Var z1, Var z2, const NegativeSets& negatives, double tau) {
    if (tau <= 0.0) throw ConfigError("node_infonce: temperature must be positive");
    const Tensor& v1 = tape.value(z1);
    const Tensor& v2 = tape.value(z2);
    if (v1.ndim() != 3 || !v1.same_shape(v2)) {
        throw ShapeError("node_infonce: expected matching (M,N,D) inputs, got " +
                         shape_str(v1.shape()) + " vs " + shape_str(v2.shape()));
    }
    const i64 m = v1.shape()[0];
    const i64 n = v1.shape()[1];
    const i64 d = v1.shape()[2];
    if (m < 2 && n < 2) throw NumericError("node_infonce: need M >= 2 or N >= 2");
    const auto& temporal = negatives.instance_allowed;
    const auto& spatial = negatives.node_allowed;
    validate_allowed(temporal, m, m, "node_infonce/temporal");
    validate_allowed(spatial, n, n, "node_infonce/spatial");

    Var n1 = tape.l2_normalize_rows(z1);
    Var n2 = tape.l2_normalize_rows(z2);
    const Tensor& a = tape.value(n1);
    const Tensor& b = tape.value(n2);

    auto row = [d, n](const Tensor& t, i64 mi, i64 ni) {
        return t.data().data() + (mi * n + ni) * d;
    };

    double total = 0.0;
    for (i64 mi = 0; mi < m; ++mi) {
        for (i64 ni = 0; ni < n; ++ni) {
            const double* anchor = row(a, mi, ni);
            const auto& snodes = spatial[static_cast<std::size_t>(ni)];
            const auto& tinsts = temporal[static_cast<std::size_t>(mi)];
            if (snodes.empty() && tinsts.empty()) {
                throw NumericError("node_infonce: anchor (instance " + std::to_string(mi) +
                                   ", node " + std::to_string(ni) +
                                   ") has no allowed negatives (r_f=" +
                                   std::to_string(negatives.r_f_minutes) +
                                   " min plus spatial filtering over-filters)");
            }
            const double pos = dot_rows(anchor, row(b, mi, ni), d) / tau;
            double max_s = -1e300;
            for (i32 j : snodes) max_s = std::max(max_s, dot_rows(anchor, row(b, mi, j), d) / tau);
            for (i32 mj : tinsts) max_s = std::max(max_s, dot_rows(anchor, row(b, mj, ni), d) / tau);
            double denom = 0.0;
            for (i32 j : snodes) denom += std::exp(dot_rows(anchor, row(b, mi, j), d) / tau - max_s);
            for (i32 mj : tinsts) {
                denom += std::exp(dot_rows(anchor, row(b, mj, ni), d) / tau - max_s);
            }
            total += -pos + max_s + std::log(denom);
        }
    }
    const double count = static_cast<double>(m * n);
    total /= count;

    auto backward = [temporal, spatial, m, n, d, tau, count](Tape& t, Var out,
                                                             const std::vector<Var>& ins) {
        const double g = t.grad(out)[0];
        const Tensor& a2 = t.value(ins[0]);
        const Tensor& b2 = t.value(ins[1]);
        Tensor ga = Tensor::zeros_like(a2);
        Tensor gb = Tensor::zeros_like(b2);
        auto row = [d, n](const Tensor& t2, i64 mi, i64 ni) {
            return t2.data().data() + (mi * n + ni) * d;
        };
        auto grow = [d, n](Tensor& t2, i64 mi, i64 ni) {
            return t2.data().data() + (mi * n + ni) * d;
        };
        const double scale = g / (count * tau);
        for (i64 mi = 0; mi < m; ++mi) {
            for (i64 ni = 0; ni < n; ++ni) {
                const double* anchor = row(a2, mi, ni);
                const double* bpos = row(b2, mi, ni);
                double* ga_anchor = grow(ga, mi, ni);
                for (i64 k = 0; k < d; ++k) {
                    ga_anchor[k] -= scale * bpos[k];
                    grow(gb, mi, ni)[k] -= scale * anchor[k];
                }
                const auto& snodes = spatial[static_cast<std::size_t>(ni)];
                const auto& tinsts = temporal[static_cast<std::size_t>(mi)];
                double max_s = -1e300;
                for (i32 j : snodes) {
                    max_s = std::max(max_s, dot_rows(anchor, row(b2, mi, j), d) / tau);
                }
                for (i32 mj : tinsts) {
                    max_s = std::max(max_s, dot_rows(anchor, row(b2, mj, ni), d) / tau);
                }
                double denom = 0.0;
                for (i32 j : snodes) {
                    denom += std::exp(dot_rows(anchor, row(b2, mi, j), d) / tau - max_s);
                }
                for (i32 mj : tinsts) {
                    denom += std::exp(dot_rows(anchor, row(b2, mj, ni), d) / tau - max_s);
                }
                for (i32 j : snodes) {
                    const double* bj = row(b2, mi, j);
                    const double w = std::exp(dot_rows(anchor, bj, d) / tau - max_s) / denom;
                    double* gbj = grow(gb, mi, j);
                    for (i64 k = 0; k < d; ++k) {
                        ga_anchor[k] += scale * w * bj[k];
                        gbj[k] += scale * w * anchor[k];
                    }
                }
                for (i32 mj : tinsts) {
                    const double* bj = row(b2, mj, ni);
                    const double w = std::exp(dot_rows(anchor, bj, d) / tau - max_s) / denom;
                    double* gbj = grow(gb, mj, ni);
                    for (i64 k = 0; k < d; ++k) {
                        ga_anchor[k] += scale * w * bj[k];
                        gbj[k] += scale * w * anchor[k];
                    }
                }
            }
        }
        t.accum_grad(ins[0], ga.data());
        t.accum_grad(ins[1], gb.data());
    };
    return tape.custom("node_infonce", {n1, n2}, Tensor::scalar(total), backward);
}

}  // namespace stgcl
