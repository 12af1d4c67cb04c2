#include <doctest.h>

#include <cmath>

#include "stgcl/augment.hpp"

using namespace stgcl;

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

// Definitional O(L^2) DCT-II / DCT-III pair, written independently of the
// implementation under test.
std::vector<double> oracle_dct(const std::vector<double>& x) {
    const std::size_t len = x.size();
    std::vector<double> out(len, 0.0);
    for (std::size_t k = 0; k < len; ++k) {
        double acc = 0.0;
        for (std::size_t n = 0; n < len; ++n) {
            acc += x[n] * std::cos(kPi / static_cast<double>(len) *
                                   (static_cast<double>(n) + 0.5) * static_cast<double>(k));
        }
        const double c = k == 0 ? std::sqrt(1.0 / static_cast<double>(len))
                                : std::sqrt(2.0 / static_cast<double>(len));
        out[k] = c * acc;
    }
    return out;
}

std::vector<double> oracle_idct(const std::vector<double>& c) {
    const std::size_t len = c.size();
    std::vector<double> out(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
        double acc = std::sqrt(1.0 / static_cast<double>(len)) * c[0];
        for (std::size_t k = 1; k < len; ++k) {
            acc += std::sqrt(2.0 / static_cast<double>(len)) * c[k] *
                   std::cos(kPi / static_cast<double>(len) * (static_cast<double>(n) + 0.5) *
                            static_cast<double>(k));
        }
        out[n] = acc;
    }
    return out;
}

std::vector<double> random_vec(std::size_t len, rng::Stream& s, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(len);
    for (auto& x : v) x = s.uniform(lo, hi);
    return v;
}

Tensor random_matrix(i64 rows, i64 cols, rng::Stream& s) {
    Tensor t({rows, cols});
    for (i64 i = 0; i < t.numel(); ++i) t[i] = s.uniform(-1.0, 1.0);
    return t;
}

SensorGraph small_graph() {
    Tensor d({4, 4});
    const double dist[4][4] = {{0, 1, 2, 3}, {1, 0, 1, 2}, {2, 1, 0, 1}, {3, 2, 1, 0}};
    for (i64 i = 0; i < 4; ++i) {
        for (i64 j = 0; j < 4; ++j) d.at({i, j}) = dist[i][j];
    }
    return build_adjacency(d, 0.01);
}

}  // namespace

TEST_CASE("edge mask endpoints: r=0 identity, r=1 clears everything") {
    rng::Stream s1{rng::Key(1)};
    SensorGraph g = small_graph();
    Tensor same = edge_mask(g.adjacency, 0.0, s1);
    for (i64 i = 0; i < same.numel(); ++i) CHECK(same[i] == g.adjacency[i]);

    rng::Stream s2{rng::Key(2)};
    Tensor zero = edge_mask(g.adjacency, 1.0, s2);
    for (i64 i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);
}

TEST_CASE("edge mask survival fraction sits in the binomial band") {
    // r_em = 0.3 keeps ~70%; 3-sigma band over 100x100 entries
    rng::Stream s{rng::Key(33)};
    Tensor a = Tensor::full({100, 100}, 0.5);
    Tensor masked = edge_mask(a, 0.3, s);
    i64 kept = 0;
    for (i64 i = 0; i < masked.numel(); ++i) {
        CHECK(masked[i] <= a[i]);  // never increases an entry
        if (masked[i] != 0.0) ++kept;
    }
    const double n = 10000.0, p = 0.7;
    const double sd = std::sqrt(n * p * (1 - p));
    CHECK(kept >= static_cast<i64>(n * p - 3 * sd));
    CHECK(kept <= static_cast<i64>(n * p + 3 * sd));
}

TEST_CASE("input mask: masked entries are exactly -1, unmasked untouched") {
    rng::Stream gen{rng::Key(4)};
    Tensor window = random_matrix(12, 8, gen);
    rng::Stream s0{rng::Key(5)};
    Tensor same = input_mask(window, 0.0, s0);
    for (i64 i = 0; i < window.numel(); ++i) CHECK(same[i] == window[i]);

    rng::Stream s1{rng::Key(6)};
    Tensor masked = input_mask(window, 0.35, s1);
    i64 changed = 0;
    for (i64 i = 0; i < window.numel(); ++i) {
        if (masked[i] != window[i]) {
            CHECK(masked[i] == -1.0);
            ++changed;
        }
    }
    CHECK(changed > 0);
}

TEST_CASE("input mask at the 1% operating point masks ~1% of entries") {
    rng::Stream s{rng::Key(7)};
    Tensor window(std::vector<i64>{1000, 100});  // 1e5 zeros
    Tensor masked = input_mask(window, 0.01, s);
    i64 hits = 0;
    for (i64 i = 0; i < masked.numel(); ++i) {
        if (masked[i] == -1.0) ++hits;
    }
    const double n = 1e5, p = 0.01;
    const double sd = std::sqrt(n * p * (1 - p));
    CHECK(hits >= static_cast<i64>(n * p - 3 * sd));
    CHECK(hits <= static_cast<i64>(n * p + 3 * sd));
}

TEST_CASE("temporal shift: endpoints and hand example") {
    Tensor w({2, 1}, {0.0, 2.0});
    Tensor next({2, 1}, {2.0, 4.0});

    Tensor same = temporal_shift(w, next, 1.0);
    CHECK(same[0] == 0.0);
    CHECK(same[1] == 2.0);

    Tensor mid = temporal_shift(w, next, 0.5);
    CHECK(mid[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(mid[1] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("temporal shift stays between the two source windows") {
    rng::Stream s{rng::Key(8)};
    Tensor a = random_matrix(6, 5, s);
    Tensor b = random_matrix(6, 5, s);
    Tensor out = temporal_shift(a, b, 0.37);
    for (i64 i = 0; i < out.numel(); ++i) {
        CHECK(out[i] >= std::min(a[i], b[i]) - 1e-15);
        CHECK(out[i] <= std::max(a[i], b[i]) + 1e-15);
    }
}

TEST_CASE("dct: constant sequence is DC only") {
    std::vector<double> x(24, 3.5);
    auto c = dct(x);
    CHECK(c[0] == doctest::Approx(3.5 * std::sqrt(24.0)).epsilon(1e-12));
    for (std::size_t k = 1; k < c.size(); ++k) CHECK(std::fabs(c[k]) <= 1e-12);
}

TEST_CASE("dct matches the definitional oracle and round trips") {
    rng::Stream s{rng::Key(100)};
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_vec(24, s);
        auto c_impl = dct(x);
        auto c_oracle = oracle_dct(x);
        for (std::size_t k = 0; k < x.size(); ++k) {
            CHECK(std::fabs(c_impl[k] - c_oracle[k]) <= 1e-12);
        }
        auto back = idct(c_impl);
        auto back_oracle = oracle_idct(c_oracle);
        for (std::size_t n = 0; n < x.size(); ++n) {
            CHECK(std::fabs(back[n] - x[n]) <= 1e-9);
            CHECK(std::fabs(back_oracle[n] - x[n]) <= 1e-9);
        }
    }
}

TEST_CASE("dct preserves the L2 norm (orthonormality)") {
    rng::Stream s{rng::Key(101)};
    auto x = random_vec(24, s);
    auto c = dct(x);
    double nx = 0.0, nc = 0.0;
    for (double v : x) nx += v * v;
    for (double v : c) nc += v * v;
    CHECK(std::fabs(std::sqrt(nx) - std::sqrt(nc)) <= 1e-9);
}

TEST_CASE("input smoothing: identity at r_is=1, low coefficients always exact") {
    SensorGraph g = small_graph();
    rng::Stream gen{rng::Key(9)};
    Tensor block = random_matrix(24, 4, gen);

    rng::Stream s1{rng::Key(10)};
    Tensor same = input_smooth_full(block, &g.norm_adjacency, 20, 1.0, s1);
    for (i64 i = 0; i < block.numel(); ++i) CHECK(std::fabs(same[i] - block[i]) <= 1e-9);

    rng::Stream s2{rng::Key(11)};
    const i64 keep = 20;
    Tensor out = input_smooth_full(block, &g.norm_adjacency, keep, 0.5, s2);
    for (i64 node = 0; node < 4; ++node) {
        std::vector<double> in_col(24), out_col(24);
        for (i64 t = 0; t < 24; ++t) {
            in_col[t] = block[t * 4 + node];
            out_col[t] = out[t * 4 + node];
        }
        auto cin = oracle_dct(in_col);
        auto cout = oracle_dct(out_col);
        for (i64 k = 0; k < keep; ++k) CHECK(std::fabs(cin[k] - cout[k]) <= 1e-9);
        // high coefficients shrink by a factor inside [r_is, 1]
        for (std::size_t k = keep; k < 24; ++k) {
            if (std::fabs(cin[k]) > 1e-8) {
                const double ratio = cout[k] / cin[k];
                CHECK(ratio >= 0.5 - 1e-9);
                CHECK(ratio <= 1.0 + 1e-9);
            }
        }
    }
}

TEST_CASE("input smoothing validates keep_low and works without a graph") {
    rng::Stream gen{rng::Key(12)};
    Tensor block = random_matrix(24, 3, gen);
    rng::Stream s{rng::Key(13)};
    CHECK_THROWS_AS(input_smooth_full(block, nullptr, 25, 0.5, s), ConfigError);
    rng::Stream s2{rng::Key(14)};
    Tensor out = input_smooth(block, nullptr, 20, 0.5, 12, s2);
    CHECK(out.shape() == std::vector<i64>{12, 3});
}

TEST_CASE("augmentations are deterministic given the same key") {
    SensorGraph g = small_graph();
    rng::Stream gen{rng::Key(15)};
    Tensor block = random_matrix(24, 4, gen);
    auto run = [&](u64 key) {
        rng::Stream s{rng::Key(key)};
        return input_smooth_full(block, &g.norm_adjacency, 18, 0.4, s);
    };
    Tensor a = run(77);
    Tensor b = run(77);
    Tensor c = run(78);
    bool any_diff = false;
    for (i64 i = 0; i < a.numel(); ++i) {
        CHECK(a[i] == b[i]);
        if (a[i] != c[i]) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("batch driver: second view, edge-mask graph override, shift fallback") {
    // tiny dataset: 4 nodes, enough steps for S=T=4
    SynthConfig scfg;
    scfg.nodes = 4;
    scfg.days = 3;
    scfg.steps_per_day = 48;
    scfg.seed = 5;
    SynthResult synth = synth_generate(scfg);
    TimeSeriesDataset ds(std::move(synth.series), 48, 30);
    ds.prepare(SplitRatios{0.6, 0.2, 0.2}, 4, 4);
    const auto& train = ds.instances(Partition::kTrain);
    InstanceBatch batch = ds.make_batch({train[0], train[1], train.back()});
    CHECK_FALSE(train.back().has_next);

    // identity settings reproduce the inputs bit-for-bit through the driver
    {
        std::vector<AugmentSpec> specs = {
            {AugmentMethod::kInputMask, 0.0, 0},
            {AugmentMethod::kEdgeMask, 0.0, 0},
        };
        AugmentedBatch out =
            apply_augmentations(specs, batch, ds, synth.graph, rng::Key(1), rng::Key(2));
        for (i64 i = 0; i < batch.inputs.numel(); ++i) {
            CHECK(out.inputs[i] == batch.inputs[i]);
        }
        REQUIRE(out.graph.has_value());
        for (i64 i = 0; i < synth.graph.adjacency.numel(); ++i) {
            CHECK(out.graph->adjacency[i] == synth.graph.adjacency[i]);
        }
    }

    // temporal shift leaves the time-of-day channel alone and falls back to
    // identity on the final window of the partition
    {
        std::vector<AugmentSpec> specs = {{AugmentMethod::kTemporalShift, 0.2, 0}};
        AugmentedBatch out =
            apply_augmentations(specs, batch, ds, synth.graph, rng::Key(3), rng::Key(4));
        CHECK_FALSE(out.graph.has_value());
        const i64 s = 4, n = 4;
        for (i64 b = 0; b < batch.size(); ++b) {
            for (i64 step = 0; step < s; ++step) {
                for (i64 node = 0; node < n; ++node) {
                    CHECK(out.inputs.at({b, step, node, 1}) ==
                          batch.inputs.at({b, step, node, 1}));
                }
            }
        }
        // last item (no next window): target channel unchanged
        const i64 last = batch.size() - 1;
        for (i64 step = 0; step < s; ++step) {
            for (i64 node = 0; node < n; ++node) {
                CHECK(out.inputs.at({last, step, node, 0}) ==
                      batch.inputs.at({last, step, node, 0}));
            }
        }
        // first item: value moved strictly toward the next window somewhere
        bool moved = false;
        for (i64 step = 0; step < s && !moved; ++step) {
            for (i64 node = 0; node < n && !moved; ++node) {
                if (out.inputs.at({0, step, node, 0}) != batch.inputs.at({0, step, node, 0})) {
                    moved = true;
                }
            }
        }
        CHECK(moved);
    }
}
