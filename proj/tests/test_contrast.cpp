#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stgcl/contrast.hpp"
#include "stgcl/train.hpp"

using namespace stgcl;

namespace {

Tensor random_rows(std::vector<i64> shape, u64 seed) {
    rng::Stream s{rng::Key(seed)};
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) {
        const double sign = s.next_unit() < 0.5 ? -1.0 : 1.0;
        t[i] = sign * s.uniform(0.1, 1.0);
    }
    return t;
}

std::span<const double> row(const Tensor& t, i64 r, i64 d) {
    return t.data().subspan(static_cast<std::size_t>(r * d), static_cast<std::size_t>(d));
}

// Naive graph-level InfoNCE straight from the definition (no max trick).
double oracle_graph_loss(const Tensor& z1, const Tensor& z2,
                         const std::vector<std::vector<i32>>& allowed, double tau) {
    const i64 m = z1.shape()[0], d = z1.shape()[1];
    double total = 0.0;
    for (i64 i = 0; i < m; ++i) {
        const double pos = std::exp(cosine_sim(row(z1, i, d), row(z2, i, d)) / tau);
        double denom = 0.0;
        for (i32 j : allowed[static_cast<std::size_t>(i)]) {
            denom += std::exp(cosine_sim(row(z1, i, d), row(z2, j, d)) / tau);
        }
        total += -std::log(pos / denom);
    }
    return total / static_cast<double>(m);
}

// Brute-force node-level factorized loss from the set definition.
double oracle_node_loss(const Tensor& z1, const Tensor& z2,
                        const std::vector<std::vector<i32>>& node_allowed,
                        const std::vector<std::vector<i32>>& inst_allowed, double tau) {
    const i64 m = z1.shape()[0], n = z1.shape()[1], d = z1.shape()[2];
    auto vec = [&](const Tensor& t, i64 mi, i64 ni) {
        return t.data().subspan(static_cast<std::size_t>((mi * n + ni) * d),
                                static_cast<std::size_t>(d));
    };
    double total = 0.0;
    for (i64 mi = 0; mi < m; ++mi) {
        for (i64 ni = 0; ni < n; ++ni) {
            const double pos = std::exp(cosine_sim(vec(z1, mi, ni), vec(z2, mi, ni)) / tau);
            double denom = 0.0;
            for (i32 j : node_allowed[static_cast<std::size_t>(ni)]) {
                denom += std::exp(cosine_sim(vec(z1, mi, ni), vec(z2, mi, j)) / tau);
            }
            for (i32 mj : inst_allowed[static_cast<std::size_t>(mi)]) {
                denom += std::exp(cosine_sim(vec(z1, mi, ni), vec(z2, mj, ni)) / tau);
            }
            total += -std::log(pos / denom);
        }
    }
    return total / static_cast<double>(m * n);
}

std::vector<std::vector<i32>> all_but_self(i64 m) {
    std::vector<std::vector<i32>> out(static_cast<std::size_t>(m));
    for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < m; ++j) {
            if (j != i) out[static_cast<std::size_t>(i)].push_back(static_cast<i32>(j));
        }
    }
    return out;
}

double graph_loss_value(const Tensor& z1, const Tensor& z2, const NegativeSets& negs, double tau) {
    Tape tape(Tape::Mode::kEval);
    return tape.value(graph_infonce(tape, tape.constant(z1), tape.constant(z2), negs, tau)).item();
}

double node_loss_value(const Tensor& z1, const Tensor& z2, const NegativeSets& negs, double tau) {
    Tape tape(Tape::Mode::kEval);
    return tape.value(node_infonce(tape, tape.constant(z1), tape.constant(z2), negs, tau)).item();
}

SensorGraph line_graph3() {
    Tensor d({3, 3});
    d.at({0, 1}) = d.at({1, 0}) = 1.0;
    d.at({1, 2}) = d.at({2, 1}) = 1.0;
    d.at({0, 2}) = d.at({2, 0}) = 2.0;
    return build_adjacency(d, 0.01);
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    std::vector<double> v = {0.3, -0.4, 1.2};
    CHECK(cosine_sim(v, v) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> e1 = {1.0, 0.0};
    std::vector<double> e2 = {0.0, 1.0};
    CHECK(cosine_sim(e1, e2) == doctest::Approx(0.0));

    std::vector<double> neg = {-0.3, 0.4, -1.2};
    CHECK(cosine_sim(v, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<double> zero = {0.0, 0.0};
    CHECK_THROWS_AS(cosine_sim(e1, zero), NumericError);
    CHECK_THROWS_AS(cosine_sim(zero, e1), NumericError);
}

TEST_CASE("batched similarities equal looped scalar similarities") {
    const i64 m = 6, d = 4;
    Tensor z1 = random_rows({m, d}, 51);
    Tensor z2 = random_rows({m, d}, 52);
    Tape tape(Tape::Mode::kEval);
    Var n1 = tape.l2_normalize_rows(tape.constant(z1));
    Var n2 = tape.l2_normalize_rows(tape.constant(z2));
    const Tensor& sims = tape.value(tape.matmul(n1, tape.transpose2d(n2)));
    for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < m; ++j) {
            CHECK(std::fabs(sims.at({i, j}) - cosine_sim(row(z1, i, d), row(z2, j, d))) <= 1e-12);
        }
    }
}

TEST_CASE("temporal filter: r_f = 0 allows every other instance") {
    FilterSpec spec{0.0, false, 288, 5};
    // includes duplicate slots, which stay allowed at r_f = 0
    const auto allowed = temporal_filter({10, 10, 200}, spec);
    CHECK(allowed[0] == std::vector<i32>{1, 2});
    CHECK(allowed[1] == std::vector<i32>{0, 2});
    CHECK(allowed[2] == std::vector<i32>{0, 1});
}

TEST_CASE("temporal filter: linear and circular distances") {
    FilterSpec spec{60.0, false, 288, 5};
    {
        // anchor slot 100 vs 110: 50 min apart -> excluded; vs 120: 100 min -> allowed
        const auto allowed = temporal_filter({100, 110, 120}, spec);
        CHECK(allowed[0] == std::vector<i32>{2});
    }
    {
        // midnight wrap: slots 2 and 286 are 20 circular minutes apart -> excluded
        const auto allowed = temporal_filter({2, 286, 144}, spec);
        CHECK(allowed[0] == std::vector<i32>{2});
        CHECK(allowed[1] == std::vector<i32>{2});
    }
}

TEST_CASE("temporal filter rejects r_f of half a day or more") {
    FilterSpec spec{720.0, false, 288, 5};
    CHECK_THROWS_AS(temporal_filter({0, 10}, spec), ConfigError);
    spec.r_f_minutes = -1.0;
    CHECK_THROWS_AS(temporal_filter({0, 10}, spec), ConfigError);
    spec.r_f_minutes = 30.0;
    CHECK_THROWS_AS(temporal_filter({0, 288}, spec), DataError);  // slot out of range
}

TEST_CASE("raising r_f never adds an element to any allowed set") {
    rng::Stream s{rng::Key(61)};
    std::vector<i32> slots;
    for (int i = 0; i < 40; ++i) slots.push_back(static_cast<i32>(s.below(288)));
    FilterSpec lo{30.0, false, 288, 5};
    FilterSpec hi{120.0, false, 288, 5};
    const auto a_lo = temporal_filter(slots, lo);
    const auto a_hi = temporal_filter(slots, hi);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        for (i32 j : a_hi[i]) {
            CHECK(std::find(a_lo[i].begin(), a_lo[i].end(), j) != a_lo[i].end());
        }
    }
}

TEST_CASE("spatial filtering excludes first-order neighbors") {
    SensorGraph g = line_graph3();
    const auto allowed = spatial_allowed(g, true);
    // node 1 is adjacent to 0 and 2: nothing remains
    CHECK(allowed[1].empty());
    // node 0 is adjacent to 1 only: node 2 remains
    CHECK(allowed[0] == std::vector<i32>{2});

    const auto unfiltered = spatial_allowed(g, false);
    CHECK(unfiltered[1] == std::vector<i32>{0, 2});

    // isolated nodes exclude nothing
    Tensor none({3, 3});
    SensorGraph iso = from_weighted_adjacency(none);
    const auto iso_allowed = spatial_allowed(iso, true);
    CHECK(iso_allowed[0] == std::vector<i32>{1, 2});
}

TEST_CASE("graph-level InfoNCE: two orthogonal pairs at tau=1 give -1") {
    Tensor z1({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor z2({2, 2}, {1.0, 0.0, 0.0, 1.0});
    NegativeSets negs;
    negs.instance_allowed = all_but_self(2);
    // per anchor: -log(e^1 / e^0) = -1
    CHECK(graph_loss_value(z1, z2, negs, 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("graph-level loss with r_f=0 equals the unfiltered formula") {
    const i64 m = 16, d = 8;
    FilterSpec spec{0.0, false, 288, 5};
    rng::Stream slot_gen{rng::Key(62)};
    for (int trial = 0; trial < 10; ++trial) {
        Tensor z1 = random_rows({m, d}, 1000 + trial);
        Tensor z2 = random_rows({m, d}, 2000 + trial);
        std::vector<i32> slots;
        for (i64 i = 0; i < m; ++i) slots.push_back(static_cast<i32>(slot_gen.below(288)));
        NegativeSets negs = build_negative_sets(slots, spec, nullptr);
        const double impl = graph_loss_value(z1, z2, negs, 0.1);
        const double oracle = oracle_graph_loss(z1, z2, all_but_self(m), 0.1);
        CHECK(std::fabs(impl - oracle) <= 1e-12);
    }
}

TEST_CASE("default temperature matches the recommended operating point") {
    CHECK(TrainConfig{}.tau == 0.1);
}

TEST_CASE("node-level factorized loss equals the brute-force oracle") {
    const i64 m = 4, n = 5, d = 3;
    Tensor z1 = random_rows({m, n, d}, 71);
    Tensor z2 = random_rows({m, n, d}, 72);

    SUBCASE("without any filtering") {
        NegativeSets negs;
        negs.instance_allowed = all_but_self(m);
        negs.node_allowed = all_but_self(n);
        const double impl = node_loss_value(z1, z2, negs, 0.1);
        const double oracle =
            oracle_node_loss(z1, z2, negs.node_allowed, negs.instance_allowed, 0.1);
        CHECK(std::fabs(impl - oracle) <= 1e-10);
    }
    SUBCASE("with spatial and temporal filtering") {
        Tensor dist({5, 5});
        for (i64 i = 0; i < 5; ++i) {
            for (i64 j = 0; j < 5; ++j) dist.at({i, j}) = static_cast<double>(std::abs(i - j));
        }
        SensorGraph g = build_adjacency(dist, 0.2);
        FilterSpec spec{60.0, true, 288, 5};
        NegativeSets negs = build_negative_sets({0, 30, 60, 200}, spec, &g);
        const double impl = node_loss_value(z1, z2, negs, 0.1);
        const double oracle =
            oracle_node_loss(z1, z2, negs.node_allowed, negs.instance_allowed, 0.1);
        CHECK(std::fabs(impl - oracle) <= 1e-10);
    }
}

TEST_CASE("node-level contrast with a single node is per-node temporal contrast") {
    const i64 m = 5, d = 4;
    Tensor z1 = random_rows({m, 1, d}, 81);
    Tensor z2 = random_rows({m, 1, d}, 82);
    NegativeSets negs;
    negs.instance_allowed = all_but_self(m);
    negs.node_allowed = {{}};  // single node: spatial set is empty
    const double node_loss = node_loss_value(z1, z2, negs, 0.2);

    Tensor f1({m, d}, std::vector<double>(z1.data().begin(), z1.data().end()));
    Tensor f2({m, d}, std::vector<double>(z2.data().begin(), z2.data().end()));
    const double graph_loss = graph_loss_value(f1, f2, negs, 0.2);
    CHECK(std::fabs(node_loss - graph_loss) <= 1e-12);
}

TEST_CASE("over-filtering every negative is a hard error naming the anchor") {
    // complete graph: spatial sets empty; same slots + r_f > 0: temporal empty
    Tensor adj({3, 3});
    for (i64 i = 0; i < 3; ++i) {
        for (i64 j = 0; j < 3; ++j) {
            if (i != j) adj.at({i, j}) = 0.5;
        }
    }
    SensorGraph g = from_weighted_adjacency(adj);
    FilterSpec spec{60.0, true, 288, 5};
    NegativeSets negs = build_negative_sets({100, 100, 100}, spec, &g);

    Tensor z1 = random_rows({3, 3, 2}, 91);
    Tensor z2 = random_rows({3, 3, 2}, 92);
    try {
        node_loss_value(z1, z2, negs, 0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("instance 0") != std::string::npos);
        CHECK(msg.find("60") != std::string::npos);  // names r_f
    }

    // graph level with empty temporal sets errors too
    NegativeSets gnegs;
    gnegs.instance_allowed = {{}, {}, {}};
    gnegs.r_f_minutes = 60.0;
    Tensor f1 = random_rows({3, 4}, 93);
    Tensor f2 = random_rows({3, 4}, 94);
    CHECK_THROWS_AS(graph_loss_value(f1, f2, gnegs, 0.1), NumericError);
}

TEST_CASE("loss is invariant to positive rescaling of the features") {
    const i64 m = 8, d = 5;
    Tensor z1 = random_rows({m, d}, 95);
    Tensor z2 = random_rows({m, d}, 96);
    NegativeSets negs;
    negs.instance_allowed = all_but_self(m);
    const double base = graph_loss_value(z1, z2, negs, 0.1);
    Tensor scaled = z1;
    for (i64 i = 0; i < scaled.numel(); ++i) scaled[i] *= 3.7;
    CHECK(std::fabs(graph_loss_value(scaled, z2, negs, 0.1) - base) <= 1e-10);
}

TEST_CASE("permuting the batch consistently leaves the loss unchanged") {
    const i64 m = 6, d = 4;
    Tensor z1 = random_rows({m, d}, 97);
    Tensor z2 = random_rows({m, d}, 98);
    std::vector<i32> slots = {0, 40, 90, 140, 200, 260};
    FilterSpec spec{60.0, false, 288, 5};
    NegativeSets negs = build_negative_sets(slots, spec, nullptr);
    const double base = graph_loss_value(z1, z2, negs, 0.1);

    const std::vector<i64> perm = {4, 2, 0, 5, 1, 3};
    Tensor p1({m, d}), p2({m, d});
    std::vector<i32> pslots(m);
    for (i64 i = 0; i < m; ++i) {
        pslots[i] = slots[static_cast<std::size_t>(perm[i])];
        for (i64 k = 0; k < d; ++k) {
            p1.at({i, k}) = z1.at({perm[i], k});
            p2.at({i, k}) = z2.at({perm[i], k});
        }
    }
    NegativeSets pnegs = build_negative_sets(pslots, spec, nullptr);
    CHECK(std::fabs(graph_loss_value(p1, p2, pnegs, 0.1) - base) <= 1e-12);
}

TEST_CASE("raising a positive pair's similarity lowers the loss") {
    const i64 m = 4, d = 3;
    Tensor z1 = random_rows({m, d}, 99);
    Tensor z2 = random_rows({m, d}, 100);
    NegativeSets negs;
    negs.instance_allowed = all_but_self(m);
    const double before = graph_loss_value(z1, z2, negs, 0.1);
    // move z2 row 0 toward z1 row 0
    for (i64 k = 0; k < d; ++k) {
        z2.at({0, k}) = 0.2 * z2.at({0, k}) + 0.8 * z1.at({0, k});
    }
    const double after = graph_loss_value(z1, z2, negs, 0.1);
    CHECK(after < before);
}

TEST_CASE("temperature must be positive") {
    Tensor z1 = random_rows({3, 2}, 101);
    Tensor z2 = random_rows({3, 2}, 102);
    NegativeSets negs;
    negs.instance_allowed = all_but_self(3);
    CHECK_THROWS_AS(graph_loss_value(z1, z2, negs, 0.0), ConfigError);
    CHECK_THROWS_AS(graph_loss_value(z1, z2, negs, -0.1), ConfigError);
}
