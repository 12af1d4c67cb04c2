#include <doctest.h>

#include <cmath>

#include "stgcl/gradcheck.hpp"
#include "stgcl/tensor.hpp"

using namespace stgcl;

namespace {

Tensor randn(std::vector<i64> shape, u64 seed) {
    rng::Stream s{rng::Key(seed)};
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) t[i] = s.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("relu forward") {
    Tape tape(Tape::Mode::kTrain);
    Var v = tape.leaf(Tensor({2}, {-1.0, 2.0}));
    const Tensor& out = tape.value(tape.relu(v));
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 2.0);
}

TEST_CASE("stacked dilated causal convs consume a length-13 series") {
    // receptive field 1 + sum (k-1)*d = 13 for dilations 1,2,1,2,1,2,1,2
    Tape tape(Tape::Mode::kEval);
    Var x = tape.constant(randn({1, 1, 1, 13}, 99));
    Tensor w({1, 1, 2}, {0.5, 0.25});
    Tensor b({1});
    const std::vector<i64> dilations = {1, 2, 1, 2, 1, 2, 1, 2};
    Var h = x;
    for (i64 d : dilations) {
        h = tape.dilated_causal_conv1d(h, tape.constant(w), tape.constant(b), d);
    }
    CHECK(tape.value(h).shape() == std::vector<i64>{1, 1, 1, 1});

    // zero-padding probe: values before the receptive field cannot leak in
    Tensor padded({1, 1, 1, 14});
    const Tensor& base = tape.value(x);
    padded[0] = 123456.0;  // outside the field once shifted
    for (i64 i = 0; i < 13; ++i) padded[i + 1] = base[i];
    Var x2 = tape.constant(padded);
    Var h2 = x2;
    for (i64 d : dilations) {
        h2 = tape.dilated_causal_conv1d(h2, tape.constant(w), tape.constant(b), d);
    }
    const Tensor& out2 = tape.value(h2);
    CHECK(out2.shape() == std::vector<i64>{1, 1, 1, 2});
    CHECK(out2[1] == doctest::Approx(tape.value(h)[0]).epsilon(1e-12));
}

TEST_CASE("batch_norm eval with identity running stats is exact identity") {
    Tape tape(Tape::Mode::kEval);
    Tensor x = randn({4, 3}, 7);
    BatchNormState state(3);  // mean 0, var 1
    Var v = tape.constant(x);
    Var gamma = tape.constant(Tensor::full({3}, 1.0));
    Var beta = tape.constant(Tensor({3}));
    const Tensor& out = tape.value(tape.batch_norm(v, gamma, beta, state));
    for (i64 i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("batch_norm over a constant batch zeroes the normalized values") {
    Tape tape(Tape::Mode::kTrain);
    Var x = tape.leaf(Tensor({3, 2}, {5.0, -1.0, 5.0, -1.0, 5.0, -1.0}));
    Var gamma = tape.leaf(Tensor::full({2}, 2.0));
    Var beta = tape.leaf(Tensor({2}, {0.25, -0.5}));
    BatchNormState state(2);
    const Tensor& out = tape.value(tape.batch_norm(x, gamma, beta, state));
    for (i64 r = 0; r < 3; ++r) {
        CHECK(out[r * 2 + 0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(out[r * 2 + 1] == doctest::Approx(-0.5).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm train mode rejects a single row") {
    Tape tape(Tape::Mode::kTrain);
    Var x = tape.leaf(Tensor({1, 2}, {1.0, 2.0}));
    Var gamma = tape.leaf(Tensor::full({2}, 1.0));
    Var beta = tape.leaf(Tensor({2}));
    BatchNormState state(2);
    CHECK_THROWS_AS(tape.batch_norm(x, gamma, beta, state), NumericError);
}

TEST_CASE("dropout is exact identity at p=0 and in eval mode") {
    Tensor x = randn({5, 5}, 3);
    rng::Stream stream{rng::Key(11)};
    {
        Tape tape(Tape::Mode::kTrain);
        Var v = tape.leaf(x);
        Var out = tape.dropout(v, 0.0, stream);
        for (i64 i = 0; i < x.numel(); ++i) CHECK(tape.value(out)[i] == x[i]);
    }
    {
        Tape tape(Tape::Mode::kEval);
        Var v = tape.constant(x);
        Var out = tape.dropout(v, 0.7, stream);
        for (i64 i = 0; i < x.numel(); ++i) CHECK(tape.value(out)[i] == x[i]);
    }
}

TEST_CASE("dropout applies inverted scaling in train mode") {
    Tape tape(Tape::Mode::kTrain);
    Tensor x = Tensor::full({1000}, 1.0);
    rng::Stream stream{rng::Key(5)};
    const Tensor& out = tape.value(tape.dropout(tape.leaf(x), 0.5, stream));
    i64 kept = 0;
    for (i64 i = 0; i < out.numel(); ++i) {
        CHECK((out[i] == 0.0 || out[i] == 2.0));
        if (out[i] != 0.0) ++kept;
    }
    CHECK(kept > 350);
    CHECK(kept < 650);
}

TEST_CASE("backward of w*w gives 2w") {
    Tape tape(Tape::Mode::kTrain);
    Parameter w("w", Tensor({1}, {3.0}));
    Var v = tape.watch(w);
    Var loss = tape.sum_all(tape.mul(v, v));
    tape.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("gradient of mean-abs loss at prediction == target is zero") {
    Tape tape(Tape::Mode::kTrain);
    Tensor y = randn({4}, 21);
    Parameter pred("pred", y);
    Var loss = tape.mean_all(tape.abs_val(tape.sub(tape.watch(pred), tape.constant(y))));
    tape.backward(loss);
    for (i64 i = 0; i < 4; ++i) CHECK(pred.grad[i] == 0.0);
}

TEST_CASE("backward errors: non-scalar, double call, eval tape, detached") {
    {
        Tape tape(Tape::Mode::kTrain);
        Var v = tape.leaf(randn({3}, 1));
        CHECK_THROWS_AS(tape.backward(v), ShapeError);
    }
    {
        Tape tape(Tape::Mode::kTrain);
        Var v = tape.leaf(randn({3}, 1));
        Var loss = tape.sum_all(v);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), NumericError);
    }
    {
        Tape tape(Tape::Mode::kEval);
        Var v = tape.constant(randn({3}, 1));
        Var loss = tape.sum_all(v);
        CHECK_THROWS_AS(tape.backward(loss), NumericError);
    }
    {
        Tape tape(Tape::Mode::kTrain);
        Var v = tape.constant(randn({3}, 1));  // constant: no grad path
        Var loss = tape.sum_all(v);
        CHECK_THROWS_AS(tape.backward(loss), NumericError);
    }
}

TEST_CASE("shape mismatch error names both shapes") {
    Tape tape(Tape::Mode::kTrain);
    Var a = tape.leaf(randn({2, 3}, 1));
    Var b = tape.leaf(randn({3, 2}, 2));
    try {
        tape.add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
}

TEST_CASE("NaN input is rejected") {
    Tape tape(Tape::Mode::kTrain);
    Tensor bad({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(tape.leaf(bad), NumericError);
}

TEST_CASE("forward determinism: same inputs give bit-identical outputs") {
    auto run = [] {
        Tape tape(Tape::Mode::kTrain);
        Var x = tape.leaf(randn({4, 6}, 17));
        Var w = tape.leaf(randn({6, 5}, 18));
        Var b = tape.leaf(randn({5}, 19));
        Var out = tape.l2_normalize_rows(tape.tanh_act(tape.linear(x, w, b)));
        return tape.value(out);
    };
    const Tensor a = run();
    const Tensor b = run();
    for (i64 i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward linearity: grad of sum equals sum of grads") {
    Tensor init = randn({3, 3}, 33);
    Tensor x = randn({3, 3}, 34);

    auto grad_of = [&](int which) {
        Tape tape(Tape::Mode::kTrain);
        Parameter w("w", init);
        Var wv = tape.watch(w);
        Var xv = tape.constant(x);
        Var l1 = tape.mean_all(tape.abs_val(tape.sub(wv, xv)));
        Var l2 = tape.sum_all(tape.mul(wv, wv));
        Var loss = which == 0 ? l1 : (which == 1 ? l2 : tape.add(l1, l2));
        tape.backward(loss);
        return w.grad;
    };
    const Tensor g1 = grad_of(0);
    const Tensor g2 = grad_of(1);
    const Tensor gsum = grad_of(2);
    for (i64 i = 0; i < gsum.numel(); ++i) {
        CHECK(std::fabs(gsum[i] - (g1[i] + g2[i])) <= 1e-12);
    }
}

TEST_CASE("finite differences validate a composite op") {
    rng::Key key(404);
    rng::Stream s(key);
    Tensor x(std::vector<i64>{3, 4});
    for (i64 i = 0; i < x.numel(); ++i) x[i] = s.uniform(-1.0, 1.0);
    const double err = gradcheck::fd_max_rel_error(
        [](Tape& t, const std::vector<Var>& v) {
            return t.mean_all(t.mul(t.tanh_act(v[0]), t.sigmoid(v[0])));
        },
        {x});
    CHECK(err <= 1e-4);
}

TEST_CASE("gradcheck suite passes on a quick pass") {
    const auto checks = gradcheck::run_all(123, 2);
    for (const auto& c : checks) {
        INFO(c.op, " max_rel_err=", c.max_rel_err);
        CHECK(c.pass);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST_CASE("adam clips by global norm before updating") {
    // grads (6,8) have global norm 10; clip 5 halves them
    Parameter a("a", Tensor({1}, {0.0}));
    Parameter b("b", Tensor({1}, {0.0}));
    a.grad = Tensor({1}, {6.0});
    b.grad = Tensor({1}, {8.0});
    AdamConfig cfg;
    cfg.clip_norm = 5.0;
    Adam adam({{{&a, &b}, 1e-3}}, cfg);
    adam.step();
    CHECK(adam.last_grad_norm() == doctest::Approx(10.0).epsilon(1e-12));
    // first-step update is -lr * g/(|g|+eps); sign tells us clipping did not
    // change it, so check the moment buffers instead
    CHECK(a.adam_m[0] == doctest::Approx(0.1 * 3.0).epsilon(1e-12));
    CHECK(b.adam_m[0] == doctest::Approx(0.1 * 4.0).epsilon(1e-12));
}

TEST_CASE("first adam step from zero moments is -lr * g/(|g|+eps)") {
    const double lr = 0.01, eps = 1e-8, g = 0.37;
    Parameter p("p", Tensor({1}, {1.0}));
    p.grad = Tensor({1}, {g});
    AdamConfig cfg;
    cfg.eps = eps;
    cfg.clip = false;
    Adam adam({{{&p}, lr}}, cfg);
    adam.step();
    const double expected = 1.0 - lr * g / (std::fabs(g) + eps);
    CHECK(p.value[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("disabled clipping equals unclipped adam even for large grads") {
    Parameter p1("p", Tensor({1}, {0.0}));
    Parameter p2("p", Tensor({1}, {0.0}));
    p1.grad = Tensor({1}, {100.0});
    p2.grad = Tensor({1}, {100.0});
    AdamConfig no_clip;
    no_clip.clip = false;
    AdamConfig huge_clip;
    huge_clip.clip_norm = 1e9;
    Adam a({{{&p1}, 1e-3}}, no_clip);
    Adam b({{{&p2}, 1e-3}}, huge_clip);
    a.step();
    b.step();
    CHECK(p1.value[0] == p2.value[0]);
}

TEST_CASE("adam rejects non-positive learning rates") {
    Parameter p("p", Tensor({1}, {0.0}));
    CHECK_THROWS_AS(Adam({{{&p}, 0.0}}, AdamConfig{}), NumericError);
    CHECK_THROWS_AS(Adam({{{&p}, -1.0}}, AdamConfig{}), NumericError);
    AdamConfig bad;
    bad.clip_norm = 0.0;
    CHECK_THROWS_AS(Adam({{{&p}, 1e-3}}, bad), NumericError);
}
