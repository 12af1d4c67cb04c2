#include "stgcl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "stgcl/contrast.hpp"

namespace stgcl::gradcheck {

double fd_max_rel_error(const Builder& builder, const std::vector<Tensor>& inputs,
                        FdOptions options) {
    // reverse-mode gradients
    std::vector<Tensor> ad_grads;
    {
        Tape tape(Tape::Mode::kTrain);
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
        Var loss = builder(tape, vars);
        tape.backward(loss);
        for (Var v : vars) ad_grads.push_back(tape.grad(v));
    }

    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tape(Tape::Mode::kTrain);
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const Tensor& t : xs) vars.push_back(tape.leaf(t));
        return tape.value(builder(tape, vars)).item();
    };

    const double h = options.step;
    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (i64 e = 0; e < inputs[i].numel(); ++e) {
            const double original = probe[i][e];
            probe[i][e] = original + h;
            const double fp = eval(probe);
            probe[i][e] = original - h;
            const double fm = eval(probe);
            probe[i][e] = original;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = ad_grads[i][e];
            const double rel =
                std::fabs(ad - fd) / std::max({1.0, std::fabs(ad), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace {

Tensor random_tensor(std::vector<i64> shape, rng::Stream& stream, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) t[i] = stream.uniform(lo, hi);
    return t;
}

// Keeps |x| away from the kink of abs/relu so finite differences are valid.
Tensor random_tensor_away_from_zero(std::vector<i64> shape, rng::Stream& stream,
                                    double margin = 0.2) {
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) {
        const double sign = stream.next_unit() < 0.5 ? -1.0 : 1.0;
        t[i] = sign * stream.uniform(margin, 1.0);
    }
    return t;
}

// Scalar probe: weighted sum with fixed random weights, so upstream
// gradients differ per element.
Var weighted_sum(Tape& tape, Var v, rng::Key key) {
    const Tensor& value = tape.value(v);
    rng::Stream stream(key);
    Tensor weights = random_tensor(value.shape(), stream);
    return tape.sum_all(tape.mul(v, tape.constant(weights)));
}

struct Case {
    std::string name;
    std::function<double(rng::Key)> run;  // returns max rel error for one instance
};

std::vector<std::vector<i32>> random_allowed(i64 anchors, i64 extent, rng::Stream& stream) {
    std::vector<std::vector<i32>> allowed(static_cast<std::size_t>(anchors));
    for (i64 i = 0; i < anchors; ++i) {
        for (i64 j = 0; j < extent; ++j) {
            if (j == i) continue;
            if (stream.next_unit() < 0.7) allowed[i].push_back(static_cast<i32>(j));
        }
        if (allowed[i].empty()) {
            allowed[i].push_back(static_cast<i32>((i + 1) % extent));
        }
    }
    return allowed;
}

std::vector<Case> make_cases() {
    std::vector<Case> cases;
    auto add = [&cases](std::string name, std::function<double(rng::Key)> run) {
        cases.push_back({std::move(name), std::move(run)});
    };

    add("add", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        auto b = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.add(v[0], v[1]), key.fold("w"));
            },
            {a, b});
    });
    add("sub", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        auto b = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.sub(v[0], v[1]), key.fold("w"));
            },
            {a, b});
    });
    add("mul", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        auto b = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.mul(v[0], v[1]), key.fold("w"));
            },
            {a, b});
    });
    add("scale_add_scalar", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({5}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.add_scalar(t.scale(v[0], -1.7), 0.3), key.fold("w"));
            },
            {a});
    });
    add("relu", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor_away_from_zero({4, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.relu(v[0]), key.fold("w"));
            },
            {a});
    });
    add("tanh", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({4, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.tanh_act(v[0]), key.fold("w"));
            },
            {a});
    });
    add("sigmoid", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({4, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.sigmoid(v[0]), key.fold("w"));
            },
            {a});
    });
    add("abs", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor_away_from_zero({4, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.abs_val(v[0]), key.fold("w"));
            },
            {a});
    });
    add("log", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({4, 3}, s, 0.5, 1.5);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.log_nat(v[0]), key.fold("w"));
            },
            {a});
    });
    add("exp", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({4, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.exp_nat(v[0]), key.fold("w"));
            },
            {a});
    });
    add("reshape_permute", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({2, 3, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                Var p = t.permute(v[0], {2, 0, 1});
                return weighted_sum(t, t.reshape(p, {4, 6}), key.fold("w"));
            },
            {a});
    });
    add("transpose2d", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 5}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.transpose2d(v[0]), key.fold("w"));
            },
            {a});
    });
    add("concat", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({2, 3}, s);
        auto b = random_tensor({2, 2}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.concat(v[0], v[1], 1), key.fold("w"));
            },
            {a, b});
    });
    add("slice", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 6}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.slice(v[0], 1, 2, 3), key.fold("w"));
            },
            {a});
    });
    add("pad_front", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({2, 2, 2, 3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.pad_front(v[0], 3, 2), key.fold("w"));
            },
            {a});
    });
    add("sum_all", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [](Tape& t, const std::vector<Var>& v) { return t.sum_all(v[0]); }, {a});
    });
    add("mean_all", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [](Tape& t, const std::vector<Var>& v) { return t.mean_all(v[0]); }, {a});
    });
    add("sum_axis", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4, 2}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.sum_axis(v[0], 1), key.fold("w"));
            },
            {a});
    });
    add("matmul", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        auto b = random_tensor({4, 2}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.matmul(v[0], v[1]), key.fold("w"));
            },
            {a, b});
    });
    add("linear", [](rng::Key key) {
        rng::Stream s(key);
        auto x = random_tensor({4, 3}, s);
        auto w = random_tensor({3, 5}, s);
        auto b = random_tensor({5}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.linear(v[0], v[1], v[2]), key.fold("w"));
            },
            {x, w, b});
    });
    add("l2_normalize", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor_away_from_zero({4, 5}, s, 0.3);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.l2_normalize_rows(v[0]), key.fold("w"));
            },
            {a});
    });
    add("dropout", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({5, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                rng::Stream mask(key.fold("mask"));  // same mask at every probe
                return weighted_sum(t, t.dropout(v[0], 0.4, mask), key.fold("w"));
            },
            {a});
    });
    add("batch_norm", [](rng::Key key) {
        rng::Stream s(key);
        auto x = random_tensor({6, 3}, s);
        auto gamma = random_tensor({3}, s, 0.5, 1.5);
        auto beta = random_tensor({3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                BatchNormState state(3);
                return weighted_sum(t, t.batch_norm(v[0], v[1], v[2], state), key.fold("w"));
            },
            {x, gamma, beta});
    });
    add("channel_linear", [](rng::Key key) {
        rng::Stream s(key);
        auto x = random_tensor({2, 3, 2, 2}, s);
        auto w = random_tensor({4, 3}, s);
        auto b = random_tensor({4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.channel_linear(v[0], v[1], v[2]), key.fold("w"));
            },
            {x, w, b});
    });
    add("dilated_causal_conv1d", [](rng::Key key) {
        rng::Stream s(key);
        auto x = random_tensor({2, 2, 2, 7}, s);
        auto w = random_tensor({3, 2, 2}, s);
        auto b = random_tensor({3}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.dilated_causal_conv1d(v[0], v[1], v[2], 2),
                                    key.fold("w"));
            },
            {x, w, b});
    });
    add("node_mix", [](rng::Key key) {
        rng::Stream s(key);
        auto x = random_tensor({2, 2, 3, 2}, s);
        Tensor adj({3, 3});
        for (i64 i = 0; i < adj.numel(); ++i) adj[i] = s.uniform(0.0, 1.0);
        return fd_max_rel_error(
            [key, adj](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.node_mix(v[0], adj), key.fold("w"));
            },
            {x});
    });
    add("gated_tanh_sigmoid", [](rng::Key key) {
        rng::Stream s(key);
        auto a = random_tensor({3, 4}, s);
        auto b = random_tensor({3, 4}, s);
        return fd_max_rel_error(
            [key](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.gated_tanh_sigmoid(v[0], v[1]), key.fold("w"));
            },
            {a, b});
    });
    add("conv_graph_composite", [](rng::Key key) {
        // gated conv into node mixing into a reduction, the common layer shape
        rng::Stream s(key);
        auto x = random_tensor({2, 2, 3, 5}, s);
        auto wf = random_tensor({2, 2, 2}, s);
        auto wg = random_tensor({2, 2, 2}, s);
        auto b = random_tensor({2}, s);
        Tensor adj({3, 3});
        for (i64 i = 0; i < adj.numel(); ++i) adj[i] = s.uniform(0.0, 0.5);
        return fd_max_rel_error(
            [key, adj](Tape& t, const std::vector<Var>& v) {
                Var f = t.dilated_causal_conv1d(v[0], v[1], v[3], 1);
                Var g = t.dilated_causal_conv1d(v[0], v[2], v[3], 2);
                const i64 len_f = t.value(f).shape()[3];
                const i64 len_g = t.value(g).shape()[3];
                const i64 len = std::min(len_f, len_g);
                Var gated = t.gated_tanh_sigmoid(t.slice(f, 3, len_f - len, len),
                                                 t.slice(g, 3, len_g - len, len));
                return weighted_sum(t, t.node_mix(gated, adj), key.fold("w"));
            },
            {x, wf, wg, b});
    });
    add("graph_infonce", [](rng::Key key) {
        rng::Stream s(key);
        const i64 m = 5, d = 4;
        auto z1 = random_tensor_away_from_zero({m, d}, s, 0.2);
        auto z2 = random_tensor_away_from_zero({m, d}, s, 0.2);
        NegativeSets negs;
        negs.instance_allowed = random_allowed(m, m, s);
        return fd_max_rel_error(
            [negs](Tape& t, const std::vector<Var>& v) {
                return graph_infonce(t, v[0], v[1], negs, 0.1);
            },
            {z1, z2});
    });
    add("node_infonce", [](rng::Key key) {
        rng::Stream s(key);
        const i64 m = 3, n = 4, d = 3;
        auto z1 = random_tensor_away_from_zero({m, n, d}, s, 0.2);
        auto z2 = random_tensor_away_from_zero({m, n, d}, s, 0.2);
        NegativeSets negs;
        negs.instance_allowed = random_allowed(m, m, s);
        negs.node_allowed = random_allowed(n, n, s);
        return fd_max_rel_error(
            [negs](Tape& t, const std::vector<Var>& v) {
                return node_infonce(t, v[0], v[1], negs, 0.1);
            },
            {z1, z2});
    });
    return cases;
}

}  // namespace

std::vector<OpCheck> run_all(u64 seed, int instances_per_op, double tolerance) {
    std::vector<OpCheck> checks;
    const rng::Key root(seed);
    for (const Case& c : make_cases()) {
        OpCheck check;
        check.op = c.name;
        check.instances = instances_per_op;
        for (int i = 0; i < instances_per_op; ++i) {
            const double err = c.run(root.fold(c.name).fold(static_cast<u64>(i)));
            check.max_rel_err = std::max(check.max_rel_err, err);
        }
        check.pass = check.max_rel_err <= tolerance;
        checks.push_back(std::move(check));
    }
    return checks;
}

bool all_pass(const std::vector<OpCheck>& checks) {
    for (const OpCheck& c : checks) {
        if (!c.pass) return false;
    }
    return true;
}

void print_checks(std::ostream& out, const std::vector<OpCheck>& checks) {
    for (const OpCheck& c : checks) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", c.max_rel_err);
        out << (c.pass ? "[ok]   " : "[FAIL] ") << c.op << "  max_rel_err=" << buf << "  ("
            << c.instances << " instances)\n";
    }
}

}  // namespace stgcl::gradcheck
