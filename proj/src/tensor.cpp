#include "stgcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stgcl {

namespace {

i64 shape_numel(const std::vector<i64>& shape) {
    i64 n = 1;
    for (i64 d : shape) n *= d;
    return n;
}

std::vector<i64> shape_strides(const std::vector<i64>& shape) {
    std::vector<i64> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

int normalize_axis(const char* op, int axis, int ndim) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for ndim " + std::to_string(ndim));
    }
    return axis;
}

}  // namespace

// ===========================================================================
// Tensor
// ===========================================================================

Tensor::Tensor(std::vector<i64> shape) : shape_(std::move(shape)) {
    for (i64 d : shape_) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape_));
    }
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<i64> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<i64>(data_.size()) != shape_numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<i64> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

i64 Tensor::dim(int axis) const {
    if (axis < 0 || axis >= ndim()) {
        throw ShapeError("dim axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() called on non-scalar tensor " + shape_str(shape_));
    }
    return data_[0];
}

bool Tensor::finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t Tensor::flat_index(std::initializer_list<i64> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
        throw ShapeError("index rank mismatch for " + shape_str(shape_));
    }
    std::size_t flat = 0;
    int k = 0;
    for (i64 i : idx) {
        const i64 d = shape_[k];
        if (i < 0 || i >= d) {
            throw ShapeError("index out of bounds in " + shape_str(shape_));
        }
        flat = flat * static_cast<std::size_t>(d) + static_cast<std::size_t>(i);
        ++k;
    }
    return flat;
}

// ===========================================================================
// Tape plumbing
// ===========================================================================

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= static_cast<i32>(nodes_.size())) {
        throw NumericError("invalid tape variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<i32>(nodes_.size())) {
        throw NumericError("invalid tape variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::check_new_value(const char* op, const Tensor& t) const {
    if (!t.finite()) {
        throw NumericError(std::string(op) + ": non-finite values encountered");
    }
    return t;
}

Var Tape::push(const char* op, Tensor value, bool requires_grad, bool is_leaf) {
    check_new_value(op, value);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && training();
    n.is_leaf = is_leaf;
    nodes_.push_back(std::move(n));
    return Var{static_cast<i32>(nodes_.size() - 1)};
}

void Tape::record(std::function<void(Tape&)> fn) {
    if (training()) records_.push_back({std::move(fn)});
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad_allocated) {
        n.grad = Tensor::zeros_like(n.value);
        n.grad_allocated = true;
    }
    return n.grad;
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false, true); }

Var Tape::leaf(Tensor value) { return push("leaf", std::move(value), true, true); }

Var Tape::watch(Parameter& param) {
    auto it = watch_cache_.find(&param);
    if (it != watch_cache_.end()) return it->second;
    Var v = push("watch", param.value, true, true);
    watched_.emplace_back(&param, v);
    watch_cache_.emplace(&param, v);
    return v;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v); }

void Tape::accum_grad(Var v, std::span<const double> contribution) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    Tensor& g = grad_buffer(v);
    if (static_cast<i64>(contribution.size()) != g.numel()) {
        throw ShapeError("gradient contribution size mismatch");
    }
    double* dst = g.data().data();
    for (std::size_t i = 0; i < contribution.size(); ++i) dst[i] += contribution[i];
}

void Tape::backward(Var loss) {
    if (!training()) {
        throw NumericError("backward: tape is in eval mode, nothing was recorded");
    }
    if (backward_done_) {
        throw NumericError("backward: called twice without a fresh forward pass");
    }
    const Node& ln = node(loss);
    if (ln.value.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
    }
    if (!ln.requires_grad) {
        throw NumericError("backward: loss is detached from every differentiable leaf");
    }
    backward_done_ = true;
    grad_buffer(loss)[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        it->backward_fn(*this);
    }
    for (auto& [param, v] : watched_) {
        param->grad = grad_buffer(v);
    }
}

// ===========================================================================
// Elementwise ops
// ===========================================================================

Var Tape::add(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape("add", va, vb);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] + vb[i];
    Var r = push("add", std::move(out), needs_grad(a) || needs_grad(b), false);
    record([a, b, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        t.accum_grad(a, g.data());
        t.accum_grad(b, g.data());
    });
    return r;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape("sub", va, vb);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] - vb[i];
    Var r = push("sub", std::move(out), needs_grad(a) || needs_grad(b), false);
    record([a, b, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        t.accum_grad(a, g.data());
        if (t.needs_grad(b)) {
            Tensor neg = Tensor::zeros_like(g);
            for (i64 i = 0; i < g.numel(); ++i) neg[i] = -g[i];
            t.accum_grad(b, neg.data());
        }
    });
    return r;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape("mul", va, vb);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] * vb[i];
    Var r = push("mul", std::move(out), needs_grad(a) || needs_grad(b), false);
    record([a, b, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(a)) {
            const Tensor& vb2 = t.value(b);
            Tensor ga = Tensor::zeros_like(g);
            for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * vb2[i];
            t.accum_grad(a, ga.data());
        }
        if (t.needs_grad(b)) {
            const Tensor& va2 = t.value(a);
            Tensor gb = Tensor::zeros_like(g);
            for (i64 i = 0; i < g.numel(); ++i) gb[i] = g[i] * va2[i];
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::scale(Var a, double c) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] * c;
    Var r = push("scale", std::move(out), needs_grad(a), false);
    record([a, r, c](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * c;
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::add_scalar(Var a, double c) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] + c;
    Var r = push("add_scalar", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) { t.accum_grad(a, t.grad_buffer(r).data()); });
    return r;
}

Var Tape::relu(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
    Var r = push("relu", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& va2 = t.value(a);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = va2[i] > 0.0 ? g[i] : 0.0;
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::tanh_act(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = std::tanh(va[i]);
    Var r = push("tanh", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& y = t.value(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::sigmoid(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
    Var r = push("sigmoid", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& y = t.value(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::abs_val(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = std::fabs(va[i]);
    Var r = push("abs", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& va2 = t.value(a);
        Tensor ga = Tensor::zeros_like(g);
        // subgradient at 0 fixed to 0
        for (i64 i = 0; i < g.numel(); ++i) {
            ga[i] = va2[i] > 0.0 ? g[i] : (va2[i] < 0.0 ? -g[i] : 0.0);
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::log_nat(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) {
        if (va[i] <= 0.0) throw NumericError("log: non-positive input");
        out[i] = std::log(va[i]);
    }
    Var r = push("log", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& va2 = t.value(a);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] / va2[i];
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::exp_nat(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = std::exp(va[i]);
    Var r = push("exp", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& y = t.value(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * y[i];
        t.accum_grad(a, ga.data());
    });
    return r;
}

// ===========================================================================
// Shape ops
// ===========================================================================

Var Tape::reshape(Var a, std::vector<i64> shape) {
    const Tensor& va = value(a);
    if (shape_numel(shape) != va.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(va.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out(shape, std::vector<double>(va.data().begin(), va.data().end()));
    Var r = push("reshape", std::move(out), needs_grad(a), false);
    record([a, r](Tape& t) { t.accum_grad(a, t.grad_buffer(r).data()); });
    return r;
}

Var Tape::permute(Var a, std::vector<int> axes) {
    const Tensor& va = value(a);
    const int nd = va.ndim();
    if (static_cast<int>(axes.size()) != nd) {
        throw ShapeError("permute: axes rank mismatch for " + shape_str(va.shape()));
    }
    std::vector<bool> seen(nd, false);
    std::vector<i64> out_shape(nd);
    for (int i = 0; i < nd; ++i) {
        const int ax = axes[i];
        if (ax < 0 || ax >= nd || seen[ax]) throw ShapeError("permute: bad axis list");
        seen[ax] = true;
        out_shape[i] = va.shape()[ax];
    }
    const auto in_strides = shape_strides(va.shape());
    const auto out_strides = shape_strides(out_shape);
    Tensor out(out_shape);
    const i64 n = va.numel();
    std::vector<i64> idx(nd, 0);
    for (i64 flat = 0; flat < n; ++flat) {
        // flat is the output index; map to input offset
        i64 rem = flat;
        i64 src = 0;
        for (int d = 0; d < nd; ++d) {
            const i64 q = rem / out_strides[d];
            rem -= q * out_strides[d];
            src += q * in_strides[axes[d]];
        }
        out[flat] = va[src];
    }
    Var r = push("permute", std::move(out), needs_grad(a), false);
    record([a, r, axes, in_strides, out_strides, nd](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(t.value(a));
        for (i64 flat = 0; flat < g.numel(); ++flat) {
            i64 rem = flat;
            i64 src = 0;
            for (int d = 0; d < nd; ++d) {
                const i64 q = rem / out_strides[d];
                rem -= q * out_strides[d];
                src += q * in_strides[axes[d]];
            }
            ga[src] += g[flat];
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::transpose2d(Var a) {
    if (value(a).ndim() != 2) {
        throw ShapeError("transpose2d: expected 2-d tensor, got " + shape_str(value(a).shape()));
    }
    return permute(a, {1, 0});
}

Var Tape::concat(Var a, Var b, int axis) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.ndim() != vb.ndim()) {
        throw ShapeError("concat: rank mismatch " + shape_str(va.shape()) + " vs " +
                         shape_str(vb.shape()));
    }
    const int ax = normalize_axis("concat", axis, va.ndim());
    for (int d = 0; d < va.ndim(); ++d) {
        if (d != ax && va.shape()[d] != vb.shape()[d]) {
            throw ShapeError("concat: shape mismatch " + shape_str(va.shape()) + " vs " +
                             shape_str(vb.shape()));
        }
    }
    std::vector<i64> out_shape = va.shape();
    out_shape[ax] += vb.shape()[ax];

    // treat as (outer, axis, inner)
    i64 outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= va.shape()[d];
    for (int d = ax + 1; d < va.ndim(); ++d) inner *= va.shape()[d];
    const i64 la = va.shape()[ax], lb = vb.shape()[ax];

    Tensor out(out_shape);
    for (i64 o = 0; o < outer; ++o) {
        double* dst = out.data().data() + o * (la + lb) * inner;
        const double* pa = va.data().data() + o * la * inner;
        const double* pb = vb.data().data() + o * lb * inner;
        std::copy(pa, pa + la * inner, dst);
        std::copy(pb, pb + lb * inner, dst + la * inner);
    }
    Var r = push("concat", std::move(out), needs_grad(a) || needs_grad(b), false);
    record([a, b, r, outer, inner, la, lb](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(a)) {
            Tensor ga = Tensor::zeros_like(t.value(a));
            for (i64 o = 0; o < outer; ++o) {
                const double* src = g.data().data() + o * (la + lb) * inner;
                double* dst = ga.data().data() + o * la * inner;
                for (i64 i = 0; i < la * inner; ++i) dst[i] += src[i];
            }
            t.accum_grad(a, ga.data());
        }
        if (t.needs_grad(b)) {
            Tensor gb = Tensor::zeros_like(t.value(b));
            for (i64 o = 0; o < outer; ++o) {
                const double* src = g.data().data() + (o * (la + lb) + la) * inner;
                double* dst = gb.data().data() + o * lb * inner;
                for (i64 i = 0; i < lb * inner; ++i) dst[i] += src[i];
            }
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::slice(Var a, int axis, i64 start, i64 len) {
    const Tensor& va = value(a);
    const int ax = normalize_axis("slice", axis, va.ndim());
    const i64 extent = va.shape()[ax];
    if (start < 0 || len < 0 || start + len > extent) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis extent " +
                         std::to_string(extent));
    }
    i64 outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= va.shape()[d];
    for (int d = ax + 1; d < va.ndim(); ++d) inner *= va.shape()[d];

    std::vector<i64> out_shape = va.shape();
    out_shape[ax] = len;
    Tensor out(out_shape);
    for (i64 o = 0; o < outer; ++o) {
        const double* src = va.data().data() + (o * extent + start) * inner;
        double* dst = out.data().data() + o * len * inner;
        std::copy(src, src + len * inner, dst);
    }
    Var r = push("slice", std::move(out), needs_grad(a), false);
    record([a, r, outer, inner, extent, start, len](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(t.value(a));
        for (i64 o = 0; o < outer; ++o) {
            const double* src = g.data().data() + o * len * inner;
            double* dst = ga.data().data() + (o * extent + start) * inner;
            for (i64 i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::pad_front(Var a, int axis, i64 count) {
    const Tensor& va = value(a);
    const int ax = normalize_axis("pad_front", axis, va.ndim());
    if (count < 0) throw ShapeError("pad_front: negative pad count");
    if (count == 0) return a;
    i64 outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= va.shape()[d];
    for (int d = ax + 1; d < va.ndim(); ++d) inner *= va.shape()[d];
    const i64 extent = va.shape()[ax];

    std::vector<i64> out_shape = va.shape();
    out_shape[ax] = extent + count;
    Tensor out(out_shape);
    for (i64 o = 0; o < outer; ++o) {
        const double* src = va.data().data() + o * extent * inner;
        double* dst = out.data().data() + (o * (extent + count) + count) * inner;
        std::copy(src, src + extent * inner, dst);
    }
    Var r = push("pad_front", std::move(out), needs_grad(a), false);
    record([a, r, outer, inner, extent, count](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(t.value(a));
        for (i64 o = 0; o < outer; ++o) {
            const double* src = g.data().data() + (o * (extent + count) + count) * inner;
            double* dst = ga.data().data() + o * extent * inner;
            for (i64 i = 0; i < extent * inner; ++i) dst[i] += src[i];
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

// ===========================================================================
// Reductions
// ===========================================================================

Var Tape::sum_all(Var a) {
    const Tensor& va = value(a);
    double s = 0.0;
    for (i64 i = 0; i < va.numel(); ++i) s += va[i];
    Var r = push("sum_all", Tensor::scalar(s), needs_grad(a), false);
    record([a, r](Tape& t) {
        const double g = t.grad_buffer(r)[0];
        Tensor ga = Tensor::full(t.value(a).shape(), g);
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::mean_all(Var a) {
    const Tensor& va = value(a);
    if (va.numel() == 0) throw ShapeError("mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(va.numel());
    double s = 0.0;
    for (i64 i = 0; i < va.numel(); ++i) s += va[i];
    Var r = push("mean_all", Tensor::scalar(s * inv), needs_grad(a), false);
    record([a, r, inv](Tape& t) {
        const double g = t.grad_buffer(r)[0] * inv;
        Tensor ga = Tensor::full(t.value(a).shape(), g);
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::sum_axis(Var a, int axis) {
    const Tensor& va = value(a);
    const int ax = normalize_axis("sum_axis", axis, va.ndim());
    i64 outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= va.shape()[d];
    for (int d = ax + 1; d < va.ndim(); ++d) inner *= va.shape()[d];
    const i64 extent = va.shape()[ax];

    std::vector<i64> out_shape;
    for (int d = 0; d < va.ndim(); ++d) {
        if (d != ax) out_shape.push_back(va.shape()[d]);
    }
    Tensor out(out_shape);
    for (i64 o = 0; o < outer; ++o) {
        for (i64 e = 0; e < extent; ++e) {
            const double* src = va.data().data() + (o * extent + e) * inner;
            double* dst = out.data().data() + o * inner;
            for (i64 i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    Var r = push("sum_axis", std::move(out), needs_grad(a), false);
    record([a, r, outer, inner, extent](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(t.value(a));
        for (i64 o = 0; o < outer; ++o) {
            const double* src = g.data().data() + o * inner;
            for (i64 e = 0; e < extent; ++e) {
                double* dst = ga.data().data() + (o * extent + e) * inner;
                for (i64 i = 0; i < inner; ++i) dst[i] += src[i];
            }
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

// ===========================================================================
// Linear algebra
// ===========================================================================

Var Tape::matmul(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(va.shape()) + " x " +
                         shape_str(vb.shape()));
    }
    const i64 m = va.shape()[0], k = va.shape()[1], n = vb.shape()[1];
    Tensor out({m, n});
    for (i64 i = 0; i < m; ++i) {
        for (i64 p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            const double* brow = vb.data().data() + p * n;
            double* orow = out.data().data() + i * n;
            for (i64 j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    Var r = push("matmul", std::move(out), needs_grad(a) || needs_grad(b), false);
    record([a, b, r, m, k, n](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(a)) {
            const Tensor& vb2 = t.value(b);
            Tensor ga({m, k});
            for (i64 i = 0; i < m; ++i) {
                for (i64 j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    const double* brow = vb2.data().data() + j;  // column j, stride n
                    double* arow = ga.data().data() + i * k;
                    for (i64 p = 0; p < k; ++p) arow[p] += gij * brow[p * n];
                }
            }
            t.accum_grad(a, ga.data());
        }
        if (t.needs_grad(b)) {
            const Tensor& va2 = t.value(a);
            Tensor gb({k, n});
            for (i64 i = 0; i < m; ++i) {
                for (i64 p = 0; p < k; ++p) {
                    const double aip = va2[i * k + p];
                    const double* grow = g.data().data() + i * n;
                    double* brow = gb.data().data() + p * n;
                    for (i64 j = 0; j < n; ++j) brow[j] += aip * grow[j];
                }
            }
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    if (vx.ndim() != 2 || vw.ndim() != 2 || vb.ndim() != 1 || vx.shape()[1] != vw.shape()[0] ||
        vw.shape()[1] != vb.shape()[0]) {
        throw ShapeError("linear: incompatible shapes x" + shape_str(vx.shape()) + " w" +
                         shape_str(vw.shape()) + " b" + shape_str(vb.shape()));
    }
    const i64 rows = vx.shape()[0], in = vx.shape()[1], out_dim = vw.shape()[1];
    Tensor out({rows, out_dim});
    for (i64 r0 = 0; r0 < rows; ++r0) {
        double* orow = out.data().data() + r0 * out_dim;
        for (i64 o = 0; o < out_dim; ++o) orow[o] = vb[o];
        for (i64 i = 0; i < in; ++i) {
            const double xv = vx[r0 * in + i];
            const double* wrow = vw.data().data() + i * out_dim;
            for (i64 o = 0; o < out_dim; ++o) orow[o] += xv * wrow[o];
        }
    }
    Var r = push("linear", std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(b), false);
    record([x, w, b, r, rows, in, out_dim](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(x)) {
            const Tensor& vw2 = t.value(w);
            Tensor gx({rows, in});
            for (i64 r0 = 0; r0 < rows; ++r0) {
                const double* grow = g.data().data() + r0 * out_dim;
                double* xrow = gx.data().data() + r0 * in;
                for (i64 i = 0; i < in; ++i) {
                    const double* wrow = vw2.data().data() + i * out_dim;
                    double acc = 0.0;
                    for (i64 o = 0; o < out_dim; ++o) acc += grow[o] * wrow[o];
                    xrow[i] = acc;
                }
            }
            t.accum_grad(x, gx.data());
        }
        if (t.needs_grad(w)) {
            const Tensor& vx2 = t.value(x);
            Tensor gw({in, out_dim});
            for (i64 r0 = 0; r0 < rows; ++r0) {
                const double* grow = g.data().data() + r0 * out_dim;
                const double* xrow = vx2.data().data() + r0 * in;
                for (i64 i = 0; i < in; ++i) {
                    double* wrow = gw.data().data() + i * out_dim;
                    const double xv = xrow[i];
                    for (i64 o = 0; o < out_dim; ++o) wrow[o] += xv * grow[o];
                }
            }
            t.accum_grad(w, gw.data());
        }
        if (t.needs_grad(b)) {
            Tensor gb({out_dim});
            for (i64 r0 = 0; r0 < rows; ++r0) {
                const double* grow = g.data().data() + r0 * out_dim;
                for (i64 o = 0; o < out_dim; ++o) gb[o] += grow[o];
            }
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::l2_normalize_rows(Var a) {
    const Tensor& va = value(a);
    if (va.ndim() < 1) throw ShapeError("l2_normalize: needs at least 1 dim");
    const i64 d = va.shape()[va.ndim() - 1];
    const i64 rows = va.numel() / d;
    Tensor out = Tensor::zeros_like(va);
    std::vector<double> norms(static_cast<std::size_t>(rows));
    for (i64 r0 = 0; r0 < rows; ++r0) {
        const double* src = va.data().data() + r0 * d;
        double s = 0.0;
        for (i64 i = 0; i < d; ++i) s += src[i] * src[i];
        const double norm = std::sqrt(s);
        if (norm == 0.0) {
            throw NumericError("l2_normalize: zero vector at row " + std::to_string(r0));
        }
        norms[static_cast<std::size_t>(r0)] = norm;
        double* dst = out.data().data() + r0 * d;
        for (i64 i = 0; i < d; ++i) dst[i] = src[i] / norm;
    }
    Var r = push("l2_normalize", std::move(out), needs_grad(a), false);
    record([a, r, rows, d, norms](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& y = t.value(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 r0 = 0; r0 < rows; ++r0) {
            const double* grow = g.data().data() + r0 * d;
            const double* yrow = y.data().data() + r0 * d;
            double dot = 0.0;
            for (i64 i = 0; i < d; ++i) dot += grow[i] * yrow[i];
            const double inv = 1.0 / norms[static_cast<std::size_t>(r0)];
            double* dst = ga.data().data() + r0 * d;
            for (i64 i = 0; i < d; ++i) dst[i] = (grow[i] - yrow[i] * dot) * inv;
        }
        t.accum_grad(a, ga.data());
    });
    return r;
}

// ===========================================================================
// Network ops
// ===========================================================================

Var Tape::dropout(Var a, double p, rng::Stream& stream) {
    if (p < 0.0 || p >= 1.0) {
        throw NumericError("dropout: rate must be in [0,1), got " + std::to_string(p));
    }
    if (!training() || p == 0.0) return a;  // identity, no RNG consumed for p=0 in eval
    const Tensor& va = value(a);
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor mask = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) {
        mask[i] = stream.next_unit() >= p ? keep_scale : 0.0;
    }
    Tensor out = Tensor::zeros_like(va);
    for (i64 i = 0; i < va.numel(); ++i) out[i] = va[i] * mask[i];
    Var r = push("dropout", std::move(out), needs_grad(a), false);
    record([a, r, mask](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor ga = Tensor::zeros_like(g);
        for (i64 i = 0; i < g.numel(); ++i) ga[i] = g[i] * mask[i];
        t.accum_grad(a, ga.data());
    });
    return r;
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, double momentum,
                     double eps) {
    const Tensor& vx = value(x);
    const Tensor& vg = value(gamma);
    const Tensor& vb = value(beta);
    if (vx.ndim() != 2) {
        throw ShapeError("batch_norm: expected (rows, features), got " + shape_str(vx.shape()));
    }
    const i64 rows = vx.shape()[0], feats = vx.shape()[1];
    if (vg.ndim() != 1 || vg.shape()[0] != feats || !vg.same_shape(vb) ||
        state.running_mean.shape() != std::vector<i64>{feats}) {
        throw ShapeError("batch_norm: parameter/feature shape mismatch");
    }

    std::vector<double> mean(static_cast<std::size_t>(feats), 0.0);
    std::vector<double> var(static_cast<std::size_t>(feats), 0.0);
    if (training()) {
        if (rows < 2) {
            throw NumericError("batch_norm: train mode needs batch of at least 2 rows");
        }
        for (i64 f = 0; f < feats; ++f) {
            double s = 0.0;
            for (i64 r0 = 0; r0 < rows; ++r0) s += vx[r0 * feats + f];
            mean[f] = s / static_cast<double>(rows);
        }
        for (i64 f = 0; f < feats; ++f) {
            double s = 0.0;
            for (i64 r0 = 0; r0 < rows; ++r0) {
                const double d = vx[r0 * feats + f] - mean[f];
                s += d * d;
            }
            var[f] = s / static_cast<double>(rows);
        }
        // running stats: unbiased variance, momentum-weighted
        const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
        for (i64 f = 0; f < feats; ++f) {
            state.running_mean[f] = (1.0 - momentum) * state.running_mean[f] + momentum * mean[f];
            state.running_var[f] =
                (1.0 - momentum) * state.running_var[f] + momentum * var[f] * unbias;
        }
    } else {
        for (i64 f = 0; f < feats; ++f) {
            mean[f] = state.running_mean[f];
            var[f] = state.running_var[f];
        }
    }

    // normalize with sqrt(max(var, eps)) so identity running stats give an
    // exact identity in eval mode
    std::vector<double> inv_std(static_cast<std::size_t>(feats));
    std::vector<bool> clamped(static_cast<std::size_t>(feats));
    for (i64 f = 0; f < feats; ++f) {
        const double v = var[f] > eps ? var[f] : eps;
        clamped[f] = var[f] <= eps;
        inv_std[f] = 1.0 / std::sqrt(v);
    }

    Tensor xhat({rows, feats});
    Tensor out({rows, feats});
    for (i64 r0 = 0; r0 < rows; ++r0) {
        for (i64 f = 0; f < feats; ++f) {
            const double xh = (vx[r0 * feats + f] - mean[f]) * inv_std[f];
            xhat[r0 * feats + f] = xh;
            out[r0 * feats + f] = vg[f] * xh + vb[f];
        }
    }
    const bool req = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    Var r = push("batch_norm", std::move(out), req, false);
    const bool train_stats = training();
    record([x, gamma, beta, r, rows, feats, xhat, inv_std, clamped, train_stats](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        const Tensor& vg2 = t.value(gamma);
        if (t.needs_grad(gamma)) {
            Tensor gg({feats});
            for (i64 r0 = 0; r0 < rows; ++r0) {
                for (i64 f = 0; f < feats; ++f) gg[f] += g[r0 * feats + f] * xhat[r0 * feats + f];
            }
            t.accum_grad(gamma, gg.data());
        }
        if (t.needs_grad(beta)) {
            Tensor gb({feats});
            for (i64 r0 = 0; r0 < rows; ++r0) {
                for (i64 f = 0; f < feats; ++f) gb[f] += g[r0 * feats + f];
            }
            t.accum_grad(beta, gb.data());
        }
        if (t.needs_grad(x)) {
            Tensor gx({rows, feats});
            const double n = static_cast<double>(rows);
            for (i64 f = 0; f < feats; ++f) {
                double sum_dxhat = 0.0;
                double sum_dxhat_xhat = 0.0;
                for (i64 r0 = 0; r0 < rows; ++r0) {
                    const double dxhat = g[r0 * feats + f] * vg2[f];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat[r0 * feats + f];
                }
                for (i64 r0 = 0; r0 < rows; ++r0) {
                    const double dxhat = g[r0 * feats + f] * vg2[f];
                    double gxv;
                    if (!train_stats) {
                        // eval: mean/var are constants
                        gxv = dxhat * inv_std[f];
                    } else if (clamped[f]) {
                        // variance clamped at eps: no gradient through var
                        gxv = (dxhat - sum_dxhat / n) * inv_std[f];
                    } else {
                        gxv = inv_std[f] *
                              (dxhat - sum_dxhat / n -
                               xhat[r0 * feats + f] * sum_dxhat_xhat / n);
                    }
                    gx[r0 * feats + f] = gxv;
                }
            }
            t.accum_grad(x, gx.data());
        }
    });
    return r;
}

Var Tape::channel_linear(Var x, Var w, Var b) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    if (vx.ndim() != 4 || vw.ndim() != 2 || vb.ndim() != 1 || vw.shape()[1] != vx.shape()[1] ||
        vb.shape()[0] != vw.shape()[0]) {
        throw ShapeError("channel_linear: incompatible shapes x" + shape_str(vx.shape()) + " w" +
                         shape_str(vw.shape()) + " b" + shape_str(vb.shape()));
    }
    const i64 batch = vx.shape()[0], ci = vx.shape()[1], nodes = vx.shape()[2], len = vx.shape()[3];
    const i64 co = vw.shape()[0];
    const i64 plane = nodes * len;
    Tensor out({batch, co, nodes, len});
    for (i64 m = 0; m < batch; ++m) {
        for (i64 o = 0; o < co; ++o) {
            double* dst = out.data().data() + (m * co + o) * plane;
            for (i64 i = 0; i < plane; ++i) dst[i] = vb[o];
            for (i64 c = 0; c < ci; ++c) {
                const double wv = vw[o * ci + c];
                const double* src = vx.data().data() + (m * ci + c) * plane;
                for (i64 i = 0; i < plane; ++i) dst[i] += wv * src[i];
            }
        }
    }
    Var r = push("channel_linear", std::move(out),
                 needs_grad(x) || needs_grad(w) || needs_grad(b), false);
    record([x, w, b, r, batch, ci, co, plane](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(x)) {
            const Tensor& vw2 = t.value(w);
            Tensor gx = Tensor::zeros_like(t.value(x));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    const double* grow = g.data().data() + (m * co + o) * plane;
                    for (i64 c = 0; c < ci; ++c) {
                        const double wv = vw2[o * ci + c];
                        double* dst = gx.data().data() + (m * ci + c) * plane;
                        for (i64 i = 0; i < plane; ++i) dst[i] += wv * grow[i];
                    }
                }
            }
            t.accum_grad(x, gx.data());
        }
        if (t.needs_grad(w)) {
            const Tensor& vx2 = t.value(x);
            Tensor gw = Tensor::zeros_like(t.value(w));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    const double* grow = g.data().data() + (m * co + o) * plane;
                    for (i64 c = 0; c < ci; ++c) {
                        const double* src = vx2.data().data() + (m * ci + c) * plane;
                        double acc = 0.0;
                        for (i64 i = 0; i < plane; ++i) acc += grow[i] * src[i];
                        gw[o * ci + c] += acc;
                    }
                }
            }
            t.accum_grad(w, gw.data());
        }
        if (t.needs_grad(b)) {
            Tensor gb = Tensor::zeros_like(t.value(b));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    const double* grow = g.data().data() + (m * co + o) * plane;
                    double acc = 0.0;
                    for (i64 i = 0; i < plane; ++i) acc += grow[i];
                    gb[o] += acc;
                }
            }
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::dilated_causal_conv1d(Var x, Var w, Var b, i64 dilation) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    if (vx.ndim() != 4 || vw.ndim() != 3 || vb.ndim() != 1) {
        throw ShapeError("dilated_causal_conv1d: expected x(M,Ci,N,L) w(Co,Ci,k) b(Co)");
    }
    if (dilation < 1) throw ShapeError("dilated_causal_conv1d: dilation must be >= 1");
    const i64 batch = vx.shape()[0], ci = vx.shape()[1], nodes = vx.shape()[2], len = vx.shape()[3];
    const i64 co = vw.shape()[0], kci = vw.shape()[1], k = vw.shape()[2];
    if (kci != ci || vb.shape()[0] != co) {
        throw ShapeError("dilated_causal_conv1d: channel mismatch x" + shape_str(vx.shape()) +
                         " w" + shape_str(vw.shape()));
    }
    const i64 out_len = len - (k - 1) * dilation;
    if (out_len < 1) {
        throw ShapeError("dilated_causal_conv1d: input length " + std::to_string(len) +
                         " too short for kernel " + std::to_string(k) + " dilation " +
                         std::to_string(dilation));
    }
    Tensor out({batch, co, nodes, out_len});
    for (i64 m = 0; m < batch; ++m) {
        for (i64 o = 0; o < co; ++o) {
            for (i64 n = 0; n < nodes; ++n) {
                double* dst = out.data().data() + ((m * co + o) * nodes + n) * out_len;
                for (i64 t0 = 0; t0 < out_len; ++t0) dst[t0] = vb[o];
                for (i64 c = 0; c < ci; ++c) {
                    const double* src = vx.data().data() + ((m * ci + c) * nodes + n) * len;
                    for (i64 j = 0; j < k; ++j) {
                        const double wv = vw[(o * ci + c) * k + j];
                        const i64 off = j * dilation;
                        for (i64 t0 = 0; t0 < out_len; ++t0) dst[t0] += wv * src[t0 + off];
                    }
                }
            }
        }
    }
    Var r = push("dilated_causal_conv1d", std::move(out),
                 needs_grad(x) || needs_grad(w) || needs_grad(b), false);
    record([x, w, b, r, batch, ci, co, nodes, len, k, dilation, out_len](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        if (t.needs_grad(x)) {
            const Tensor& vw2 = t.value(w);
            Tensor gx = Tensor::zeros_like(t.value(x));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    for (i64 n = 0; n < nodes; ++n) {
                        const double* grow = g.data().data() + ((m * co + o) * nodes + n) * out_len;
                        for (i64 c = 0; c < ci; ++c) {
                            double* dst = gx.data().data() + ((m * ci + c) * nodes + n) * len;
                            for (i64 j = 0; j < k; ++j) {
                                const double wv = vw2[(o * ci + c) * k + j];
                                const i64 off = j * dilation;
                                for (i64 t0 = 0; t0 < out_len; ++t0) {
                                    dst[t0 + off] += wv * grow[t0];
                                }
                            }
                        }
                    }
                }
            }
            t.accum_grad(x, gx.data());
        }
        if (t.needs_grad(w)) {
            const Tensor& vx2 = t.value(x);
            Tensor gw = Tensor::zeros_like(t.value(w));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    for (i64 n = 0; n < nodes; ++n) {
                        const double* grow = g.data().data() + ((m * co + o) * nodes + n) * out_len;
                        for (i64 c = 0; c < ci; ++c) {
                            const double* src = vx2.data().data() + ((m * ci + c) * nodes + n) * len;
                            for (i64 j = 0; j < k; ++j) {
                                const i64 off = j * dilation;
                                double acc = 0.0;
                                for (i64 t0 = 0; t0 < out_len; ++t0) acc += grow[t0] * src[t0 + off];
                                gw[(o * ci + c) * k + j] += acc;
                            }
                        }
                    }
                }
            }
            t.accum_grad(w, gw.data());
        }
        if (t.needs_grad(b)) {
            Tensor gb = Tensor::zeros_like(t.value(b));
            for (i64 m = 0; m < batch; ++m) {
                for (i64 o = 0; o < co; ++o) {
                    const double* grow = g.data().data() + (m * co + o) * nodes * out_len;
                    double acc = 0.0;
                    for (i64 i = 0; i < nodes * out_len; ++i) acc += grow[i];
                    gb[o] += acc;
                }
            }
            t.accum_grad(b, gb.data());
        }
    });
    return r;
}

Var Tape::node_mix(Var x, const Tensor& adj) {
    const Tensor& vx = value(x);
    if (vx.ndim() != 4 || adj.ndim() != 2 || adj.shape()[0] != adj.shape()[1] ||
        adj.shape()[0] != vx.shape()[2]) {
        throw ShapeError("node_mix: incompatible shapes x" + shape_str(vx.shape()) + " adj" +
                         shape_str(adj.shape()));
    }
    const i64 batch = vx.shape()[0], ch = vx.shape()[1], nodes = vx.shape()[2], len = vx.shape()[3];
    Tensor out({batch, ch, nodes, len});
    for (i64 m = 0; m < batch; ++m) {
        for (i64 c = 0; c < ch; ++c) {
            const double* plane = vx.data().data() + (m * ch + c) * nodes * len;
            double* oplane = out.data().data() + (m * ch + c) * nodes * len;
            for (i64 i = 0; i < nodes; ++i) {
                double* dst = oplane + i * len;
                for (i64 j = 0; j < nodes; ++j) {
                    const double a = adj[i * nodes + j];
                    if (a == 0.0) continue;
                    const double* src = plane + j * len;
                    for (i64 t0 = 0; t0 < len; ++t0) dst[t0] += a * src[t0];
                }
            }
        }
    }
    Var r = push("node_mix", std::move(out), needs_grad(x), false);
    record([x, r, adj, batch, ch, nodes, len](Tape& t) {
        const Tensor& g = t.grad_buffer(r);
        Tensor gx = Tensor::zeros_like(t.value(x));
        for (i64 m = 0; m < batch; ++m) {
            for (i64 c = 0; c < ch; ++c) {
                const double* gplane = g.data().data() + (m * ch + c) * nodes * len;
                double* dplane = gx.data().data() + (m * ch + c) * nodes * len;
                for (i64 i = 0; i < nodes; ++i) {
                    const double* grow = gplane + i * len;
                    for (i64 j = 0; j < nodes; ++j) {
                        const double a = adj[i * nodes + j];
                        if (a == 0.0) continue;
                        double* dst = dplane + j * len;
                        for (i64 t0 = 0; t0 < len; ++t0) dst[t0] += a * grow[t0];
                    }
                }
            }
        }
        t.accum_grad(x, gx.data());
    });
    return r;
}

Var Tape::custom(const char* op_name, std::vector<Var> inputs, Tensor out_value,
                 CustomBackward backward_fn) {
    bool req = false;
    for (Var v : inputs) req = req || needs_grad(v);
    Var r = push(op_name, std::move(out_value), req, false);
    if (req) {
        record([r, inputs = std::move(inputs), fn = std::move(backward_fn)](Tape& t) {
            fn(t, r, inputs);
        });
    }
    return r;
}

// ===========================================================================
// Adam
// ===========================================================================

Adam::Adam(std::vector<Group> groups, AdamConfig config)
    : groups_(std::move(groups)), config_(config) {
    for (const auto& g : groups_) {
        if (g.lr <= 0.0) {
            throw NumericError("adam: learning rate must be positive, got " +
                               std::to_string(g.lr));
        }
    }
    if (config_.clip && config_.clip_norm <= 0.0) {
        throw NumericError("adam: clip_norm must be positive when clipping is enabled");
    }
}

void Adam::step() {
    ++t_;
    // global L2 norm across every parameter of every group
    double sq = 0.0;
    for (const auto& g : groups_) {
        for (const Parameter* p : g.params) {
            for (i64 i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
        }
    }
    const double norm = std::sqrt(sq);
    last_norm_ = norm;
    const double scale =
        (config_.clip && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (auto& g : groups_) {
        for (Parameter* p : g.params) {
            for (i64 i = 0; i < p->value.numel(); ++i) {
                const double grad = p->grad[i] * scale;
                p->adam_m[i] = config_.beta1 * p->adam_m[i] + (1.0 - config_.beta1) * grad;
                p->adam_v[i] = config_.beta2 * p->adam_v[i] + (1.0 - config_.beta2) * grad * grad;
                const double mhat = p->adam_m[i] / bc1;
                const double vhat = p->adam_v[i] / bc2;
                p->value[i] -= g.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
    }
}

}  // namespace stgcl
