#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stgcl/common.hpp"
#include "stgcl/rng.hpp"

// Dense row-major float64 tensors plus a tape-based reverse-mode autodiff
// engine. Single-threaded per tape; all reductions run in fixed
// left-to-right order so identical seeds give bit-identical results.

namespace stgcl {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<i64> shape);
    Tensor(std::vector<i64> shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor full(std::vector<i64> shape, double v);
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<i64>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    i64 dim(int axis) const;
    i64 numel() const { return static_cast<i64>(data_.size()); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](i64 i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](i64 i) const { return data_[static_cast<std::size_t>(i)]; }

    double at(std::initializer_list<i64> idx) const { return data_[flat_index(idx)]; }
    double& at(std::initializer_list<i64> idx) { return data_[flat_index(idx)]; }

    double item() const;
    bool finite() const;

private:
    std::size_t flat_index(std::initializer_list<i64> idx) const;

    std::vector<i64> shape_;
    std::vector<double> data_;
};

// A trainable tensor with its gradient slot and Adam moments.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;

    Parameter(std::string param_name, Tensor init)
        : name(std::move(param_name)),
          value(std::move(init)),
          grad(Tensor::zeros_like(value)),
          adam_m(Tensor::zeros_like(value)),
          adam_v(Tensor::zeros_like(value)) {}
};

// Running statistics for batch normalization (eval-mode path).
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;

    explicit BatchNormState(i64 features)
        : running_mean(Tensor({features})), running_var(Tensor::full({features}, 1.0)) {}
};

// Handle to a node on a tape.
struct Var {
    i32 id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    enum class Mode { kTrain, kEval };

    explicit Tape(Mode mode) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Mode mode() const { return mode_; }
    bool training() const { return mode_ == Mode::kTrain; }

    // --- leaves -----------------------------------------------------------
    Var constant(Tensor value);                // never differentiated
    Var leaf(Tensor value);                    // differentiable in train mode
    Var watch(Parameter& param);               // leaf whose grad is written back

    const Tensor& value(Var v) const { return node(v).value; }
    const Tensor& grad(Var v);                 // allocates zeros if untouched

    // Reverse pass from a scalar loss. Gradients of watched parameters are
    // written into Parameter::grad. A second call without a fresh forward
    // pass is an error.
    void backward(Var loss);

    // --- elementwise / scalar ---------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var relu(Var a);
    Var tanh_act(Var a);
    Var sigmoid(Var a);
    Var abs_val(Var a);
    Var log_nat(Var a);
    Var exp_nat(Var a);
    Var gated_tanh_sigmoid(Var filter, Var gate) { return mul(tanh_act(filter), sigmoid(gate)); }

    // --- shape ------------------------------------------------------------
    Var reshape(Var a, std::vector<i64> shape);
    Var permute(Var a, std::vector<int> axes);
    Var transpose2d(Var a);
    Var concat(Var a, Var b, int axis);
    Var slice(Var a, int axis, i64 start, i64 len);
    Var pad_front(Var a, int axis, i64 count);

    // --- reductions ---------------------------------------------------------
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var sum_axis(Var a, int axis);

    // --- linear algebra -----------------------------------------------------
    Var matmul(Var a, Var b);                              // (m,k)x(k,n)
    Var linear(Var x, Var w, Var b);                       // (r,i)x(i,o)+b
    Var l2_normalize_rows(Var a);                          // along last axis

    // --- network ops --------------------------------------------------------
    Var dropout(Var a, double p, rng::Stream& stream);
    Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state,
                   double momentum = 0.1, double eps = 1e-5);
    // x (M,Ci,N,L), w (Co,Ci), b (Co) -> (M,Co,N,L)
    Var channel_linear(Var x, Var w, Var b);
    // x (M,Ci,N,L), w (Co,Ci,k), b (Co) -> (M,Co,N,L-(k-1)*dilation)
    Var dilated_causal_conv1d(Var x, Var w, Var b, i64 dilation);
    // x (M,C,N,L), adj (N,N) constant: out[m,c,i,l] = sum_j adj[i,j] x[m,c,j,l]
    Var node_mix(Var x, const Tensor& adj);

    // --- extension point ----------------------------------------------------
    using CustomBackward =
        std::function<void(Tape&, Var out, const std::vector<Var>& inputs)>;
    Var custom(const char* op_name, std::vector<Var> inputs, Tensor out_value,
               CustomBackward backward_fn);

    // Accumulate into a node's gradient (no-op for non-differentiable nodes).
    void accum_grad(Var v, std::span<const double> contribution);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_allocated = false;
        bool is_leaf = false;
    };
    struct Record {
        std::function<void(Tape&)> backward_fn;
    };

    Node& node(Var v);
    const Tensor& check_new_value(const char* op, const Tensor& t) const;
    Var push(const char* op, Tensor value, bool requires_grad, bool is_leaf);
    void record(std::function<void(Tape&)> fn);
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
    Tensor& grad_buffer(Var v);

    const Node& node(Var v) const;

    Mode mode_;
    // deque: node references stay valid while later ops are recorded
    std::deque<Node> nodes_;
    std::vector<Record> records_;
    std::vector<std::pair<Parameter*, Var>> watched_;
    std::unordered_map<const Parameter*, Var> watch_cache_;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Adam with global-L2-norm gradient clipping applied before the update.
// Parameter groups carry their own learning rate (fine-tuning uses distinct
// encoder/decoder rates).
// ---------------------------------------------------------------------------
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;
    bool clip = true;
};

class Adam {
public:
    struct Group {
        std::vector<Parameter*> params;
        double lr = 1e-3;
    };

    Adam(std::vector<Group> groups, AdamConfig config = {});

    void step();
    i64 steps_taken() const { return t_; }
    double last_grad_norm() const { return last_norm_; }

private:
    std::vector<Group> groups_;
    AdamConfig config_;
    i64 t_ = 0;
    double last_norm_ = 0.0;
};

}  // namespace stgcl
