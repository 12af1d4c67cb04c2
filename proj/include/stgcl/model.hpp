#pragma once

#include <map>
#include <string>
#include <vector>

#include "stgcl/data.hpp"
#include "stgcl/graph.hpp"
#include "stgcl/tensor.hpp"

namespace stgcl {

// Gated temporal convolution + diffusion graph convolution encoder. The
// dilation list fixes the layer count; the receptive field
// 1 + sum (k-1)*d must cover the input window.
struct EncoderConfig {
    std::vector<i64> dilations = {1, 2, 4, 8};
    i64 hidden = 16;           // D
    i64 diffusion_steps = 2;   // K
    double dropout = 0.3;
    i64 kernel = 2;

    i64 receptive_field() const {
        i64 r = 1;
        for (i64 d : dilations) r += (kernel - 1) * d;
        return r;
    }

    static EncoderConfig desk() { return EncoderConfig{}; }
    static EncoderConfig paper() {
        EncoderConfig c;
        c.dilations = {1, 2, 1, 2, 1, 2, 1, 2};
        c.hidden = 32;
        c.diffusion_steps = 2;
        c.dropout = 0.3;
        return c;
    }
};

enum class ContrastLevel { kNode, kGraph };

// Which trainable blocks a model instance carries.
struct ModelBlocks {
    bool decoder = true;
    bool projection = true;
};

class StgModel {
public:
    StgModel(EncoderConfig config, i64 input_features, i64 output_steps, u64 seed,
             ModelBlocks blocks = {});

    const EncoderConfig& config() const { return config_; }
    i64 output_steps() const { return output_steps_; }
    i64 input_features() const { return input_features_; }
    bool has_decoder() const { return blocks_.decoder; }
    bool has_projection() const { return blocks_.projection; }

    // inputs (M,S,N,F) -> H (M,N,D)
    Var encode(Tape& tape, Var inputs, const Tensor& norm_adjacency, rng::Stream& dropout_stream);

    // H (M,N,D) -> predictions (M,T,N,1), inverse z-scored
    Var decode(Tape& tape, Var h, const ZScore& stats);

    // H (M,N,D) -> s (M,D), summation over nodes
    Var readout(Tape& tape, Var h);

    // features (R,D) -> (R,D): linear, batch norm, relu, linear
    Var project(Tape& tape, Var features);

    // H (M,N,D) -> Z (M,N,D) through the projection head
    Var project_nodes(Tape& tape, Var h);

    std::vector<Parameter*> all_params();
    std::vector<Parameter*> encoder_params();
    std::vector<Parameter*> decoder_params();
    std::vector<Parameter*> projection_params();
    Parameter& param(const std::string& name);
    i64 param_count() const;

    BatchNormState& projection_bn() { return proj_bn_; }
    const BatchNormState& projection_bn() const { return proj_bn_; }

    // snapshot/restore of values + BN stats (checkpoint selection)
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& state, bool encoder_only = false);

private:
    Parameter& add_param(const std::string& name, std::vector<i64> shape, i64 fan_in, u64 seed);

    EncoderConfig config_;
    i64 input_features_;
    i64 output_steps_;
    ModelBlocks blocks_;
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
    BatchNormState proj_bn_;
};

// Checkpoint format: magic "STGC", version u16, config-echo JSON blob,
// named tensor blocks (trainable parameters and BN buffers).
void save_checkpoint(const std::string& path, const StgModel& model,
                     const std::string& config_echo_json);

struct Checkpoint {
    std::string config_echo;
    std::map<std::string, Tensor> blocks;
};

Checkpoint load_checkpoint(const std::string& path);

// Restores every block into a compatible model (shapes must match).
void restore_model(StgModel& model, const Checkpoint& ckpt, bool encoder_only = false);

}  // namespace stgcl
