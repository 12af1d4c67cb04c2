#include "stgcl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace stgcl {

// ===========================================================================
// Construction
// ===========================================================================

StgModel::StgModel(EncoderConfig config, i64 input_features, i64 output_steps, u64 seed,
                   ModelBlocks blocks)
    : config_(std::move(config)),
      input_features_(input_features),
      output_steps_(output_steps),
      blocks_(blocks),
      proj_bn_(config_.hidden) {
    if (config_.hidden < 1) throw ConfigError("model: hidden width must be positive");
    if (config_.diffusion_steps < 0) throw ConfigError("model: diffusion steps must be >= 0");
    if (config_.dilations.empty()) throw ConfigError("model: need at least one layer");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) {
        throw ConfigError("model: dropout must be in [0,1)");
    }
    const i64 d = config_.hidden;
    const i64 k = config_.kernel;

    params_.reserve(6 * config_.dilations.size() + 16);
    add_param("encoder.start.w", {d, input_features_}, input_features_, seed);
    add_param("encoder.start.b", {d}, 0, seed);
    for (std::size_t l = 0; l < config_.dilations.size(); ++l) {
        const std::string prefix = "encoder.l" + std::to_string(l) + ".";
        add_param(prefix + "filter.w", {d, d, k}, d * k, seed);
        add_param(prefix + "filter.b", {d}, 0, seed);
        add_param(prefix + "gate.w", {d, d, k}, d * k, seed);
        add_param(prefix + "gate.b", {d}, 0, seed);
        add_param(prefix + "skip.w", {d, d}, d, seed);
        add_param(prefix + "skip.b", {d}, 0, seed);
        for (i64 hop = 0; hop <= config_.diffusion_steps; ++hop) {
            add_param(prefix + "gconv.w" + std::to_string(hop), {d, d}, d, seed);
        }
        add_param(prefix + "gconv.b", {d}, 0, seed);
    }
    if (blocks_.decoder) {
        add_param("decoder.fc1.w", {d, d}, d, seed);
        add_param("decoder.fc1.b", {d}, 0, seed);
        add_param("decoder.fc2.w", {d, output_steps_}, d, seed);
        add_param("decoder.fc2.b", {output_steps_}, 0, seed);
    }
    if (blocks_.projection) {
        add_param("proj.fc1.w", {d, d}, d, seed);
        add_param("proj.fc1.b", {d}, 0, seed);
        Parameter& gamma = add_param("proj.bn.gamma", {d}, 0, seed);
        for (i64 i = 0; i < d; ++i) gamma.value[i] = 1.0;
        add_param("proj.bn.beta", {d}, 0, seed);
        add_param("proj.fc2.w", {d, d}, d, seed);
        add_param("proj.fc2.b", {d}, 0, seed);
    }
}

Parameter& StgModel::add_param(const std::string& name, std::vector<i64> shape, i64 fan_in,
                               u64 seed) {
    Tensor init(shape);
    if (fan_in > 0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        rng::Stream stream(rng::Key(seed).fold("init").fold(name));
        for (i64 i = 0; i < init.numel(); ++i) init[i] = stream.uniform(-bound, bound);
    }
    index_.emplace(name, params_.size());
    params_.emplace_back(name, std::move(init));
    return params_.back();
}

Parameter& StgModel::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return params_[it->second];
}

std::vector<Parameter*> StgModel::all_params() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

namespace {
std::vector<Parameter*> with_prefix(std::vector<Parameter>& params, const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto& p : params) {
        if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
    }
    return out;
}
}  // namespace

std::vector<Parameter*> StgModel::encoder_params() { return with_prefix(params_, "encoder."); }
std::vector<Parameter*> StgModel::decoder_params() { return with_prefix(params_, "decoder."); }
std::vector<Parameter*> StgModel::projection_params() { return with_prefix(params_, "proj."); }

i64 StgModel::param_count() const {
    i64 n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

// ===========================================================================
// Forward passes
// ===========================================================================

Var StgModel::encode(Tape& tape, Var inputs, const Tensor& norm_adjacency,
                     rng::Stream& dropout_stream) {
    const Tensor& vin = tape.value(inputs);
    if (vin.ndim() != 4 || vin.shape()[3] != input_features_) {
        throw ShapeError("encode: expected (M,S,N," + std::to_string(input_features_) +
                         "), got " + shape_str(vin.shape()));
    }
    const i64 s = vin.shape()[1];
    const i64 n = vin.shape()[2];
    if (norm_adjacency.ndim() != 2 || norm_adjacency.shape()[0] != n) {
        throw ShapeError("encode: adjacency " + shape_str(norm_adjacency.shape()) +
                         " does not match " + std::to_string(n) + " nodes");
    }
    const i64 field = config_.receptive_field();
    if (field < s) {
        throw ConfigError("encode: receptive field " + std::to_string(field) +
                          " smaller than input window " + std::to_string(s));
    }

    // (M,S,N,F) -> (M,F,N,S), left-pad time up to the receptive field
    Var x = tape.permute(inputs, {0, 3, 2, 1});
    if (field > s) x = tape.pad_front(x, 3, field - s);
    x = tape.channel_linear(x, tape.watch(param("encoder.start.w")),
                            tape.watch(param("encoder.start.b")));

    Var skip_sum{};
    for (std::size_t l = 0; l < config_.dilations.size(); ++l) {
        const std::string prefix = "encoder.l" + std::to_string(l) + ".";
        const i64 dilation = config_.dilations[l];
        Var residual = x;

        Var filt = tape.dilated_causal_conv1d(x, tape.watch(param(prefix + "filter.w")),
                                              tape.watch(param(prefix + "filter.b")), dilation);
        Var gate = tape.dilated_causal_conv1d(x, tape.watch(param(prefix + "gate.w")),
                                              tape.watch(param(prefix + "gate.b")), dilation);
        Var h = tape.gated_tanh_sigmoid(filt, gate);
        const i64 out_len = tape.value(h).shape()[3];

        // skip connection from the newest time step
        Var tail = tape.slice(h, 3, out_len - 1, 1);
        Var skip = tape.channel_linear(tail, tape.watch(param(prefix + "skip.w")),
                                       tape.watch(param(prefix + "skip.b")));
        skip_sum = skip_sum.valid() ? tape.add(skip_sum, skip) : skip;

        // diffusion graph convolution over the normalized adjacency
        Var hop = h;
        Var mixed = tape.channel_linear(h, tape.watch(param(prefix + "gconv.w0")),
                                        tape.watch(param(prefix + "gconv.b")));
        for (i64 step = 1; step <= config_.diffusion_steps; ++step) {
            hop = tape.node_mix(hop, norm_adjacency);
            Tensor zero_bias({config_.hidden});
            Var term = tape.channel_linear(
                hop, tape.watch(param(prefix + "gconv.w" + std::to_string(step))),
                tape.constant(zero_bias));
            mixed = tape.add(mixed, term);
        }
        mixed = tape.dropout(mixed, config_.dropout, dropout_stream);

        // time-aligned residual
        const i64 in_len = tape.value(residual).shape()[3];
        Var shifted = tape.slice(residual, 3, in_len - out_len, out_len);
        x = tape.add(mixed, shifted);
    }

    // (M,D,N,1) -> (M,N,D)
    const Tensor& vskip = tape.value(skip_sum);
    Var h = tape.reshape(skip_sum, {vskip.shape()[0], vskip.shape()[1], vskip.shape()[2]});
    return tape.permute(h, {0, 2, 1});
}

Var StgModel::decode(Tape& tape, Var h, const ZScore& stats) {
    if (!blocks_.decoder) throw ConfigError("decode: model built without a decoder");
    const Tensor& vh = tape.value(h);
    if (vh.ndim() != 3 || vh.shape()[2] != config_.hidden) {
        throw ShapeError("decode: expected (M,N,D), got " + shape_str(vh.shape()));
    }
    const i64 m = vh.shape()[0], n = vh.shape()[1];
    Var flat = tape.reshape(h, {m * n, config_.hidden});
    Var z = tape.linear(flat, tape.watch(param("decoder.fc1.w")),
                        tape.watch(param("decoder.fc1.b")));
    z = tape.relu(z);
    z = tape.linear(z, tape.watch(param("decoder.fc2.w")), tape.watch(param("decoder.fc2.b")));
    Var shaped = tape.reshape(z, {m, n, output_steps_});
    shaped = tape.permute(shaped, {0, 2, 1});
    shaped = tape.reshape(shaped, {m, output_steps_, n, 1});
    // back to the original scale
    return tape.add_scalar(tape.scale(shaped, stats.std), stats.mean);
}

Var StgModel::readout(Tape& tape, Var h) {
    const Tensor& vh = tape.value(h);
    if (vh.ndim() != 3) throw ShapeError("readout: expected (M,N,D), got " + shape_str(vh.shape()));
    return tape.sum_axis(h, 1);
}

Var StgModel::project(Tape& tape, Var features) {
    if (!blocks_.projection) throw ConfigError("project: model built without a projection head");
    const Tensor& vf = tape.value(features);
    if (vf.ndim() != 2 || vf.shape()[1] != config_.hidden) {
        throw ShapeError("project: expected (R,D), got " + shape_str(vf.shape()));
    }
    Var z = tape.linear(features, tape.watch(param("proj.fc1.w")),
                        tape.watch(param("proj.fc1.b")));
    z = tape.batch_norm(z, tape.watch(param("proj.bn.gamma")), tape.watch(param("proj.bn.beta")),
                        proj_bn_);
    z = tape.relu(z);
    return tape.linear(z, tape.watch(param("proj.fc2.w")), tape.watch(param("proj.fc2.b")));
}

Var StgModel::project_nodes(Tape& tape, Var h) {
    const Tensor& vh = tape.value(h);
    if (vh.ndim() != 3) {
        throw ShapeError("project_nodes: expected (M,N,D), got " + shape_str(vh.shape()));
    }
    const i64 m = vh.shape()[0], n = vh.shape()[1];
    Var flat = tape.reshape(h, {m * n, config_.hidden});
    Var z = project(tape, flat);
    return tape.reshape(z, {m, n, config_.hidden});
}

// ===========================================================================
// State snapshot / restore
// ===========================================================================

std::map<std::string, Tensor> StgModel::state() const {
    std::map<std::string, Tensor> out;
    for (const auto& p : params_) out.emplace(p.name, p.value);
    if (blocks_.projection) {
        out.emplace("proj.bn.running_mean", proj_bn_.running_mean);
        out.emplace("proj.bn.running_var", proj_bn_.running_var);
    }
    return out;
}

void StgModel::load_state(const std::map<std::string, Tensor>& state, bool encoder_only) {
    for (auto& p : params_) {
        if (encoder_only && p.name.rfind("encoder.", 0) != 0) continue;
        auto it = state.find(p.name);
        if (it == state.end()) {
            throw DataError("checkpoint is missing parameter '" + p.name + "'");
        }
        if (!it->second.same_shape(p.value)) {
            throw DataError("checkpoint shape mismatch for '" + p.name + "': " +
                            shape_str(it->second.shape()) + " vs " + shape_str(p.value.shape()));
        }
        p.value = it->second;
    }
    if (!encoder_only && blocks_.projection) {
        auto mean_it = state.find("proj.bn.running_mean");
        auto var_it = state.find("proj.bn.running_var");
        if (mean_it != state.end()) proj_bn_.running_mean = mean_it->second;
        if (var_it != state.end()) proj_bn_.running_var = var_it->second;
    }
}

// ===========================================================================
// Checkpoint I/O
// ===========================================================================

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated checkpoint: " + path);
    return v;
}

void write_block(std::ofstream& out, const std::string& name, const Tensor& t) {
    write_pod<u16>(out, static_cast<u16>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<u16>(out, static_cast<u16>(t.ndim()));
    for (i64 d : t.shape()) write_pod<u32>(out, static_cast<u32>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const StgModel& model,
                     const std::string& config_echo_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write("STGC", 4);
    write_pod<u16>(out, 1);
    write_pod<u32>(out, static_cast<u32>(config_echo_json.size()));
    out.write(config_echo_json.data(), static_cast<std::streamsize>(config_echo_json.size()));

    const auto state = model.state();
    write_pod<u32>(out, static_cast<u32>(state.size()));
    for (const auto& [name, tensor] : state) write_block(out, name, tensor);
    if (!out) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "STGC", 4) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    const u16 version = read_pod<u16>(in, path);
    if (version != 1) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const u32 json_len = read_pod<u32>(in, path);
    ckpt.config_echo.resize(json_len);
    in.read(ckpt.config_echo.data(), json_len);
    if (!in) throw DataError("truncated checkpoint: " + path);

    const u32 count = read_pod<u32>(in, path);
    for (u32 i = 0; i < count; ++i) {
        const u16 name_len = read_pod<u16>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const u16 ndim = read_pod<u16>(in, path);
        std::vector<i64> shape(ndim);
        for (u16 d = 0; d < ndim; ++d) shape[d] = read_pod<u32>(in, path);
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint block '" + name + "': " + path);
        ckpt.blocks.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void restore_model(StgModel& model, const Checkpoint& ckpt, bool encoder_only) {
    model.load_state(ckpt.blocks, encoder_only);
}

}  // namespace stgcl
