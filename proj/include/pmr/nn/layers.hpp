#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmr/nn/tensor.hpp"

namespace pmr::nn {

enum class Init { Uniform, Zeros, Ones };

/// Owns the named parameters of one network. Uniform initialization draws
/// U(-sqrt(3/fan_in), sqrt(3/fan_in)) (unit-variance gain) from a stream derived from the store
/// seed and the parameter name, so a weight does not depend on creation order.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    Var create(const std::string& name, std::vector<int> shape, Init init, int fan_in = 1);

    const ParameterList& parameters() const noexcept { return params_; }
    ParameterList& parameters() noexcept { return params_; }
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t count() const { return parameter_count(params_); }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    ParameterList params_;
    std::map<std::string, std::size_t> index_;
};

/// Per-frame depthwise 3×3 conv followed by a pointwise projection.
struct DepthwiseSeparable {
    DepthwiseSeparable() = default;
    DepthwiseSeparable(ParamStore& store, const std::string& prefix, int in_channels,
                       int out_channels);
    Var operator()(const Var& x) const;
    /// Depthwise kernel = centre tap 1, pointwise = identity, biases 0.
    void set_identity();

    static std::size_t param_count(int in_channels, int out_channels);
    static double macs(int in_channels, int out_channels, double positions);

    int in_channels = 0;
    int out_channels = 0;
    Var dw_weight, dw_bias, pw_weight, pw_bias;
};

/// Pointwise linear layer (channel mixing).
struct Linear {
    Linear() = default;
    Linear(ParamStore& store, const std::string& prefix, int in_channels, int out_channels,
           Init init = Init::Uniform);
    Var operator()(const Var& x) const;
    static std::size_t param_count(int in_channels, int out_channels) {
        return static_cast<std::size_t>(in_channels) * out_channels + out_channels;
    }
    static double macs(int in_channels, int out_channels, double positions) {
        return positions * in_channels * out_channels;
    }
    Var weight, bias;
};

/// Feature extraction, a 3×3×3 conv predicting per-frame offsets, a backward
/// warp of the features by those offsets and a second extraction conv.
struct DsAlign {
    DsAlign() = default;
    DsAlign(ParamStore& store, const std::string& prefix, int channels);
    Var operator()(const Var& x) const;
    static std::size_t param_count(int channels);
    static double macs(int channels, double positions);

    int channels = 0;
    DepthwiseSeparable extract, refine;
    Var offset_weight, offset_bias;
};

/// One Haar level per frame then a separable conv 4·Cin → Cout and gelu.
struct WaveConv {
    WaveConv() = default;
    WaveConv(ParamStore& store, const std::string& prefix, int in_channels, int out_channels);
    Var operator()(const Var& x) const;
    static std::size_t param_count(int in_channels, int out_channels);
    /// `positions` counts input (pre-decomposition) positions.
    static double macs(int in_channels, int out_channels, double positions);

    DepthwiseSeparable conv;
};

/// Depthwise 3×3×3 conv on the first floor(ratio·C) channels, pass-through of
/// the rest, then a separable conv over all channels.
struct PartConv {
    PartConv() = default;
    PartConv(ParamStore& store, const std::string& prefix, int channels, double ratio);
    Var operator()(const Var& x) const;
    static int partial_channels(int channels, double ratio);
    static std::size_t param_count(int channels, double ratio);
    static double macs(int channels, double ratio, double positions);

    int channels = 0;
    int partial = 0;
    Var part_weight, part_bias;
    DepthwiseSeparable mix;
};

/// Pre-norm channel-attention block with a gated feed-forward sublayer. The
/// attention output projection and the feed-forward output start at zero,
/// so a fresh block is the identity.
struct StcBlock {
    StcBlock() = default;
    StcBlock(ParamStore& store, const std::string& prefix, int channels, int heads);
    Var operator()(const Var& x, std::vector<Tensor>* attention = nullptr) const;
    static std::size_t param_count(int channels, int heads);
    static double macs(int channels, int heads, double positions);

    int channels = 0;
    int heads = 1;
    Var norm1_gamma, norm1_beta;
    Var mix_weight, mix_bias;  // grouped 3×3×3 conv
    Linear qkv;
    Var temperature;
    Linear proj;
    Var norm2_gamma, norm2_beta;
    Linear ffn_in, ffn_out;
};

/// Copies of all parameter values keyed by name.
std::map<std::string, Tensor> snapshot(const ParameterList& params);
/// Overwrites parameters by name; shapes must match and every name must exist.
void restore(ParameterList& params, const std::map<std::string, Tensor>& values);

}  // namespace pmr::nn
