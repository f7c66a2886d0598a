#include "pmr/nn/layers.hpp"

#include <cmath>
#include <random>

#include "pmr/errors.hpp"
#include "pmr/nn/ops.hpp"
#include "pmr/turbsim.hpp"

namespace pmr::nn {

Var ParamStore::create(const std::string& name, std::vector<int> shape, Init init, int fan_in) {
    if (index_.count(name)) fail(ErrorKind::ConfigError, "duplicate parameter '" + name + "'");
    Tensor value(std::move(shape));
    switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            value.fill(1.0);
            break;
        case Init::Uniform: {
            std::mt19937_64 rng(turbsim::substream(seed_, name));
            const double bound = std::sqrt(3.0 / static_cast<double>(std::max(fan_in, 1)));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : value.values()) v = dist(rng);
            break;
        }
    }
    Var var = parameter(std::move(value));
    index_[name] = params_.size();
    params_.push_back({name, var});
    return var;
}

Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::ConfigError, "no parameter '" + name + "'");
    return params_[it->second].var;
}

DepthwiseSeparable::DepthwiseSeparable(ParamStore& store, const std::string& prefix,
                                       int in_channels_, int out_channels_)
    : in_channels(in_channels_), out_channels(out_channels_) {
    dw_weight = store.create(prefix + ".dw.weight", {in_channels, 1, 3, 3, 1}, Init::Uniform, 9);
    dw_bias = store.create(prefix + ".dw.bias", {in_channels}, Init::Zeros);
    pw_weight = store.create(prefix + ".pw.weight", {out_channels, in_channels}, Init::Uniform, in_channels);
    pw_bias = store.create(prefix + ".pw.bias", {out_channels}, Init::Zeros);
}

Var DepthwiseSeparable::operator()(const Var& x) const {
    if (x.value().channels() != in_channels) {
        fail(ErrorKind::ShapeMismatch, "separable conv expects " + std::to_string(in_channels) +
                                           " channels, got " + std::to_string(x.value().channels()));
    }
    return ops::linear(ops::conv3d(x, dw_weight, dw_bias, in_channels), pw_weight, pw_bias);
}

void DepthwiseSeparable::set_identity() {
    Tensor& dw = dw_weight.mutable_value();
    dw.fill(0.0);
    for (int c = 0; c < in_channels; ++c) dw[static_cast<std::size_t>(c) * 9 + 4] = 1.0;
    dw_bias.mutable_value().fill(0.0);
    Tensor& pw = pw_weight.mutable_value();
    pw.fill(0.0);
    for (int c = 0; c < std::min(in_channels, out_channels); ++c) {
        pw[static_cast<std::size_t>(c) * in_channels + c] = 1.0;
    }
    pw_bias.mutable_value().fill(0.0);
}

std::size_t DepthwiseSeparable::param_count(int in_channels, int out_channels) {
    return 10 * static_cast<std::size_t>(in_channels) +
           static_cast<std::size_t>(in_channels) * out_channels + out_channels;
}

double DepthwiseSeparable::macs(int in_channels, int out_channels, double positions) {
    return positions * (9.0 * in_channels + static_cast<double>(in_channels) * out_channels);
}

Linear::Linear(ParamStore& store, const std::string& prefix, int in_channels, int out_channels,
               Init init) {
    weight = store.create(prefix + ".weight", {out_channels, in_channels}, init, in_channels);
    bias = store.create(prefix + ".bias", {out_channels}, Init::Zeros);
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

DsAlign::DsAlign(ParamStore& store, const std::string& prefix, int channels_)
    : channels(channels_),
      extract(store, prefix + ".extract", channels_, channels_),
      refine(store, prefix + ".refine", channels_, channels_) {
    offset_weight = store.create(prefix + ".offset.weight", {2, 3, 3, 3, channels}, Init::Zeros);
    offset_bias = store.create(prefix + ".offset.bias", {2}, Init::Zeros);
}

Var DsAlign::operator()(const Var& x) const {
    Var features = extract(x);
    Var offsets = ops::conv3d(features, offset_weight, offset_bias, 1);
    return refine(ops::warp(features, offsets));
}

std::size_t DsAlign::param_count(int channels) {
    return 2 * DepthwiseSeparable::param_count(channels, channels) + 54 * static_cast<std::size_t>(channels) + 2;
}

double DsAlign::macs(int channels, double positions) {
    // Two separable convs, the offset conv and four bilinear taps per channel.
    return 2 * DepthwiseSeparable::macs(channels, channels, positions) + positions * (54.0 * channels + 4.0 * channels);
}

WaveConv::WaveConv(ParamStore& store, const std::string& prefix, int in_channels, int out_channels)
    : conv(store, prefix + ".conv", 4 * in_channels, out_channels) {}

Var WaveConv::operator()(const Var& x) const { return ops::gelu(conv(ops::haar_down(x))); }

std::size_t WaveConv::param_count(int in_channels, int out_channels) {
    return DepthwiseSeparable::param_count(4 * in_channels, out_channels);
}

double WaveConv::macs(int in_channels, int out_channels, double positions) {
    return positions * in_channels + DepthwiseSeparable::macs(4 * in_channels, out_channels, positions / 4.0);
}

int PartConv::partial_channels(int channels, double ratio) {
    return static_cast<int>(std::floor(ratio * channels));
}

PartConv::PartConv(ParamStore& store, const std::string& prefix, int channels_, double ratio)
    : channels(channels_), partial(partial_channels(channels_, ratio)),
      mix(store, prefix + ".mix", channels_, channels_) {
    if (partial < 1) fail(ErrorKind::ConfigError, "partial conv would cover no channel");
    part_weight = store.create(prefix + ".part.weight", {partial, 3, 3, 3, 1}, Init::Uniform, 27);
    part_bias = store.create(prefix + ".part.bias", {partial}, Init::Zeros);
}

Var PartConv::operator()(const Var& x) const {
    const Var head = ops::conv3d(ops::slice_channels(x, 0, partial), part_weight, part_bias, partial);
    if (partial == channels) return mix(head);
    return mix(ops::concat_channels({head, ops::slice_channels(x, partial, channels)}));
}

std::size_t PartConv::param_count(int channels, double ratio) {
    return 28 * static_cast<std::size_t>(partial_channels(channels, ratio)) +
           DepthwiseSeparable::param_count(channels, channels);
}

double PartConv::macs(int channels, double ratio, double positions) {
    return positions * 27.0 * partial_channels(channels, ratio) +
           DepthwiseSeparable::macs(channels, channels, positions);
}

StcBlock::StcBlock(ParamStore& store, const std::string& prefix, int channels_, int heads_)
    : channels(channels_), heads(heads_) {
    if (heads < 1 || channels % heads != 0) {
        fail(ErrorKind::ConfigError, "channels " + std::to_string(channels) +
                                         " not divisible by heads " + std::to_string(heads));
    }
    const int per_group = channels / heads;
    norm1_gamma = store.create(prefix + ".norm1.gamma", {channels}, Init::Ones);
    norm1_beta = store.create(prefix + ".norm1.beta", {channels}, Init::Zeros);
    mix_weight = store.create(prefix + ".mix.weight", {channels, 3, 3, 3, per_group}, Init::Uniform,
                              27 * per_group);
    mix_bias = store.create(prefix + ".mix.bias", {channels}, Init::Zeros);
    qkv = Linear(store, prefix + ".qkv", channels, 3 * channels);
    temperature = store.create(prefix + ".temperature", {heads}, Init::Ones);
    proj = Linear(store, prefix + ".proj", channels, channels, Init::Zeros);
    norm2_gamma = store.create(prefix + ".norm2.gamma", {channels}, Init::Ones);
    norm2_beta = store.create(prefix + ".norm2.beta", {channels}, Init::Zeros);
    ffn_in = Linear(store, prefix + ".ffn_in", channels, 4 * channels);
    ffn_out = Linear(store, prefix + ".ffn_out", 2 * channels, channels, Init::Zeros);
}

Var StcBlock::operator()(const Var& x, std::vector<Tensor>* attention) const {
    if (x.value().channels() != channels) {
        fail(ErrorKind::ShapeMismatch, "attention block width mismatch");
    }
    Var h = ops::layer_norm(x, norm1_gamma, norm1_beta);
    h = ops::conv3d(h, mix_weight, mix_bias, heads);
    h = ops::channel_attention(qkv(h), temperature, heads, attention);
    Var y = ops::add(x, proj(h));

    Var g = ffn_in(ops::layer_norm(y, norm2_gamma, norm2_beta));
    const Var gate = ops::gelu(ops::slice_channels(g, 0, 2 * channels));
    const Var value = ops::slice_channels(g, 2 * channels, 4 * channels);
    return ops::add(y, ffn_out(ops::mul(gate, value)));
}

std::size_t StcBlock::param_count(int channels, int heads) {
    const std::size_t C = channels;
    const std::size_t H = heads;
    const std::size_t norms = 4 * C;
    const std::size_t mix = 27 * C * (C / H) + C;
    const std::size_t qkv = 3 * C * C + 3 * C;
    const std::size_t proj = C * C + C;
    const std::size_t ffn = 4 * C * C + 4 * C + 2 * C * C + C;
    return norms + mix + qkv + H + proj + ffn;
}

double StcBlock::macs(int channels, int heads, double positions) {
    const double C = channels;
    const double d = C / heads;
    const double pointwise = 3 * C * C + C * C + 4 * C * C + 2 * C * C;
    const double attention = 2.0 * C * d + 2.0 * C * d;  // scores and weighted values
    return positions * (27.0 * C * d + pointwise + attention + 2.0 * C);
}

std::map<std::string, Tensor> snapshot(const ParameterList& params) {
    std::map<std::string, Tensor> out;
    for (const auto& p : params) out[p.name] = p.var.value();
    return out;
}

void restore(ParameterList& params, const std::map<std::string, Tensor>& values) {
    for (auto& p : params) {
        auto it = values.find(p.name);
        if (it == values.end()) fail(ErrorKind::DecodeError, "missing parameter '" + p.name + "'");
        if (!it->second.same_shape(p.var.value())) {
            fail(ErrorKind::ShapeMismatch, "parameter '" + p.name + "' has shape " +
                                               shape_string(it->second.shape()) + ", expected " +
                                               shape_string(p.var.value().shape()));
        }
        p.var.mutable_value() = it->second;
    }
}

}  // namespace pmr::nn
