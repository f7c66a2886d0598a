#include "pmr/deblur.hpp"

#include "pmr/errors.hpp"
#include "pmr/nn/convert.hpp"
#include "pmr/nn/ops.hpp"
#include "pmr/nn/optim.hpp"

namespace pmr::deblur {

namespace ops = nn::ops;
using nn::Var;

int DebConfig::stage_width(int stage) const {
    static constexpr std::array<int, 4> factor = {1, 1, 2, 4};
    return base_channels * factor.at(stage);
}

void DebConfig::validate() const {
    if (base_channels < 1) fail(ErrorKind::ConfigError, "deb base_channels must be >= 1");
    if (channels < 1) fail(ErrorKind::ConfigError, "deb channels must be >= 1");
    for (int level = 0; level < 3; ++level) {
        const int width = base_channels << level;
        if (heads[level] < 1 || width % heads[level] != 0) {
            fail(ErrorKind::ConfigError, "deb level " + std::to_string(level) + " width " +
                                             std::to_string(width) + " not divisible by " +
                                             std::to_string(heads[level]) + " heads");
        }
    }
}

nlohmann::json DebConfig::to_json() const {
    return {{"base_channels", base_channels}, {"channels", channels}, {"heads", heads},
            {"residual_output", residual_output}, {"enc_blocks", enc_blocks}, {"dec_blocks", dec_blocks}};
}

DebConfig DebConfig::from_json(const nlohmann::json& j) {
    DebConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.channels = j.value("channels", c.channels);
    c.heads = j.value("heads", c.heads);
    c.residual_output = j.value("residual_output", c.residual_output);
    c.validate();
    return c;
}

namespace {

DebConfig checked(DebConfig c) {
    c.validate();
    return c;
}

std::vector<nn::StcBlock> make_blocks(nn::ParamStore& store, const std::string& prefix, int count,
                                      int channels, int heads) {
    std::vector<nn::StcBlock> blocks;
    for (int i = 0; i < count; ++i) blocks.emplace_back(store, prefix + "." + std::to_string(i), channels, heads);
    return blocks;
}

// Runs the blocks in order, appending their attention matrices when asked.
Var collect(const std::vector<nn::StcBlock>& blocks, Var x, std::vector<nn::Tensor>* attention) {
    for (const auto& b : blocks) {
        std::vector<nn::Tensor> mats;
        x = b(x, attention ? &mats : nullptr);
        if (attention) attention->insert(attention->end(), mats.begin(), mats.end());
    }
    return x;
}

}  // namespace

DebNetwork::DebNetwork(DebConfig config, std::uint64_t seed) : config_(checked(config)), store_(seed) {
    const int c = config_.base_channels;
    const auto& h = config_.heads;
    const auto& enc = DebConfig::enc_blocks;
    const auto& dec = DebConfig::dec_blocks;
    embed_ = nn::Linear(store_, "embed", config_.channels, c);
    enc1_ = nn::DsAlign(store_, "enc1", c);
    enc2_ = make_blocks(store_, "enc2", enc[1], c, h[0]);
    down1_ = nn::Linear(store_, "down1", 4 * c, 2 * c);
    enc3_ = make_blocks(store_, "enc3", enc[2], 2 * c, h[1]);
    down2_ = nn::Linear(store_, "down2", 8 * c, 4 * c);
    enc4_ = make_blocks(store_, "enc4", enc[3], 4 * c, h[2]);
    up2_ = nn::Linear(store_, "up2", 4 * c, 2 * c);
    fuse2_ = nn::Linear(store_, "fuse2", 4 * c, 2 * c);
    dec3_ = make_blocks(store_, "dec3", dec[0], 2 * c, h[1]);
    up1_ = nn::Linear(store_, "up1", 2 * c, c);
    fuse1_ = nn::Linear(store_, "fuse1", 2 * c, c);
    dec2_ = make_blocks(store_, "dec2", dec[1], c, h[0]);
    dec1_ = nn::DsAlign(store_, "dec1", c);
    out_ = nn::Linear(store_, "out", c, config_.channels, nn::Init::Zeros);
}

Var DebNetwork::forward(const Var& clip, std::vector<nn::Tensor>* attention) const {
    const nn::Tensor& x = clip.value();
    if (x.rank() != 4 || x.channels() != config_.channels) {
        fail(ErrorKind::ShapeMismatch, "deb input must be (T,H,W," + std::to_string(config_.channels) + ")");
    }
    if (x.height() % 4 != 0 || x.width() % 4 != 0) {
        fail(ErrorKind::ShapeError, "deb input sides must be divisible by 4");
    }
    const Var f1 = enc1_(embed_(clip));
    const Var skip1 = collect(enc2_, f1, attention);
    const Var skip2 = collect(enc3_, down1_(ops::haar_down(skip1)), attention);
    const Var bottom = collect(enc4_, down2_(ops::haar_down(skip2)), attention);

    Var u = fuse2_(ops::concat_channels({up2_(ops::upsample_nearest2(bottom)), skip2}));
    u = collect(dec3_, u, attention);
    u = fuse1_(ops::concat_channels({up1_(ops::upsample_nearest2(u)), skip1}));
    u = collect(dec2_, u, attention);
    const Var correction = out_(dec1_(u));
    return ops::clamp01(config_.residual_output ? ops::add(clip, correction) : correction);
}

void DebNetwork::save(const std::filesystem::path& file) const {
    nn::save_checkpoint(file, "deb", config_.to_json(), store_.parameters());
}

DebNetwork DebNetwork::load(const std::filesystem::path& file) {
    const nn::Checkpoint ck = nn::load_checkpoint(file);
    if (ck.kind != "deb") fail(ErrorKind::DecodeError, file.string() + " is not a deb checkpoint");
    DebNetwork net(DebConfig::from_json(ck.config));
    nn::restore(net.parameters(), {ck.tensors.begin(), ck.tensors.end()});
    return net;
}

media::FrameClip deb_forward(const media::FrameClip& clip, const DebNetwork& net) {
    nn::NoGradGuard guard;
    const Var out = net.forward(nn::constant(nn::to_tensor(clip)));
    return nn::to_clip(out.value(), clip.meta());
}

std::size_t count_params(const DebConfig& config) {
    config.validate();
    const int c = config.base_channels;
    const auto& h = config.heads;
    const auto& enc = DebConfig::enc_blocks;
    const auto& dec = DebConfig::dec_blocks;
    using nn::Linear;
    using nn::StcBlock;
    std::size_t n = Linear::param_count(config.channels, c) + nn::DsAlign::param_count(c);
    n += enc[1] * StcBlock::param_count(c, h[0]);
    n += Linear::param_count(4 * c, 2 * c) + enc[2] * StcBlock::param_count(2 * c, h[1]);
    n += Linear::param_count(8 * c, 4 * c) + enc[3] * StcBlock::param_count(4 * c, h[2]);
    n += Linear::param_count(4 * c, 2 * c) + Linear::param_count(4 * c, 2 * c) + dec[0] * StcBlock::param_count(2 * c, h[1]);
    n += Linear::param_count(2 * c, c) + Linear::param_count(2 * c, c) + dec[1] * StcBlock::param_count(c, h[0]);
    n += nn::DsAlign::param_count(c) + Linear::param_count(c, config.channels);
    return n;
}

double approx_macs(const DebConfig& config, int frames, int height, int width) {
    config.validate();
    const int c = config.base_channels;
    const auto& h = config.heads;
    const auto& enc = DebConfig::enc_blocks;
    const auto& dec = DebConfig::dec_blocks;
    using nn::Linear;
    using nn::StcBlock;
    const double p1 = static_cast<double>(frames) * height * width;
    const double p2 = p1 / 4.0;
    const double p3 = p1 / 16.0;
    double m = Linear::macs(config.channels, c, p1) + nn::DsAlign::macs(c, p1);
    m += enc[1] * StcBlock::macs(c, h[0], p1);
    m += p1 * c + Linear::macs(4 * c, 2 * c, p2) + enc[2] * StcBlock::macs(2 * c, h[1], p2);
    m += p2 * 2 * c + Linear::macs(8 * c, 4 * c, p3) + enc[3] * StcBlock::macs(4 * c, h[2], p3);
    m += Linear::macs(4 * c, 2 * c, p2) + Linear::macs(4 * c, 2 * c, p2) + dec[0] * StcBlock::macs(2 * c, h[1], p2);
    m += Linear::macs(2 * c, c, p1) + Linear::macs(2 * c, c, p1) + dec[1] * StcBlock::macs(c, h[0], p1);
    m += nn::DsAlign::macs(c, p1) + Linear::macs(c, config.channels, p1);
    return m;
}

}  // namespace pmr::deblur
