#include "pmr/detilt.hpp"

#include "pmr/errors.hpp"
#include "pmr/nn/convert.hpp"
#include "pmr/nn/ops.hpp"
#include "pmr/nn/optim.hpp"

namespace pmr::detilt {

namespace ops = nn::ops;
using media::FrameClip;
using nn::Var;

void DetConfig::validate() const {
    if (base_channels < 4) fail(ErrorKind::ConfigError, "det base_channels must be >= 4");
    if (in_frames < 2) fail(ErrorKind::ConfigError, "det in_frames must be >= 2");
    if (channels < 1) fail(ErrorKind::ConfigError, "det channels must be >= 1");
    if (!(part_ratio > 0.0 && part_ratio <= 1.0)) fail(ErrorKind::ConfigError, "det part_ratio must be in (0,1]");
    if (nn::PartConv::partial_channels(base_channels, part_ratio) < 1) {
        fail(ErrorKind::ConfigError, "det part_ratio leaves no convolved channel");
    }
}

nlohmann::json DetConfig::to_json() const {
    return {{"base_channels", base_channels}, {"in_frames", in_frames}, {"channels", channels},
            {"part_ratio", part_ratio}, {"depth", depth}, {"scales_out", scales_out}};
}

DetConfig DetConfig::from_json(const nlohmann::json& j) {
    DetConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.in_frames = j.value("in_frames", c.in_frames);
    c.channels = j.value("channels", c.channels);
    c.part_ratio = j.value("part_ratio", c.part_ratio);
    c.validate();
    return c;
}

namespace {

DetConfig checked(DetConfig c) {
    c.validate();
    return c;
}

}  // namespace

DetNetwork::DetNetwork(DetConfig config, std::uint64_t seed)
    : config_(checked(config)), store_(seed) {
    const int c = config_.base_channels;
    const double r = config_.part_ratio;
    embed_ = nn::Linear(store_, "embed", config_.channels, c);
    enc1_ = nn::DsAlign(store_, "enc1", c);
    enc2_ = nn::WaveConv(store_, "enc2", c, 2 * c);
    enc3_ = nn::WaveConv(store_, "enc3", 2 * c, 4 * c);
    enc4_ = nn::WaveConv(store_, "enc4", 4 * c, 4 * c);
    fuse1_ = nn::Linear(store_, "dec1.fuse", 8 * c, 4 * c);
    dec1_ = nn::PartConv(store_, "dec1.part", 4 * c, r);
    head1_ = nn::Linear(store_, "dec1.tilt", 4 * c, 2, nn::Init::Zeros);
    fuse2_ = nn::Linear(store_, "dec2.fuse", 6 * c, 2 * c);
    dec2_ = nn::PartConv(store_, "dec2.part", 2 * c, r);
    head2_ = nn::Linear(store_, "dec2.tilt", 2 * c, 2, nn::Init::Zeros);
    fuse3_ = nn::Linear(store_, "dec3.fuse", 3 * c, c);
    dec3_ = nn::PartConv(store_, "dec3.part", c, r);
    out_align_ = nn::DsAlign(store_, "dec3.align", c);
    head3_ = nn::Linear(store_, "dec3.tilt", c, 2, nn::Init::Zeros);
}

DetOutputs DetNetwork::forward(const Var& clip) const {
    const nn::Tensor& x = clip.value();
    if (x.rank() != 4 || x.channels() != config_.channels) {
        fail(ErrorKind::ShapeMismatch, "det input must be (T,H,W," + std::to_string(config_.channels) + ")");
    }
    const int T = x.frames(), H = x.height(), W = x.width();
    if (T < 2) fail(ErrorKind::ShapeError, "det needs at least 2 frames");
    if (H % 8 != 0 || W % 8 != 0) {
        fail(ErrorKind::ShapeError, "det input sides must be divisible by 8, got " + std::to_string(H) +
                                        "x" + std::to_string(W));
    }

    const Var e1 = enc1_(embed_(clip));
    const Var e2 = enc2_(e1);
    const Var e3 = enc3_(e2);
    const Var e4 = enc4_(e3);

    const Var d1 = dec1_(ops::gelu(fuse1_(ops::concat_channels({ops::upsample_nearest2(e4), e3}))));
    const Var d2 = dec2_(ops::gelu(fuse2_(ops::concat_channels({ops::upsample_nearest2(d1), e2}))));
    const Var d3 = out_align_(
        dec3_(ops::gelu(fuse3_(ops::concat_channels({ops::upsample_nearest2(d2), e1})))));

    DetOutputs out;
    out.levels = {head1_(d1), head2_(d2), head3_(d3)};
    const Var quarter = ops::scale(ops::resize_bilinear(out.levels[0], H, W), 4.0);
    const Var half = ops::scale(ops::resize_bilinear(out.levels[1], H, W), 2.0);
    out.frame_tilts = ops::scale(ops::add(ops::add(quarter, half), out.levels[2]), 1.0 / 3.0);
    out.corrected = ops::warp(clip, ops::temporal_deviation(out.frame_tilts));
    return out;
}

void DetNetwork::save(const std::filesystem::path& file) const {
    nn::save_checkpoint(file, "det", config_.to_json(), store_.parameters());
}

DetNetwork DetNetwork::load(const std::filesystem::path& file) {
    const nn::Checkpoint ck = nn::load_checkpoint(file);
    if (ck.kind != "det") fail(ErrorKind::DecodeError, file.string() + " is not a det checkpoint");
    DetNetwork net(DetConfig::from_json(ck.config));
    nn::restore(net.parameters(), {ck.tensors.begin(), ck.tensors.end()});
    return net;
}

std::size_t count_params(const DetConfig& config) {
    config.validate();
    const int c = config.base_channels;
    const double r = config.part_ratio;
    using nn::Linear;
    return Linear::param_count(config.channels, c) + nn::DsAlign::param_count(c) +
           nn::WaveConv::param_count(c, 2 * c) + nn::WaveConv::param_count(2 * c, 4 * c) +
           nn::WaveConv::param_count(4 * c, 4 * c) +
           Linear::param_count(8 * c, 4 * c) + nn::PartConv::param_count(4 * c, r) + Linear::param_count(4 * c, 2) +
           Linear::param_count(6 * c, 2 * c) + nn::PartConv::param_count(2 * c, r) + Linear::param_count(2 * c, 2) +
           Linear::param_count(3 * c, c) + nn::PartConv::param_count(c, r) + nn::DsAlign::param_count(c) +
           Linear::param_count(c, 2);
}

double approx_macs(const DetConfig& config, int frames, int height, int width) {
    config.validate();
    const int c = config.base_channels;
    const double r = config.part_ratio;
    using nn::Linear;
    const double p1 = static_cast<double>(frames) * height * width;
    const double p2 = p1 / 4.0, p4 = p1 / 16.0;
    double m = Linear::macs(config.channels, c, p1) + nn::DsAlign::macs(c, p1);
    m += nn::WaveConv::macs(c, 2 * c, p1) + nn::WaveConv::macs(2 * c, 4 * c, p2) + nn::WaveConv::macs(4 * c, 4 * c, p4);
    m += Linear::macs(8 * c, 4 * c, p4) + nn::PartConv::macs(4 * c, r, p4) + Linear::macs(4 * c, 2, p4);
    m += Linear::macs(6 * c, 2 * c, p2) + nn::PartConv::macs(2 * c, r, p2) + Linear::macs(2 * c, 2, p2);
    m += Linear::macs(3 * c, c, p1) + nn::PartConv::macs(c, r, p1) + nn::DsAlign::macs(c, p1) + Linear::macs(c, 2, p1);
    m += p1 * (2.0 * 4.0 + 4.0 * config.channels);  // level merge and final warp
    return m;
}

std::pair<TiltPyramid, FrameClip> det_forward(const FrameClip& clip, const DetNetwork& net) {
    nn::NoGradGuard guard;
    const DetOutputs out = net.forward(nn::constant(nn::to_tensor(clip)));
    TiltPyramid pyramid;
    for (int l = 0; l < 3; ++l) pyramid.levels[l] = nn::to_tilts(out.levels[l].value());
    return {std::move(pyramid), nn::to_clip(out.corrected.value(), clip.meta())};
}

std::vector<flow::TiltField> merge_levels(const TiltPyramid& pyramid) {
    const int frames = pyramid.frames();
    if (frames == 0) fail(ErrorKind::NoFlows, "empty tilt pyramid");
    const int H = pyramid.levels[2].front().height();
    const int W = pyramid.levels[2].front().width();
    std::vector<flow::TiltField> merged;
    for (int t = 0; t < frames; ++t) {
        flow::FlowField sum(H, W);
        for (const auto& level : pyramid.levels) {
            if (static_cast<int>(level.size()) != frames) {
                fail(ErrorKind::ShapeMismatch, "pyramid levels hold different frame counts");
            }
            sum = sum + flow::resize_flow(level[t], H, W);
        }
        merged.emplace_back(sum * (1.0 / 3.0));
    }
    return merged;
}

flow::TiltField average_tilt(const TiltPyramid& pyramid) {
    const auto merged = merge_levels(pyramid);
    return flow::TiltField(flow::mean_of({merged.begin(), merged.end()}));
}

FrameClip detilt_apply(const FrameClip& clip, const std::vector<flow::TiltField>& frame_tilts) {
    if (static_cast<int>(frame_tilts.size()) != clip.frames()) {
        fail(ErrorKind::ShapeMismatch, "one tilt field per frame required");
    }
    const flow::FlowField mean = flow::mean_of({frame_tilts.begin(), frame_tilts.end()});
    std::vector<double> samples;
    samples.reserve(clip.samples().size());
    for (int t = 0; t < clip.frames(); ++t) {
        if (frame_tilts[t].height() != clip.height() || frame_tilts[t].width() != clip.width()) {
            fail(ErrorKind::ShapeMismatch, "tilt field does not match frame size");
        }
        const media::Image warped = flow::warp(clip.frame(t), frame_tilts[t] - mean);
        samples.insert(samples.end(), warped.samples().begin(), warped.samples().end());
    }
    return FrameClip::clamped(clip.frames(), clip.height(), clip.width(), clip.channels(),
                              std::move(samples), clip.meta());
}

FrameClip detilt_apply(const FrameClip& clip, const TiltPyramid& pyramid) {
    return detilt_apply(clip, merge_levels(pyramid));
}

std::vector<flow::TiltField> oracle_tilts(const std::vector<flow::TiltField>& true_tilts) {
    std::vector<flow::TiltField> out;
    out.reserve(true_tilts.size());
    for (const auto& t : true_tilts) out.emplace_back(flow::invert_displacement(t));
    return out;
}

}  // namespace pmr::detilt
