#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pmr/flow.hpp"
#include "pmr/media.hpp"
#include "pmr/nn/layers.hpp"

namespace pmr::detilt {

struct DetConfig {
    int base_channels = 8;
    int in_frames = 4;  ///< nominal clip length; any T >= 2 is accepted
    int channels = 1;   ///< image channels
    double part_ratio = 0.25;
    static constexpr int depth = 4;
    static constexpr int scales_out = 3;

    void validate() const;
    nlohmann::json to_json() const;
    static DetConfig from_json(const nlohmann::json& j);
};

/// Per-frame correction displacements at 1/4, 1/2 and full resolution.
/// Warping observed frame i by (t_i - t̄) undoes its deviation from the
/// temporally stable geometry.
struct TiltPyramid {
    std::array<std::vector<flow::TiltField>, 3> levels;
    int frames() const { return static_cast<int>(levels[2].size()); }
};

/// Differentiable outputs of one pass.
struct DetOutputs {
    std::array<nn::Var, 3> levels;  ///< (T, h_l, w_l, 2)
    nn::Var frame_tilts;            ///< level-merged full-resolution fields
    nn::Var corrected;
};

/// Encoder [DsAlign, WaveConv ×3] and decoder of three upsample + PartConv
/// layers with concatenated skips; each decoder layer feeds a zero-initialized
/// tilt head, so a fresh network is the identity. Copies share parameters.
class DetNetwork {
public:
    explicit DetNetwork(DetConfig config = {}, std::uint64_t seed = 0);

    DetOutputs forward(const nn::Var& clip) const;

    const DetConfig& config() const noexcept { return config_; }
    nn::ParameterList& parameters() noexcept { return store_.parameters(); }
    const nn::ParameterList& parameters() const noexcept { return store_.parameters(); }
    std::size_t param_count() const { return store_.count(); }

    void save(const std::filesystem::path& file) const;
    static DetNetwork load(const std::filesystem::path& file);

private:
    DetConfig config_;
    nn::ParamStore store_;
    nn::Linear embed_;
    nn::DsAlign enc1_;
    nn::WaveConv enc2_, enc3_, enc4_;
    nn::Linear fuse1_, fuse2_, fuse3_;
    nn::PartConv dec1_, dec2_, dec3_;
    nn::DsAlign out_align_;
    nn::Linear head1_, head2_, head3_;
};

/// Closed-form trainable-parameter count.
std::size_t count_params(const DetConfig& config);

/// Multiply-accumulate estimate of one forward pass at the given shape.
double approx_macs(const DetConfig& config, int frames, int height, int width);

std::pair<TiltPyramid, media::FrameClip> det_forward(const media::FrameClip& clip,
                                                     const DetNetwork& net);

/// Level fields upsampled to full resolution (vectors rescaled) and averaged,
/// one per frame.
std::vector<flow::TiltField> merge_levels(const TiltPyramid& pyramid);
/// Temporal mean of the level-merged fields.
flow::TiltField average_tilt(const TiltPyramid& pyramid);

/// Frame i warped by (t_i - t̄).
media::FrameClip detilt_apply(const media::FrameClip& clip, const TiltPyramid& pyramid);
media::FrameClip detilt_apply(const media::FrameClip& clip,
                              const std::vector<flow::TiltField>& frame_tilts);

/// Correction fields that undo simulator tilts (their displacement inverses).
std::vector<flow::TiltField> oracle_tilts(const std::vector<flow::TiltField>& true_tilts);

}  // namespace pmr::detilt
