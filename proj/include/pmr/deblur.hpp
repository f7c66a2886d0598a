#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "pmr/media.hpp"
#include "pmr/nn/layers.hpp"

namespace pmr::deblur {

enum class BlockType { DsAlign, Stc };

struct DebConfig {
    int base_channels = 8;
    int channels = 1;                     ///< image channels
    std::array<int, 3> heads = {1, 2, 4};  ///< per resolution level (C, 2C, 4C wide)
    bool residual_output = true;

    static constexpr std::array<int, 4> enc_blocks = {1, 1, 2, 4};
    static constexpr std::array<int, 3> dec_blocks = {2, 1, 1};
    static constexpr std::array<BlockType, 4> enc_types = {BlockType::DsAlign, BlockType::Stc,
                                                           BlockType::Stc, BlockType::Stc};
    static constexpr std::array<BlockType, 3> dec_types = {BlockType::Stc, BlockType::Stc,
                                                           BlockType::DsAlign};

    /// Width of encoder stage s (0..3): C, C, 2C, 4C.
    int stage_width(int stage) const;
    void validate() const;
    nlohmann::json to_json() const;
    static DebConfig from_json(const nlohmann::json& j);
};

/// Three-resolution hybrid encoder-decoder. Stages 1-2 run at full
/// resolution, stage 3 at 1/2 and stage 4 at 1/4; Haar + linear projections
/// go down, nearest upsampling + linear projections go up, and skips are
/// concatenated then fused. Copies share parameters.
class DebNetwork {
public:
    explicit DebNetwork(DebConfig config = {}, std::uint64_t seed = 0);

    /// `attention` (optional) collects every head's attention matrix.
    nn::Var forward(const nn::Var& clip, std::vector<nn::Tensor>* attention = nullptr) const;

    const DebConfig& config() const noexcept { return config_; }
    nn::ParameterList& parameters() noexcept { return store_.parameters(); }
    const nn::ParameterList& parameters() const noexcept { return store_.parameters(); }
    std::size_t param_count() const { return store_.count(); }

    void save(const std::filesystem::path& file) const;
    static DebNetwork load(const std::filesystem::path& file);

private:
    DebConfig config_;
    nn::ParamStore store_;
    nn::Linear embed_;
    nn::DsAlign enc1_;
    std::vector<nn::StcBlock> enc2_, enc3_, enc4_;
    nn::Linear down1_, down2_;
    nn::Linear up2_, fuse2_, up1_, fuse1_;
    std::vector<nn::StcBlock> dec3_, dec2_;
    nn::DsAlign dec1_;
    nn::Linear out_;
};

media::FrameClip deb_forward(const media::FrameClip& clip, const DebNetwork& net);

/// Exact trainable-parameter count from per-block closed forms.
std::size_t count_params(const DebConfig& config);

/// Multiply-accumulate estimate of one forward pass at the given shape.
double approx_macs(const DebConfig& config, int frames, int height, int width);

}  // namespace pmr::deblur
