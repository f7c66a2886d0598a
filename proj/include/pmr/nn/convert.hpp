#pragma once

#include <vector>

#include "pmr/flow.hpp"
#include "pmr/media.hpp"
#include "pmr/nn/tensor.hpp"

namespace pmr::nn {

/// (T, H, W, C) tensor holding the clip samples.
Tensor to_tensor(const media::FrameClip& clip);
/// Clamps every sample into [0,1].
media::FrameClip to_clip(const Tensor& t, const media::ClipMeta& meta = {});

/// (T, H, W, 2) tensor of per-frame displacement fields.
Tensor to_tensor(const std::vector<flow::TiltField>& fields);
std::vector<flow::TiltField> to_tilts(const Tensor& t);

}  // namespace pmr::nn
