#pragma once

#include <filesystem>
#include <vector>

#include "pmr/dei.hpp"
#include "pmr/flow.hpp"
#include "pmr/media.hpp"

namespace pmr::motion {

struct OfdScore {
    std::vector<double> per_flow_scores;
    int best_index = 0;
    double best_value = 0.0;
};

/// Uniformity score of each flow's magnitude map m:
/// max(m)/2 - mean(|max(m)/2 - m|); the lowest score wins, ties go to the
/// lowest index. With `normalize_first` the maps are scaled to peak 1 first.
OfdScore ofd_select(const std::vector<flow::FlowField>& flows, bool normalize_first = false);

/// Normalized magnitude thresholded at 0.5, optionally followed by a 3×3
/// opening and closing.
dei::DynamicMask segment_dynamic(const flow::FlowField& flow, bool cleanup = false);

/// 3×3 binary morphology over the in-image neighbourhood.
dei::DynamicMask erode(const dei::DynamicMask& mask);
dei::DynamicMask dilate(const dei::DynamicMask& mask);

struct TemporalWeights {
    std::vector<double> raw;
    std::vector<double> normalized;
};

inline constexpr double kMinSigma = 1e-3;

/// raw[i] = exp(-(N-i)²/(2σ²)) for i = 1..N with σ = max(cn2, 1e-3).
TemporalWeights gaussian_weights(int n_frames, double cn2);

inline constexpr int kDefaultWindow = 5;

/// Dynamic pixels copy frame k; static pixels blend the trailing window
/// ending at k with the normalized weights (earlier frames clamp to 0).
media::FrameClip enhance(const media::FrameClip& clip, const dei::DynamicMask& mask,
                         const TemporalWeights& weights);

struct EnhanceOptions {
    int window = kDefaultWindow;  ///< clamped to the clip length
    bool cleanup = false;
    bool force_dynamic = false;   ///< treat every pixel as dynamic
    std::string backend = "classic";
    dei::OpticsConfig optics;
};

struct EnhanceResult {
    media::FrameClip clip;
    dei::DynamicMask mask;
    OfdScore ofd;
    TemporalWeights weights;
    double cn2 = 0.0;
};

/// Full stage: pairwise flows, OFD selection, segmentation of the selected
/// flow, turbulence-adaptive weights and the blend.
EnhanceResult enhance_clip(const media::FrameClip& clip, const EnhanceOptions& options = {});

/// 1-bit grayscale PNG (dynamic = white).
void save_mask_png(const dei::DynamicMask& mask, const std::filesystem::path& file);

}  // namespace pmr::motion
