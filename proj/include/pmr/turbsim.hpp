#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmr/flow.hpp"
#include "pmr/media.hpp"

namespace pmr::turbsim {

/// Strength knobs of the tilt-then-blur forward model. All lengths in pixels.
struct TurbulenceParams {
    double sigma_tilt = 1.0;      ///< per-frame RMS tilt magnitude
    double corr_len = 6.0;        ///< spatial correlation length of the tilt field
    double blur_sigma_min = 0.5;  ///< PSF sigma range of the spatially varying blur
    double blur_sigma_max = 1.5;
    double blur_corr_len = 16.0;  ///< spatial correlation length of the blur map
    std::uint64_t seed = 0;

    /// Raises InvalidParams when an invariant does not hold.
    void validate() const;
};

/// Simulator output with every intermediate of I = T(B(J)).
struct DegradationBundle {
    media::FrameClip clean;
    media::FrameClip blur_only;
    media::FrameClip degraded;
    std::vector<flow::TiltField> true_tilts;
    media::Image blur_map;  ///< H×W×1 PSF sigma per pixel
    TurbulenceParams params;
};

/// Deterministic 64-bit stream derivation (splitmix64 finalizer); frame k of
/// a run seeded with s draws from substream(s, k) so serial and parallel
/// generation agree bitwise.
std::uint64_t substream(std::uint64_t seed, std::uint64_t stream);
std::uint64_t substream(std::uint64_t seed, const std::string& name);

/// Per frame: white 2-channel Gaussian noise smoothed by a Gaussian of std
/// corr_len, rescaled so the frame's RMS vector magnitude equals sigma_tilt.
/// Frames are independent in time.
std::vector<flow::TiltField> sample_tilt_sequence(const TurbulenceParams& params, int frames,
                                                  int height, int width, std::uint64_t seed);

/// Smooth sigma map spanning [blur_sigma_min, blur_sigma_max].
media::Image sample_blur_map(const TurbulenceParams& params, int height, int width,
                             std::uint64_t seed);

inline constexpr int kBlurLevels = 5;

/// Spatially varying Gaussian blur: every pixel interpolates linearly between
/// kBlurLevels uniformly blurred copies whose sigmas span [min, max] of the map.
media::FrameClip apply_blur(const media::FrameClip& clip, const media::Image& blur_map);

/// Warps frame t by tilts[t].
media::FrameClip apply_tilt(const media::FrameClip& clip, const std::vector<flow::TiltField>& tilts);

DegradationBundle degrade(const media::FrameClip& clean, const TurbulenceParams& params);

/// Nominal strength label sigma_tilt·(blur_sigma_min + blur_sigma_max)/2.
double cn2_knob(const TurbulenceParams& params);

// --- synthetic clean scenes -------------------------------------------------

enum class SceneMotion { None, Translate };

struct SceneOptions {
    int frames = 8;
    int height = 64;
    int width = 64;
    int channels = 1;
    SceneMotion motion = SceneMotion::None;
    /// Object velocity in pixels per frame for SceneMotion::Translate.
    double velocity_x = 2.0;
    double velocity_y = 1.0;
    std::uint64_t seed = 0;
};

/// Textured background (random sinusoids, smoothed noise and flat blocks), optionally
/// with a textured square object translating across it.
media::FrameClip synthetic_scene(const SceneOptions& options);

// --- persistence --------------------------------------------------------------

/// Layout: clean/, blur_only/, degraded/ (PNG frames), tilts/NNNNNN.pmrw,
/// blur_map.pmrf, raw/{clean,blur_only,degraded}.pmrf (lossless copies) and
/// params.json.
void save_bundle(const DegradationBundle& bundle, const std::filesystem::path& directory);
/// Prefers the lossless raw copies when present.
DegradationBundle load_bundle(const std::filesystem::path& directory);

}  // namespace pmr::turbsim
