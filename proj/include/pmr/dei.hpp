#pragma once

#include <string>
#include <vector>

#include "pmr/flow.hpp"
#include "pmr/media.hpp"

namespace pmr::dei {

/// Optical constants of the turbulence-strength estimator. The defaults are
/// unit optics (all ratios 1), which turns the estimator into the plain
/// temporal-variance / spatial-gradient ratio scaled by 1/turb_const_p.
struct OpticsConfig {
    double pfov = 1.0;          ///< pixel field of view, rad/px
    double aperture_d = 1.0;    ///< lens diameter, m
    double distance_l = 1.0;    ///< target distance, m
    double turb_const_p = 0.01;  ///< turbulence constant
    double grad_exp_n = 1.0;    ///< exponent on the gradient term
    double eps = 1e-8;          ///< denominator floor

    void validate() const;
};

/// Binary dynamic-pixel map (1 = dynamic), H×W.
class DynamicMask {
public:
    DynamicMask() = default;
    DynamicMask(int height, int width, bool fill = false);

    static DynamicMask all(int height, int width) { return DynamicMask(height, width, true); }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::size_t count() const noexcept;
    std::size_t size() const noexcept { return bits_.size(); }
    bool operator==(const DynamicMask& other) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<unsigned char> bits_;
};

/// Pixel dynamic iff its normalized flow magnitude exceeds 0.5.
inline constexpr double kDynamicThreshold = 0.5;

DynamicMask threshold_mask(const flow::FlowField& f);

enum class DprMode {
    Fraction,  ///< dynamic pixels / all pixels (always in [0,1])
    Eq4,       ///< Σ mask / Σ normalized magnitude, clamped to [0,1]
};

struct MaskSet {
    std::vector<DynamicMask> masks;
    double dpr;
};

struct DeiReport {
    std::string clip;
    double cn2 = 0.0;
    std::vector<flow::FlowField> flows;
    std::vector<DynamicMask> masks;
    double dpr = 0.0;
    double coeff_c = 0.0;
    double gamma = 1.0;
    double dei = 0.0;
    double dei_normalized = 0.0;
    int window_n = 0;
    std::string backend;
};

struct DeiOptions {
    OpticsConfig optics;
    double gamma = 1.0;
    int window_n = 5;
    std::string backend = "classic";
    DprMode dpr_mode = DprMode::Fraction;
};

/// (pfov²·D^(1/3) / (L·P)) · Var(V) / (Grad(V)^n + eps).
/// Var: per-pixel temporal (population) variance averaged over pixels.
/// Grad: mean central-difference gradient magnitude over all frames.
/// Both are taken on the channel mean of each frame.
double estimate_cn2(const media::FrameClip& clip, const OpticsConfig& optics);

/// First frame of the window_n-frame window centred on `center`, clamped to
/// the clip. Raises WindowOutOfRange if the window cannot fit.
int window_start(int frames, int center, int window_n);

/// Mean of the window's window_n-1 consecutive-pair flows times 1/(1+cn2).
flow::FlowField adjusted_mean_flow(const media::FrameClip& clip, int center, int window_n,
                                   double cn2, const std::string& backend = "classic");
/// Same, reusing precomputed consecutive-pair flows (pair k maps frame k to k+1).
flow::FlowField adjusted_mean_flow(const std::vector<flow::FlowField>& pair_flows, int center,
                                   int window_n, double cn2);

MaskSet dynamic_mask_and_dpr(const std::vector<flow::FlowField>& mean_flows,
                             DprMode mode = DprMode::Fraction);

/// Piecewise coefficient: 2 / 1 / 0.5 / 0.1 on [0,.05) [.05,.5) [.5,.7) [.7,1].
double dpr_coefficient(double dpr);

/// (C/γ) · Σ_masks Σ_pixels / (1 + cn2).
double dei_score(double coeff_c, double gamma, std::size_t dynamic_pixels, double cn2);

DeiReport compute_dei(const media::FrameClip& clip, const DeiOptions& options = {});

struct Partition {
    std::vector<DeiReport> high;
    std::vector<DeiReport> normal;
};

inline constexpr double kDefaultDeiThreshold = 100.0;

/// high iff dei >= threshold; input order is kept inside each class.
Partition classify_clips(const std::vector<DeiReport>& reports,
                         double threshold = kDefaultDeiThreshold);

std::string to_string(DprMode mode);
DprMode dpr_mode_from_string(const std::string& s);

}  // namespace pmr::dei
