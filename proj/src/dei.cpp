#include "pmr/dei.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/errors.hpp"

namespace pmr::dei {

using flow::FlowField;
using media::FrameClip;
using media::Image;

void OpticsConfig::validate() const {
    if (!(pfov > 0 && aperture_d > 0 && distance_l > 0 && turb_const_p > 0 && grad_exp_n > 0)) {
        fail(ErrorKind::InvalidParams, "optics quantities must be positive");
    }
    if (!(eps > 0)) fail(ErrorKind::InvalidParams, "optics eps must be positive");
}

DynamicMask::DynamicMask(int height, int width, bool fill)
    : height_(height), width_(width),
      bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

std::size_t DynamicMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

DynamicMask threshold_mask(const FlowField& f) {
    const Image norm = flow::normalize_magnitude(flow::flow_magnitude(f));
    DynamicMask mask(f.height(), f.width());
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) mask.set(y, x, norm.at(y, x) > kDynamicThreshold);
    }
    return mask;
}

double estimate_cn2(const FrameClip& clip, const OpticsConfig& optics) {
    optics.validate();
    const int t_count = clip.frames();
    if (t_count < 2) fail(ErrorKind::NeedsTwoFrames, "turbulence estimate needs >= 2 frames");
    const int h = clip.height();
    const int w = clip.width();
    std::vector<Image> gray;
    gray.reserve(t_count);
    for (int t = 0; t < t_count; ++t) gray.push_back(clip.frame(t).channel_mean());

    double var_sum = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double mean = 0.0;
            for (const Image& g : gray) mean += g.at(y, x);
            mean /= t_count;
            double var = 0.0;
            for (const Image& g : gray) var += (g.at(y, x) - mean) * (g.at(y, x) - mean);
            var_sum += var / t_count;
        }
    }
    const double variance = var_sum / (static_cast<double>(h) * w);

    double grad_sum = 0.0;
    std::size_t grad_count = 0;
    for (const Image& g : gray) {
        for (int y = 1; y + 1 < h; ++y) {
            for (int x = 1; x + 1 < w; ++x) {
                const double gx = 0.5 * (g.at(y, x + 1) - g.at(y, x - 1));
                const double gy = 0.5 * (g.at(y + 1, x) - g.at(y - 1, x));
                grad_sum += std::sqrt(gx * gx + gy * gy);
                ++grad_count;
            }
        }
    }
    const double gradient = grad_sum / static_cast<double>(grad_count);

    const double optics_factor = optics.pfov * optics.pfov * std::cbrt(optics.aperture_d) /
                                 (optics.distance_l * optics.turb_const_p);
    return optics_factor * variance / (std::pow(gradient, optics.grad_exp_n) + optics.eps);
}

int window_start(int frames, int center, int window_n) {
    if (window_n < 2 || window_n > frames || center < 0 || center >= frames) {
        fail(ErrorKind::WindowOutOfRange, "window of " + std::to_string(window_n) + " around frame " +
                                              std::to_string(center) + " does not fit " +
                                              std::to_string(frames) + " frames");
    }
    return std::clamp(center - window_n / 2, 0, frames - window_n);
}

FlowField adjusted_mean_flow(const std::vector<FlowField>& pair_flows, int center, int window_n,
                             double cn2) {
    const int frames = static_cast<int>(pair_flows.size()) + 1;
    const int start = window_start(frames, center, window_n);
    std::vector<FlowField> window(pair_flows.begin() + start,
                                  pair_flows.begin() + start + window_n - 1);
    return flow::mean_of(window) * (1.0 / (1.0 + cn2));
}

FlowField adjusted_mean_flow(const FrameClip& clip, int center, int window_n, double cn2,
                             const std::string& backend) {
    const int start = window_start(clip.frames(), center, window_n);
    std::vector<FlowField> window;
    for (int j = start; j + 1 < start + window_n; ++j) {
        window.push_back(flow::estimate_flow(clip.frame(j), clip.frame(j + 1), backend));
    }
    return flow::mean_of(window) * (1.0 / (1.0 + cn2));
}

MaskSet dynamic_mask_and_dpr(const std::vector<FlowField>& mean_flows, DprMode mode) {
    if (mean_flows.empty()) fail(ErrorKind::NoFlows, "no flows to segment");
    MaskSet out;
    std::size_t dynamic = 0;
    std::size_t total = 0;
    double magnitude_sum = 0.0;
    for (const FlowField& f : mean_flows) {
        const Image norm = flow::normalize_magnitude(flow::flow_magnitude(f));
        DynamicMask mask(f.height(), f.width());
        for (int y = 0; y < f.height(); ++y) {
            for (int x = 0; x < f.width(); ++x) {
                mask.set(y, x, norm.at(y, x) > kDynamicThreshold);
                magnitude_sum += norm.at(y, x);
            }
        }
        dynamic += mask.count();
        total += mask.size();
        out.masks.push_back(std::move(mask));
    }
    if (mode == DprMode::Fraction) {
        out.dpr = static_cast<double>(dynamic) / static_cast<double>(total);
    } else {
        out.dpr = magnitude_sum > 0.0 ? std::clamp(dynamic / magnitude_sum, 0.0, 1.0) : 0.0;
    }
    return out;
}

double dpr_coefficient(double dpr) {
    if (!(dpr >= 0.0 && dpr <= 1.0)) fail(ErrorKind::DomainError, "dpr outside [0,1]");
    if (dpr < 0.05) return 2.0;
    if (dpr < 0.5) return 1.0;
    if (dpr < 0.7) return 0.5;
    return 0.1;
}

double dei_score(double coeff_c, double gamma, std::size_t dynamic_pixels, double cn2) {
    if (!(gamma > 0.0)) fail(ErrorKind::InvalidParams, "gamma must be positive");
    return coeff_c / gamma * static_cast<double>(dynamic_pixels) / (1.0 + cn2);
}

DeiReport compute_dei(const FrameClip& clip, const DeiOptions& options) {
    if (!(options.gamma > 0.0)) fail(ErrorKind::InvalidParams, "gamma must be positive");
    DeiReport report;
    report.clip = clip.meta().source;
    report.gamma = options.gamma;
    report.window_n = options.window_n;
    report.backend = options.backend;
    report.cn2 = estimate_cn2(clip, options.optics);

    const auto pairs = flow::pairwise_flows(clip, options.backend);
    for (int i = 0; i < clip.frames(); ++i) {
        report.flows.push_back(adjusted_mean_flow(pairs, i, options.window_n, report.cn2));
    }
    MaskSet masks = dynamic_mask_and_dpr(report.flows, options.dpr_mode);
    report.masks = std::move(masks.masks);
    report.dpr = masks.dpr;
    report.coeff_c = dpr_coefficient(report.dpr);

    std::size_t dynamic = 0;
    for (const DynamicMask& m : report.masks) dynamic += m.count();
    report.dei = dei_score(report.coeff_c, report.gamma, dynamic, report.cn2);
    report.dei_normalized = report.dei / (static_cast<double>(clip.frames()) * clip.height() * clip.width());
    return report;
}

Partition classify_clips(const std::vector<DeiReport>& reports, double threshold) {
    Partition p;
    for (const DeiReport& r : reports) (r.dei >= threshold ? p.high : p.normal).push_back(r);
    return p;
}

std::string to_string(DprMode mode) { return mode == DprMode::Fraction ? "fraction" : "eq4"; }

DprMode dpr_mode_from_string(const std::string& s) {
    if (s == "fraction") return DprMode::Fraction;
    if (s == "eq4") return DprMode::Eq4;
    fail(ErrorKind::ConfigError, "unknown dpr mode '" + s + "'");
}

}  // namespace pmr::dei
