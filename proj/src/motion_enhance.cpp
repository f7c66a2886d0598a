#include "pmr/motion_enhance.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/errors.hpp"

namespace pmr::motion {

using dei::DynamicMask;
using media::FrameClip;
using media::Image;

OfdScore ofd_select(const std::vector<flow::FlowField>& flows, bool normalize_first) {
    if (flows.empty()) fail(ErrorKind::NoFlows, "no candidate flows");
    OfdScore out;
    for (const auto& f : flows) {
        Image m = flow::flow_magnitude(f);
        if (normalize_first) m = flow::normalize_magnitude(m);
        const auto s = m.samples();
        const double half_peak = *std::max_element(s.begin(), s.end()) / 2.0;
        double spread = 0.0;
        for (double v : s) spread += std::abs(half_peak - v);
        out.per_flow_scores.push_back(half_peak - spread / static_cast<double>(s.size()));
    }
    const auto best = std::min_element(out.per_flow_scores.begin(), out.per_flow_scores.end());
    out.best_index = static_cast<int>(best - out.per_flow_scores.begin());
    out.best_value = *best;
    return out;
}

namespace {

DynamicMask morph(const DynamicMask& mask, bool dilation) {
    DynamicMask out(mask.height(), mask.width());
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            bool hit = !dilation;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= mask.height() || xx < 0 || xx >= mask.width()) continue;
                    const bool v = mask.at(yy, xx);
                    hit = dilation ? (hit || v) : (hit && v);
                }
            }
            out.set(y, x, hit);
        }
    }
    return out;
}

}  // namespace

DynamicMask erode(const DynamicMask& mask) { return morph(mask, false); }
DynamicMask dilate(const DynamicMask& mask) { return morph(mask, true); }

DynamicMask segment_dynamic(const flow::FlowField& flow, bool cleanup) {
    DynamicMask mask = dei::threshold_mask(flow);
    if (cleanup) mask = erode(dilate(dilate(erode(mask))));
    return mask;
}

TemporalWeights gaussian_weights(int n_frames, double cn2) {
    if (n_frames < 1) fail(ErrorKind::NoFrames, "weights need at least one frame");
    const double sigma = std::max(cn2, kMinSigma);
    TemporalWeights w;
    double total = 0.0;
    for (int i = 1; i <= n_frames; ++i) {
        const double d = n_frames - i;
        w.raw.push_back(std::exp(-(d * d) / (2.0 * sigma * sigma)));
        total += w.raw.back();
    }
    for (double r : w.raw) w.normalized.push_back(r / total);
    return w;
}

FrameClip enhance(const FrameClip& clip, const DynamicMask& mask, const TemporalWeights& weights) {
    if (mask.height() != clip.height() || mask.width() != clip.width()) {
        fail(ErrorKind::ShapeMismatch, "mask does not match frame size");
    }
    const int w = static_cast<int>(weights.normalized.size());
    if (w < 1 || w > clip.frames()) {
        fail(ErrorKind::ShapeMismatch, "blend window of " + std::to_string(w) + " frames does not fit a " +
                                           std::to_string(clip.frames()) + "-frame clip");
    }
    const int C = clip.channels();
    std::vector<double> out(clip.samples().size());
    for (int k = 0; k < clip.frames(); ++k) {
        for (int y = 0; y < clip.height(); ++y) {
            for (int x = 0; x < clip.width(); ++x) {
                const std::size_t base = k * clip.frame_size() + (static_cast<std::size_t>(y) * clip.width() + x) * C;
                for (int c = 0; c < C; ++c) {
                    if (mask.at(y, x)) {
                        out[base + c] = clip.at(k, y, x, c);
                        continue;
                    }
                    double acc = 0.0;
                    for (int i = 0; i < w; ++i) {
                        acc += weights.normalized[i] * clip.at(std::max(k - w + 1 + i, 0), y, x, c);
                    }
                    out[base + c] = acc;
                }
            }
        }
    }
    return FrameClip::clamped(clip.frames(), clip.height(), clip.width(), C, std::move(out), clip.meta());
}

EnhanceResult enhance_clip(const FrameClip& clip, const EnhanceOptions& options) {
    if (options.window < 1) fail(ErrorKind::InvalidParams, "blend window must be >= 1");
    EnhanceResult r{clip, DynamicMask::all(clip.height(), clip.width()), {}, {}, 0.0};
    const int window = std::min(options.window, clip.frames());
    if (clip.frames() < 2) {
        r.weights = gaussian_weights(1, 0.0);
        return r;
    }
    r.cn2 = dei::estimate_cn2(clip, options.optics);
    r.weights = gaussian_weights(window, r.cn2);
    if (!options.force_dynamic) {
        const auto flows = flow::pairwise_flows(clip, options.backend);
        r.ofd = ofd_select(flows);
        r.mask = segment_dynamic(flows[r.ofd.best_index], options.cleanup);
    }
    r.clip = enhance(clip, r.mask, r.weights);
    return r;
}

void save_mask_png(const DynamicMask& mask, const std::filesystem::path& file) {
    std::vector<bool> on(mask.size());
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) on[static_cast<std::size_t>(y) * mask.width() + x] = mask.at(y, x);
    }
    media::save_bilevel_png(mask.height(), mask.width(), on, file);
}

}  // namespace pmr::motion
