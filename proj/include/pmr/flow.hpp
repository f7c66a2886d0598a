#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pmr/media.hpp"

namespace pmr::flow {

/// Dense displacement field in pixels, (dx, dy) interleaved per pixel.
///
/// Convention everywhere in the project is backward sampling: a flow f
/// estimated from a to b satisfies a(x) ≈ b(x + f(x)), and warping b by f
/// approximates a.
class FlowField {
public:
    FlowField() = default;
    FlowField(int height, int width);
    FlowField(int height, int width, std::vector<double> vectors);
    static FlowField constant(int height, int width, double dx, double dy);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    bool same_shape(const FlowField& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    double& dx(int y, int x) { return data_[2 * (static_cast<std::size_t>(y) * width_ + x)]; }
    double& dy(int y, int x) { return data_[2 * (static_cast<std::size_t>(y) * width_ + x) + 1]; }
    double dx(int y, int x) const { return data_[2 * (static_cast<std::size_t>(y) * width_ + x)]; }
    double dy(int y, int x) const { return data_[2 * (static_cast<std::size_t>(y) * width_ + x) + 1]; }

    std::span<const double> vectors() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }

    bool is_finite() const noexcept;
    bool is_zero() const noexcept;

    FlowField operator+(const FlowField& other) const;
    FlowField operator-(const FlowField& other) const;
    FlowField operator*(double s) const;
    FlowField operator-() const { return *this * -1.0; }
    bool operator==(const FlowField& other) const noexcept {
        return same_shape(other) && data_ == other.data_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Turbulence-induced geometric offset; same layout and sampling convention
/// as FlowField. The zero field is the identity warp.
class TiltField : public FlowField {
public:
    using FlowField::FlowField;
    TiltField() = default;
    explicit TiltField(FlowField f) : FlowField(std::move(f)) {}
};

FlowField mean_of(const std::vector<FlowField>& fields);

// --- estimation -----------------------------------------------------------

struct ClassicFlowOptions {
    int levels = 4;
    int iterations = 3;
    int window = 5;
    double regularization = 1e-4;
    /// No pyramid level is built with a side shorter than this.
    int min_side = 8;
};

/// Coarse-to-fine Lucas-Kanade: Gaussian pyramid, iterative refinement with
/// backward warping of `b` at every level and a 3×3 median filter on the
/// field after each refinement step.
FlowField estimate_flow_classic(const media::Image& a, const media::Image& b,
                                const ClassicFlowOptions& options = {});

using FlowBackend = std::function<FlowField(const media::Image&, const media::Image&)>;

/// Registry keyed by string id. "classic" is always present; other ids
/// (for instance a learned estimator under "external") are registered at
/// runtime. Registration is thread-safe; backends must be stateless or
/// internally synchronized.
void register_flow_backend(const std::string& id, FlowBackend backend);
void unregister_flow_backend(const std::string& id);
bool has_flow_backend(const std::string& id);
std::vector<std::string> flow_backends();

/// Dense flow from a to b. Multi-channel frames are reduced to their
/// channel mean first.
FlowField estimate_flow(const media::Image& a, const media::Image& b,
                        const std::string& backend = "classic");

/// Flows between consecutive frames, (0,1), (1,2), ...
std::vector<FlowField> pairwise_flows(const media::FrameClip& clip,
                                      const std::string& backend = "classic");

// --- arithmetic -----------------------------------------------------------

/// Per-pixel Euclidean norm as a single-channel image.
media::Image flow_magnitude(const FlowField& f);

inline constexpr double kMagnitudeEps = 1e-8;

/// m / max(max(m), eps); an all-zero field stays all zero.
media::Image normalize_magnitude(const media::Image& magnitude);

/// Backward bilinear warp out(x) = in(x + f(x)) with border replication.
media::Image warp(const media::Image& frame, const FlowField& f);

/// Approximate inverse g of the displacement f (warp by g undoes warp by f
/// for smooth small fields), via the fixed point g(x) = -f(x + g(x)).
FlowField invert_displacement(const FlowField& f, int iterations = 20);

/// Bilinear resampling of a displacement field; vectors are scaled by the
/// resize factor so they stay in target-resolution pixels.
FlowField resize_flow(const FlowField& f, int height, int width);

// --- files ----------------------------------------------------------------

/// Raw flow file: magic "PMRW", u32 H, W (LE), then H·W·2 f32 (dx, dy).
void save_flow(const FlowField& f, const std::filesystem::path& file);
FlowField load_flow(const std::filesystem::path& file);

}  // namespace pmr::flow
