#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pmr::media {

/// A single H×W×C frame stored row-major with interleaved channels.
/// Unlike FrameClip it carries no range or size invariant, so it also
/// serves as scratch storage for intermediate results.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);
    Image(int height, int width, int channels, std::vector<double> samples);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<double> samples() noexcept { return data_; }
    std::span<const double> samples() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }

    /// Mean over channels; a single-channel image is returned unchanged.
    Image channel_mean() const;
    Image crop(int top, int left, int height, int width) const;

private:
    std::size_t index(int y, int x, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

struct ClipMeta {
    std::string source;
    std::string color_space = "linear";
};

/// Ordered sequence of equal-sized frames with samples in [0,1].
///
/// Invariants (checked on construction, violations raise InvalidClip):
/// T >= 1, H and W >= 8 and even, every sample finite and inside [0,1].
class FrameClip {
public:
    FrameClip(int frames, int height, int width, int channels, std::vector<double> samples,
              ClipMeta meta = {}, std::optional<double> frame_rate = std::nullopt);

    static FrameClip from_frames(const std::vector<Image>& frames, ClipMeta meta = {});
    /// Builds a clip after clamping every sample into [0,1].
    static FrameClip clamped(int frames, int height, int width, int channels,
                             std::vector<double> samples, ClipMeta meta = {});
    static FrameClip constant(int frames, int height, int width, int channels, double value);

    int frames() const noexcept { return frames_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t frame_size() const noexcept {
        return static_cast<std::size_t>(height_) * width_ * channels_;
    }
    bool same_shape(const FrameClip& other) const noexcept {
        return frames_ == other.frames_ && height_ == other.height_ && width_ == other.width_ &&
               channels_ == other.channels_;
    }

    double at(int t, int y, int x, int c = 0) const {
        return data_[t * frame_size() + (static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    std::span<const double> samples() const noexcept { return data_; }
    std::span<const double> frame_samples(int t) const noexcept {
        return std::span<const double>(data_).subspan(t * frame_size(), frame_size());
    }
    Image frame(int t) const;
    std::vector<Image> frame_list() const;

    const ClipMeta& meta() const noexcept { return meta_; }
    ClipMeta& meta() noexcept { return meta_; }
    std::optional<double> frame_rate() const noexcept { return frame_rate_; }

    /// Drops `border` pixels on every side (evaluation crops).
    FrameClip crop_border(int border) const;

    bool operator==(const FrameClip& other) const noexcept {
        return same_shape(other) && data_ == other.data_;
    }

private:
    int frames_;
    int height_;
    int width_;
    int channels_;
    std::vector<double> data_;
    ClipMeta meta_;
    std::optional<double> frame_rate_;
};

/// PSNR sentinel for identical inputs (zero MSE). Serialized as the string "inf".
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const Image& a, const Image& b);
double psnr(const FrameClip& a, const FrameClip& b);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-contained Gaussian windows, computed on the
/// channel mean of each frame.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});
/// Frame-averaged SSIM.
double ssim(const FrameClip& a, const FrameClip& b, const SsimOptions& options = {});

struct QualityScore {
    double psnr_db;
    double ssim;
};

QualityScore quality(const FrameClip& a, const FrameClip& b);

/// JSON-friendly rendering of a PSNR value ("inf" for the sentinel).
std::string format_psnr(double psnr_db);

// Frame directories: one PNG per frame, lexicographic order defines t.
FrameClip load_clip(const std::filesystem::path& directory);
void save_clip(const FrameClip& clip, const std::filesystem::path& directory);

Image load_png(const std::filesystem::path& file);
void save_png(const Image& image, const std::filesystem::path& file);
/// 1-bit grayscale PNG, row-major `on` flags (true = white).
void save_bilevel_png(int height, int width, const std::vector<bool>& on,
                      const std::filesystem::path& file);

/// Lossless float clip blob: magic "PMRF", u32 T,H,W,C (LE), then T·H·W·C f32.
/// A JSON sidecar `<file>.json` records {T,H,W,C}.
void save_raw_clip(const FrameClip& clip, const std::filesystem::path& file);
FrameClip load_raw_clip(const std::filesystem::path& file);

std::string frame_filename(int index, const std::string& extension = ".png");

}  // namespace pmr::media
