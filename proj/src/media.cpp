#include "pmr/media.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "pmr/binary_io.hpp"
#include "pmr/errors.hpp"

namespace pmr::media {

namespace fs = std::filesystem;

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels),
      data_(static_cast<std::size_t>(height) * width * channels, fill) {}

Image::Image(int height, int width, int channels, std::vector<double> samples)
    : height_(height), width_(width), channels_(channels), data_(std::move(samples)) {
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
        fail(ErrorKind::ShapeMismatch, "image sample count does not match its shape");
    }
}

Image Image::channel_mean() const {
    if (channels_ == 1) return *this;
    Image out(height_, width_, 1);
    const std::size_t pixels = static_cast<std::size_t>(height_) * width_;
    for (std::size_t p = 0; p < pixels; ++p) {
        double sum = 0.0;
        for (int c = 0; c < channels_; ++c) sum += data_[p * channels_ + c];
        out.storage()[p] = sum / channels_;
    }
    return out;
}

Image Image::crop(int top, int left, int height, int width) const {
    if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > height_ ||
        left + width > width_) {
        fail(ErrorKind::ShapeMismatch, "crop window outside the image");
    }
    Image out(height, width, channels_);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels_; ++c) out.at(y, x, c) = at(top + y, left + x, c);
        }
    }
    return out;
}

FrameClip::FrameClip(int frames, int height, int width, int channels, std::vector<double> samples,
                     ClipMeta meta, std::optional<double> frame_rate)
    : frames_(frames), height_(height), width_(width), channels_(channels),
      data_(std::move(samples)), meta_(std::move(meta)), frame_rate_(frame_rate) {
    if (frames < 1) fail(ErrorKind::InvalidClip, "clip needs at least one frame");
    if (height < 8 || width < 8 || height % 2 != 0 || width % 2 != 0) {
        fail(ErrorKind::InvalidClip, "frame sides must be even and at least 8, got " +
                                         std::to_string(height) + "x" + std::to_string(width));
    }
    if (channels < 1) fail(ErrorKind::InvalidClip, "clip needs at least one channel");
    if (data_.size() != static_cast<std::size_t>(frames) * frame_size()) {
        fail(ErrorKind::ShapeMismatch, "sample count does not match T*H*W*C");
    }
    for (double v : data_) {
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::InvalidClip, "sample outside [0,1]");
    }
}

FrameClip FrameClip::from_frames(const std::vector<Image>& frames, ClipMeta meta) {
    if (frames.empty()) fail(ErrorKind::NoFrames, "no frames supplied");
    const Image& first = frames.front();
    std::vector<double> samples;
    samples.reserve(frames.size() * first.size());
    for (const Image& f : frames) {
        if (!f.same_shape(first)) fail(ErrorKind::ShapeMismatch, "frames differ in shape");
        samples.insert(samples.end(), f.samples().begin(), f.samples().end());
    }
    return FrameClip(static_cast<int>(frames.size()), first.height(), first.width(),
                     first.channels(), std::move(samples), std::move(meta));
}

FrameClip FrameClip::clamped(int frames, int height, int width, int channels,
                             std::vector<double> samples, ClipMeta meta) {
    for (double& v : samples) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    return FrameClip(frames, height, width, channels, std::move(samples), std::move(meta));
}

FrameClip FrameClip::constant(int frames, int height, int width, int channels, double value) {
    return FrameClip(frames, height, width, channels,
                     std::vector<double>(static_cast<std::size_t>(frames) * height * width * channels,
                                         value));
}

Image FrameClip::frame(int t) const {
    auto s = frame_samples(t);
    return Image(height_, width_, channels_, std::vector<double>(s.begin(), s.end()));
}

std::vector<Image> FrameClip::frame_list() const {
    std::vector<Image> out;
    out.reserve(frames_);
    for (int t = 0; t < frames_; ++t) out.push_back(frame(t));
    return out;
}

FrameClip FrameClip::crop_border(int border) const {
    if (border == 0) return *this;
    std::vector<Image> cropped;
    for (int t = 0; t < frames_; ++t) {
        cropped.push_back(frame(t).crop(border, border, height_ - 2 * border, width_ - 2 * border));
    }
    return from_frames(cropped, meta_);
}

namespace {

double mse(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double psnr_from_mse(double m) {
    if (m == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / m);
}

// Separable "valid" Gaussian filtering: output is (H-w+1)x(W-w+1).
Image valid_filter(const Image& img, const std::vector<double>& kernel) {
    const int w = static_cast<int>(kernel.size());
    const int oh = img.height() - w + 1;
    const int ow = img.width() - w + 1;
    Image rows(img.height(), ow, 1);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < w; ++k) s += kernel[k] * img.at(y, x + k);
            rows.at(y, x) = s;
        }
    }
    Image out(oh, ow, 1);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < w; ++k) s += kernel[k] * rows.at(y + k, x);
            out.at(y, x) = s;
        }
    }
    return out;
}

Image multiply(const Image& a, const Image& b) {
    Image out(a.height(), a.width(), 1);
    for (std::size_t i = 0; i < a.size(); ++i) out.storage()[i] = a.samples()[i] * b.samples()[i];
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "psnr inputs differ in shape");
    return psnr_from_mse(mse(a.samples(), b.samples()));
}

double psnr(const FrameClip& a, const FrameClip& b) {
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "psnr inputs differ in shape");
    return psnr_from_mse(mse(a.samples(), b.samples()));
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "ssim inputs differ in shape");
    if (a.height() < options.window || a.width() < options.window) {
        fail(ErrorKind::WindowTooLarge, "frame smaller than the SSIM window");
    }
    std::vector<double> kernel(options.window);
    const int half = options.window / 2;
    double total = 0.0;
    for (int k = 0; k < options.window; ++k) {
        const double d = k - half;
        kernel[k] = std::exp(-d * d / (2.0 * options.sigma * options.sigma));
        total += kernel[k];
    }
    for (double& k : kernel) k /= total;

    const Image x = a.channel_mean();
    const Image y = b.channel_mean();
    const Image mu_x = valid_filter(x, kernel);
    const Image mu_y = valid_filter(y, kernel);
    const Image xx = valid_filter(multiply(x, x), kernel);
    const Image yy = valid_filter(multiply(y, y), kernel);
    const Image xy = valid_filter(multiply(x, y), kernel);

    const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
    const double c2 = std::pow(options.k2 * options.dynamic_range, 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x.samples()[i];
        const double my = mu_y.samples()[i];
        const double vx = xx.samples()[i] - mx * mx;
        const double vy = yy.samples()[i] - my * my;
        const double cxy = xy.samples()[i] - mx * my;
        sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return sum / static_cast<double>(mu_x.size());
}

double ssim(const FrameClip& a, const FrameClip& b, const SsimOptions& options) {
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "ssim inputs differ in shape");
    double sum = 0.0;
    for (int t = 0; t < a.frames(); ++t) sum += ssim(a.frame(t), b.frame(t), options);
    return sum / a.frames();
}

QualityScore quality(const FrameClip& a, const FrameClip& b) { return {psnr(a, b), ssim(a, b)}; }

std::string format_psnr(double psnr_db) {
    if (std::isinf(psnr_db)) return "inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << psnr_db;
    return os.str();
}

std::string frame_filename(int index, const std::string& extension) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index << extension;
    return os.str();
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngDecodeError {
    char message[256] = {};
};

void png_error_handler(png_structp png, png_const_charp msg) {
    auto* err = static_cast<PngDecodeError*>(png_get_error_ptr(png));
    std::snprintf(err->message, sizeof err->message, "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

// Returns false and fills `err` on failure. Only objects constructed before
// setjmp may be touched after a longjmp.
bool decode_png(std::FILE* file, std::vector<unsigned char>& pixels, int& width, int& height,
                int& channels, int& bit_depth, PngDecodeError& err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler,
                                             png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, file);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    channels = png_get_channels(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    pixels.resize(row_bytes * height);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, pixels.data() + row_bytes * y, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

// `pixels` holds whole rows already packed for `bit_depth` (8, or 1 for gray).
bool encode_png(std::FILE* file, const std::vector<unsigned char>& pixels, int width, int height,
                int channels, int bit_depth, PngDecodeError& err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler,
                                              png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, file);
    png_set_IHDR(png, info, width, height, bit_depth,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t row_bytes = bit_depth == 1 ? (static_cast<std::size_t>(width) + 7) / 8
                                                 : static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
        png_write_row(png, pixels.data() + row_bytes * y);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image load_png(const fs::path& file) {
    FilePtr handle(std::fopen(file.c_str(), "rb"));
    if (!handle) fail(ErrorKind::DecodeError, "cannot open " + file.string());
    std::vector<unsigned char> pixels;
    int width = 0, height = 0, channels = 0, depth = 0;
    PngDecodeError err;
    if (!decode_png(handle.get(), pixels, width, height, channels, depth, err)) {
        fail(ErrorKind::DecodeError, file.string() + ": " + err.message);
    }
    Image out(height, width, channels);
    auto& dst = out.storage();
    if (depth == 16) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const unsigned v = (static_cast<unsigned>(pixels[2 * i]) << 8) | pixels[2 * i + 1];
            dst[i] = v / 65535.0;
        }
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = pixels[i] / 255.0;
    }
    return out;
}

void save_png(const Image& image, const fs::path& file) {
    if (image.channels() != 1 && image.channels() != 3) {
        fail(ErrorKind::IoError, "PNG frames need 1 or 3 channels");
    }
    std::vector<unsigned char> pixels(image.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = std::clamp(image.samples()[i], 0.0, 1.0);
        pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    FilePtr handle(std::fopen(file.c_str(), "wb"));
    if (!handle) fail(ErrorKind::IoError, "cannot write " + file.string());
    PngDecodeError err;
    if (!encode_png(handle.get(), pixels, image.width(), image.height(), image.channels(), 8, err)) {
        fail(ErrorKind::IoError, file.string() + ": " + err.message);
    }
}

void save_bilevel_png(int height, int width, const std::vector<bool>& on, const fs::path& file) {
    if (on.size() != static_cast<std::size_t>(height) * width) {
        fail(ErrorKind::ShapeMismatch, "bilevel image size mismatch");
    }
    const std::size_t row_bytes = (static_cast<std::size_t>(width) + 7) / 8;
    std::vector<unsigned char> pixels(row_bytes * height, 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (on[static_cast<std::size_t>(y) * width + x]) {
                pixels[row_bytes * y + x / 8] |= static_cast<unsigned char>(0x80 >> (x % 8));
            }
        }
    }
    FilePtr handle(std::fopen(file.c_str(), "wb"));
    if (!handle) fail(ErrorKind::IoError, "cannot write " + file.string());
    PngDecodeError err;
    if (!encode_png(handle.get(), pixels, width, height, 1, 1, err)) {
        fail(ErrorKind::IoError, file.string() + ": " + err.message);
    }
}

FrameClip load_clip(const fs::path& directory) {
    std::error_code ec;
    if (!fs::is_directory(directory, ec)) {
        fail(ErrorKind::IoError, "not a directory: " + directory.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(entry.path());
    }
    if (files.empty()) fail(ErrorKind::NoFrames, "no PNG frames in " + directory.string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    std::vector<Image> frames;
    frames.reserve(files.size());
    for (const auto& f : files) {
        frames.push_back(load_png(f));
        if (!frames.back().same_shape(frames.front())) {
            fail(ErrorKind::ShapeMismatch, f.string() + " differs in size from " +
                                               files.front().string());
        }
    }
    return FrameClip::from_frames(frames, ClipMeta{directory.string(), "linear"});
}

void save_clip(const FrameClip& clip, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec || !fs::is_directory(directory)) {
        fail(ErrorKind::IoError, "cannot create " + directory.string());
    }
    for (int t = 0; t < clip.frames(); ++t) {
        save_png(clip.frame(t), directory / frame_filename(t));
    }
}

void save_raw_clip(const FrameClip& clip, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
    out.write("PMRF", 4);
    io::write_u32(out, static_cast<std::uint32_t>(clip.frames()));
    io::write_u32(out, static_cast<std::uint32_t>(clip.height()));
    io::write_u32(out, static_cast<std::uint32_t>(clip.width()));
    io::write_u32(out, static_cast<std::uint32_t>(clip.channels()));
    for (double v : clip.samples()) io::write_f32(out, static_cast<float>(v));
    if (!out) fail(ErrorKind::IoError, "short write to " + file.string());

    nlohmann::json sidecar = {
        {"T", clip.frames()}, {"H", clip.height()}, {"W", clip.width()}, {"C", clip.channels()}};
    std::ofstream meta(file.string() + ".json");
    if (!meta) fail(ErrorKind::IoError, "cannot write sidecar for " + file.string());
    meta << sidecar.dump(2) << "\n";
}

FrameClip load_raw_clip(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + file.string());
    io::expect_magic(in, "PMRF");
    const int t = static_cast<int>(io::read_u32(in));
    const int h = static_cast<int>(io::read_u32(in));
    const int w = static_cast<int>(io::read_u32(in));
    const int c = static_cast<int>(io::read_u32(in));
    const std::size_t n = static_cast<std::size_t>(t) * h * w * c;
    std::vector<float> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
        fail(ErrorKind::DecodeError, "truncated sample data in " + file.string());
    }
    return FrameClip(t, h, w, c, std::vector<double>(raw.begin(), raw.end()),
                     ClipMeta{file.string(), "linear"});
}

}  // namespace pmr::media
