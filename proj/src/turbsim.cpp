#include "pmr/turbsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

#include "pmr/binary_io.hpp"
#include "pmr/errors.hpp"
#include "pmr/filters.hpp"

namespace pmr::turbsim {

namespace fs = std::filesystem;
using flow::TiltField;
using media::FrameClip;
using media::Image;

void TurbulenceParams::validate() const {
    if (!(sigma_tilt >= 0.0)) fail(ErrorKind::InvalidParams, "sigma_tilt must be >= 0");
    if (!(blur_sigma_min >= 0.0) || !(blur_sigma_max >= blur_sigma_min)) {
        fail(ErrorKind::InvalidParams, "need 0 <= blur_sigma_min <= blur_sigma_max");
    }
    if (!(corr_len >= 1.0)) fail(ErrorKind::InvalidParams, "corr_len must be >= 1");
    if (!(blur_corr_len >= 1.0)) fail(ErrorKind::InvalidParams, "blur_corr_len must be >= 1");
}

std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t substream(std::uint64_t seed, const std::string& name) {
    // FNV-1a over the name, then mixed into the seed.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return substream(seed, h);
}

namespace {

// Stationary smoothed white noise: draw on a padded canvas, blur, crop.
Image smooth_noise(int height, int width, int channels, double corr_len, std::mt19937_64& rng) {
    const auto kernel = filters::gaussian_kernel(corr_len);
    const int pad = static_cast<int>(kernel.size()) / 2;
    Image canvas(height + 2 * pad, width + 2 * pad, channels);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : canvas.storage()) v = normal(rng);
    return filters::convolve_separable(canvas, kernel).crop(pad, pad, height, width);
}

}  // namespace

std::vector<TiltField> sample_tilt_sequence(const TurbulenceParams& params, int frames, int height,
                                            int width, std::uint64_t seed) {
    params.validate();
    std::vector<TiltField> tilts;
    tilts.reserve(frames);
    const std::uint64_t tilt_seed = substream(seed, "tilt");
    for (int t = 0; t < frames; ++t) {
        if (params.sigma_tilt == 0.0) {
            tilts.emplace_back(height, width);
            continue;
        }
        std::mt19937_64 rng(substream(tilt_seed, static_cast<std::uint64_t>(t)));
        Image noise = smooth_noise(height, width, 2, params.corr_len, rng);
        double sum_sq = 0.0;
        for (double v : noise.samples()) sum_sq += v * v;
        const double rms = std::sqrt(sum_sq / (static_cast<double>(height) * width));
        const double scale = rms > 0.0 ? params.sigma_tilt / rms : 0.0;
        for (double& v : noise.storage()) v *= scale;
        tilts.emplace_back(height, width, std::move(noise.storage()));
    }
    return tilts;
}

Image sample_blur_map(const TurbulenceParams& params, int height, int width, std::uint64_t seed) {
    params.validate();
    Image map(height, width, 1, params.blur_sigma_min);
    if (params.blur_sigma_max == params.blur_sigma_min) return map;
    std::mt19937_64 rng(substream(seed, "blur_map"));
    const Image noise = smooth_noise(height, width, 1, params.blur_corr_len, rng);
    const auto [lo, hi] = std::minmax_element(noise.samples().begin(), noise.samples().end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double u = span > 0.0 ? (noise.samples()[i] - *lo) / span : 0.0;
        map.storage()[i] = params.blur_sigma_min + u * (params.blur_sigma_max - params.blur_sigma_min);
    }
    return map;
}

FrameClip apply_blur(const FrameClip& clip, const Image& blur_map) {
    if (blur_map.height() != clip.height() || blur_map.width() != clip.width() ||
        blur_map.channels() != 1) {
        fail(ErrorKind::ShapeMismatch, "blur map must be H×W×1");
    }
    for (double s : blur_map.samples()) {
        if (!(s >= 0.0)) fail(ErrorKind::InvalidParams, "negative blur sigma");
    }
    const auto [lo_it, hi_it] = std::minmax_element(blur_map.samples().begin(), blur_map.samples().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const int levels = hi > lo ? kBlurLevels : 1;
    std::vector<double> sigmas(levels);
    for (int k = 0; k < levels; ++k) sigmas[k] = levels == 1 ? lo : lo + (hi - lo) * k / (levels - 1);

    const int ch = clip.channels();
    std::vector<double> samples;
    samples.reserve(clip.samples().size());
    for (int t = 0; t < clip.frames(); ++t) {
        const Image frame = clip.frame(t);
        std::vector<Image> blurred;
        for (double s : sigmas) blurred.push_back(filters::gaussian_blur(frame, s));
        if (levels == 1) {
            samples.insert(samples.end(), blurred[0].samples().begin(), blurred[0].samples().end());
            continue;
        }
        for (int y = 0; y < clip.height(); ++y) {
            for (int x = 0; x < clip.width(); ++x) {
                const double pos = (blur_map.at(y, x) - lo) / (hi - lo) * (levels - 1);
                const int k0 = std::min(static_cast<int>(pos), levels - 1);
                const int k1 = std::min(k0 + 1, levels - 1);
                const double w = pos - k0;
                for (int c = 0; c < ch; ++c) {
                    samples.push_back((1 - w) * blurred[k0].at(y, x, c) + w * blurred[k1].at(y, x, c));
                }
            }
        }
    }
    return FrameClip::clamped(clip.frames(), clip.height(), clip.width(), ch, std::move(samples),
                              clip.meta());
}

FrameClip apply_tilt(const FrameClip& clip, const std::vector<TiltField>& tilts) {
    if (static_cast<int>(tilts.size()) != clip.frames()) {
        fail(ErrorKind::ShapeMismatch, "need one tilt field per frame");
    }
    std::vector<Image> frames;
    frames.reserve(clip.frames());
    for (int t = 0; t < clip.frames(); ++t) frames.push_back(flow::warp(clip.frame(t), tilts[t]));
    return FrameClip::from_frames(frames, clip.meta());
}

DegradationBundle degrade(const FrameClip& clean, const TurbulenceParams& params) {
    params.validate();
    Image blur_map = sample_blur_map(params, clean.height(), clean.width(), params.seed);
    FrameClip blur_only = apply_blur(clean, blur_map);
    auto tilts = sample_tilt_sequence(params, clean.frames(), clean.height(), clean.width(), params.seed);
    FrameClip degraded = apply_tilt(blur_only, tilts);
    return DegradationBundle{clean, std::move(blur_only), std::move(degraded), std::move(tilts),
                             std::move(blur_map), params};
}

double cn2_knob(const TurbulenceParams& params) {
    return params.sigma_tilt * (params.blur_sigma_max + params.blur_sigma_min) / 2.0;
}

// ---------------------------------------------------------------------------

namespace {

Image texture(int height, int width, int channels, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Image img(height, width, channels);
    constexpr int kWaves = 6;
    for (int c = 0; c < channels; ++c) {
        double fx[kWaves], fy[kWaves], ph[kWaves], amp[kWaves];
        for (int k = 0; k < kWaves; ++k) {
            const double freq = 0.08 + 0.35 * uni(rng);
            const double angle = 2.0 * std::numbers::pi * uni(rng);
            fx[k] = freq * std::cos(angle);
            fy[k] = freq * std::sin(angle);
            ph[k] = 2.0 * std::numbers::pi * uni(rng);
            amp[k] = 0.5 + 0.5 * uni(rng);
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double v = 0.0;
                for (int k = 0; k < kWaves; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
                img.at(y, x, c) = v;
            }
        }
    }
    const Image speckle = smooth_noise(height, width, channels, 1.5, rng);
    for (std::size_t i = 0; i < img.size(); ++i) img.storage()[i] += 1.5 * speckle.samples()[i];
    const auto [lo, hi] = std::minmax_element(img.samples().begin(), img.samples().end());
    const double mn = *lo, span = std::max(*hi - *lo, 1e-12);
    for (double& v : img.storage()) v = 0.1 + 0.8 * (v - mn) / span;

    // Flat blocks give the scene sharp edges.
    const int blocks = std::max(2, height * width / 256);
    for (int b = 0; b < blocks; ++b) {
        const int bh = 2 + static_cast<int>(uni(rng) * height / 4);
        const int bw = 2 + static_cast<int>(uni(rng) * width / 4);
        const int top = static_cast<int>(uni(rng) * (height - bh + 1));
        const int left = static_cast<int>(uni(rng) * (width - bw + 1));
        const double level = 0.1 + 0.8 * uni(rng);
        for (int y = top; y < std::min(top + bh, height); ++y)
            for (int x = left; x < std::min(left + bw, width); ++x)
                for (int c = 0; c < channels; ++c) img.at(y, x, c) = 0.5 * img.at(y, x, c) + 0.5 * level;
    }
    return img;
}

}  // namespace

FrameClip synthetic_scene(const SceneOptions& options) {
    std::mt19937_64 rng(substream(options.seed, "scene"));
    const Image background = texture(options.height, options.width, options.channels, rng);
    const int side = std::max(4, options.height / 4);
    Image object = texture(side, side, options.channels, rng);
    for (double& v : object.storage()) v = 0.6 * v + 0.35;  // brighter than the background on average

    std::vector<Image> frames;
    for (int t = 0; t < options.frames; ++t) {
        Image frame = background;
        if (options.motion == SceneMotion::Translate) {
            const double ox = options.width / 4.0 + options.velocity_x * t;
            const double oy = options.height / 4.0 + options.velocity_y * t;
            for (int y = 0; y < options.height; ++y) {
                for (int x = 0; x < options.width; ++x) {
                    const double lx = x - ox;
                    const double ly = y - oy;
                    if (lx < 0 || ly < 0 || lx > side - 1 || ly > side - 1) continue;
                    const int x0 = static_cast<int>(lx), y0 = static_cast<int>(ly);
                    const int x1 = std::min(x0 + 1, side - 1), y1 = std::min(y0 + 1, side - 1);
                    const double ax = lx - x0, ay = ly - y0;
                    for (int c = 0; c < options.channels; ++c) {
                        frame.at(y, x, c) =
                            (1 - ay) * ((1 - ax) * object.at(y0, x0, c) + ax * object.at(y0, x1, c)) +
                            ay * ((1 - ax) * object.at(y1, x0, c) + ax * object.at(y1, x1, c));
                    }
                }
            }
        }
        frames.push_back(std::move(frame));
    }
    return FrameClip::from_frames(frames, media::ClipMeta{"synthetic", "linear"});
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json params_json(const TurbulenceParams& p) {
    return {{"sigma_tilt", p.sigma_tilt},       {"corr_len", p.corr_len},
            {"blur_sigma_min", p.blur_sigma_min}, {"blur_sigma_max", p.blur_sigma_max},
            {"blur_corr_len", p.blur_corr_len}, {"seed", p.seed}};
}

void save_map(const Image& map, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
    out.write("PMRF", 4);
    io::write_u32(out, 1);
    io::write_u32(out, static_cast<std::uint32_t>(map.height()));
    io::write_u32(out, static_cast<std::uint32_t>(map.width()));
    io::write_u32(out, 1);
    for (double v : map.samples()) io::write_f32(out, static_cast<float>(v));
}

Image load_map(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + file.string());
    io::expect_magic(in, "PMRF");
    io::read_u32(in);
    const int h = static_cast<int>(io::read_u32(in));
    const int w = static_cast<int>(io::read_u32(in));
    io::read_u32(in);
    std::vector<float> raw(static_cast<std::size_t>(h) * w);
    if (!in.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
        fail(ErrorKind::DecodeError, "truncated blur map " + file.string());
    }
    return Image(h, w, 1, std::vector<double>(raw.begin(), raw.end()));
}

}  // namespace

void save_bundle(const DegradationBundle& bundle, const fs::path& directory) {
    fs::create_directories(directory / "raw");
    fs::create_directories(directory / "tilts");
    media::save_clip(bundle.clean, directory / "clean");
    media::save_clip(bundle.blur_only, directory / "blur_only");
    media::save_clip(bundle.degraded, directory / "degraded");
    media::save_raw_clip(bundle.clean, directory / "raw" / "clean.pmrf");
    media::save_raw_clip(bundle.blur_only, directory / "raw" / "blur_only.pmrf");
    media::save_raw_clip(bundle.degraded, directory / "raw" / "degraded.pmrf");
    for (std::size_t t = 0; t < bundle.true_tilts.size(); ++t) {
        flow::save_flow(bundle.true_tilts[t],
                        directory / "tilts" / media::frame_filename(static_cast<int>(t), ".pmrw"));
    }
    save_map(bundle.blur_map, directory / "blur_map.pmrf");
    nlohmann::json manifest = {{"params", params_json(bundle.params)},
                               {"frames", bundle.clean.frames()},
                               {"height", bundle.clean.height()},
                               {"width", bundle.clean.width()},
                               {"channels", bundle.clean.channels()},
                               {"cn2_knob", cn2_knob(bundle.params)}};
    std::ofstream out(directory / "params.json");
    if (!out) fail(ErrorKind::IoError, "cannot write manifest in " + directory.string());
    out << manifest.dump(2) << "\n";
}

DegradationBundle load_bundle(const fs::path& directory) {
    std::ifstream in(directory / "params.json");
    if (!in) fail(ErrorKind::IoError, "no params.json in " + directory.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::DecodeError, std::string("params.json: ") + e.what());
    }
    TurbulenceParams p;
    const auto& jp = manifest.at("params");
    p.sigma_tilt = jp.at("sigma_tilt");
    p.corr_len = jp.at("corr_len");
    p.blur_sigma_min = jp.at("blur_sigma_min");
    p.blur_sigma_max = jp.at("blur_sigma_max");
    p.blur_corr_len = jp.at("blur_corr_len");
    p.seed = jp.at("seed");

    auto load = [&](const std::string& name) {
        const fs::path raw = directory / "raw" / (name + ".pmrf");
        FrameClip clip = fs::exists(raw) ? media::load_raw_clip(raw) : media::load_clip(directory / name);
        clip.meta().source = (directory / name).string();
        return clip;
    };
    FrameClip clean = load("clean");
    FrameClip blur_only = load("blur_only");
    FrameClip degraded = load("degraded");
    std::vector<TiltField> tilts;
    for (int t = 0; t < clean.frames(); ++t) {
        const fs::path f = directory / "tilts" / media::frame_filename(t, ".pmrw");
        if (!fs::exists(f)) break;
        tilts.emplace_back(flow::load_flow(f));
    }
    Image blur_map = fs::exists(directory / "blur_map.pmrf")
                         ? load_map(directory / "blur_map.pmrf")
                         : Image(clean.height(), clean.width(), 1);
    return DegradationBundle{std::move(clean), std::move(blur_only), std::move(degraded),
                             std::move(tilts), std::move(blur_map), p};
}

}  // namespace pmr::turbsim
