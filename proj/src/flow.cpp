#include "pmr/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include "pmr/binary_io.hpp"
#include "pmr/errors.hpp"
#include "pmr/filters.hpp"

namespace pmr::flow {

using media::Image;

FlowField::FlowField(int height, int width)
    : height_(height), width_(width), data_(2 * static_cast<std::size_t>(height) * width, 0.0) {}

FlowField::FlowField(int height, int width, std::vector<double> vectors)
    : height_(height), width_(width), data_(std::move(vectors)) {
    if (data_.size() != 2 * static_cast<std::size_t>(height) * width) {
        fail(ErrorKind::ShapeMismatch, "flow vector count does not match H*W*2");
    }
}

FlowField FlowField::constant(int height, int width, double dx, double dy) {
    FlowField f(height, width);
    for (std::size_t i = 0; i < f.data_.size(); i += 2) {
        f.data_[i] = dx;
        f.data_[i + 1] = dy;
    }
    return f;
}

bool FlowField::is_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool FlowField::is_zero() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return v == 0.0; });
}

FlowField FlowField::operator+(const FlowField& other) const {
    if (!same_shape(other)) fail(ErrorKind::ShapeMismatch, "flow shapes differ");
    FlowField out = *this;
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] += other.data_[i];
    return out;
}

FlowField FlowField::operator-(const FlowField& other) const {
    if (!same_shape(other)) fail(ErrorKind::ShapeMismatch, "flow shapes differ");
    FlowField out = *this;
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] -= other.data_[i];
    return out;
}

FlowField FlowField::operator*(double s) const {
    FlowField out = *this;
    for (double& v : out.data_) v *= s;
    return out;
}

FlowField mean_of(const std::vector<FlowField>& fields) {
    if (fields.empty()) fail(ErrorKind::NoFlows, "mean of an empty flow list");
    FlowField out(fields.front().height(), fields.front().width());
    for (const FlowField& f : fields) {
        if (!f.same_shape(out)) fail(ErrorKind::ShapeMismatch, "flow shapes differ");
        for (std::size_t i = 0; i < out.storage().size(); ++i) out.storage()[i] += f.vectors()[i];
    }
    for (double& v : out.storage()) v /= static_cast<double>(fields.size());
    return out;
}

// ---------------------------------------------------------------------------

Image warp(const Image& frame, const FlowField& f) {
    if (frame.height() != f.height() || frame.width() != f.width()) {
        fail(ErrorKind::ShapeMismatch, "warp: frame and flow differ in size");
    }
    const int h = frame.height();
    const int w = frame.width();
    const int ch = frame.channels();
    Image out(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double sx = std::clamp(x + f.dx(y, x), 0.0, w - 1.0);
            const double sy = std::clamp(y + f.dy(y, x), 0.0, h - 1.0);
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double ax = sx - x0;
            const double ay = sy - y0;
            for (int c = 0; c < ch; ++c) {
                out.at(y, x, c) = (1 - ay) * ((1 - ax) * frame.at(y0, x0, c) + ax * frame.at(y0, x1, c)) +
                                  ay * ((1 - ax) * frame.at(y1, x0, c) + ax * frame.at(y1, x1, c));
            }
        }
    }
    return out;
}

namespace {

Image flow_component(const FlowField& f, int component) {
    Image out(f.height(), f.width(), 1);
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) out.at(y, x) = component == 0 ? f.dx(y, x) : f.dy(y, x);
    }
    return out;
}

}  // namespace

FlowField invert_displacement(const FlowField& f, int iterations) {
    const Image fx = flow_component(f, 0);
    const Image fy = flow_component(f, 1);
    FlowField g = -f;
    for (int it = 0; it < iterations; ++it) {
        const Image sx = warp(fx, g);
        const Image sy = warp(fy, g);
        for (int y = 0; y < f.height(); ++y) {
            for (int x = 0; x < f.width(); ++x) {
                g.dx(y, x) = -sx.at(y, x);
                g.dy(y, x) = -sy.at(y, x);
            }
        }
    }
    return g;
}

FlowField resize_flow(const FlowField& f, int height, int width) {
    if (f.height() == height && f.width() == width) return f;
    const Image src(f.height(), f.width(), 2,
                    std::vector<double>(f.vectors().begin(), f.vectors().end()));
    Image up = filters::resize_bilinear(src, height, width);
    const double scale_x = static_cast<double>(width) / f.width();
    const double scale_y = static_cast<double>(height) / f.height();
    FlowField out(height, width, std::move(up.storage()));
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            out.dx(y, x) *= scale_x;
            out.dy(y, x) *= scale_y;
        }
    }
    return out;
}

Image flow_magnitude(const FlowField& f) {
    Image out(f.height(), f.width(), 1);
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) out.at(y, x) = std::sqrt(f.dx(y, x) * f.dx(y, x) + f.dy(y, x) * f.dy(y, x));
    }
    return out;
}

Image normalize_magnitude(const Image& magnitude) {
    double peak = 0.0;
    for (double v : magnitude.samples()) peak = std::max(peak, v);
    const double denom = std::max(peak, kMagnitudeEps);
    Image out = magnitude;
    for (double& v : out.storage()) v /= denom;
    return out;
}

// ---------------------------------------------------------------------------
// Classic coarse-to-fine Lucas-Kanade

namespace {

Image box_sum(const Image& img, int window) {
    std::vector<double> box(window, 1.0);
    return filters::convolve_separable(img, box);
}

// 3×3 median of each component, border pixels use the in-range neighbours.
FlowField median3(const FlowField& f) {
    FlowField out(f.height(), f.width());
    std::vector<double> xs, ys;
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) {
            xs.clear();
            ys.clear();
            for (int j = std::max(y - 1, 0); j <= std::min(y + 1, f.height() - 1); ++j) {
                for (int i = std::max(x - 1, 0); i <= std::min(x + 1, f.width() - 1); ++i) {
                    xs.push_back(f.dx(j, i));
                    ys.push_back(f.dy(j, i));
                }
            }
            const auto mid = xs.size() / 2;
            std::nth_element(xs.begin(), xs.begin() + mid, xs.end());
            std::nth_element(ys.begin(), ys.begin() + mid, ys.end());
            out.dx(y, x) = xs[mid];
            out.dy(y, x) = ys[mid];
        }
    }
    return out;
}

void refine_level(const Image& a, const Image& b, FlowField& f, const ClassicFlowOptions& opt) {
    const int h = a.height();
    const int w = a.width();
    for (int it = 0; it < opt.iterations; ++it) {
        const Image bw = warp(b, f);
        Image ixx(h, w, 1), ixy(h, w, 1), iyy(h, w, 1), ixt(h, w, 1), iyt(h, w, 1);
        for (int y = 0; y < h; ++y) {
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            for (int x = 0; x < w; ++x) {
                const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
                // Average of both frames' gradients keeps the estimate symmetric.
                const double gx = 0.25 * (bw.at(y, xp) - bw.at(y, xm) + a.at(y, xp) - a.at(y, xm));
                const double gy = 0.25 * (bw.at(yp, x) - bw.at(ym, x) + a.at(yp, x) - a.at(ym, x));
                const double gt = bw.at(y, x) - a.at(y, x);
                ixx.at(y, x) = gx * gx;
                ixy.at(y, x) = gx * gy;
                iyy.at(y, x) = gy * gy;
                ixt.at(y, x) = gx * gt;
                iyt.at(y, x) = gy * gt;
            }
        }
        const Image sxx = box_sum(ixx, opt.window), sxy = box_sum(ixy, opt.window),
                    syy = box_sum(iyy, opt.window), sxt = box_sum(ixt, opt.window),
                    syt = box_sum(iyt, opt.window);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double a11 = sxx.at(y, x) + opt.regularization;
                const double a12 = sxy.at(y, x);
                const double a22 = syy.at(y, x) + opt.regularization;
                const double det = a11 * a22 - a12 * a12;
                if (det <= 0.0) continue;
                const double bx = -sxt.at(y, x);
                const double by = -syt.at(y, x);
                double ddx = (a22 * bx - a12 * by) / det;
                double ddy = (a11 * by - a12 * bx) / det;
                // Linearization is only trusted within about a pixel per step.
                const double n = std::hypot(ddx, ddy);
                if (n > 1.0) {
                    ddx /= n;
                    ddy /= n;
                }
                f.dx(y, x) += ddx;
                f.dy(y, x) += ddy;
            }
        }
        f = median3(f);
    }
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, FlowBackend>& registry() {
    static std::map<std::string, FlowBackend> r = {
        {"classic", [](const Image& a, const Image& b) { return estimate_flow_classic(a, b); }}};
    return r;
}

}  // namespace

FlowField estimate_flow_classic(const Image& a, const Image& b, const ClassicFlowOptions& options) {
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "flow frames differ in shape");
    std::vector<Image> pa = {a.channel_mean()};
    std::vector<Image> pb = {b.channel_mean()};
    while (static_cast<int>(pa.size()) < options.levels &&
           std::min(pa.back().height(), pa.back().width()) / 2 >= options.min_side) {
        pa.push_back(filters::pyramid_down(pa.back()));
        pb.push_back(filters::pyramid_down(pb.back()));
    }
    FlowField f(pa.back().height(), pa.back().width());
    for (int level = static_cast<int>(pa.size()) - 1; level >= 0; --level) {
        const Image& la = pa[level];
        if (f.height() != la.height() || f.width() != la.width()) {
            f = resize_flow(f, la.height(), la.width());
        }
        refine_level(la, pb[level], f, options);
    }
    return f;
}

void register_flow_backend(const std::string& id, FlowBackend backend) {
    std::lock_guard lock(registry_mutex());
    registry()[id] = std::move(backend);
}

void unregister_flow_backend(const std::string& id) {
    if (id == "classic") return;
    std::lock_guard lock(registry_mutex());
    registry().erase(id);
}

bool has_flow_backend(const std::string& id) {
    std::lock_guard lock(registry_mutex());
    return registry().count(id) != 0;
}

std::vector<std::string> flow_backends() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> ids;
    for (const auto& [id, _] : registry()) ids.push_back(id);
    return ids;
}

FlowField estimate_flow(const Image& a, const Image& b, const std::string& backend) {
    FlowBackend fn;
    {
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(backend);
        if (it == registry().end()) fail(ErrorKind::UnknownBackend, "no flow backend '" + backend + "'");
        fn = it->second;
    }
    if (!a.same_shape(b)) fail(ErrorKind::ShapeMismatch, "flow frames differ in shape");
    FlowField f = fn(a, b);
    if (f.height() != a.height() || f.width() != a.width() || !f.is_finite()) {
        fail(ErrorKind::ShapeMismatch, "backend '" + backend + "' returned an invalid field");
    }
    return f;
}

std::vector<FlowField> pairwise_flows(const media::FrameClip& clip, const std::string& backend) {
    std::vector<FlowField> flows;
    for (int t = 0; t + 1 < clip.frames(); ++t) {
        flows.push_back(estimate_flow(clip.frame(t), clip.frame(t + 1), backend));
    }
    return flows;
}

void save_flow(const FlowField& f, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
    out.write("PMRW", 4);
    io::write_u32(out, static_cast<std::uint32_t>(f.height()));
    io::write_u32(out, static_cast<std::uint32_t>(f.width()));
    for (double v : f.vectors()) io::write_f32(out, static_cast<float>(v));
    if (!out) fail(ErrorKind::IoError, "short write to " + file.string());
}

FlowField load_flow(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + file.string());
    io::expect_magic(in, "PMRW");
    const int h = static_cast<int>(io::read_u32(in));
    const int w = static_cast<int>(io::read_u32(in));
    std::vector<float> raw(2 * static_cast<std::size_t>(h) * w);
    if (!in.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
        fail(ErrorKind::DecodeError, "truncated flow data in " + file.string());
    }
    return FlowField(h, w, std::vector<double>(raw.begin(), raw.end()));
}

}  // namespace pmr::flow
