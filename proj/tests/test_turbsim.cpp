#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pmr/errors.hpp"
#include "pmr/turbsim.hpp"
#include "support.hpp"

using namespace pmr;
using namespace pmr::turbsim;
using media::FrameClip;
using media::Image;
using pmr::testing::TempDir;

namespace {

FrameClip scene(int frames = 4, int size = 48, std::uint64_t seed = 1) {
    SceneOptions o;
    o.frames = frames;
    o.height = size;
    o.width = size;
    o.seed = seed;
    return synthetic_scene(o);
}

double mean(const FrameClip& c) {
    double s = 0;
    for (double v : c.samples()) s += v;
    return s / static_cast<double>(c.samples().size());
}

}  // namespace

TEST_CASE("parameter validation") {
    TurbulenceParams p;
    CHECK_NOTHROW(p.validate());
    p.sigma_tilt = -1;
    CHECK_THROWS_WITH_AS(p.validate(), doctest::Contains("InvalidParams"), Error);
    p = {};
    p.blur_sigma_min = 2.0;
    p.blur_sigma_max = 1.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.corr_len = 0.5;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("zero tilt strength gives zero fields") {
    TurbulenceParams p;
    p.sigma_tilt = 0;
    for (const auto& t : sample_tilt_sequence(p, 3, 16, 16, 5)) CHECK(t.is_zero());
}

TEST_CASE("tilt fields have the requested RMS magnitude") {
    TurbulenceParams p;
    p.sigma_tilt = 1.5;
    for (const auto& t : sample_tilt_sequence(p, 3, 32, 32, 7)) {
        double s = 0;
        for (double v : t.vectors()) s += v * v;
        CHECK(std::sqrt(s / (32 * 32)) == doctest::Approx(1.5).epsilon(1e-9));
    }
}

TEST_CASE("temporal mean of tilts shrinks as 1/sqrt(T)") {
    TurbulenceParams p;
    p.sigma_tilt = 1.0;
    for (int frames : {50, 200}) {
        const auto tilts = sample_tilt_sequence(p, frames, 24, 24, 11);
        const flow::FlowField m = flow::mean_of({tilts.begin(), tilts.end()});
        double worst_component = 0, worst_magnitude = 0;
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                worst_component = std::max({worst_component, std::abs(m.dx(y, x)), std::abs(m.dy(y, x))});
                worst_magnitude = std::max(worst_magnitude, std::hypot(m.dx(y, x), m.dy(y, x)));
            }
        CAPTURE(frames);
        CHECK(worst_component <= 4.0 * p.sigma_tilt / std::sqrt(frames));
        if (frames == 200) CHECK(worst_magnitude <= 3.0 / std::sqrt(200.0));
    }
}

TEST_CASE("tilt sampling determinism") {
    TurbulenceParams p;
    const auto a = sample_tilt_sequence(p, 2, 16, 16, 3);
    const auto b = sample_tilt_sequence(p, 2, 16, 16, 3);
    const auto c = sample_tilt_sequence(p, 2, 16, 16, 4);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
    CHECK_FALSE(a[0] == c[0]);
    CHECK_FALSE(a[0] == a[1]);
}

TEST_CASE("substreams are stable and distinct") {
    CHECK(substream(1, 0) == substream(1, 0));
    CHECK(substream(1, 0) != substream(1, 1));
    CHECK(substream(1, 0) != substream(2, 0));
    CHECK(substream(1, "a") != substream(1, "b"));
}

TEST_CASE("blur map spans the sigma range") {
    TurbulenceParams p;
    p.blur_sigma_min = 0.5;
    p.blur_sigma_max = 1.5;
    const Image m = sample_blur_map(p, 32, 32, 2);
    const auto [lo, hi] = std::minmax_element(m.samples().begin(), m.samples().end());
    CHECK(*lo == doctest::Approx(0.5));
    CHECK(*hi == doctest::Approx(1.5));
}

TEST_CASE("zero blur map is the identity") {
    const FrameClip c = scene(2, 16);
    const FrameClip out = apply_blur(c, Image(16, 16, 1, 0.0));
    CHECK(std::equal(out.samples().begin(), out.samples().end(), c.samples().begin()));
    CHECK_THROWS_WITH_AS(apply_blur(c, Image(16, 16, 1, -1.0)), doctest::Contains("InvalidParams"), Error);
}

TEST_CASE("constant blur on an impulse matches dense Gaussian convolution") {
    const int n = 34, c = 16;
    std::vector<double> s(n * n, 0.0);
    s[c * n + c] = 1.0;
    const FrameClip impulse(1, n, n, 1, s);
    const FrameClip out = apply_blur(impulse, Image(n, n, 1, 2.0));
    double total = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) total += std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / 8.0);
    double worst = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double expected = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / 8.0) / total;
            worst = std::max(worst, std::abs(out.frame(0).at(y, x) - expected));
        }
    CHECK(worst <= 1e-3);
}

TEST_CASE("blur conserves mean intensity") {
    const FrameClip c = scene(2, 48);
    TurbulenceParams p;
    const FrameClip out = apply_blur(c, sample_blur_map(p, 48, 48, 9));
    CHECK(std::abs(mean(out) - mean(c)) <= 1e-4);
}

TEST_CASE("tilt warp roughly preserves interior mean") {
    const FrameClip c = scene(3, 64);
    TurbulenceParams p;
    const FrameClip out = apply_tilt(c, sample_tilt_sequence(p, 3, 64, 64, 13));
    const double a = mean(c.crop_border(8)), b = mean(out.crop_border(8));
    CHECK(std::abs(a - b) <= 0.02 * a);
}

TEST_CASE("degrade identity and reconstruction") {
    const FrameClip c = scene(3, 32);
    TurbulenceParams none;
    none.sigma_tilt = 0;
    none.blur_sigma_min = none.blur_sigma_max = 0;
    const DegradationBundle id = degrade(c, none);
    CHECK(std::equal(id.degraded.samples().begin(), id.degraded.samples().end(), c.samples().begin()));

    TurbulenceParams p;
    p.seed = 4;
    const DegradationBundle b = degrade(c, p);
    CHECK(b.true_tilts.size() == 3u);
    CHECK(b.degraded.same_shape(c));
    CHECK(b.blur_only.same_shape(c));
    const FrameClip rebuilt = apply_tilt(b.blur_only, b.true_tilts);
    CHECK(std::equal(rebuilt.samples().begin(), rebuilt.samples().end(), b.degraded.samples().begin()));
}

TEST_CASE("degradation is monotone and deterministic") {
    const FrameClip c = scene(4, 48);
    TurbulenceParams p;
    p.sigma_tilt = 1.0;
    p.seed = 21;
    const DegradationBundle b = degrade(c, p);
    CHECK(media::psnr(b.degraded, c) < media::psnr(b.blur_only, c));
    const DegradationBundle again = degrade(c, p);
    CHECK(std::equal(again.degraded.samples().begin(), again.degraded.samples().end(),
                     b.degraded.samples().begin()));
}

TEST_CASE("strength knob") {
    TurbulenceParams zero;
    zero.sigma_tilt = 0;
    zero.blur_sigma_min = zero.blur_sigma_max = 0;
    CHECK(cn2_knob(zero) == 0.0);
    TurbulenceParams p;
    TurbulenceParams twice = p;
    twice.sigma_tilt *= 2;
    CHECK(cn2_knob(twice) == doctest::Approx(2 * cn2_knob(p)));

    const FrameClip c = scene(4, 48);
    std::vector<std::pair<double, double>> rows;
    for (double s : {0.5, 1.0, 2.0}) {
        TurbulenceParams q;
        q.sigma_tilt = s;
        q.blur_sigma_min = 0.3 * s;
        q.blur_sigma_max = 0.8 * s;
        q.seed = 8;
        rows.emplace_back(cn2_knob(q), media::psnr(degrade(c, q).degraded, c));
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].first > rows[i - 1].first);
        CHECK(rows[i].second < rows[i - 1].second);
    }
}

TEST_CASE("synthetic scene options") {
    SceneOptions o;
    o.frames = 3;
    o.height = 16;
    o.width = 24;
    o.channels = 3;
    const FrameClip c = synthetic_scene(o);
    CHECK(c.frames() == 3);
    CHECK(c.width() == 24);
    CHECK(c.channels() == 3);
    CHECK(media::psnr(c.frame(0), c.frame(2)) == media::kPsnrIdentical);
    o.motion = SceneMotion::Translate;
    const FrameClip moving = synthetic_scene(o);
    CHECK(media::psnr(moving.frame(0), moving.frame(2)) < 60.0);
}

TEST_CASE("bundle save/load round trip") {
    TempDir dir;
    TurbulenceParams p;
    p.seed = 3;
    const DegradationBundle b = degrade(scene(2, 16), p);
    save_bundle(b, dir.path());
    for (const char* d : {"clean", "blur_only", "degraded", "tilts"}) CHECK(std::filesystem::is_directory(dir / d));
    CHECK(std::filesystem::exists(dir / "params.json"));
    const DegradationBundle back = load_bundle(dir.path());
    CHECK(back.params.seed == 3u);
    CHECK(back.params.sigma_tilt == p.sigma_tilt);
    REQUIRE(back.true_tilts.size() == 2u);
    for (std::size_t i = 0; i < b.degraded.samples().size(); ++i) {
        CHECK(back.degraded.samples()[i] == static_cast<double>(static_cast<float>(b.degraded.samples()[i])));
    }
    CHECK(std::abs(back.true_tilts[1].dx(5, 5) - b.true_tilts[1].dx(5, 5)) < 1e-6);
}
