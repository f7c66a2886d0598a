#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "pmr/dei.hpp"
#include "pmr/errors.hpp"
#include "pmr/turbsim.hpp"

using namespace pmr;
using namespace pmr::dei;
using flow::FlowField;
using media::FrameClip;

namespace {

FrameClip textured(int frames, int size, std::uint64_t seed, turbsim::SceneMotion motion = turbsim::SceneMotion::None) {
    turbsim::SceneOptions o;
    o.frames = frames;
    o.height = size;
    o.width = size;
    o.seed = seed;
    o.motion = motion;
    return turbsim::synthetic_scene(o);
}

FrameClip with_noise(const FrameClip& c, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> s(c.samples().begin(), c.samples().end());
    for (double& v : s) v = 0.5 + 0.5 * (v - 0.5) + n(rng);
    return FrameClip::clamped(c.frames(), c.height(), c.width(), c.channels(), s);
}

// Frame t is the base frame shifted right by k·t pixels (edge replicated).
FrameClip constant_shift(int frames, int size, int k, std::uint64_t seed) {
    const media::Image base = textured(1, size, seed).frame(0);
    std::vector<double> s;
    for (int t = 0; t < frames; ++t)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) s.push_back(base.at(y, std::clamp(x - k * t, 0, size - 1)));
    return FrameClip(frames, size, size, 1, s);
}

double cn2_oracle(const FrameClip& c, const OpticsConfig& o) {
    const int T = c.frames(), H = c.height(), W = c.width();
    auto v = [&](int t, int y, int x) { return c.samples()[(static_cast<std::size_t>(t) * H + y) * W + x]; };
    double var = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double m = 0, q = 0;
            for (int t = 0; t < T; ++t) m += v(t, y, x);
            m /= T;
            for (int t = 0; t < T; ++t) q += std::pow(v(t, y, x) - m, 2);
            var += q / T;
        }
    var /= H * W;
    double g = 0;
    int n = 0;
    for (int t = 0; t < T; ++t)
        for (int y = 1; y < H - 1; ++y)
            for (int x = 1; x < W - 1; ++x) {
                g += std::hypot((v(t, y, x + 1) - v(t, y, x - 1)) / 2, (v(t, y + 1, x) - v(t, y - 1, x)) / 2);
                ++n;
            }
    g /= n;
    return o.pfov * o.pfov * std::pow(o.aperture_d, 1.0 / 3.0) / (o.distance_l * o.turb_const_p) * var /
           (std::pow(g, o.grad_exp_n) + o.eps);
}

FlowField random_flow(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-2, 2);
    FlowField f(h, w);
    for (double& v : f.storage()) v = d(rng);
    return f;
}

}  // namespace

TEST_CASE("cn2 of a temporally constant clip is zero") {
    CHECK(estimate_cn2(textured(4, 16, 1), {}) == 0.0);
    CHECK_THROWS_WITH_AS(estimate_cn2(textured(1, 16, 1), {}), doctest::Contains("NeedsTwoFrames"), Error);
}

TEST_CASE("cn2 matches an independent variance/gradient evaluation") {
    const FrameClip c = with_noise(textured(5, 16, 2), 0.1, 3);
    CHECK(std::abs(estimate_cn2(c, {}) - cn2_oracle(c, {})) <= 1e-9 * std::max(1.0, cn2_oracle(c, {})));
    OpticsConfig o;
    o.aperture_d = 0.2;
    o.distance_l = 300;
    o.pfov = 2e-3;
    o.grad_exp_n = 1.5;
    CHECK(estimate_cn2(c, o) == doctest::Approx(cn2_oracle(c, o)).epsilon(1e-9));
}

TEST_CASE("cn2 scales with pfov squared and ignores global offsets") {
    const FrameClip c = with_noise(textured(4, 16, 4), 0.05, 5);
    OpticsConfig o;
    const double base = estimate_cn2(c, o);
    o.pfov = 2.0;
    CHECK(estimate_cn2(c, o) == doctest::Approx(4 * base).epsilon(1e-12));

    std::vector<double> shifted(c.samples().begin(), c.samples().end());
    for (double& v : shifted) v = v * 0.8 + 0.1;  // keep headroom for the offset
    const FrameClip a(c.frames(), 16, 16, 1, shifted);
    for (double& v : shifted) v += 0.05;
    const FrameClip b(c.frames(), 16, 16, 1, shifted);
    CHECK(estimate_cn2(a, {}) == doctest::Approx(estimate_cn2(b, {})).epsilon(1e-9));
}

TEST_CASE("optics validation") {
    OpticsConfig o;
    o.distance_l = 0;
    CHECK_THROWS_WITH_AS(estimate_cn2(textured(2, 16, 1), o), doctest::Contains("InvalidParams"), Error);
}

TEST_CASE("adjusted mean flow") {
    std::vector<FlowField> pairs;
    for (int k = 0; k < 5; ++k) pairs.push_back(random_flow(8, 8, 10 + k));

    const FlowField plain = adjusted_mean_flow(pairs, 2, 5, 0.0);
    CHECK(plain.dx(3, 3) == doctest::Approx((pairs[0].dx(3, 3) + pairs[1].dx(3, 3) + pairs[2].dx(3, 3) +
                                             pairs[3].dx(3, 3)) / 4));
    const FlowField single = adjusted_mean_flow(pairs, 0, 2, 3.0);
    CHECK(single.dy(1, 6) == doctest::Approx(pairs[0].dy(1, 6) / 4));

    CHECK(window_start(10, 0, 5) == 0);
    CHECK(window_start(10, 5, 5) == 3);
    CHECK(window_start(10, 9, 5) == 5);
    CHECK_THROWS_WITH_AS(window_start(4, 1, 5), doctest::Contains("WindowOutOfRange"), Error);
    CHECK_THROWS_AS(window_start(6, 6, 3), Error);
    CHECK_THROWS_AS(window_start(6, 1, 1), Error);
}

TEST_CASE("constant-shift clip: adjusted flow is half the shift at cn2 = 1") {
    const FrameClip c = constant_shift(5, 48, 2, 6);
    const FlowField f = adjusted_mean_flow(c, 2, 5, 1.0);
    for (int y = 12; y < 36; y += 3)
        for (int x = 12; x < 36; x += 3) {
            CHECK(std::abs(f.dx(y, x) - 1.0) <= 0.3);
            CHECK(std::abs(f.dy(y, x)) <= 0.3);
        }
}

TEST_CASE("dynamic masks and dpr") {
    const MaskSet zero = dynamic_mask_and_dpr({FlowField(8, 8), FlowField(8, 8)});
    CHECK(zero.dpr == 0.0);
    for (const auto& m : zero.masks) CHECK(m.count() == 0u);

    FlowField half(8, 8);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x) half.dx(y, x) = 1.0;
    CHECK(dynamic_mask_and_dpr({half}).dpr == 0.5);
    CHECK(dynamic_mask_and_dpr({half}, DprMode::Eq4).dpr == 1.0);

    std::vector<FlowField> flows;
    for (int k = 0; k < 3; ++k) flows.push_back(random_flow(8, 8, 20 + k));
    std::size_t counted = 0;
    for (const FlowField& f : flows) {
        double peak = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) peak = std::max(peak, std::sqrt(f.dx(y, x) * f.dx(y, x) + f.dy(y, x) * f.dy(y, x)));
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                counted += std::sqrt(f.dx(y, x) * f.dx(y, x) + f.dy(y, x) * f.dy(y, x)) / peak > 0.5;
    }
    const MaskSet set = dynamic_mask_and_dpr(flows);
    CHECK(set.dpr == static_cast<double>(counted) / (3 * 64));
    CHECK(set.dpr >= 0.0);
    CHECK(set.dpr <= 1.0);
    CHECK(dynamic_mask_and_dpr(flows, DprMode::Eq4).dpr <= 1.0);

    std::vector<FlowField> scaled;
    for (const FlowField& f : flows) scaled.push_back(f * 7.5);
    CHECK(dynamic_mask_and_dpr(scaled).masks == set.masks);

    CHECK_THROWS_WITH_AS(dynamic_mask_and_dpr({}), doctest::Contains("NoFlows"), Error);
}

TEST_CASE("dpr coefficient table") {
    CHECK(dpr_coefficient(0.03) == 2.0);
    CHECK(dpr_coefficient(0.3) == 1.0);
    CHECK(dpr_coefficient(0.6) == 0.5);
    CHECK(dpr_coefficient(0.8) == 0.1);
    CHECK(dpr_coefficient(0.05) == 1.0);
    // Two probes per branch.
    const std::vector<std::pair<double, double>> probes = {{0.0, 2},  {0.049, 2}, {0.05, 1}, {0.49, 1},
                                                           {0.5, 0.5}, {0.69, 0.5}, {0.7, 0.1}, {1.0, 0.1}};
    for (const auto& [dpr, c] : probes) {
        CAPTURE(dpr);
        CHECK(dpr_coefficient(dpr) == c);
    }
    CHECK_THROWS_WITH_AS(dpr_coefficient(1.01), doctest::Contains("DomainError"), Error);
    CHECK_THROWS_AS(dpr_coefficient(-0.1), Error);
}

TEST_CASE("dei score monotonicity") {
    const double a = dei_score(1.0, 1.0, 100, 0.0);
    const double b = dei_score(1.0, 1.0, 100, 1.0);
    const double c = dei_score(1.0, 1.0, 100, 10.0);
    CHECK(a == 100.0);
    CHECK(a > b);
    CHECK(b > c);
    CHECK(dei_score(1.0, 2.0, 100, 1.0) < b);
    CHECK(dei_score(2.0, 1.0, 0, 1.0) == 0.0);
    CHECK_THROWS_AS(dei_score(1.0, 0.0, 1, 0.0), Error);
}

TEST_CASE("static clip has zero dei") {
    for (double gamma : {0.5, 1.0, 4.0}) {
        DeiOptions o;
        o.gamma = gamma;
        const DeiReport r = compute_dei(textured(6, 16, 7), o);
        CHECK(r.dei == 0.0);
        CHECK(r.dpr == 0.0);
        CHECK(r.coeff_c == 2.0);
    }
}

TEST_CASE("full chain on a tiny clip matches a brute-force evaluation") {
    const FrameClip clip = with_noise(textured(6, 8, 8, turbsim::SceneMotion::Translate), 0.02, 9);
    DeiOptions opt;
    opt.gamma = 1.7;
    opt.window_n = 3;
    const DeiReport r = compute_dei(clip, opt);

    const double cn2 = cn2_oracle(clip, opt.optics);
    std::vector<FlowField> pairs;
    for (int t = 0; t + 1 < 6; ++t) pairs.push_back(flow::estimate_flow(clip.frame(t), clip.frame(t + 1)));
    std::size_t dynamic = 0;
    for (int i = 0; i < 6; ++i) {
        const int start = std::clamp(i - 1, 0, 3);
        std::vector<double> dx(64, 0.0), dy(64, 0.0);
        for (int j = start; j < start + 2; ++j)
            for (int p = 0; p < 64; ++p) {
                dx[p] += pairs[j].vectors()[2 * p] / 2 / (1 + cn2);
                dy[p] += pairs[j].vectors()[2 * p + 1] / 2 / (1 + cn2);
            }
        double peak = 0;
        for (int p = 0; p < 64; ++p) peak = std::max(peak, std::sqrt(dx[p] * dx[p] + dy[p] * dy[p]));
        for (int p = 0; p < 64; ++p)
            dynamic += std::sqrt(dx[p] * dx[p] + dy[p] * dy[p]) / std::max(peak, 1e-8) > 0.5;
    }
    const double dpr = static_cast<double>(dynamic) / (6 * 64);
    const double coeff = dpr < 0.05 ? 2 : dpr < 0.5 ? 1 : dpr < 0.7 ? 0.5 : 0.1;
    const double expected = coeff / 1.7 * static_cast<double>(dynamic) / (1 + cn2);

    CHECK(r.cn2 == doctest::Approx(cn2).epsilon(1e-9));
    CHECK(r.dpr == dpr);
    CHECK(std::abs(r.dei - expected) <= 1e-6);
    CHECK(r.dei_normalized == doctest::Approx(expected / (6 * 64)));
    CHECK(r.dei > 0.0);
    CHECK(r.flows.size() == 6u);
    CHECK(r.masks.size() == 6u);
}

TEST_CASE("classify clips") {
    DeiReport a, b, c;
    a.clip = "a";
    a.dei = 50;
    b.clip = "b";
    b.dei = 150;
    c.clip = "c";
    c.dei = 100;
    const Partition p = classify_clips({a, b, c});
    REQUIRE(p.high.size() == 2u);
    CHECK(p.high[0].clip == "b");
    CHECK(p.high[1].clip == "c");
    REQUIRE(p.normal.size() == 1u);
    CHECK(p.normal[0].clip == "a");

    DeiReport z;
    z.dei = 0;
    DeiReport tiny;
    tiny.dei = 0.01;
    const Partition zero = classify_clips({z, tiny}, 0.0);
    CHECK(zero.high.size() == 2u);

    std::vector<DeiReport> many;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(0, 300);
    for (int i = 0; i < 40; ++i) {
        DeiReport r;
        r.dei = d(rng);
        many.push_back(r);
    }
    const auto counted = std::count_if(many.begin(), many.end(), [](const DeiReport& r) { return r.dei >= 100; });
    const Partition big = classify_clips(many);
    CHECK(static_cast<long>(big.high.size()) == counted);
    CHECK(big.high.size() + big.normal.size() == many.size());
}

TEST_CASE("dpr mode names") {
    CHECK(dpr_mode_from_string(to_string(DprMode::Eq4)) == DprMode::Eq4);
    CHECK(dpr_mode_from_string("fraction") == DprMode::Fraction);
    CHECK_THROWS_AS(dpr_mode_from_string("other"), Error);
}
