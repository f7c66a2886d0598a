#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "pmr/cli.hpp"
#include "pmr/errors.hpp"
#include "pmr/pipeline.hpp"
#include "support.hpp"

using namespace pmr;
using json = nlohmann::json;
namespace fs = std::filesystem;
using testing::TempDir;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome pmr_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Relative path → file bytes for a whole tree.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

std::vector<std::string> small_sim(const fs::path& out, int clips = 2) {
    return {"simulate", "--seed", "11", "--output", out.string(), "--set", "sim.clips=" + std::to_string(clips),
            "--set", "sim.frames=6", "--set", "sim.height=24", "--set", "sim.width=24"};
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) {
        if (!l.empty()) out.push_back(l);
    }
    return out;
}

void expect_config_error(const std::function<void()>& fn, const std::string& key) {
    try {
        fn();
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigError);
        CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
}

}  // namespace

TEST_CASE("config merge rejects unknown keys and wrong types with the key path") {
    expect_config_error([] { cli::merge_config({{"sim", {{"bogus", 1}}}}); }, "sim.bogus");
    expect_config_error([] { cli::merge_config({{"dei", {{"optics", {{"pfo", 1.0}}}}}}); }, "dei.optics.pfo");
    expect_config_error([] { cli::merge_config({{"train", {{"lr_init", "fast"}}}}); }, "train.lr_init");
    expect_config_error([] { cli::merge_config({{"sim", {{"clips", 2.5}}}}); }, "sim.clips");
    expect_config_error([] { cli::merge_config({{"nope", {}}}); }, "nope");

    const json merged = cli::merge_config({{"sim", {{"sigma_tilt", 2}, {"seed", 5}}}});
    CHECK(merged["sim"]["sigma_tilt"].get<double>() == 2.0);
    CHECK(merged["sim"]["seed"].get<int>() == 5);
    CHECK(merged["sim"]["frames"] == cli::default_config()["sim"]["frames"]);
    CHECK(cli::default_config()["sim"]["seed"].is_null());
    CHECK(cli::default_config()["train"]["seed"].is_null());
}

TEST_CASE("dotted overrides parse JSON values and fall back to strings") {
    json c = cli::default_config();
    cli::set_key(c, "train.lr_init=1e-3");
    cli::set_key(c, "restore.order=DM>DT>DB");
    cli::set_key(c, "restore.cleanup=true");
    cli::set_key(c, "train.deb.heads=[1,1,2]");
    CHECK(c["train"]["lr_init"].get<double>() == doctest::Approx(1e-3));
    CHECK(c["restore"]["order"] == "DM>DT>DB");
    CHECK(c["restore"]["cleanup"] == true);
    CHECK(c["train"]["deb"]["heads"] == json::array({1, 1, 2}));
    expect_config_error([&] { cli::set_key(c, "restore.orders=x"); }, "restore.orders");
    expect_config_error([&] { cli::set_key(c, "noequals"); }, "noequals");
}

TEST_CASE("config file paths resolve against the file's directory") {
    TempDir dir("pmr-cli");
    fs::create_directories(dir / "cfg");
    std::ofstream(dir / "cfg" / "run.json") << R"({"output": "results", "restore": {"input": "../clips"}, "metrics": {"reference": "/abs/x"}})";
    const json c = cli::load_config(dir / "cfg" / "run.json");
    CHECK(fs::path(c["output"].get<std::string>()) == (dir / "cfg" / "results").lexically_normal());
    CHECK(fs::path(c["restore"]["input"].get<std::string>()) == (dir / "clips").lexically_normal());
    CHECK(c["metrics"]["reference"] == "/abs/x");

    std::ofstream(dir / "cfg" / "bad.json") << R"({"sim": {"sed": 1}})";
    expect_config_error([&] { cli::load_config(dir / "cfg" / "bad.json"); }, "sim.sed");

    // A simulate run driven only by the config writes next to it.
    std::ofstream(dir / "cfg" / "sim.json")
        << R"({"output": "bundles", "sim": {"clips": 1, "frames": 4, "height": 16, "width": 16, "seed": 2}})";
    const auto r = pmr_run({"--config", (dir / "cfg" / "sim.json").string(), "simulate"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "cfg" / "bundles" / "clip_000" / "params.json"));
}

TEST_CASE("simulate at strength 0 leaves clips clean and reports the infinity sentinel") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim");
    args.insert(args.end(), {"--set", "sim.strength=0"});
    const auto r = pmr_run(args);
    REQUIRE(r.code == 0);
    CHECK(lines_of(r.out).size() == 2);
    CHECK(r.out.find(media::format_psnr(media::kPsnrIdentical)) != std::string::npos);
    const auto b = turbsim::load_bundle(dir / "sim" / "clip_000");
    const auto clean = b.clean.samples(), degraded = b.degraded.samples();
    CHECK(std::equal(clean.begin(), clean.end(), degraded.begin(), degraded.end()));
    CHECK(slurp(dir / "sim" / "clip_000" / "raw" / "clean.pmrf") ==
          slurp(dir / "sim" / "clip_000" / "raw" / "degraded.pmrf"));
    const json m = read_json(dir / "sim" / "manifest.json");
    CHECK(m["clips"][0]["psnr_degraded_clean"] == media::format_psnr(media::kPsnrIdentical));
}

TEST_CASE("simulate is byte-deterministic, also with parallel jobs") {
    TempDir dir("pmr-cli");
    REQUIRE(pmr_run(small_sim(dir / "a", 3)).code == 0);
    REQUIRE(pmr_run(small_sim(dir / "b", 3)).code == 0);
    auto par = small_sim(dir / "c", 3);
    par.insert(par.begin(), {"--jobs", "3"});
    REQUIRE(pmr_run(par).code == 0);
    const auto a = tree(dir / "a");
    CHECK(a.size() > 10);
    CHECK(a == tree(dir / "b"));
    CHECK(a == tree(dir / "c"));

    auto other = small_sim(dir / "d", 3);
    other[2] = "12";
    REQUIRE(pmr_run(other).code == 0);
    CHECK(a != tree(dir / "d"));
}

TEST_CASE("manifest echoes the simulation config and bundle params follow it") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim");
    args.insert(args.end(), {"--set", "sim.sigma_tilt=0.7", "--set", "sim.strength=0.5", "--set", "sim.corr_len=4"});
    REQUIRE(pmr_run(args).code == 0);
    const json m = read_json(dir / "sim" / "manifest.json");
    json expected = cli::default_config()["sim"];
    const json overrides = {{"clips", 2}, {"frames", 6}, {"height", 24}, {"width", 24},
                               {"sigma_tilt", 0.7}, {"strength", 0.5}, {"corr_len", 4}, {"seed", 11}};
    for (const auto& [k, v] : overrides.items()) expected[k] = v;
    CHECK(m["sim"] == expected);
    const json p = read_json(dir / "sim" / "clip_001" / "params.json");
    CHECK(p["params"]["sigma_tilt"].get<double>() == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(p["params"]["blur_sigma_max"].get<double>() == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(p["params"]["corr_len"].get<double>() == 4.0);
    CHECK(p["frames"] == 6);
    CHECK(m["clips"][1]["turbulence_seed"] == p["params"]["seed"]);
}

TEST_CASE("missing seeds and bad keys exit nonzero with context") {
    TempDir dir("pmr-cli");
    auto r = pmr_run({"simulate", "--output", (dir / "x").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("sim.seed") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "x"));

    r = pmr_run({"simulate", "--seed", "1", "--set", "sim.colour=2"});
    CHECK(r.code != 0);
    CHECK(r.err.find("sim.colour") != std::string::npos);

    r = pmr_run({"train", "--data", (dir / "none").string(), "--output", (dir / "t").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("train.seed") != std::string::npos);

    CHECK(pmr_run({}).code != 0);
    CHECK(pmr_run({"frobnicate"}).code != 0);
    CHECK(pmr_run({"--jobs", "0", "simulate"}).code != 0);
}

TEST_CASE("analyze and classify: static corpus, degenerate threshold, counting oracle") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "static", 3);
    args.insert(args.end(), {"--set", "sim.strength=0"});
    REQUIRE(pmr_run(args).code == 0);
    REQUIRE(pmr_run({"analyze", "--input", (dir / "static").string(), "--output", (dir / "rep").string()}).code == 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(read_json(dir / "rep" / ("clip_00" + std::to_string(i) + ".json"))["dei"].get<double>() == 0.0);
    }
    for (const char* t : {"100", "1e-9", "5"}) {
        REQUIRE(pmr_run({"classify", "--reports", (dir / "rep").string(), "--threshold", t, "--output",
                         (dir / "cls").string()}).code == 0);
        CHECK(lines_of(slurp(dir / "cls" / "high.txt")).empty());
        CHECK(lines_of(slurp(dir / "cls" / "normal.txt")).size() == 3);
    }
    REQUIRE(pmr_run({"classify", "--reports", (dir / "rep").string(), "--threshold", "-1", "--output",
                     (dir / "cls").string()}).code == 0);
    CHECK(lines_of(slurp(dir / "cls" / "high.txt")).size() == 3);
    CHECK(lines_of(slurp(dir / "cls" / "normal.txt")).empty());

    // Turbulent, moving clips with mixed DEI; split at the median and count by hand.
    auto moving = small_sim(dir / "moving", 5);
    moving.insert(moving.end(), {"--set", "sim.motion=translate"});
    REQUIRE(pmr_run(moving).code == 0);
    REQUIRE(pmr_run({"--jobs", "2", "analyze", "--input", (dir / "moving").string(), "--output",
                     (dir / "rep2").string()}).code == 0);
    std::map<std::string, double> dei;
    for (const auto& e : fs::directory_iterator(dir / "rep2")) {
        const json j = read_json(e.path());
        dei[j["clip"].get<std::string>()] = j["dei"].get<double>();
    }
    REQUIRE(dei.size() == 5);
    std::vector<double> sorted;
    for (const auto& [_, v] : dei) sorted.push_back(v);
    std::sort(sorted.begin(), sorted.end());
    const double threshold = sorted[2];
    std::ostringstream t;
    t.precision(17);
    t << threshold;
    REQUIRE(pmr_run({"classify", "--reports", (dir / "rep2").string(), "--threshold", t.str(), "--output",
                     (dir / "cls2").string()}).code == 0);
    std::vector<std::string> high, normal;
    for (const auto& [name, v] : dei) (v >= threshold ? high : normal).push_back(name);
    CHECK(lines_of(slurp(dir / "cls2" / "high.txt")) == high);
    CHECK(lines_of(slurp(dir / "cls2" / "normal.txt")) == normal);
}

TEST_CASE("missing clip directories raise IoError") {
    TempDir dir("pmr-cli");
    auto r = pmr_run({"analyze", "--input", (dir / "nothing").string(), "--output", (dir / "o").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("IoError") != std::string::npos);
    fs::create_directories(dir / "empty");
    r = pmr_run({"restore", "--input", (dir / "empty").string(), "--output", (dir / "o").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("IoError") != std::string::npos);
}

TEST_CASE("data root falls back to PMR_DATA_DIR") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim", 1);
    args.insert(args.end(), {"--set", "sim.strength=0"});
    REQUIRE(pmr_run(args).code == 0);
    ::setenv("PMR_DATA_DIR", (dir / "sim").string().c_str(), 1);
    const auto r = pmr_run({"analyze", "--output", (dir / "rep").string()});
    ::unsetenv("PMR_DATA_DIR");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "rep" / "clip_000.json"));
}

TEST_CASE("restore with identity checkpoints and all-dynamic masks returns the input") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim", 2);
    args.insert(args.end(), {"--set", "sim.sigma_tilt=1.5"});
    REQUIRE(pmr_run(args).code == 0);
    detilt::DetConfig dc;
    dc.base_channels = 4;
    deblur::DebConfig bc;
    bc.base_channels = 4;
    detilt::DetNetwork(dc, 1).save(dir / "det.pmrc");
    deblur::DebNetwork(bc, 1).save(dir / "deb.pmrc");
    for (const char* order : {"DT>DM>DB", "DM>DT>DB", "DT>DB>DM"}) {
        const auto r = pmr_run({"--jobs", "2", "restore", "--input", (dir / "sim").string(), "--det",
                                (dir / "det.pmrc").string(), "--deb", (dir / "deb.pmrc").string(), "--order", order,
                                "--force-dynamic-mask", "--output", (dir / "out").string()});
        REQUIRE(r.code == 0);
        for (const char* clip : {"clip_000", "clip_001"}) {
            const auto in = media::load_raw_clip(dir / "sim" / clip / "raw" / "degraded.pmrf");
            const auto out = media::load_raw_clip(dir / "out" / clip / "restored.pmrf");
            const auto a = in.samples(), b = out.samples();
            CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
            CHECK(tree(dir / "sim" / clip / "degraded") == tree(dir / "out" / clip / "frames"));
            CHECK(fs::exists(dir / "out" / clip / "mask.png"));
        }
    }
    const auto r = pmr_run({"restore", "--input", (dir / "sim").string(), "--order", "DB>DT>DM", "--output",
                            (dir / "bad").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("UnsupportedOrder") != std::string::npos);
}

TEST_CASE("metrics on identical clips reports the sentinel and SSIM 1") {
    TempDir dir("pmr-cli");
    REQUIRE(pmr_run(small_sim(dir / "sim", 1)).code == 0);
    const auto clean = (dir / "sim" / "clip_000" / "clean").string();
    REQUIRE(pmr_run({"metrics", "--reference", clean, "--test", clean, "--output", (dir / "m").string()}).code == 0);
    const json m = read_json(dir / "m" / "metrics.json");
    CHECK(m["psnr"] == media::format_psnr(media::kPsnrIdentical));
    CHECK(m["ssim"].get<double>() == 1.0);

    REQUIRE(pmr_run({"metrics", "--reference", clean, "--test", (dir / "sim" / "clip_000" / "degraded").string(),
                     "--set", "metrics.border=4", "--output", (dir / "m2").string()}).code == 0);
    const json m2 = read_json(dir / "m2" / "metrics.json");
    const auto b = turbsim::load_bundle(dir / "sim" / "clip_000");
    const auto q = media::quality(media::load_clip(dir / "sim" / "clip_000" / "degraded").crop_border(4),
                                  media::load_clip(dir / "sim" / "clip_000" / "clean").crop_border(4));
    CHECK(m2["psnr"].get<double>() == doctest::Approx(q.psnr_db).epsilon(1e-12));
    CHECK(m2["ssim"].get<double>() < 1.0);
}

TEST_CASE("train, restore and ablate artifacts: row counts and byte determinism") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim", 3);
    for (auto& a : args) {
        if (a == "sim.height=24" || a == "sim.width=24") a.replace(a.find("24"), 2, "32");
        if (a == "sim.frames=6") a = "sim.frames=4";
    }
    REQUIRE(pmr_run(args).code == 0);
    const std::vector<std::string> net = {"--set", "train.det.base_channels=4", "--set", "train.deb.base_channels=4",
                                          "--set", "train.deb.heads=[1,1,2]"};
    auto train = [&](const fs::path& out, const std::string& jobs) {
        std::vector<std::string> a = {"--jobs", jobs, "--seed", "4", "train", "--data", (dir / "sim").string(),
                                      "--output", out.string(), "--set", "train.stage1_epochs=2", "--set",
                                      "train.joint_epochs=2", "--set", "train.holdout=1", "--set", "train.crop=16",
                                      "--set", "train.lr_init=1e-3"};
        a.insert(a.end(), net.begin(), net.end());
        return pmr_run(a);
    };
    const auto t1 = train(dir / "t1", "1");
    REQUIRE(t1.code == 0);
    REQUIRE(train(dir / "t2", "2").code == 0);
    CHECK(tree(dir / "t1") == tree(dir / "t2"));
    const auto log = lines_of(slurp(dir / "t1" / "train_log.jsonl"));
    REQUIRE(log.size() == 4);
    for (const auto& l : log) {
        const json j = json::parse(l);
        for (const char* k : {"phase", "epoch", "lr", "loss", "val_psnr"}) CHECK(j.contains(k));
    }
    CHECK(pipeline::TrainSchedule::from_json(read_json(dir / "t1" / "schedule.json")).seed == 4);

    auto ablate = [&](const fs::path& out, const std::string& jobs) {
        return pmr_run({"--jobs", jobs, "ablate", "--data", (dir / "sim").string(), "--det",
                        (dir / "t1" / "det.pmrc").string(), "--deb", (dir / "t1" / "deb.pmrc").string(), "--output",
                        out.string(), "--set", "ablate.save_outputs=true"});
    };
    const auto a1 = ablate(dir / "a1", "1");
    REQUIRE(a1.code == 0);
    REQUIRE(ablate(dir / "a2", "3").code == 0);
    CHECK(tree(dir / "a1") == tree(dir / "a2"));

    const json stages = read_json(dir / "a1" / "stages.json");
    const json orders = read_json(dir / "a1" / "orders.json");
    REQUIRE(stages["rows"].size() == 4);
    REQUIRE(orders["rows"].size() == 3);
    std::vector<std::string> labels;
    for (const auto& r : stages["rows"]) labels.push_back(r["label"]);
    CHECK(labels == std::vector<std::string>{"a", "b", "c", "d"});
    CHECK(lines_of(slurp(dir / "a1" / "stages.txt")).size() == 1 + 4 + 1);
    CHECK(lines_of(slurp(dir / "a1" / "orders.txt")).size() == 1 + 3 + 1);
    CHECK(slurp(dir / "a1" / "stages.txt").find("rel.time") == std::string::npos);

    // Saved outputs re-evaluate to the table.
    const auto bundle = turbsim::load_bundle(dir / "sim" / "clip_002");
    const auto out = media::load_raw_clip(dir / "a1" / "outputs" / "orders" / "0_clip_002.pmrf");
    CHECK(std::abs(pipeline::evaluate(out, bundle.clean).psnr_db - orders["rows"][0]["clip_psnr"][2].get<double>()) <
          1e-6);

    const auto cx = pipeline::ComplexityReport::from_json(read_json(dir / "a1" / "complexity.json"));
    CHECK(cx.total_params == cx.det_params + cx.deb_params);
    CHECK(cx.mse_params == 0);

    REQUIRE(pmr_run({"--jobs", "2", "restore", "--input", (dir / "sim").string(), "--det",
                     (dir / "t1" / "det.pmrc").string(), "--deb", (dir / "t1" / "deb.pmrc").string(), "--output",
                     (dir / "r1").string()}).code == 0);
    REQUIRE(pmr_run({"restore", "--input", (dir / "sim").string(), "--det", (dir / "t1" / "det.pmrc").string(),
                     "--deb", (dir / "t1" / "deb.pmrc").string(), "--output", (dir / "r2").string()}).code == 0);
    CHECK(tree(dir / "r1") == tree(dir / "r2"));
}

TEST_CASE("enhance writes frames, mask and weights deterministically") {
    TempDir dir("pmr-cli");
    auto args = small_sim(dir / "sim", 2);
    args.insert(args.end(), {"--set", "sim.motion=translate"});
    REQUIRE(pmr_run(args).code == 0);
    REQUIRE(pmr_run({"enhance", "--input", (dir / "sim").string(), "--window", "3", "--output",
                     (dir / "e1").string()}).code == 0);
    REQUIRE(pmr_run({"--jobs", "2", "enhance", "--input", (dir / "sim").string(), "--window", "3", "--output",
                     (dir / "e2").string()}).code == 0);
    CHECK(tree(dir / "e1") == tree(dir / "e2"));
    const json j = read_json(dir / "e1" / "clip_000" / "enhance.json");
    double sum = 0.0;
    for (const auto& w : j["weights"]) sum += w.get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("defaults prints a parseable config") {
    const auto r = pmr_run({"defaults"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out) == cli::default_config());
}
