#include "pmr/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "pmr/dei.hpp"
#include "pmr/errors.hpp"
#include "pmr/pipeline.hpp"
#include "pmr/turbsim.hpp"

namespace pmr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using media::FrameClip;

json default_config() {
    return json::parse(R"({
      "output": "out",
      "jobs": 1,
      "sim": {
        "clips": 4, "frames": 8, "height": 64, "width": 64, "channels": 1,
        "motion": "none", "velocity_x": 2.0, "velocity_y": 1.0,
        "strength": 1.0, "sigma_tilt": 1.0, "corr_len": 6.0,
        "blur_sigma_min": 0.5, "blur_sigma_max": 1.5, "blur_corr_len": 16.0,
        "seed": null
      },
      "dei": {
        "input": "", "reports": "",
        "gamma": 1.0, "window_n": 5, "backend": "classic", "dpr_mode": "fraction",
        "threshold": 100.0,
        "optics": {"pfov": 1.0, "aperture_d": 1.0, "distance_l": 1.0, "turb_const_p": 0.01, "grad_exp_n": 1.0}
      },
      "train": {
        "data": "", "holdout": 0,
        "stage1_epochs": 50, "joint_epochs": 200, "batch": 1, "crop": 0,
        "lr_init": 2e-4, "lr_final": 1e-6, "seed": null,
        "det": {"base_channels": 8, "part_ratio": 0.25},
        "deb": {"base_channels": 8, "heads": [1, 2, 4]}
      },
      "restore": {
        "input": "", "det": "", "deb": "", "order": "DT>DM>DB",
        "force_dynamic_mask": false, "window": 5, "cleanup": false, "save_mask": true
      },
      "ablate": {
        "data": "", "det": "", "deb": "", "oracle_tilts": false, "save_outputs": false,
        "window": 5, "cleanup": false
      },
      "metrics": {"reference": "", "test": "", "border": 0}
    })");
}

namespace {

// Keys holding filesystem paths; relative values resolve against the config file.
const std::vector<std::string> kPathKeys = {
    "output",       "dei.input",   "dei.reports", "train.data",   "restore.input",     "restore.det",
    "restore.deb",  "ablate.data", "ablate.det",  "ablate.deb",   "metrics.reference", "metrics.test"};

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

bool compatible(const json& def, const json& v) {
    switch (def.type()) {
        case json::value_t::null: return v.is_null() || v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
        case json::value_t::boolean: return v.is_boolean();
        case json::value_t::string: return v.is_string();
        case json::value_t::number_float: return v.is_number();
        case json::value_t::number_integer:
        case json::value_t::number_unsigned: return v.is_number_integer();
        case json::value_t::array: return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
        default: return false;
    }
}

void overlay(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) fail(ErrorKind::ConfigError, "'" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = join(prefix, it.key());
        if (!base.contains(it.key())) fail(ErrorKind::ConfigError, "unknown key '" + path + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            overlay(slot, it.value(), path);
        } else if (!compatible(slot, it.value())) {
            fail(ErrorKind::ConfigError, "key '" + path + "' has the wrong type");
        } else {
            slot = it.value();
        }
    }
}

json* find_key(json& config, const std::string& dotted) {
    json* node = &config;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) return nullptr;
        node = &(*node)[part];
    }
    return node;
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
    out << text;
    if (!out) fail(ErrorKind::IoError, "write failed for " + file.string());
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::IoError, "cannot read " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::IoError, file.string() + ": " + e.what());
    }
}

json psnr_value(double v) {
    if (std::isinf(v)) return media::format_psnr(v);
    return v;
}

std::string fmt(double v, int precision = 3) {
    if (std::isinf(v)) return media::format_psnr(v);
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

// --- clip discovery ---------------------------------------------------------------

struct ClipSource {
    std::string name;
    fs::path path;
    bool bundle = false;
};

bool has_png(const fs::path& dir) {
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") return true;
    }
    return false;
}

std::vector<ClipSource> discover(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) fail(ErrorKind::IoError, "clip directory not found: " + root.string());
    if (fs::exists(root / "params.json")) return {{root.filename().string(), root, true}};
    if (has_png(root)) return {{root.filename().string(), root, false}};
    std::vector<ClipSource> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        if (fs::exists(e.path() / "params.json")) {
            out.push_back({e.path().filename().string(), e.path(), true});
        } else if (has_png(e.path())) {
            out.push_back({e.path().filename().string(), e.path(), false});
        }
    }
    std::sort(out.begin(), out.end(), [](const ClipSource& a, const ClipSource& b) { return a.name < b.name; });
    if (out.empty()) fail(ErrorKind::IoError, "no clips under " + root.string());
    return out;
}

// Degraded input of a bundle (lossless copy when present) or a frame directory.
FrameClip load_input(const ClipSource& s) {
    if (!s.bundle) return media::load_clip(s.path);
    if (fs::exists(s.path / "raw" / "degraded.pmrf")) return media::load_raw_clip(s.path / "raw" / "degraded.pmrf");
    return media::load_clip(s.path / "degraded");
}

FrameClip load_any(const fs::path& p) {
    std::error_code ec;
    if (fs::is_regular_file(p, ec)) return media::load_raw_clip(p);
    const auto sources = discover(p);
    if (sources.size() != 1) fail(ErrorKind::IoError, p.string() + " holds more than one clip");
    return load_input(sources.front());
}

std::vector<turbsim::DegradationBundle> load_bundles(const fs::path& root, std::vector<std::string>* names = nullptr) {
    std::vector<turbsim::DegradationBundle> out;
    for (const auto& s : discover(root)) {
        if (!s.bundle) fail(ErrorKind::IoError, s.path.string() + " is not a simulator bundle");
        out.push_back(turbsim::load_bundle(s.path));
        if (names) names->push_back(s.name);
    }
    return out;
}

// --- context -----------------------------------------------------------------------

struct Context {
    json config;
    std::ostream& out;

    const json& at(const std::string& dotted) const {
        const json* node = &config;
        std::stringstream ss(dotted);
        std::string part;
        while (std::getline(ss, part, '.')) node = &node->at(part);
        return *node;
    }
    template <class T>
    T get(const std::string& dotted) const {
        return at(dotted).get<T>();
    }
    fs::path output() const { return fs::path(get<std::string>("output")); }
    int jobs() const { return std::max(1, get<int>("jobs")); }

    // Empty data keys fall back to PMR_DATA_DIR.
    fs::path data_path(const std::string& key) const {
        std::string v = get<std::string>(key);
        if (v.empty()) {
            if (const char* env = std::getenv("PMR_DATA_DIR")) v = env;
        }
        if (v.empty()) fail(ErrorKind::ConfigError, "key '" + key + "' is required (or set PMR_DATA_DIR)");
        return fs::path(v);
    }

    std::uint64_t seed(const std::string& key) const {
        const json& v = at(key);
        if (v.is_null()) fail(ErrorKind::ConfigError, "key '" + key + "' is required (or pass --seed)");
        return v.get<std::uint64_t>();
    }
};

dei::OpticsConfig optics(const Context& c) {
    dei::OpticsConfig o;
    o.pfov = c.get<double>("dei.optics.pfov");
    o.aperture_d = c.get<double>("dei.optics.aperture_d");
    o.distance_l = c.get<double>("dei.optics.distance_l");
    o.turb_const_p = c.get<double>("dei.optics.turb_const_p");
    o.grad_exp_n = c.get<double>("dei.optics.grad_exp_n");
    o.validate();
    return o;
}

detilt::DetConfig det_config(const Context& c, int channels) {
    detilt::DetConfig d;
    d.base_channels = c.get<int>("train.det.base_channels");
    d.part_ratio = c.get<double>("train.det.part_ratio");
    d.channels = channels;
    d.validate();
    return d;
}

deblur::DebConfig deb_config(const Context& c, int channels) {
    deblur::DebConfig d;
    d.base_channels = c.get<int>("train.deb.base_channels");
    const auto heads = c.get<std::vector<int>>("train.deb.heads");
    if (heads.size() != 3) fail(ErrorKind::ConfigError, "key 'train.deb.heads' needs three entries");
    std::copy(heads.begin(), heads.end(), d.heads.begin());
    d.channels = channels;
    d.validate();
    return d;
}

// Checkpoints when given, else identity-initialized networks sized from the config.
pipeline::Models load_models(const Context& c, const std::string& ns, int channels) {
    const std::string det = c.get<std::string>(ns + ".det"), deb = c.get<std::string>(ns + ".deb");
    pipeline::Models m{det.empty() ? detilt::DetNetwork(det_config(c, channels), 0) : detilt::DetNetwork::load(det),
                       deb.empty() ? deblur::DebNetwork(deb_config(c, channels), 0) : deblur::DebNetwork::load(deb)};
    if (m.det.config().channels != channels || m.deb.config().channels != channels) {
        fail(ErrorKind::ShapeMismatch, "checkpoint channel count differs from the input clips");
    }
    return m;
}

void print_lines(std::ostream& out, const std::vector<std::string>& lines) {
    for (const auto& l : lines) out << l << "\n";
}

// --- commands ------------------------------------------------------------------------

void cmd_simulate(const Context& c) {
    const std::uint64_t seed = c.seed("sim.seed");
    const int clips = c.get<int>("sim.clips");
    if (clips < 1) fail(ErrorKind::ConfigError, "key 'sim.clips' must be >= 1");
    const std::string motion = c.get<std::string>("sim.motion");
    if (motion != "none" && motion != "translate") fail(ErrorKind::ConfigError, "key 'sim.motion' must be none or translate");
    const double strength = c.get<double>("sim.strength");
    if (strength < 0) fail(ErrorKind::ConfigError, "key 'sim.strength' must be >= 0");

    turbsim::TurbulenceParams base;
    base.sigma_tilt = strength * c.get<double>("sim.sigma_tilt");
    base.corr_len = c.get<double>("sim.corr_len");
    base.blur_sigma_min = strength * c.get<double>("sim.blur_sigma_min");
    base.blur_sigma_max = strength * c.get<double>("sim.blur_sigma_max");
    base.blur_corr_len = c.get<double>("sim.blur_corr_len");
    base.validate();

    const fs::path out = c.output();
    std::vector<json> entries(clips);
    std::vector<std::string> lines(clips);
    pipeline::parallel_for(static_cast<std::size_t>(clips), c.jobs(), [&](std::size_t i) {
        char name_buf[32];
        std::snprintf(name_buf, sizeof name_buf, "clip_%03zu", i);
        const std::string name = name_buf;
        turbsim::SceneOptions scene;
        scene.frames = c.get<int>("sim.frames");
        scene.height = c.get<int>("sim.height");
        scene.width = c.get<int>("sim.width");
        scene.channels = c.get<int>("sim.channels");
        scene.motion = motion == "translate" ? turbsim::SceneMotion::Translate : turbsim::SceneMotion::None;
        scene.velocity_x = c.get<double>("sim.velocity_x");
        scene.velocity_y = c.get<double>("sim.velocity_y");
        scene.seed = turbsim::substream(seed, "scene/" + std::to_string(i));
        turbsim::TurbulenceParams p = base;
        p.seed = turbsim::substream(seed, "turbulence/" + std::to_string(i));
        const auto bundle = turbsim::degrade(turbsim::synthetic_scene(scene), p);
        turbsim::save_bundle(bundle, out / name);
        const double psnr = media::psnr(bundle.degraded, bundle.clean);
        entries[i] = {{"name", name}, {"scene_seed", scene.seed}, {"turbulence_seed", p.seed},
                      {"psnr_degraded_clean", psnr_value(psnr)}};
        lines[i] = name + "  psnr(degraded, clean) = " + fmt(psnr) + " dB";
    });
    json sim = c.at("sim");
    sim["seed"] = seed;
    write_json(out / "manifest.json", {{"sim", sim}, {"clips", entries}});
    print_lines(c.out, lines);
}

dei::DeiOptions dei_options(const Context& c) {
    dei::DeiOptions o;
    o.optics = optics(c);
    o.gamma = c.get<double>("dei.gamma");
    o.window_n = c.get<int>("dei.window_n");
    o.backend = c.get<std::string>("dei.backend");
    o.dpr_mode = dei::dpr_mode_from_string(c.get<std::string>("dei.dpr_mode"));
    return o;
}

void cmd_analyze(const Context& c) {
    const auto sources = discover(c.data_path("dei.input"));
    const dei::DeiOptions options = dei_options(c);
    std::vector<std::string> lines(sources.size());
    pipeline::parallel_for(sources.size(), c.jobs(), [&](std::size_t i) {
        dei::DeiReport r = dei::compute_dei(load_input(sources[i]), options);
        r.clip = sources[i].name;
        const json j = {{"clip", r.clip}, {"cn2", r.cn2}, {"dpr", r.dpr}, {"coeff_c", r.coeff_c},
                        {"gamma", r.gamma}, {"dei", r.dei}, {"dei_normalized", r.dei_normalized},
                        {"window_n", r.window_n}, {"backend", r.backend}};
        write_json(c.output() / (r.clip + ".json"), j);
        lines[i] = r.clip + "  cn2 = " + fmt(r.cn2, 4) + "  dpr = " + fmt(r.dpr, 4) + "  dei = " + fmt(r.dei, 3);
    });
    print_lines(c.out, lines);
}

void cmd_classify(const Context& c) {
    std::string dir = c.get<std::string>("dei.reports");
    const fs::path reports = dir.empty() ? c.output() : fs::path(dir);
    std::error_code ec;
    if (!fs::is_directory(reports, ec)) fail(ErrorKind::IoError, "report directory not found: " + reports.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(reports)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<dei::DeiReport> all;
    for (const auto& f : files) {
        const json j = read_json(f);
        if (!j.is_object() || !j.contains("dei") || !j.contains("clip")) continue;
        dei::DeiReport r;
        r.clip = j.at("clip").get<std::string>();
        r.dei = j.at("dei").get<double>();
        all.push_back(std::move(r));
    }
    if (all.empty()) fail(ErrorKind::IoError, "no DEI reports in " + reports.string());
    const auto part = dei::classify_clips(all, c.get<double>("dei.threshold"));
    auto names = [](const std::vector<dei::DeiReport>& v) {
        std::string s;
        for (const auto& r : v) s += r.clip + "\n";
        return s;
    };
    write_text(c.output() / "high.txt", names(part.high));
    write_text(c.output() / "normal.txt", names(part.normal));
    c.out << "high: " << part.high.size() << "  normal: " << part.normal.size() << "\n";
}

void cmd_train(const Context& c) {
    pipeline::TrainSchedule s;
    s.stage1_epochs = c.get<int>("train.stage1_epochs");
    s.joint_epochs = c.get<int>("train.joint_epochs");
    s.batch = c.get<int>("train.batch");
    s.crop = c.get<int>("train.crop");
    s.lr_init = c.get<double>("train.lr_init");
    s.lr_final = c.get<double>("train.lr_final");
    s.seed = c.seed("train.seed");
    s.validate();

    auto data = load_bundles(c.data_path("train.data"));
    const int holdout = c.get<int>("train.holdout");
    if (holdout < 0 || holdout >= static_cast<int>(data.size())) {
        fail(ErrorKind::ConfigError, "key 'train.holdout' must leave at least one training clip");
    }
    pipeline::TrainOptions o;
    o.validation.assign(data.end() - holdout, data.end());
    data.erase(data.end() - holdout, data.end());
    const int channels = data.front().clean.channels();
    o.det = det_config(c, channels);
    o.deb = deb_config(c, channels);
    o.on_epoch = [&](const pipeline::EpochRecord& r) {
        c.out << "phase " << r.phase << " epoch " << r.epoch << "  lr = " << r.lr << "  loss = " << fmt(r.loss, 6);
        if (r.val_psnr) c.out << "  val_psnr = " << fmt(*r.val_psnr);
        c.out << "\n";
    };
    const auto result = pipeline::train_stagewise(data, s, o);
    const fs::path out = c.output();
    fs::create_directories(out);
    result.models.det.save(out / "det.pmrc");
    result.models.deb.save(out / "deb.pmrc");
    write_text(out / "train_log.jsonl", pipeline::format_log(result.log));
    write_json(out / "schedule.json", s.to_json());
}

motion::EnhanceOptions enhance_options(const Context& c, const std::string& ns) {
    motion::EnhanceOptions o;
    o.window = c.get<int>(ns + ".window");
    o.cleanup = c.get<bool>(ns + ".cleanup");
    o.optics = optics(c);
    o.backend = c.get<std::string>("dei.backend");
    if (ns == "restore") o.force_dynamic = c.get<bool>("restore.force_dynamic_mask");
    return o;
}

void cmd_restore(const Context& c) {
    const auto sources = discover(c.data_path("restore.input"));
    const pipeline::StageOrder order = pipeline::StageOrder::parse(c.get<std::string>("restore.order"));
    const bool save_mask = c.get<bool>("restore.save_mask");
    std::vector<FrameClip> inputs;
    for (const auto& s : sources) inputs.push_back(load_input(s));
    const pipeline::Models models = load_models(c, "restore", inputs.front().channels());
    std::vector<std::string> lines(sources.size());
    pipeline::parallel_for(sources.size(), c.jobs(), [&](std::size_t i) {
        pipeline::RestoreOptions ro;
        ro.enhance = enhance_options(c, "restore");
        std::optional<dei::DynamicMask> mask;
        ro.on_enhance = [&](const motion::EnhanceResult& r) { mask = r.mask; };
        const FrameClip out = pipeline::restore_with_order(inputs[i], models, order, ro);
        const fs::path dir = c.output() / sources[i].name;
        media::save_clip(out, dir / "frames");
        media::save_raw_clip(out, dir / "restored.pmrf");
        if (save_mask && mask) motion::save_mask_png(*mask, dir / "mask.png");
        lines[i] = sources[i].name + "  restored " + std::to_string(out.frames()) + " frames (" + order.label() + ")";
    });
    print_lines(c.out, lines);
}

void cmd_enhance(const Context& c) {
    const auto sources = discover(c.data_path("restore.input"));
    std::vector<std::string> lines(sources.size());
    pipeline::parallel_for(sources.size(), c.jobs(), [&](std::size_t i) {
        const auto r = motion::enhance_clip(load_input(sources[i]), enhance_options(c, "restore"));
        const fs::path dir = c.output() / sources[i].name;
        media::save_clip(r.clip, dir / "frames");
        media::save_raw_clip(r.clip, dir / "enhanced.pmrf");
        motion::save_mask_png(r.mask, dir / "mask.png");
        write_json(dir / "enhance.json", {{"cn2", r.cn2}, {"weights", r.weights.normalized},
                                          {"ofd_scores", r.ofd.per_flow_scores}, {"ofd_best", r.ofd.best_index},
                                          {"dynamic_pixels", r.mask.count()}});
        lines[i] = sources[i].name + "  dynamic pixels = " + std::to_string(r.mask.count()) + "  cn2 = " + fmt(r.cn2, 4);
    });
    print_lines(c.out, lines);
}

void cmd_ablate(const Context& c) {
    std::vector<std::string> names;
    const auto data = load_bundles(c.data_path("ablate.data"), &names);
    const pipeline::Models models = load_models(c, "ablate", data.front().clean.channels());
    pipeline::EvalOptions eo;
    eo.enhance = enhance_options(c, "ablate");
    eo.oracle_tilts = c.get<bool>("ablate.oracle_tilts");
    eo.jobs = c.jobs();
    const fs::path out = c.output();
    auto saver = [&](const std::string& table) {
        return [&, table](std::size_t row, std::size_t clip, const FrameClip& clip_out) {
            media::save_raw_clip(clip_out, out / "outputs" / table / (std::to_string(row) + "_" + names[clip] + ".pmrf"));
        };
    };
    if (c.get<bool>("ablate.save_outputs")) {
        fs::create_directories(out / "outputs" / "stages");
        fs::create_directories(out / "outputs" / "orders");
        eo.on_output = saver("stages");
    }
    const auto stages = pipeline::ablate_stages(data, models, eo);
    if (eo.on_output) eo.on_output = saver("orders");
    const auto orders = pipeline::compare_orders(data, models, eo);
    const auto& first = data.front().clean;
    const auto complexity = pipeline::complexity_report(models.det.config(), models.deb.config(), first.frames(),
                                                        first.height(), first.width());
    json sj = stages.to_json(), oj = orders.to_json();
    sj["clips"] = names;
    oj["clips"] = names;
    write_json(out / "stages.json", sj);
    write_json(out / "orders.json", oj);
    // Wall-clock ratios vary run to run, so the saved tables leave them out.
    write_text(out / "stages.txt", stages.render(false));
    write_text(out / "orders.txt", orders.render(false));
    write_json(out / "complexity.json", complexity.to_json());
    c.out << "stage ablation\n" << stages.render() << "\nstage order\n" << orders.render();
    c.out << "params: det " << complexity.det_params << ", deb " << complexity.deb_params << "\n";
}

void cmd_metrics(const Context& c) {
    const std::string ref = c.get<std::string>("metrics.reference"), test = c.get<std::string>("metrics.test");
    if (ref.empty() || test.empty()) fail(ErrorKind::ConfigError, "keys 'metrics.reference' and 'metrics.test' are required");
    FrameClip a = load_any(ref), b = load_any(test);
    const int border = c.get<int>("metrics.border");
    if (border > 0) {
        a = a.crop_border(border);
        b = b.crop_border(border);
    }
    const auto q = media::quality(b, a);
    write_json(c.output() / "metrics.json", {{"psnr", psnr_value(q.psnr_db)}, {"ssim", q.ssim}, {"border", border},
                                             {"frames", a.frames()}});
    c.out << "psnr = " << fmt(q.psnr_db) << " dB  ssim = " << fmt(q.ssim, 4) << "\n";
}

void resolve_paths(json& config, const fs::path& base) {
    for (const auto& key : kPathKeys) {
        json* v = find_key(config, key);
        if (!v || !v->is_string()) continue;
        const std::string s = v->get<std::string>();
        if (!s.empty() && fs::path(s).is_relative()) *v = (base / s).lexically_normal().string();
    }
}

}  // namespace

json merge_config(const json& user) {
    json config = default_config();
    overlay(config, user, "");
    return config;
}

void set_key(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::ConfigError, "--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    overlay(config, patch, "");
}

json load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::ConfigError, "cannot open config " + file.string());
    json user;
    try {
        user = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::ConfigError, file.string() + ": " + e.what());
    }
    json config = merge_config(user);
    resolve_paths(config, fs::absolute(file).parent_path());
    return config;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-stage turbulent video restoration toolkit", "pmr"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_file, output;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::vector<std::string> sets;
    app.add_option("--config", config_file, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Seed for sim.seed and train.seed");
    app.add_option("--jobs", jobs, "Parallel clip workers")->check(CLI::PositiveNumber);
    app.add_option("--output", output, "Output directory");
    app.add_option("--set", sets, "Override a config key: key.path=value");

    std::string input, det, deb, order, reference, test;
    std::optional<double> threshold;
    std::optional<int> window;
    bool force_dynamic = false, cleanup = false;

    auto* simulate = app.add_subcommand("simulate", "Write synthetic degradation bundles");
    auto* analyze = app.add_subcommand("analyze", "Write one DEI report per clip");
    analyze->add_option("--input", input, "Clip or clip directory");
    auto* classify = app.add_subcommand("classify", "Split DEI reports into high.txt / normal.txt");
    classify->add_option("--reports", input, "Directory of DEI reports");
    classify->add_option("--threshold", threshold, "DEI threshold");
    auto* train = app.add_subcommand("train", "Stage-wise training on simulator bundles");
    train->add_option("--data", input, "Bundle directory");
    auto* restore = app.add_subcommand("restore", "Run the restoration chain");
    restore->add_option("--input", input, "Clip or clip directory");
    restore->add_option("--det", det, "DET checkpoint");
    restore->add_option("--deb", deb, "DEB checkpoint");
    restore->add_option("--order", order, "Stage order, e.g. DT>DM>DB");
    restore->add_flag("--force-dynamic-mask", force_dynamic, "Treat every pixel as dynamic");
    restore->add_option("--window", window, "Temporal blend window");
    restore->add_flag("--cleanup", cleanup, "Open/close the dynamic mask");
    auto* enhance = app.add_subcommand("enhance", "Motion segmentation enhancement only");
    enhance->add_option("--input", input, "Clip or clip directory");
    enhance->add_option("--window", window, "Temporal blend window");
    enhance->add_flag("--cleanup", cleanup, "Open/close the dynamic mask");
    enhance->add_flag("--force-dynamic-mask", force_dynamic, "Treat every pixel as dynamic");
    auto* ablate = app.add_subcommand("ablate", "Stage ablation and stage-order tables");
    ablate->add_option("--data", input, "Bundle directory");
    ablate->add_option("--det", det, "DET checkpoint");
    ablate->add_option("--deb", deb, "DEB checkpoint");
    auto* metrics = app.add_subcommand("metrics", "PSNR / SSIM between two clips");
    metrics->add_option("--reference", reference, "Reference clip (frame directory or .pmrf)");
    metrics->add_option("--test", test, "Clip under test");
    auto* defaults = app.add_subcommand("defaults", "Print the default configuration");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (defaults->parsed()) {
            out << default_config().dump(2) << "\n";
            return 0;
        }
        json config = config_file.empty() ? default_config() : load_config(config_file);
        for (const auto& s : sets) set_key(config, s);
        if (seed) {
            config["sim"]["seed"] = *seed;
            config["train"]["seed"] = *seed;
        }
        if (jobs) config["jobs"] = *jobs;
        if (!output.empty()) config["output"] = output;
        auto put = [&](const std::string& key, const json& v) { *find_key(config, key) = v; };

        // Subcommand flags are shorthands for config keys.
        const bool restoring = restore->parsed() || enhance->parsed();
        const std::string input_key = analyze->parsed()    ? "dei.input"
                                      : classify->parsed() ? "dei.reports"
                                      : train->parsed()    ? "train.data"
                                      : ablate->parsed()   ? "ablate.data"
                                      : restoring          ? "restore.input"
                                                           : "";
        const std::string model_ns = ablate->parsed() ? "ablate" : "restore";
        if (!input.empty() && !input_key.empty()) put(input_key, input);
        if (!det.empty()) put(model_ns + ".det", det);
        if (!deb.empty()) put(model_ns + ".deb", deb);
        if (threshold) put("dei.threshold", *threshold);
        if (!order.empty()) put("restore.order", order);
        if (force_dynamic) put("restore.force_dynamic_mask", true);
        if (cleanup) put("restore.cleanup", true);
        if (window) put("restore.window", *window);
        if (!reference.empty()) put("metrics.reference", reference);
        if (!test.empty()) put("metrics.test", test);

        const Context ctx{config, out};
        if (simulate->parsed()) cmd_simulate(ctx);
        if (analyze->parsed()) cmd_analyze(ctx);
        if (classify->parsed()) cmd_classify(ctx);
        if (train->parsed()) cmd_train(ctx);
        if (restore->parsed()) cmd_restore(ctx);
        if (enhance->parsed()) cmd_enhance(ctx);
        if (ablate->parsed()) cmd_ablate(ctx);
        if (metrics->parsed()) cmd_metrics(ctx);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace pmr::cli
