#include "pmr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "pmr/errors.hpp"
#include "pmr/nn/convert.hpp"
#include "pmr/nn/ops.hpp"
#include "pmr/nn/optim.hpp"

namespace pmr::pipeline {

using media::FrameClip;
using nn::Var;
namespace ops = nn::ops;

std::string to_string(Stage s) {
    switch (s) {
        case Stage::DT: return "DT";
        case Stage::DM: return "DM";
        case Stage::DB: return "DB";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "DT") return Stage::DT;
    if (s == "DM") return Stage::DM;
    if (s == "DB") return Stage::DB;
    fail(ErrorKind::UnsupportedOrder, "unknown stage '" + s + "'");
}

std::string StageOrder::label() const {
    if (sequence.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < sequence.size(); ++i) out += (i ? ">" : "") + to_string(sequence[i]);
    return out;
}

namespace {

void check_unique(const StageOrder& order) {
    std::set<Stage> seen;
    for (Stage s : order.sequence) {
        if (!seen.insert(s).second) fail(ErrorKind::UnsupportedOrder, "stage repeated in " + order.label());
    }
}

}  // namespace

StageOrder StageOrder::parse(const std::string& text) {
    StageOrder order;
    std::string token;
    auto flush = [&] {
        if (!token.empty()) order.sequence.push_back(stage_from_string(token));
        token.clear();
    };
    for (char ch : text) {
        if (ch == '>' || ch == ',' || ch == '-' || ch == ' ') {
            flush();
        } else {
            token += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        }
    }
    flush();
    check_unique(order);
    return order;
}

StageOrder default_order() { return {{Stage::DT, Stage::DM, Stage::DB}}; }

const std::array<StageOrder, 3>& studied_orders() {
    static const std::array<StageOrder, 3> orders = {
        StageOrder{{Stage::DT, Stage::DM, Stage::DB}},
        StageOrder{{Stage::DM, Stage::DT, Stage::DB}},
        StageOrder{{Stage::DT, Stage::DB, Stage::DM}},
    };
    return orders;
}

FrameClip run_stages(const FrameClip& clip, const Models& models, const StageOrder& order,
                     const RestoreOptions& options) {
    check_unique(order);
    FrameClip x = clip;
    for (Stage s : order.sequence) {
        switch (s) {
            case Stage::DT:
                x = options.tilt_override ? detilt::detilt_apply(x, *options.tilt_override)
                                          : detilt::det_forward(x, models.det).second;
                break;
            case Stage::DM: {
                motion::EnhanceResult r = motion::enhance_clip(x, options.enhance);
                if (options.on_enhance) options.on_enhance(r);
                x = std::move(r.clip);
                break;
            }
            case Stage::DB: x = deblur::deb_forward(x, models.deb); break;
        }
    }
    return x;
}

FrameClip restore_with_order(const FrameClip& clip, const Models& models, const StageOrder& order,
                             const RestoreOptions& options) {
    const auto& known = studied_orders();
    if (std::find(known.begin(), known.end(), order) == known.end()) {
        fail(ErrorKind::UnsupportedOrder, "order " + order.label() + " is not one of the studied sequences");
    }
    return run_stages(clip, models, order, options);
}

FrameClip restore(const FrameClip& clip, const detilt::DetNetwork& det, const deblur::DebNetwork& deb,
                  const RestoreOptions& options) {
    return run_stages(clip, Models{det, deb}, default_order(), options);
}

double loss(const FrameClip& pred, const FrameClip& target, double eps) {
    if (!pred.same_shape(target)) fail(ErrorKind::ShapeMismatch, "loss operands differ in shape");
    double s = 0.0;
    const auto a = pred.samples(), b = target.samples();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += std::sqrt(d * d + eps * eps);
    }
    return s / static_cast<double>(a.size());
}

// --- schedule ----------------------------------------------------------------------

void TrainSchedule::validate() const {
    if (stage1_epochs < 0 || joint_epochs < 0 || stage1_epochs + joint_epochs < 1) {
        fail(ErrorKind::ConfigError, "train epochs must be >= 0 with at least one in total");
    }
    if (batch < 1) fail(ErrorKind::ConfigError, "train batch must be >= 1");
    if (crop < 0 || crop % 8 != 0) fail(ErrorKind::ConfigError, "train crop must be a multiple of 8");
    if (!(lr_final > 0.0) || !(lr_init > lr_final)) {
        fail(ErrorKind::ConfigError, "train learning rates need lr_init > lr_final > 0");
    }
}

nlohmann::json TrainSchedule::to_json() const {
    return {{"stage1_epochs", stage1_epochs}, {"joint_epochs", joint_epochs}, {"batch", batch},
            {"crop", crop}, {"lr_init", lr_init}, {"lr_final", lr_final}, {"seed", seed},
            {"lr_policy", "cosine"}, {"optimizer", "adam"}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) {
    TrainSchedule s;
    s.stage1_epochs = j.value("stage1_epochs", s.stage1_epochs);
    s.joint_epochs = j.value("joint_epochs", s.joint_epochs);
    s.batch = j.value("batch", s.batch);
    s.crop = j.value("crop", s.crop);
    s.lr_init = j.value("lr_init", s.lr_init);
    s.lr_final = j.value("lr_final", s.lr_final);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

nlohmann::json EpochRecord::to_json() const {
    nlohmann::json j = {{"phase", phase}, {"epoch", epoch}, {"lr", lr}, {"loss", loss}};
    if (val_psnr) {
        if (std::isinf(*val_psnr)) {
            j["val_psnr"] = media::format_psnr(*val_psnr);
        } else {
            j["val_psnr"] = *val_psnr;
        }
    } else {
        j["val_psnr"] = nullptr;
    }
    return j;
}

std::string format_log(const std::vector<EpochRecord>& log) {
    std::string out;
    for (const auto& r : log) out += r.to_json().dump() + "\n";
    return out;
}

// --- training ------------------------------------------------------------------------

namespace {

FrameClip crop_clip(const FrameClip& clip, int top, int left, int side) {
    std::vector<media::Image> frames;
    for (int t = 0; t < clip.frames(); ++t) frames.push_back(clip.frame(t).crop(top, left, side, side));
    return FrameClip::from_frames(frames, clip.meta());
}

struct Sample {
    FrameClip degraded, blur_only, clean;
};

class Sampler {
public:
    Sampler(const std::vector<turbsim::DegradationBundle>& data, int crop, std::uint64_t seed)
        : data_(data), crop_(crop), rng_(seed) {}

    std::vector<std::size_t> epoch_order() {
        std::vector<std::size_t> idx(data_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng_);
        return idx;
    }

    Sample draw(std::size_t i) {
        const auto& b = data_[i];
        const int h = b.clean.height(), w = b.clean.width();
        if (crop_ == 0 || (crop_ == h && crop_ == w)) return {b.degraded, b.blur_only, b.clean};
        const int top = std::uniform_int_distribution<int>(0, h - crop_)(rng_);
        const int left = std::uniform_int_distribution<int>(0, w - crop_)(rng_);
        return {crop_clip(b.degraded, top, left, crop_), crop_clip(b.blur_only, top, left, crop_),
                crop_clip(b.clean, top, left, crop_)};
    }

private:
    const std::vector<turbsim::DegradationBundle>& data_;
    int crop_;
    std::mt19937_64 rng_;
};

std::vector<unsigned char> mask_bits(const dei::DynamicMask& m) {
    std::vector<unsigned char> bits(m.size());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) bits[static_cast<std::size_t>(y) * m.width() + x] = m.at(y, x);
    return bits;
}

// DET → frozen MSE_OF → DEB as one graph.
Var joint_forward(const Models& models, const Var& input, const motion::EnhanceOptions& enhance) {
    const Var corrected = models.det.forward(input).corrected;
    const FrameClip snapshot = nn::to_clip(corrected.value());
    const motion::EnhanceResult frozen = motion::enhance_clip(snapshot, enhance);
    const Var blended = ops::temporal_blend(corrected, mask_bits(frozen.mask), frozen.weights.normalized);
    return models.deb.forward(blended);
}

nn::ParameterList concat(const nn::ParameterList& a, const nn::ParameterList& b) {
    nn::ParameterList out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

std::optional<double> validation_psnr(const Models& models, const TrainOptions& options) {
    if (options.validation.empty()) return std::nullopt;
    RestoreOptions ro;
    ro.enhance = options.enhance;
    double total = 0.0;
    for (const auto& b : options.validation) {
        total += evaluate(run_stages(b.degraded, models, default_order(), ro), b.clean).psnr_db;
    }
    return total / static_cast<double>(options.validation.size());
}

}  // namespace

TrainResult train_stagewise(const std::vector<turbsim::DegradationBundle>& dataset,
                            const TrainSchedule& schedule, const TrainOptions& options) {
    if (dataset.empty()) fail(ErrorKind::NoData, "training needs at least one bundle");
    schedule.validate();
    const FrameClip& first = dataset.front().clean;
    for (const auto& b : dataset) {
        if (!b.clean.same_shape(first) || !b.blur_only.same_shape(first) || !b.degraded.same_shape(first)) {
            fail(ErrorKind::ShapeMismatch, "training bundles must share one clip shape");
        }
    }
    if (schedule.crop > std::min(first.height(), first.width())) {
        fail(ErrorKind::ConfigError, "train crop exceeds the frame size");
    }

    detilt::DetConfig det_cfg = options.det;
    deblur::DebConfig deb_cfg = options.deb;
    det_cfg.channels = deb_cfg.channels = first.channels();
    TrainResult result{Models{detilt::DetNetwork(det_cfg, turbsim::substream(schedule.seed, "det")),
                              deblur::DebNetwork(deb_cfg, turbsim::substream(schedule.seed, "deb"))},
                       {}, {}};
    Models& models = result.models;
    Sampler sampler(dataset, schedule.crop, turbsim::substream(schedule.seed, "sampler"));

    const auto n = static_cast<long>(dataset.size());
    const long steps_per_epoch = (n + schedule.batch - 1) / schedule.batch;

    auto run_phase = [&](int phase, int epochs, nn::ParameterList params) {
        if (epochs == 0) return;
        nn::Adam opt(std::move(params));
        const long total = epochs * steps_per_epoch;
        long step = 0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const auto order = sampler.epoch_order();
            double epoch_loss = 0.0, lr = 0.0;
            for (long s = 0; s < steps_per_epoch; ++s, ++step) {
                const long begin = s * schedule.batch;
                const long end = std::min(n, begin + schedule.batch);
                for (long k = begin; k < end; ++k) {
                    const Sample sample = sampler.draw(order[static_cast<std::size_t>(k)]);
                    const Var input = nn::constant(nn::to_tensor(sample.degraded));
                    Var l;
                    if (phase == 1) {
                        l = ops::charbonnier(models.det.forward(input).corrected,
                                             nn::constant(nn::to_tensor(sample.blur_only)), kCharbonnierEps);
                    } else {
                        l = ops::charbonnier(joint_forward(models, input, options.enhance),
                                             nn::constant(nn::to_tensor(sample.clean)), kCharbonnierEps);
                    }
                    epoch_loss += l.value()[0];
                    nn::backward(ops::scale(l, 1.0 / static_cast<double>(end - begin)));
                }
                lr = nn::cosine_lr(schedule.lr_init, schedule.lr_final, step, total);
                result.step_lr.push_back(lr);
                opt.step(lr);
            }
            EpochRecord rec{phase, epoch, lr, epoch_loss / static_cast<double>(n), std::nullopt};
            rec.val_psnr = validation_psnr(models, options);
            result.log.push_back(rec);
            if (options.on_epoch) options.on_epoch(rec);
        }
    };

    run_phase(1, schedule.stage1_epochs, models.det.parameters());
    run_phase(2, schedule.joint_epochs, concat(models.det.parameters(), models.deb.parameters()));
    return result;
}

// --- evaluation --------------------------------------------------------------------------

media::QualityScore evaluate(const FrameClip& restored, const FrameClip& clean) {
    return media::quality(restored.crop_border(kEvalBorder), clean.crop_border(kEvalBorder));
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

namespace {

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct RowSpec {
    std::string label, description;
    StageOrder order;
};

AblationReport run_rows(const std::vector<turbsim::DegradationBundle>& dataset, const Models& models,
                        const std::vector<RowSpec>& specs, const EvalOptions& options) {
    if (dataset.empty()) fail(ErrorKind::NoData, "evaluation needs at least one bundle");
    const std::size_t clips = dataset.size();
    std::vector<std::optional<FrameClip>> outputs(specs.size() * clips);
    std::vector<media::QualityScore> scores(specs.size() * clips);
    std::vector<double> seconds(specs.size() * clips);

    parallel_for(outputs.size(), options.jobs, [&](std::size_t task) {
        const std::size_t row = task / clips, clip = task % clips;
        const auto& b = dataset[clip];
        RestoreOptions ro;
        ro.enhance = options.enhance;
        if (options.oracle_tilts) ro.tilt_override = detilt::oracle_tilts(b.true_tilts);
        const auto t0 = std::chrono::steady_clock::now();
        FrameClip out = run_stages(b.degraded, models, specs[row].order, ro);
        seconds[task] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        scores[task] = evaluate(out, b.clean);
        outputs[task] = std::move(out);
    });

    AblationReport report;
    report.det_params = models.det.param_count();
    report.deb_params = models.deb.param_count();
    std::vector<double> dp, ds;
    for (const auto& b : dataset) {
        const auto q = evaluate(b.degraded, b.clean);
        dp.push_back(q.psnr_db);
        ds.push_back(q.ssim);
    }
    report.degraded_psnr = mean(dp);
    report.degraded_ssim = mean(ds);
    for (std::size_t r = 0; r < specs.size(); ++r) {
        EvalRow row{specs[r].label, specs[r].description, specs[r].order, {}, {}, 0.0, 0.0, 0.0};
        for (std::size_t c = 0; c < clips; ++c) {
            row.clip_psnr.push_back(scores[r * clips + c].psnr_db);
            row.clip_ssim.push_back(scores[r * clips + c].ssim);
            row.seconds += seconds[r * clips + c];
            if (options.on_output) options.on_output(r, c, *outputs[r * clips + c]);
        }
        row.psnr = mean(row.clip_psnr);
        row.ssim = mean(row.clip_ssim);
        report.rows.push_back(std::move(row));
    }
    return report;
}

nlohmann::json psnr_json(double v) {
    if (std::isinf(v)) return media::format_psnr(v);
    return v;
}

}  // namespace

AblationReport ablate_stages(const std::vector<turbsim::DegradationBundle>& dataset, const Models& models,
                             const EvalOptions& options) {
    const std::vector<RowSpec> specs = {
        {"a", "full", default_order()},
        {"b", "without MSE_OF", {{Stage::DT, Stage::DB}}},
        {"c", "without DET", {{Stage::DM, Stage::DB}}},
        {"d", "DEB only", {{Stage::DB}}},
    };
    return run_rows(dataset, models, specs, options);
}

AblationReport compare_orders(const std::vector<turbsim::DegradationBundle>& dataset, const Models& models,
                              const EvalOptions& options) {
    std::vector<RowSpec> specs;
    for (std::size_t i = 0; i < studied_orders().size(); ++i) {
        const auto& o = studied_orders()[i];
        specs.push_back({std::to_string(i + 1), o.label(), o});
    }
    return run_rows(dataset, models, specs, options);
}

nlohmann::json EvalRow::to_json() const {
    nlohmann::json cp = nlohmann::json::array();
    for (double v : clip_psnr) cp.push_back(psnr_json(v));
    return {{"label", label}, {"description", description}, {"order", order.label()}, {"psnr", psnr_json(psnr)},
            {"ssim", ssim}, {"clip_psnr", cp}, {"clip_ssim", clip_ssim}};
}

nlohmann::json AblationReport::to_json() const {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& row : rows) r.push_back(row.to_json());
    return {{"rows", r}, {"det_params", det_params}, {"deb_params", deb_params},
            {"degraded_psnr", psnr_json(degraded_psnr)}, {"degraded_ssim", degraded_ssim}};
}

std::string AblationReport::render(bool with_time) const {
    double slowest = 0.0;
    for (const auto& r : rows) slowest = std::max(slowest, r.seconds);
    std::ostringstream out;
    out << std::left << std::setw(4) << "row" << std::setw(18) << "stages" << std::setw(10) << "PSNR"
        << (with_time ? "SSIM    rel.time\n" : "SSIM\n");
    out << std::fixed;
    for (const auto& r : rows) {
        out << std::setw(4) << r.label << std::setw(18) << r.order.label() << std::setw(10)
            << std::setprecision(3) << r.psnr << std::setw(with_time ? 8 : 0) << std::setprecision(4) << r.ssim;
        if (with_time) out << std::setprecision(2) << (slowest > 0 ? r.seconds / slowest : 0.0);
        out << "\n";
    }
    out << "degraded input: PSNR " << std::setprecision(3) << degraded_psnr << ", SSIM "
        << std::setprecision(4) << degraded_ssim << "\n";
    return out.str();
}

// --- complexity ------------------------------------------------------------------------

ComplexityReport complexity_report(const detilt::DetConfig& det, const deblur::DebConfig& deb, int frames,
                                   int height, int width) {
    ComplexityReport r;
    r.det_params = detilt::count_params(det);
    r.deb_params = deblur::count_params(deb);
    r.total_params = r.det_params + r.mse_params + r.deb_params;
    r.det_macs = detilt::approx_macs(det, frames, height, width);
    r.deb_macs = deblur::approx_macs(deb, frames, height, width);
    r.total_macs = r.det_macs + r.deb_macs;
    r.frames = frames;
    r.height = height;
    r.width = width;
    return r;
}

nlohmann::json ComplexityReport::to_json() const {
    return {{"params", {{"det", det_params}, {"mse_of", mse_params}, {"deb", deb_params}, {"total", total_params}}},
            {"approx_macs", {{"det", det_macs}, {"deb", deb_macs}, {"total", total_macs}}},
            {"shape", {frames, height, width}}};
}

ComplexityReport ComplexityReport::from_json(const nlohmann::json& j) {
    ComplexityReport r;
    const auto& p = j.at("params");
    r.det_params = p.at("det").get<std::size_t>();
    r.mse_params = p.at("mse_of").get<std::size_t>();
    r.deb_params = p.at("deb").get<std::size_t>();
    r.total_params = p.at("total").get<std::size_t>();
    const auto& m = j.at("approx_macs");
    r.det_macs = m.at("det").get<double>();
    r.deb_macs = m.at("deb").get<double>();
    r.total_macs = m.at("total").get<double>();
    const auto& s = j.at("shape");
    r.frames = s.at(0).get<int>();
    r.height = s.at(1).get<int>();
    r.width = s.at(2).get<int>();
    return r;
}

}  // namespace pmr::pipeline
