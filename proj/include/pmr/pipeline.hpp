#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmr/deblur.hpp"
#include "pmr/detilt.hpp"
#include "pmr/motion_enhance.hpp"
#include "pmr/turbsim.hpp"

namespace pmr::pipeline {

enum class Stage { DT, DM, DB };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Ordered, duplicate-free selection of stages.
struct StageOrder {
    std::vector<Stage> sequence;

    /// "DT>DM>DB"; an empty order renders as "none".
    std::string label() const;
    /// Accepts "DT>DM>DB", "DT,DM,DB" or "DT-DM-DB". Duplicates raise UnsupportedOrder.
    static StageOrder parse(const std::string& text);
    bool operator==(const StageOrder&) const = default;
};

StageOrder default_order();
/// The three orderings compared in the stage-order experiment, default first.
const std::array<StageOrder, 3>& studied_orders();

struct Models {
    detilt::DetNetwork det;
    deblur::DebNetwork deb;
};

struct RestoreOptions {
    motion::EnhanceOptions enhance;
    /// Correction fields used in place of the de-tilt network (oracle runs).
    std::optional<std::vector<flow::TiltField>> tilt_override;
    /// Called with the motion stage's segmentation and weights when it runs.
    std::function<void(const motion::EnhanceResult&)> on_enhance;
};

/// DT → DM → DB.
media::FrameClip restore(const media::FrameClip& clip, const detilt::DetNetwork& det,
                         const deblur::DebNetwork& deb, const RestoreOptions& options = {});

/// Runs one of the studied orders; anything else raises UnsupportedOrder.
media::FrameClip restore_with_order(const media::FrameClip& clip, const Models& models,
                                    const StageOrder& order, const RestoreOptions& options = {});

/// Runs any duplicate-free stage subset in the given order (ablations).
media::FrameClip run_stages(const media::FrameClip& clip, const Models& models,
                            const StageOrder& order, const RestoreOptions& options = {});

// --- training ------------------------------------------------------------------

inline constexpr double kCharbonnierEps = 1e-3;
inline constexpr int kEvalBorder = 8;

/// Charbonnier: mean sqrt((pred − target)² + ε²).
double loss(const media::FrameClip& pred, const media::FrameClip& target,
            double eps = kCharbonnierEps);

struct TrainSchedule {
    int stage1_epochs = 50;
    int joint_epochs = 200;
    int batch = 1;          ///< clips per optimizer step
    int crop = 0;           ///< square training crop side, 0 = full frame
    double lr_init = 2e-4;
    double lr_final = 1e-6;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainSchedule from_json(const nlohmann::json& j);
};

struct EpochRecord {
    int phase = 1;
    int epoch = 0;        ///< 0-based within the phase
    double lr = 0.0;      ///< learning rate of the epoch's last step
    double loss = 0.0;    ///< mean training loss over the epoch's steps
    std::optional<double> val_psnr;  ///< restored vs clean, border-cropped

    nlohmann::json to_json() const;
};

struct TrainResult {
    Models models;
    std::vector<EpochRecord> log;
    std::vector<double> step_lr;  ///< per-step learning rates, both phases in order
};

struct TrainOptions {
    detilt::DetConfig det;
    deblur::DebConfig deb;
    motion::EnhanceOptions enhance;
    std::vector<turbsim::DegradationBundle> validation;  ///< held-out clips
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Phase 1 fits DET alone to blur_only; phase 2 chains DET → MSE_OF → DEB
/// and fits all parameters to clean. MSE_OF masks and weights are computed
/// from the current corrected clip and held fixed in the graph. Each phase
/// anneals the learning rate per step from lr_init to lr_final.
TrainResult train_stagewise(const std::vector<turbsim::DegradationBundle>& dataset,
                            const TrainSchedule& schedule, const TrainOptions& options = {});

/// JSON lines, one record per epoch.
std::string format_log(const std::vector<EpochRecord>& log);

// --- evaluation ------------------------------------------------------------------

struct EvalRow {
    std::string label;
    std::string description;
    StageOrder order;
    std::vector<double> clip_psnr;
    std::vector<double> clip_ssim;
    double psnr = 0.0;  ///< mean over clips
    double ssim = 0.0;
    double seconds = 0.0;  ///< wall clock, excluded from JSON

    nlohmann::json to_json() const;
};

struct AblationReport {
    std::vector<EvalRow> rows;
    std::size_t det_params = 0;
    std::size_t deb_params = 0;
    double degraded_psnr = 0.0;  ///< input vs clean, mean over clips
    double degraded_ssim = 0.0;

    nlohmann::json to_json() const;
    /// Text table; with_time adds each row's time relative to the slowest row.
    std::string render(bool with_time = true) const;
};

struct EvalOptions {
    motion::EnhanceOptions enhance;
    bool oracle_tilts = false;  ///< use ground-truth corrections instead of DET
    int jobs = 1;
    /// Receives every restored clip (row index, clip index).
    std::function<void(std::size_t, std::size_t, const media::FrameClip&)> on_output;
};

/// PSNR/SSIM of degraded → restored outputs on the border-cropped interior.
media::QualityScore evaluate(const media::FrameClip& restored, const media::FrameClip& clean);

/// Rows a–d: full, without MSE_OF, without DET, DEB only.
AblationReport ablate_stages(const std::vector<turbsim::DegradationBundle>& dataset,
                             const Models& models, const EvalOptions& options = {});

/// One row per studied order.
AblationReport compare_orders(const std::vector<turbsim::DegradationBundle>& dataset,
                              const Models& models, const EvalOptions& options = {});

struct ComplexityReport {
    std::size_t det_params = 0;
    std::size_t mse_params = 0;
    std::size_t deb_params = 0;
    std::size_t total_params = 0;
    double det_macs = 0.0;
    double deb_macs = 0.0;
    double total_macs = 0.0;
    int frames = 0, height = 0, width = 0;

    nlohmann::json to_json() const;
    static ComplexityReport from_json(const nlohmann::json& j);
    bool operator==(const ComplexityReport&) const = default;
};

ComplexityReport complexity_report(const detilt::DetConfig& det, const deblur::DebConfig& deb,
                                   int frames = 4, int height = 64, int width = 64);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; results must be
/// written to per-index slots. The first exception is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace pmr::pipeline
