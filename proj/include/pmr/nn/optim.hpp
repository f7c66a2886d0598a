#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmr/nn/tensor.hpp"

namespace pmr::nn {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(ParameterList params, AdamOptions options = {});

    /// Applies one update from the accumulated gradients, then clears them.
    void step(double lr);
    void zero_grad();
    long steps() const noexcept { return steps_; }

private:
    ParameterList params_;
    AdamOptions options_;
    std::vector<Tensor> m_, v_;
    long steps_ = 0;
};

/// Cosine annealing from lr_init at step 0 to lr_final at step total-1.
double cosine_lr(double lr_init, double lr_final, long step, long total);

// Checkpoint file: "PMRC", u32 header length, a JSON header
// {format, version, kind, config, tensors: [{name, shape, offset}]}, then all
// tensor values as little-endian f64 in header order. Offsets count values.
void save_checkpoint(const std::filesystem::path& file, const std::string& kind,
                     const nlohmann::json& config, const ParameterList& params);

struct Checkpoint {
    std::string kind;
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace pmr::nn
