#include "pmr/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "pmr/binary_io.hpp"
#include "pmr/errors.hpp"

namespace pmr::nn {

Adam::Adam(ParameterList params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var.value().shape());
        v_.emplace_back(p.var.value().shape());
    }
}

void Adam::step(double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Var& var = params_[k].var;
        const Tensor& g = var.grad();
        if (g.size() != var.value().size()) continue;  // no gradient reached it
        Tensor& w = var.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
        }
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

double cosine_lr(double lr_init, double lr_final, long step, long total) {
    if (total <= 1) return lr_final;
    const double progress = static_cast<double>(std::clamp(step, 0L, total - 1)) / (total - 1);
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

void save_checkpoint(const std::filesystem::path& file, const std::string& kind,
                     const nlohmann::json& config, const ParameterList& params) {
    nlohmann::json header = {{"format", "pmr-checkpoint"}, {"version", 1}, {"kind", kind}, {"config", config}};
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : params) {
        tensors.push_back({{"name", p.name}, {"shape", p.var.value().shape()}, {"offset", offset}});
        offset += p.var.value().size();
    }
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
    out.write("PMRC", 4);
    io::write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
        const Tensor& t = p.var.value();
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) fail(ErrorKind::IoError, "short write to " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + file.string());
    io::expect_magic(in, "PMRC");
    const std::uint32_t len = io::read_u32(in);
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) fail(ErrorKind::DecodeError, "truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::DecodeError, std::string("checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    ck.kind = header.value("kind", "");
    ck.config = header.value("config", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("shape").get<std::vector<int>>());
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            fail(ErrorKind::DecodeError, "truncated checkpoint data");
        }
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace pmr::nn
