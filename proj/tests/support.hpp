#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pmr/nn/ops.hpp"
#include "pmr/nn/tensor.hpp"

namespace pmr::testing {

inline nn::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0,
                                double hi = 1.0) {
    nn::Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.values()) v = d(rng);
    return t;
}

/// Replaces every parameter value by small random numbers so no branch of a
/// network is trivially dead during gradient checks.
inline void randomize(nn::ParameterList& params, std::uint64_t seed, double scale = 0.3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (auto& p : params) {
        for (double& v : p.var.mutable_value().values()) v = d(rng);
    }
}

/// ||a - b|| / max(||a||, ||b||).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-300);
    return std::sqrt(diff) / denom;
}

using ScalarFn = std::function<nn::Var(const nn::Var&)>;

/// Projects f(x) onto a fixed random direction, so the scalar loss touches
/// every output element.
inline ScalarFn projected(const std::function<nn::Var(const nn::Var&)>& f, std::uint64_t seed) {
    return [f, seed](const nn::Var& x) {
        const nn::Var y = f(x);
        const nn::Var r = nn::constant(random_tensor(y.value().shape(), seed));
        return nn::ops::sum(nn::ops::mul(y, r));
    };
}

struct GradCheck {
    double rel_error;
    std::vector<double> analytic, numeric;
};

/// Compares backprop against central differences with respect to `wrt`.
/// `loss` is re-evaluated after each perturbation of wrt's value.
inline GradCheck check_gradient(const std::function<nn::Var()>& loss, nn::Var wrt, double h = 1e-5) {
    wrt.zero_grad();
    nn::backward(loss());
    GradCheck out;
    const nn::Tensor g = wrt.grad();
    out.analytic.assign(g.values().begin(), g.values().end());
    if (out.analytic.empty()) out.analytic.assign(wrt.value().size(), 0.0);
    nn::NoGradGuard guard;
    nn::Tensor& v = wrt.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i] = orig + h;
        const double up = loss().value()[0];
        v[i] = orig - h;
        const double down = loss().value()[0];
        v[i] = orig;
        out.numeric.push_back((up - down) / (2 * h));
    }
    out.rel_error = relative_error(out.analytic, out.numeric);
    return out;
}

}  // namespace pmr::testing

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace pmr::testing {

/// Fresh directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "pmr") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace pmr::testing
