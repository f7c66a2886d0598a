#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace pmr::nn {

/// Dense row-major array of doubles. Activations are always rank 4 in
/// (T, H, W, C) order; parameters use whatever rank their layer needs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::size_t size() const noexcept { return values_.size(); }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    // Rank-4 accessors.
    int frames() const { return shape_.at(0); }
    int height() const { return shape_.at(1); }
    int width() const { return shape_.at(2); }
    int channels() const { return shape_.at(3); }
    double& at(int t, int y, int x, int c) { return values_[offset(t, y, x, c)]; }
    double at(int t, int y, int x, int c) const { return values_[offset(t, y, x, c)]; }
    std::size_t offset(int t, int y, int x, int c) const {
        return ((static_cast<std::size_t>(t) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
    }

    void fill(double v);
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool operator==(const Tensor& other) const noexcept {
        return shape_ == other.shape_ && values_ == other.values_;
    }

private:
    std::vector<int> shape_;
    std::vector<double> values_;
};

std::string shape_string(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Reverse-mode autodiff

struct Node {
    Tensor value;
    Tensor grad;  ///< empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Lazily allocated gradient buffer of the same shape as value.
    Tensor& grad_buffer();
};

/// Handle to a node of the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const noexcept { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const noexcept { return node_; }
    void zero_grad() { node_->grad = Tensor(); }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
/// Trainable leaf.
Var parameter(Tensor value);

/// Creates the output node of an op. The backward closure is kept only when
/// gradient recording is enabled and some parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Accumulates d(root)/d(leaf) into every reachable node; root must hold a
/// single element.
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Hierarchically named trainable parameters ("enc.1.ds.pw.weight").
struct NamedParameter {
    std::string name;
    Var var;
};
using ParameterList = std::vector<NamedParameter>;

std::size_t parameter_count(const ParameterList& params);

}  // namespace pmr::nn
