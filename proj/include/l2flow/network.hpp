#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "l2flow/numerics.hpp"

namespace l2flow::network {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Activation { relu, linear };
enum class Parameterization { ntk, standard };

Activation parse_activation(const std::string& name);
Parameterization parse_parameterization(const std::string& name);
std::string to_string(Activation a);
std::string to_string(Parameterization p);

struct ModelSpec {
    std::vector<Index> widths;  // [d, n_1, ..., n_{L-1}, C]
    Activation activation = Activation::relu;
    Parameterization parameterization = Parameterization::ntk;
    double sigma_w = 1.0;
    double sigma_b = 0.0;
    bool use_bias = false;
    std::uint64_t seed = 0;
};

/// Per-layer parameter gradients, shaped like the model's parameters.
/// `biases` is empty for bias-free models.
struct GradientBundle {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    Index size() const;
    Vector flatten() const;
    double squared_norm() const;
    bool all_finite() const;
};

/// Activations kept from a batched forward pass. Columns are samples.
struct ForwardCache {
    std::vector<Matrix> pre;   // z_l, one per layer (the last one is the output)
    std::vector<Matrix> post;  // a_l for hidden layers; post[0] is a copy of the input
};

/// Fully-connected network with relu or linear hidden activations and a linear
/// read-out. In ntk mode weights are N(0,1) and each layer multiplies its
/// pre-activation by sigma_w / sqrt(fan_in); in standard mode weights are
/// N(0, sigma_w^2 / fan_in) and the forward pass is plain.
class MLPModel {
public:
    MLPModel() = default;
    explicit MLPModel(const ModelSpec& spec);

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<Index>& widths() const noexcept { return spec_.widths; }
    Index input_dim() const { return spec_.widths.front(); }
    Index output_dim() const { return spec_.widths.back(); }
    int depth() const { return static_cast<int>(weights_.size()); }
    /// Homogeneity degree k = depth for bias-free relu/linear nets; throws for
    /// biased models, which are not homogeneous.
    int homogeneity_degree() const;
    Index parameter_count() const;

    std::vector<Matrix>& weights() noexcept { return weights_; }
    const std::vector<Matrix>& weights() const noexcept { return weights_; }
    std::vector<Vector>& biases() noexcept { return biases_; }
    const std::vector<Vector>& biases() const noexcept { return biases_; }

    /// Multiplier applied to W_l a_{l-1} in the forward pass.
    double layer_scale(int layer) const;
    /// Multiplier applied to b_l.
    double bias_scale() const;

    Vector forward(const Vector& x) const;
    /// Rows of `x` are samples; returns one output row per sample.
    Matrix forward(const Matrix& x) const;

    /// Batched forward on column-major inputs (d x N), filling `cache`.
    /// Returns a reference to the output block (C x N) inside the cache.
    const Matrix& forward_cached(const Matrix& xt, ForwardCache& cache) const;

    /// Accumulates sum_i J_i^T g_i into `grad`, where g_i is column i of
    /// `output_grad` (C x N) and J_i the parameter Jacobian at sample i.
    void backward(const ForwardCache& cache, const Matrix& output_grad, GradientBundle& grad) const;

    /// Gradient of output `output_index` at x by reverse-mode backprop.
    GradientBundle grad_param(const Vector& x, Index output_index) const;

    GradientBundle zero_gradient() const;

    Vector flat_parameters() const;
    void set_flat_parameters(const Vector& flat);
    double squared_norm() const;
    /// theta <- a * theta for all parameters.
    void scale_parameters(double a);

    bool operator==(const MLPModel& other) const;

private:
    ModelSpec spec_;
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
};

MLPModel init(const ModelSpec& spec);

/// Gram matrix of parameter gradients of output `output_index` over the rows
/// of `xs`. Uses the layerwise factorisation
///   Theta(x, x') = sum_l s_l^2 (delta_l(x) . delta_l(x')) (a_{l-1}(x) . a_{l-1}(x'))
/// so per-sample gradients are never materialised.
numerics::SymMatrix empirical_ntk(const MLPModel& m, const Matrix& xs, Index output_index = 0,
                                  Index max_samples = 8192);

/// Diagonal of empirical_ntk without forming the full Gram matrix.
Vector empirical_ntk_diagonal(const MLPModel& m, const Matrix& xs, Index output_index = 0);

/// Euler identity residual for a bias-free model.
/// order 0: max over outputs of |theta . grad f - k f| / max(|f|, eps).
/// order 1: max over parameters nu of |theta . d(grad_nu f)/dtheta - (k-1) grad_nu f|
///          divided by max(max|grad f|, eps); the directional derivative is a
///          central finite difference of the gradient along theta.
double check_euler(const MLPModel& m, const Vector& x, int order, double fd_step = 1e-4);

/// max over outputs |f_{a theta}(x) - a^k f_theta(x)| / max(max|f|, eps).
double check_homogeneity(const MLPModel& m, const Vector& x, double a);

/// Text checkpoint: header, spec fields and every parameter as a C99 hex
/// float, which round-trips bit-exactly.
std::string to_checkpoint(const MLPModel& m);
MLPModel from_checkpoint(const std::string& text);
void save_checkpoint(const MLPModel& m, const std::filesystem::path& path);
MLPModel load_checkpoint(const std::filesystem::path& path);

} // namespace l2flow::network
