#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "l2flow/losses.hpp"
#include "l2flow/numerics.hpp"

namespace l2flow::flow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Infinite-width training problem on a fixed training set. The kernel is
/// diagonalised once; eigenvalues below zero but within 1e-8 * trace are
/// clamped to 0. Targets and initial outputs are N x C (C = 1 for scalar
/// regression); for C > 1 the kernel acts identically on every output.
class FlowProblem {
public:
    FlowProblem(const numerics::SymMatrix& kernel, Matrix targets, std::optional<Matrix> f0,
                int k, double lambda, LossKind loss = LossKind::mse);

    const numerics::Eigensystem& eigen() const noexcept { return eig_; }
    const Matrix& kernel() const noexcept { return kernel_; }
    const Matrix& targets() const noexcept { return y_; }
    const Matrix& initial() const noexcept { return f0_; }
    /// V^T y and V^T f0: row a is mode a, column c is output c.
    const Matrix& target_modes() const noexcept { return y_modes_; }
    const Matrix& initial_modes() const noexcept { return f0_modes_; }
    int k() const noexcept { return k_; }
    double lambda() const noexcept { return lambda_; }
    LossKind loss() const noexcept { return loss_; }
    Index samples() const noexcept { return y_.rows(); }
    Index outputs() const noexcept { return y_.cols(); }

    /// Default RK4 step: min(0.01 / gamma_max, 0.01 / max(lambda, eps)).
    double default_step() const;

private:
    Matrix kernel_;
    numerics::Eigensystem eig_;
    Matrix y_, f0_, y_modes_, f0_modes_;
    int k_;
    double lambda_;
    LossKind loss_;
};

/// e^{-2(k-1) lambda t}.
double kernel_scale(int k, double lambda, double t);

/// Closed-form mode trajectory of the regularised MSE flow for k >= 2,
/// lambda > 0, evaluated with all exponentials combined in log-space.
double mode_value(double gamma, double target_mode, double initial_mode, int k, double lambda,
                  double t);

/// mode_value for mode `a` (and output column `output`) of the problem.
double mode_solution(const FlowProblem& problem, Index a, double t, Index output = 0);

/// k = 1 closed form per mode, returned in the sample basis.
Vector ridge_flow(const numerics::Eigensystem& kernel, double lambda, const Vector& y,
                  const Vector& f0, double t);

struct FlowSolution {
    std::vector<double> t_grid;
    /// Row per time; column a * C + c is mode a of output c.
    Matrix modes;
    std::vector<double> kernel_scale;
    /// Mean per-sample loss on the training set.
    std::vector<double> train_loss;
    /// Outputs on the training set (N x C) per time.
    std::vector<Matrix> outputs;
};

/// Fixed-step RK4 on the full output vector (kernel matrix in the sample
/// basis, no diagonalisation). `step <= 0` selects the problem's default.
FlowSolution evolve_ode(const FlowProblem& problem, std::span<const double> t_grid,
                        double step = 0.0);

/// MSE trajectory from the closed forms: mode_value for k >= 2 (lambda > 0),
/// the per-mode linear solution for k = 1 or lambda = 0.
FlowSolution closed_form_solution(const FlowProblem& problem, std::span<const double> t_grid);

/// Evaluates the matrix-exponential form of the k >= 2 MSE solution in the
/// sample basis (matrix exponentials via Pade approximation, time integral by
/// vector quadrature) and returns the max deviation from the per-mode closed
/// form projected back to samples.
double functional_form_check(const FlowProblem& problem, double t);

/// Matrix-exponential form of the solution on the training set.
Matrix functional_form_outputs(const FlowProblem& problem, double t);

struct LossPeak {
    double t_min = 0.0;
    double loss_min = 0.0;
    double loss_initial = 0.0;
    /// False when the scan has no interior minimum, or when the minimum is
    /// shallower than half the initial loss (no learning phase before decay).
    bool interior = false;
};

/// Locates the minimum of the MSE training loss on a geometric grid
/// [1e-3 / gamma_max, 20 / lambda] (200 points per decade), refined by
/// bisection on the sign of the loss slope.
LossPeak loss_peak_time(const FlowProblem& problem, int points_per_decade = 200);

/// Write a FlowSolution as CSV with columns t,mode_index,f_value,kernel_scale,train_loss.
void write_csv(const FlowSolution& sol, std::ostream& os);

// ---------------------------------------------------------------------------
// Deep linear networks f(x) = beta W_L ... W_0 x trained with MSE + L2.

enum class BetaMode { ntk, standard };

struct DeepLinearProblem {
    int depth = 1;      // L: number of hidden layers (L + 1 weight matrices)
    Index width = 100;  // n
    double lambda = 0.0;
    BetaMode beta_mode = BetaMode::ntk;
    Vector x = Vector::Ones(1);
    double y = 1.0;

    /// n^{-L/2} for ntk normalisation, 1 for standard.
    double beta() const;
};

struct FixedPointResult {
    double f = 0.0;
    bool trivial = false;
    /// For the explicit single-sample L = 1 case: 1 + lambda sqrt(n) and its
    /// mirror 1 - lambda sqrt(n) (y = |x| = 1, ntk); NaN otherwise.
    double explicit_plus = 0.0;
    double explicit_minus = 0.0;
};

/// Solves lambda^{L+1} / beta^2 = [-l' f]^{L-1} l'^2 |x|^2 (l' = f - y) for the
/// root on the side selected by -l' f > 0, the branch reachable by gradient
/// descent. Returns the trivial f = 0 (flagged) when no root exists.
FixedPointResult deep_linear_fixed_point(const DeepLinearProblem& problem);

struct DeepLinearTraining {
    double f = 0.0;
    long steps = 0;
    bool converged = false;
    double grad_norm = 0.0;
};

/// Full-batch gradient descent on 1/2 (f - y)^2 + lambda/2 sum |W_l|^2 from a
/// Gaussian initialisation (N(0,1) for ntk, N(0, 1/fan_in) for standard).
DeepLinearTraining train_deep_linear(const DeepLinearProblem& problem, double eta, long max_steps,
                                     double grad_tol = 1e-11, std::uint64_t seed = 0);

struct TransitionScan {
    double lambda_transition = 0.0;   // geometric mean of the bracketing grid points
    double lambda_last_nontrivial = 0.0;
    double lambda_first_trivial = 0.0;
    std::vector<std::pair<double, double>> trained;  // (lambda, GD output)
};

/// Sweeps lambda over a log grid, trains each network by GD and locates the
/// switch from a non-trivial output (|f| >= threshold |y|) to the trivial one.
TransitionScan deep_linear_transition(DeepLinearProblem base, double lambda_lo, double lambda_hi,
                                      int points_per_decade, double eta, long max_steps,
                                      double threshold = 0.05, std::uint64_t seed = 0);

} // namespace l2flow::flow
