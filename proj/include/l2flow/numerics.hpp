#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "l2flow/errors.hpp"

namespace l2flow::numerics {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense symmetric matrix. Construction validates symmetry and finiteness.
class SymMatrix {
public:
    /// Relative tolerance used when checking |A - A^T| against max|A|.
    static constexpr double kSymmetryTol = 1e-12;

    explicit SymMatrix(Matrix m, double rel_tol = kSymmetryTol);

    const Matrix& matrix() const noexcept { return m_; }
    Eigen::Index size() const noexcept { return m_.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    double trace() const { return m_.trace(); }

private:
    Matrix m_;
};

/// Eigenpairs of a symmetric matrix, values sorted descending, eigenvectors
/// stored as columns. Each eigenvector's first non-negligible component is
/// positive so output is unique for simple spectra.
struct Eigensystem {
    Vector values;
    Matrix vectors;

    Matrix reconstruct() const;
};

Eigensystem eig_sym(const SymMatrix& m);

struct QuadOptions {
    double rel_tol = 1e-8;
    double abs_tol = 0.0;
    int initial_intervals = 4;
    int max_refinements = 24;
};

/// Composite Simpson rule, halving the interval width until two successive
/// estimates agree to rel_tol (or abs_tol). Throws QuadratureError carrying
/// the last estimate if max_refinements is exhausted.
double integrate_quad(const std::function<double(double)>& f, double a, double b,
                      const QuadOptions& opts = {});

/// Same rule for vector-valued integrands, convergence measured in max-norm.
Vector integrate_quad_vec(const std::function<Vector(double)>& f, double a, double b,
                          const QuadOptions& opts = {});

/// dx/dt = rhs(t, x); the callee writes into the output vector.
using OdeRhs = std::function<void(double, const Vector&, Vector&)>;

/// Classical fixed-step RK4. Every gap between consecutive grid points is cut
/// into ceil(gap / step) equal sub-steps, so grid points are hit exactly and
/// no interpolation is involved. Returns one state per t_grid entry; the first
/// is state0 at t_grid[0].
std::vector<Vector> integrate_ode(const OdeRhs& rhs, const Vector& state0,
                                  std::span<const double> t_grid, double step);

/// One RK4 step of size h from (t, x).
Vector rk4_step(const OdeRhs& rhs, double t, const Vector& x, double h);

struct PowerLawFit {
    double coefficient = 0.0;  // c in t = c * lambda^p
    double exponent = 0.0;     // p
    double residual = 0.0;     // RMS in log-log space
};

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points);

/// Bisection. Requires f(lo) * f(hi) <= 0.
double find_root(const std::function<double(double)>& f, double lo, double hi,
                 double tol = 1e-12, int max_iter = 400);

/// Log-spaced grid [lo, hi] with the given density per decade; endpoints exact.
std::vector<double> geometric_grid(double lo, double hi, int points_per_decade);

} // namespace l2flow::numerics
