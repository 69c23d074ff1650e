#include "l2flow/flow.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "l2flow/errors.hpp"

namespace l2flow::flow {

namespace {

constexpr double kTiny = 1e-300;

void require_decaying(int k, double lambda, const char* who) {
    if (k < 2 || !(lambda > 0.0)) {
        std::ostringstream os;
        os << who << ": requires k >= 2 and lambda > 0 (got k=" << k << ", lambda=" << lambda
           << "); use the linear/ridge path instead";
        throw ValidationError(os.str());
    }
}

} // namespace

FlowProblem::FlowProblem(const numerics::SymMatrix& kernel, Matrix targets, std::optional<Matrix> f0,
                         int k, double lambda, LossKind loss)
    : kernel_(kernel.matrix()), y_(std::move(targets)), k_(k), lambda_(lambda), loss_(loss) {
    if (k < 1) throw ValidationError("FlowProblem: homogeneity degree k must be >= 1");
    if (!(lambda >= 0.0)) throw ValidationError("FlowProblem: lambda must be non-negative");
    if (y_.rows() != kernel.size())
        throw ValidationError("FlowProblem: target rows must match kernel size");
    f0_ = f0 ? std::move(*f0) : Matrix::Zero(y_.rows(), y_.cols());
    if (f0_.rows() != y_.rows() || f0_.cols() != y_.cols())
        throw ValidationError("FlowProblem: initial outputs must match target shape");

    eig_ = numerics::eig_sym(kernel);
    const double floor = -1e-8 * std::abs(kernel.trace());
    for (Index a = 0; a < eig_.values.size(); ++a) {
        if (eig_.values(a) < floor) {
            std::ostringstream os;
            os << "FlowProblem: kernel is not PSD (eigenvalue " << eig_.values(a) << ")";
            throw ValidationError(os.str());
        }
        eig_.values(a) = std::max(eig_.values(a), 0.0);
    }
    y_modes_ = eig_.vectors.transpose() * y_;
    f0_modes_ = eig_.vectors.transpose() * f0_;
}

double FlowProblem::default_step() const {
    const double gmax = eig_.values.size() ? eig_.values(0) : 0.0;
    double step = 0.01 / std::max(lambda_ * k_, 1e-12);
    if (gmax > 0.0) step = std::min(step, 0.01 / gmax);
    return step;
}

double kernel_scale(int k, double lambda, double t) {
    return std::exp(-2.0 * (k - 1) * lambda * t);
}

double mode_value(double gamma, double target_mode, double initial_mode, int k, double lambda,
                  double t) {
    require_decaying(k, lambda, "mode_solution");
    if (!(t >= 0.0)) throw ValidationError("mode_solution: t must be non-negative");
    const double beta = 2.0 * (k - 1) * lambda;
    const double alpha = gamma / beta;

    // e^{alpha (s(t) - 1) - k lambda t} f0, with s(t) - 1 = expm1(-beta t).
    double value = initial_mode * std::exp(alpha * std::expm1(-beta * t) - k * lambda * t);
    if (gamma == 0.0 || target_mode == 0.0 || t == 0.0) return value;

    // Source term, integrated in tau = t - t'. Exponent
    //   E(tau) = -alpha s(t) expm1(beta tau) - (k-2) lambda (t - tau) - k lambda t
    // is concave and never positive; every factor stays inside exp().
    const double st = std::exp(-beta * t);
    const auto exponent = [&](double tau) {
        return -alpha * st * std::expm1(beta * tau) - (k - 2) * lambda * (t - tau) - k * lambda * t;
    };
    const auto integrand = [&](double tau) { return std::exp(exponent(tau)); };

    double tau_peak = 0.0;
    const double g_eff = gamma * st;
    if ((k - 2) * lambda > g_eff && g_eff > 0.0)
        tau_peak = std::min(t, std::log((k - 2) * lambda / g_eff) / beta);
    const double peak = integrand(tau_peak);
    const double width = 1.0 / (g_eff + lambda);

    std::vector<double> cuts{0.0, t, tau_peak};
    for (double d = width; d < 2.0 * t; d *= 2.0) {
        if (tau_peak + d < t) cuts.push_back(tau_peak + d);
        if (tau_peak - d > 0.0) cuts.push_back(tau_peak - d);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    double integral = 0.0;
    for (std::size_t i = 1; i < cuts.size(); ++i) {
        const double a = cuts[i - 1], b = cuts[i];
        if (b <= a) continue;
        numerics::QuadOptions opts;
        opts.rel_tol = 1e-12;
        opts.abs_tol = 1e-14 * peak * (b - a);
        opts.initial_intervals = 8;
        opts.max_refinements = 22;
        integral += numerics::integrate_quad(integrand, a, b, opts);
    }
    return value + gamma * target_mode * integral;
}

double mode_solution(const FlowProblem& problem, Index a, double t, Index output) {
    if (a < 0 || a >= problem.samples()) throw ValidationError("mode_solution: mode index out of range");
    return mode_value(problem.eigen().values(a), problem.target_modes()(a, output),
                      problem.initial_modes()(a, output), problem.k(), problem.lambda(), t);
}

namespace {

// Constant-kernel linear mode: df/dt = -(gamma + k lambda) f + gamma y.
double linear_mode(double gamma, double y, double f0, double decay_extra, double t) {
    const double rate = gamma + decay_extra;
    if (rate == 0.0) return f0;
    const double e = std::exp(-rate * t);
    return gamma * y * (-std::expm1(-rate * t)) / rate + f0 * e;
}

} // namespace

Vector ridge_flow(const numerics::Eigensystem& kernel, double lambda, const Vector& y,
                  const Vector& f0, double t) {
    if (!(lambda >= 0.0)) throw ValidationError("ridge_flow: lambda must be non-negative");
    if (y.size() != kernel.values.size() || f0.size() != y.size())
        throw ValidationError("ridge_flow: size mismatch");
    const Vector ym = kernel.vectors.transpose() * y;
    const Vector fm = kernel.vectors.transpose() * f0;
    Vector out(ym.size());
    for (Index a = 0; a < ym.size(); ++a)
        out(a) = linear_mode(std::max(kernel.values(a), 0.0), ym(a), fm(a), lambda, t);
    return kernel.vectors * out;
}

FlowSolution closed_form_solution(const FlowProblem& problem, std::span<const double> t_grid) {
    if (problem.loss() != LossKind::mse)
        throw ValidationError("closed_form_solution: only the MSE loss has a closed form");
    const Index n = problem.samples(), c = problem.outputs();
    const bool linear = problem.k() == 1 || problem.lambda() == 0.0;
    FlowSolution sol;
    sol.t_grid.assign(t_grid.begin(), t_grid.end());
    sol.modes.resize(static_cast<Index>(t_grid.size()), n * c);
    for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
        const double t = t_grid[ti];
        Matrix modes(n, c);
        for (Index a = 0; a < n; ++a)
            for (Index o = 0; o < c; ++o) {
                const double g = problem.eigen().values(a);
                const double y = problem.target_modes()(a, o);
                const double f0 = problem.initial_modes()(a, o);
                modes(a, o) = linear ? linear_mode(g, y, f0, problem.k() * problem.lambda(), t)
                                     : mode_value(g, y, f0, problem.k(), problem.lambda(), t);
                sol.modes(static_cast<Index>(ti), a * c + o) = modes(a, o);
            }
        sol.kernel_scale.push_back(kernel_scale(problem.k(), problem.lambda(), t));
        sol.train_loss.push_back(0.5 * (modes - problem.target_modes()).squaredNorm() /
                                 static_cast<double>(n));
        sol.outputs.push_back(problem.eigen().vectors * modes);
    }
    return sol;
}

FlowSolution evolve_ode(const FlowProblem& problem, std::span<const double> t_grid, double step) {
    const Index n = problem.samples(), c = problem.outputs();
    const Matrix& theta = problem.kernel();
    const Matrix yt = problem.targets().transpose();
    const int k = problem.k();
    const double lambda = problem.lambda();
    const LossKind loss = problem.loss();

    numerics::OdeRhs rhs = [&](double t, const Vector& state, Vector& out) {
        const Eigen::Map<const Matrix> f(state.data(), n, c);
        Matrix grad;
        loss_sum(loss, f.transpose(), yt, &grad);
        Matrix df = -kernel_scale(k, lambda, t) * (theta * grad.transpose()) - (k * lambda) * f;
        out = Eigen::Map<const Vector>(df.data(), n * c);
    };

    const Vector state0 = Eigen::Map<const Vector>(problem.initial().data(), n * c);
    const auto states = numerics::integrate_ode(rhs, state0, t_grid, step > 0.0 ? step : problem.default_step());

    FlowSolution sol;
    sol.t_grid.assign(t_grid.begin(), t_grid.end());
    sol.modes.resize(static_cast<Index>(t_grid.size()), n * c);
    for (std::size_t ti = 0; ti < states.size(); ++ti) {
        const Matrix f = Eigen::Map<const Matrix>(states[ti].data(), n, c);
        const Matrix modes = problem.eigen().vectors.transpose() * f;
        for (Index a = 0; a < n; ++a)
            for (Index o = 0; o < c; ++o) sol.modes(static_cast<Index>(ti), a * c + o) = modes(a, o);
        sol.kernel_scale.push_back(kernel_scale(k, lambda, t_grid[ti]));
        sol.train_loss.push_back(loss_sum(loss, f.transpose(), yt, nullptr) / static_cast<double>(n));
        sol.outputs.push_back(f);
    }
    return sol;
}

Matrix functional_form_outputs(const FlowProblem& problem, double t) {
    require_decaying(problem.k(), problem.lambda(), "functional_form_check");
    if (problem.loss() != LossKind::mse)
        throw ValidationError("functional_form_check: MSE loss only");
    const int k = problem.k();
    const double lambda = problem.lambda();
    const double beta = 2.0 * (k - 1) * lambda;
    const Matrix& theta0 = problem.kernel();
    const Index n = problem.samples();

    // e^{-k lambda t} exp[(Theta_t - Theta_0) / beta] f0
    const Matrix decay0 = (theta0 * (std::expm1(-beta * t) / beta)).exp();
    Matrix out = std::exp(-k * lambda * t) * decay0 * problem.initial();
    if (t == 0.0) return out;

    const Matrix source = theta0 * problem.targets();
    const double st = std::exp(-beta * t);
    // Integrand in tau = t - t':
    //   e^{-(k-2) lambda (t - tau)} exp[(Theta_t - Theta_{t-tau}) / beta] Theta_0 y,
    // and Theta_t - Theta_{t-tau} = -s(t) expm1(beta tau) Theta_0.
    const auto integrand = [&](double tau) -> Vector {
        const Matrix prop = (theta0 * (-st * std::expm1(beta * tau) / beta)).exp();
        const Matrix v = std::exp(-(k - 2) * lambda * (t - tau)) * (prop * source);
        return Eigen::Map<const Vector>(v.data(), v.size());
    };

    const double gmax = std::max(problem.eigen().values(0), 0.0);
    const double width = 1.0 / (gmax * st + lambda);
    std::vector<double> cuts{0.0};
    for (double d = width; d < t; d *= 2.0) cuts.push_back(d);
    cuts.push_back(t);

    const double scale = source.cwiseAbs().maxCoeff();
    Vector integral = Vector::Zero(source.size());
    for (std::size_t i = 1; i < cuts.size(); ++i) {
        numerics::QuadOptions opts;
        opts.rel_tol = 1e-12;
        opts.abs_tol = 1e-14 * std::max(scale, kTiny) * (cuts[i] - cuts[i - 1]);
        opts.initial_intervals = 8;
        opts.max_refinements = 20;
        integral += numerics::integrate_quad_vec(integrand, cuts[i - 1], cuts[i], opts);
    }
    out += std::exp(-k * lambda * t) * Eigen::Map<const Matrix>(integral.data(), n, source.cols());
    return out;
}

double functional_form_check(const FlowProblem& problem, double t) {
    const Matrix matrix_form = functional_form_outputs(problem, t);
    Matrix modes(problem.samples(), problem.outputs());
    for (Index a = 0; a < problem.samples(); ++a)
        for (Index o = 0; o < problem.outputs(); ++o) modes(a, o) = mode_solution(problem, a, t, o);
    const Matrix per_mode = problem.eigen().vectors * modes;
    return (matrix_form - per_mode).cwiseAbs().maxCoeff();
}

LossPeak loss_peak_time(const FlowProblem& problem, int points_per_decade) {
    require_decaying(problem.k(), problem.lambda(), "loss_peak_time");
    if (problem.loss() != LossKind::mse) throw ValidationError("loss_peak_time: MSE loss only");
    const Index n = problem.samples(), c = problem.outputs();
    const double gmax = problem.eigen().values(0);
    const double t_hi = 20.0 / problem.lambda();
    const double t_lo = std::min(1e-3 / std::max(gmax, kTiny), 1e-3 * t_hi);
    const auto grid = numerics::geometric_grid(t_lo, t_hi, points_per_decade);

    auto modes_at = [&](double t) {
        Matrix m(n, c);
        for (Index a = 0; a < n; ++a)
            for (Index o = 0; o < c; ++o) m(a, o) = mode_solution(problem, a, t, o);
        return m;
    };
    auto loss_of = [&](const Matrix& m) {
        return 0.5 * (m - problem.target_modes()).squaredNorm() / static_cast<double>(n);
    };
    auto slope_at = [&](double t) {
        const Matrix m = modes_at(t);
        const Matrix resid = m - problem.target_modes();
        const double s = kernel_scale(problem.k(), problem.lambda(), t);
        Matrix fdot = -(problem.k() * problem.lambda()) * m;
        for (Index a = 0; a < n; ++a) fdot.row(a) -= s * problem.eigen().values(a) * resid.row(a);
        return resid.cwiseProduct(fdot).sum() / static_cast<double>(n);
    };

    LossPeak peak;
    peak.loss_initial = loss_of(problem.initial_modes());
    std::size_t best = 0;
    std::vector<double> losses(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        losses[i] = loss_of(modes_at(grid[i]));
        if (losses[i] < losses[best]) best = i;
    }
    peak.t_min = grid[best];
    peak.loss_min = losses[best];
    if (best == 0 || best + 1 == grid.size()) return peak;

    const double lo = grid[best - 1], hi = grid[best + 1];
    if (slope_at(lo) <= 0.0 && slope_at(hi) >= 0.0) {
        peak.t_min = numerics::find_root(slope_at, lo, hi, 1e-10 * hi);
        peak.loss_min = std::min(peak.loss_min, loss_of(modes_at(peak.t_min)));
    }
    peak.interior = peak.loss_min <= 0.5 * peak.loss_initial;
    return peak;
}

void write_csv(const FlowSolution& sol, std::ostream& os) {
    os << "t,mode_index,f_value,kernel_scale,train_loss\n";
    os.precision(17);
    for (std::size_t ti = 0; ti < sol.t_grid.size(); ++ti)
        for (Index a = 0; a < sol.modes.cols(); ++a)
            os << sol.t_grid[ti] << ',' << a << ',' << sol.modes(static_cast<Index>(ti), a) << ','
               << sol.kernel_scale[ti] << ',' << sol.train_loss[ti] << '\n';
}

// ---------------------------------------------------------------------------

double DeepLinearProblem::beta() const {
    if (beta_mode == BetaMode::standard) return 1.0;
    return std::pow(static_cast<double>(width), -0.5 * depth);
}

FixedPointResult deep_linear_fixed_point(const DeepLinearProblem& p) {
    if (p.depth < 1 || p.width < 1) throw ValidationError("deep_linear_fixed_point: need L >= 1, n >= 1");
    if (!(p.lambda >= 0.0)) throw ValidationError("deep_linear_fixed_point: lambda must be >= 0");
    FixedPointResult res;
    res.explicit_plus = res.explicit_minus = std::numeric_limits<double>::quiet_NaN();
    if (p.depth == 1 && p.beta_mode == BetaMode::ntk && p.x.size() == 1 && p.x(0) == 1.0 && p.y == 1.0) {
        const double shift = p.lambda * std::sqrt(static_cast<double>(p.width));
        res.explicit_plus = 1.0 + shift;
        res.explicit_minus = 1.0 - shift;
    }
    if (p.lambda == 0.0) {
        res.f = p.y;
        return res;
    }
    if (p.y == 0.0) {
        res.trivial = true;
        return res;
    }

    const int L = p.depth;
    const double xx = p.x.squaredNorm();
    const double b = p.beta();
    const double lhs = std::pow(p.lambda, L + 1) / (b * b);
    // Work with u = f / y in (0, 1), where -l' f = y^2 (1 - u) u > 0.
    const double y2 = p.y * p.y;
    const auto residual = [&](double u) {
        const double lp2 = y2 * (1.0 - u) * (1.0 - u);
        return std::pow(y2 * (1.0 - u) * u, L - 1) * lp2 * xx - lhs;
    };
    const double u_peak = L == 1 ? 0.0 : (L - 1.0) / (2.0 * L);
    if (residual(u_peak) <= 0.0) {
        res.trivial = true;
        res.f = 0.0;
        return res;
    }
    const double u = numerics::find_root(residual, u_peak, 1.0, 1e-15);
    res.f = u * p.y;
    return res;
}

DeepLinearTraining train_deep_linear(const DeepLinearProblem& p, double eta, long max_steps,
                                     double grad_tol, std::uint64_t seed) {
    if (p.depth < 1 || p.width < 1) throw ValidationError("train_deep_linear: need L >= 1, n >= 1");
    if (!(eta > 0.0)) throw ValidationError("train_deep_linear: eta must be positive");
    const int L = p.depth;
    const Index n = p.width, d = p.x.size();
    const double beta = p.beta();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Matrix> w;
    for (int l = 0; l <= L; ++l) {
        const Index rows = l == L ? 1 : n;
        const Index cols = l == 0 ? d : n;
        const double sd = p.beta_mode == BetaMode::ntk ? 1.0 : 1.0 / std::sqrt(static_cast<double>(cols));
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = sd * normal(rng);
        w.push_back(std::move(m));
    }

    DeepLinearTraining out;
    std::vector<Vector> h(static_cast<std::size_t>(L) + 1);
    std::vector<Matrix> g(static_cast<std::size_t>(L) + 1);
    for (long step = 0; step < max_steps; ++step) {
        h[0] = p.x;
        for (std::size_t l = 0; l < static_cast<std::size_t>(L); ++l) h[l + 1] = w[l] * h[l];
        const double f = beta * (w[static_cast<std::size_t>(L)] * h[static_cast<std::size_t>(L)])(0);
        const double lp = f - p.y;
        Vector back = Vector::Constant(1, beta * lp);
        double gn = 0.0;
        for (int l = L; l >= 0; --l) {
            const auto li = static_cast<std::size_t>(l);
            g[li] = back * h[li].transpose() + p.lambda * w[li];
            gn += g[li].squaredNorm();
            if (l > 0) back = w[li].transpose() * back;
        }
        out.f = f;
        out.steps = step;
        out.grad_norm = std::sqrt(gn);
        if (!std::isfinite(f)) throw BlowUpError("train_deep_linear: diverged", static_cast<double>(step));
        if (out.grad_norm < grad_tol) {
            out.converged = true;
            return out;
        }
        for (std::size_t l = 0; l < w.size(); ++l) w[l] -= eta * g[l];
    }
    return out;
}

TransitionScan deep_linear_transition(DeepLinearProblem base, double lambda_lo, double lambda_hi,
                                      int points_per_decade, double eta, long max_steps,
                                      double threshold, std::uint64_t seed) {
    const auto grid = numerics::geometric_grid(lambda_lo, lambda_hi, points_per_decade);
    TransitionScan scan;
    for (double lambda : grid) {
        base.lambda = lambda;
        const auto trained = train_deep_linear(base, eta, max_steps, 1e-11, seed);
        scan.trained.emplace_back(lambda, trained.f);
    }
    std::size_t last_nontrivial = scan.trained.size();
    for (std::size_t i = 0; i < scan.trained.size(); ++i)
        if (std::abs(scan.trained[i].second) >= threshold * std::abs(base.y)) last_nontrivial = i;
    if (last_nontrivial == scan.trained.size())
        throw RuntimeFailure("deep_linear_transition: every lambda on the grid gave the trivial output");
    if (last_nontrivial + 1 == scan.trained.size())
        throw RuntimeFailure("deep_linear_transition: no trivial fixed point on the grid; widen lambda_hi");
    scan.lambda_last_nontrivial = scan.trained[last_nontrivial].first;
    scan.lambda_first_trivial = scan.trained[last_nontrivial + 1].first;
    scan.lambda_transition = std::sqrt(scan.lambda_last_nontrivial * scan.lambda_first_trivial);
    return scan;
}

} // namespace l2flow::flow
