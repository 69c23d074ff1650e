#include "l2flow/numerics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

namespace l2flow::numerics {

SymMatrix::SymMatrix(Matrix m, double rel_tol) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0) {
        std::ostringstream os;
        os << "SymMatrix: expected a non-empty square matrix, got " << m_.rows() << "x" << m_.cols();
        throw ValidationError(os.str());
    }
    if (!m_.allFinite()) throw ValidationError("SymMatrix: non-finite entry");
    const double scale = std::max(m_.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (asym > rel_tol * scale) {
        std::ostringstream os;
        os << "SymMatrix: input is not symmetric (max |A-A^T| = " << asym
           << ", allowed " << rel_tol * scale << ")";
        throw ValidationError(os.str());
    }
    // Exact symmetry from here on.
    m_ = 0.5 * (m_ + m_.transpose()).eval();
}

Matrix Eigensystem::reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
}

namespace {

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

} // namespace

Eigensystem eig_sym(const SymMatrix& sym) {
    constexpr double kOffTol = 1e-12;
    constexpr int kMaxSweeps = 100;

    Matrix a = sym.matrix();
    const Eigen::Index n = a.rows();
    Matrix v = Matrix::Identity(n, n);
    const double norm = a.norm();

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        const double off = off_diagonal_norm(a);
        if (off <= kOffTol * norm || off == 0.0) break;
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < std::numeric_limits<double>::min()) continue;
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::hypot(1.0, tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

    Eigensystem out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto src = order[static_cast<std::size_t>(c)];
        out.values(c) = a(src, src);
        Vector col = v.col(src);
        const double big = col.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::abs(col(i)) > 1e-10 * big) {
                if (col(i) < 0.0) col = -col;
                break;
            }
        }
        out.vectors.col(c) = col;
    }
    return out;
}

namespace {

double max_abs(double x) { return std::abs(x); }
double max_abs(const Vector& x) { return x.size() ? x.cwiseAbs().maxCoeff() : 0.0; }

template <typename Value, typename Fn>
Value simpson_halving(const Fn& f, double a, double b, const QuadOptions& opts) {
    if (!(a <= b)) throw ValidationError("integrate_quad: require a <= b");
    if (opts.initial_intervals < 2 || opts.initial_intervals % 2 != 0)
        throw ValidationError("integrate_quad: initial_intervals must be even and >= 2");
    const Value fa = f(a);
    if (a == b) return Value(fa * 0.0);

    long n = opts.initial_intervals;
    double h = (b - a) / static_cast<double>(n);
    Value ends = fa + f(b);
    Value odd = fa * 0.0;
    Value even = fa * 0.0;
    for (long i = 1; i < n; ++i) {
        const Value fi = f(a + static_cast<double>(i) * h);
        if (i % 2) odd = odd + fi;
        else even = even + fi;
    }
    Value estimate = (ends + 4.0 * odd + 2.0 * even) * (h / 3.0);

    for (int r = 0; r < opts.max_refinements; ++r) {
        n *= 2;
        h *= 0.5;
        even = even + odd;
        odd = fa * 0.0;
        for (long i = 1; i < n; i += 2) odd = odd + f(a + static_cast<double>(i) * h);
        const Value next = (ends + 4.0 * odd + 2.0 * even) * (h / 3.0);
        const double diff = max_abs(Value(next - estimate));
        const double mag = max_abs(next);
        estimate = next;
        if (diff <= opts.rel_tol * mag || diff <= opts.abs_tol) return estimate;
    }
    std::ostringstream os;
    os << "integrate_quad: no convergence on [" << a << ", " << b << "] after "
       << opts.max_refinements << " refinements";
    if constexpr (std::is_same_v<Value, double>) {
        throw QuadratureError(os.str(), estimate);
    } else {
        throw QuadratureError(os.str(), max_abs(estimate));
    }
}

} // namespace

double integrate_quad(const std::function<double(double)>& f, double a, double b,
                      const QuadOptions& opts) {
    return simpson_halving<double>(f, a, b, opts);
}

Vector integrate_quad_vec(const std::function<Vector(double)>& f, double a, double b,
                          const QuadOptions& opts) {
    return simpson_halving<Vector>(f, a, b, opts);
}

Vector rk4_step(const OdeRhs& rhs, double t, const Vector& x, double h) {
    const Eigen::Index n = x.size();
    Vector k1(n), k2(n), k3(n), k4(n);
    rhs(t, x, k1);
    rhs(t + 0.5 * h, x + (0.5 * h) * k1, k2);
    rhs(t + 0.5 * h, x + (0.5 * h) * k2, k3);
    rhs(t + h, x + h * k3, k4);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::vector<Vector> integrate_ode(const OdeRhs& rhs, const Vector& state0,
                                  std::span<const double> t_grid, double step) {
    if (!(step > 0.0)) throw ValidationError("integrate_ode: step must be positive");
    if (t_grid.empty()) throw ValidationError("integrate_ode: empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1]))
            throw ValidationError("integrate_ode: time grid must be strictly increasing");
    if (!state0.allFinite()) throw BlowUpError("integrate_ode: non-finite initial state", t_grid[0]);

    std::vector<Vector> out;
    out.reserve(t_grid.size());
    out.push_back(state0);
    Vector x = state0;
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        const double t0 = t_grid[i - 1];
        const double gap = t_grid[i] - t0;
        const auto substeps = static_cast<long>(std::ceil(gap / step * (1.0 - 1e-12)));
        const long m = std::max(1L, substeps);
        const double h = gap / static_cast<double>(m);
        for (long j = 0; j < m; ++j) {
            const double t = t0 + static_cast<double>(j) * h;
            x = rk4_step(rhs, t, x, h);
            if (!x.allFinite()) {
                std::ostringstream os;
                os << "integrate_ode: state blew up at t=" << t + h;
                throw BlowUpError(os.str(), t + h);
            }
        }
        out.push_back(x);
    }
    return out;
}

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
    if (points.size() < 2) throw ValidationError("fit_power_law: need at least 2 points");
    double sx = 0, sy = 0;
    for (const auto& [x, y] : points) {
        if (!(x > 0.0) || !(y > 0.0) || !std::isfinite(x) || !std::isfinite(y))
            throw ValidationError("fit_power_law: all values must be positive and finite");
        sx += std::log(x);
        sy += std::log(y);
    }
    const double n = static_cast<double>(points.size());
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        const double dx = std::log(x) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(y) - my);
    }
    if (sxx == 0.0) throw ValidationError("fit_power_law: all abscissae identical");
    PowerLawFit fit;
    fit.exponent = sxy / sxx;
    const double intercept = my - fit.exponent * mx;
    fit.coefficient = std::exp(intercept);
    double ss = 0;
    for (const auto& [x, y] : points) {
        const double r = std::log(y) - (intercept + fit.exponent * std::log(x));
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    return fit;
}

double find_root(const std::function<double(double)>& f, double lo, double hi, double tol,
                 int max_iter) {
    if (!(lo <= hi)) throw ValidationError("find_root: require lo <= hi");
    double flo = f(lo);
    const double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if (!(flo * fhi < 0.0)) {
        std::ostringstream os;
        os << "find_root: bracket [" << lo << ", " << hi << "] does not straddle a sign change (f(lo)="
           << flo << ", f(hi)=" << fhi << ")";
        throw ValidationError(os.str());
    }
    for (int i = 0; i < max_iter && hi - lo >= tol; ++i) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return lo + 0.5 * (hi - lo);
}

std::vector<double> geometric_grid(double lo, double hi, int points_per_decade) {
    if (!(lo > 0.0) || !(hi > lo) || points_per_decade < 1)
        throw ValidationError("geometric_grid: require 0 < lo < hi and positive density");
    const double decades = std::log10(hi / lo);
    const auto count = static_cast<long>(std::ceil(decades * points_per_decade));
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(count) + 1);
    for (long i = 0; i <= count; ++i)
        grid.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(count)));
    grid.front() = lo;
    grid.back() = hi;
    return grid;
}

} // namespace l2flow::numerics
