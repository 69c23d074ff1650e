#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "l2flow/errors.hpp"
#include "l2flow/flow.hpp"

using namespace l2flow;
using namespace l2flow::flow;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_psd(int n, unsigned seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    MatrixXd a(n, n);
    for (auto& v : a.reshaped()) v = g(rng);
    return scale * a * a.transpose() / n;
}

MatrixXd random_vec(int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    MatrixXd v(n, 1);
    for (auto& x : v.reshaped()) x = g(rng);
    return v;
}

} // namespace

TEST_CASE("mode_value agrees with a high-accuracy adaptive ODE solve") {
    struct Case {
        double gamma, y, f0;
        int k;
        double lambda, t, expect;
    };
    const Case cases[] = {
        {2.0, 1.0, 0.3, 2, 0.01, 1.0, 0.8966047852998752},
        {2.0, 1.0, 0.3, 2, 0.01, 10.0, 0.9880739007793317},
        {2.0, 1.0, 0.3, 2, 0.01, 100.0, 0.9351380675577956},
        {2.0, 1.0, 0.3, 2, 0.01, 500.0, 0.02199214042474822},
        {50.0, -0.7, 0.2, 3, 0.1, 0.5, -0.6949555530752886},
        {50.0, -0.7, 0.2, 3, 0.1, 5.0, -0.6717456451681534},
        {50.0, -0.7, 0.2, 3, 0.1, 50.0, -2.8301743527970576e-05},
        {0.05, 2.0, 0.0, 4, 0.02, 30.0, 0.13919009319569678},
    };
    for (const auto& c : cases) {
        const double v = mode_value(c.gamma, c.y, c.f0, c.k, c.lambda, c.t);
        CHECK(std::abs(v - c.expect) < 1e-10 * std::max(1.0, std::abs(c.expect)));
    }
}

TEST_CASE("mode_value edge cases") {
    CHECK(mode_value(0.0, 1.0, 0.5, 2, 0.1, 3.0) == doctest::Approx(0.5 * std::exp(-0.6)));
    CHECK(mode_value(3.0, 1.0, 0.25, 2, 0.1, 0.0) == 0.25);
    CHECK_THROWS_AS(mode_value(1.0, 1.0, 0.0, 1, 0.1, 1.0), ValidationError);
    CHECK_THROWS_AS(mode_value(1.0, 1.0, 0.0, 2, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(mode_value(1.0, 1.0, 0.0, 2, 0.1, -1.0), ValidationError);
}

TEST_CASE("kernel_scale is exactly exp(-2(k-1) lambda t)") {
    CHECK(kernel_scale(2, 0.01, 50.0) == std::exp(-1.0));
    CHECK(kernel_scale(1, 0.5, 10.0) == 1.0);
    CHECK(kernel_scale(3, 0.1, 2.5) == std::exp(-1.0));
}

TEST_CASE("closed form matches RK4 on the full system") {
    const MatrixXd k = random_psd(8, 1);
    const MatrixXd y = random_vec(8, 2);
    const MatrixXd f0 = 0.1 * random_vec(8, 3);
    const FlowProblem p(numerics::SymMatrix(k), y, f0, 2, 0.05);
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(5.0 / 0.05 * i / 20.0);
    const auto cf = closed_form_solution(p, grid);
    const auto ode = evolve_ode(p, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK((cf.outputs[i] - ode.outputs[i]).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(cf.train_loss[i] == doctest::Approx(ode.train_loss[i]).epsilon(1e-7));
        CHECK(cf.kernel_scale[i] == ode.kernel_scale[i]);
    }
}

TEST_CASE("t = 0 reproduces the initial state") {
    const MatrixXd f0 = random_vec(5, 4);
    const FlowProblem p(numerics::SymMatrix(random_psd(5, 5)), random_vec(5, 6), f0, 2, 0.1);
    const std::vector<double> grid{0.0};
    const auto sol = closed_form_solution(p, grid);
    REQUIRE(sol.outputs.size() == 1);
    CHECK((sol.outputs[0] - f0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("ridge_flow converges to the ridge solution") {
    MatrixXd k(3, 3);
    k << 2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 0.5;
    VectorXd y(3);
    y << 1.0, -1.0, 0.5;
    const auto e = numerics::eig_sym(numerics::SymMatrix(k));
    const VectorXd f = ridge_flow(e, 0.1, y, VectorXd::Zero(3), 1e4 / 0.1);
    CHECK(f(0) == doctest::Approx(0.9193245778611632).epsilon(1e-12));
    CHECK(f(1) == doctest::Approx(-0.8302063789868668).epsilon(1e-12));
    CHECK(f(2) == doctest::Approx(0.3452157598499063).epsilon(1e-12));
    CHECK((ridge_flow(e, 0.1, y, y, 0.0) - y).norm() < 1e-14);
}

TEST_CASE("k = 1 closed form is the ridge flow with decay k lambda") {
    const MatrixXd k = random_psd(6, 7);
    const MatrixXd y = random_vec(6, 8);
    const FlowProblem p(numerics::SymMatrix(k), y, std::nullopt, 1, 0.2);
    const std::vector<double> grid{0.0, 1.0, 10.0};
    const auto sol = closed_form_solution(p, grid);
    const VectorXd r = ridge_flow(p.eigen(), 0.2, y.col(0), VectorXd::Zero(6), 10.0);
    CHECK((sol.outputs[2].col(0) - r).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("matrix-exponential form agrees with the per-mode closed form") {
    const FlowProblem p(numerics::SymMatrix(random_psd(6, 9, 4.0)), random_vec(6, 10), 0.2 * random_vec(6, 11), 2,
                        0.05);
    for (double t : {0.5, 5.0, 40.0}) CHECK(functional_form_check(p, t) < 1e-8);
}

TEST_CASE("late-time outputs decay to zero for k >= 2") {
    for (int k : {2, 3}) {
        const FlowProblem p(numerics::SymMatrix(random_psd(10, 12)), random_vec(10, 13), random_vec(10, 14), k, 0.01);
        const std::vector<double> grid{20.0 / 0.01};
        const auto sol = closed_form_solution(p, grid);
        CHECK(sol.outputs[0].cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("loss minimum time scales inversely with lambda") {
    MatrixXd k = MatrixXd::Zero(4, 4);
    k.diagonal() << 40.0, 20.0, 10.0, 5.0;
    const MatrixXd y = MatrixXd::Ones(4, 1);
    const auto a = loss_peak_time(FlowProblem(numerics::SymMatrix(k), y, std::nullopt, 2, 0.01));
    const auto b = loss_peak_time(FlowProblem(numerics::SymMatrix(k), y, std::nullopt, 2, 0.005));
    CHECK(a.interior);
    CHECK(b.interior);
    CHECK(b.t_min / a.t_min == doctest::Approx(2.0).epsilon(0.3));
    CHECK_THROWS_AS(loss_peak_time(FlowProblem(numerics::SymMatrix(k), y, std::nullopt, 1, 0.01)), ValidationError);
}

TEST_CASE("FlowProblem validation") {
    MatrixXd k(2, 2);
    k << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(FlowProblem(numerics::SymMatrix(k), MatrixXd::Ones(2, 1), std::nullopt, 2, 0.1), ValidationError);
    CHECK_THROWS_AS(FlowProblem(numerics::SymMatrix(MatrixXd::Identity(2, 2)), MatrixXd::Ones(3, 1), std::nullopt, 2,
                                0.1),
                    ValidationError);
}

TEST_CASE("flow CSV layout") {
    const FlowProblem p(numerics::SymMatrix(MatrixXd::Identity(2, 2)), MatrixXd::Ones(2, 1), std::nullopt, 2, 0.1);
    const std::vector<double> grid{0.0, 1.0};
    std::ostringstream os;
    write_csv(closed_form_solution(p, grid), os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,mode_index,f_value,kernel_scale,train_loss");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("deep linear fixed point: explicit L = 1 branch and lambda = 0") {
    DeepLinearProblem p;
    p.depth = 1;
    p.width = 100;
    p.lambda = 0.01;
    const auto r = deep_linear_fixed_point(p);
    CHECK(r.f == doctest::Approx(1.0 - 0.01 * 10.0).epsilon(1e-12));
    CHECK(r.explicit_minus == doctest::Approx(0.9));
    CHECK(r.explicit_plus == doctest::Approx(1.1));
    p.lambda = 0.0;
    CHECK(deep_linear_fixed_point(p).f == 1.0);
    p.lambda = 0.2;  // beyond n^{-1/2}: only the trivial point survives
    CHECK(deep_linear_fixed_point(p).trivial);
}

TEST_CASE("deep linear fixed point for L = 2 matches polynomial roots") {
    DeepLinearProblem p;
    p.depth = 2;
    p.width = 100;
    p.lambda = 0.01;
    CHECK(deep_linear_fixed_point(p).f == doctest::Approx(0.7643690694293948).epsilon(1e-9));
    p.lambda = 0.02;
    CHECK(deep_linear_fixed_point(p).f == doctest::Approx(0.42842854997748386).epsilon(1e-9));
}

TEST_CASE("gradient descent converges to the fixed point") {
    DeepLinearProblem p;
    p.depth = 1;
    p.width = 100;
    for (double lam : {0.0, 0.02, 0.05}) {
        p.lambda = lam;
        const auto gd = train_deep_linear(p, 0.5, 200000);
        CHECK(gd.converged);
        CHECK(std::abs(gd.f - deep_linear_fixed_point(p).f) < 1e-6);
    }
    p.depth = 2;
    p.lambda = 0.01;
    const auto gd = train_deep_linear(p, 0.5, 400000);
    CHECK(std::abs(gd.f - 0.7643690694293948) < 1e-4);
}
