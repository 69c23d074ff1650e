#include <doctest.h>

#include <cmath>
#include <random>

#include "l2flow/errors.hpp"
#include "l2flow/network.hpp"

using namespace l2flow;
using namespace l2flow::network;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MLPModel tiny() {
    ModelSpec s;
    s.widths = {2, 3, 1};
    auto m = init(s);
    m.weights()[0] << 1.0, 2.0, -1.0, 0.5, 0.3, -0.7;
    m.weights()[1] << 0.5, -1.0, 2.0;
    return m;
}

VectorXd randn(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    VectorXd v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

} // namespace

TEST_CASE("forward pass and NTK diagonal of a hand-set network") {
    const auto m = tiny();
    VectorXd x(2);
    x << 1.0, -2.0;
    CHECK(m.forward(x)(0) == doctest::Approx(1.388044187577134).epsilon(1e-14));
    MatrixXd xs(1, 2);
    xs << 1.0, -2.0;
    CHECK(empirical_ntk_diagonal(m, xs)(0) == doctest::Approx(3.815).epsilon(1e-14));
}

TEST_CASE("parameter gradient matches central differences") {
    for (auto par : {Parameterization::ntk, Parameterization::standard}) {
        ModelSpec s;
        s.widths = {5, 7, 6, 3};
        s.parameterization = par;
        s.use_bias = true;
        s.sigma_b = 0.3;
        s.seed = 11;
        auto m = init(s);
        std::mt19937_64 rng(1);
        const VectorXd x = randn(5, rng);
        const VectorXd g = m.grad_param(x, 2).flatten();
        const VectorXd theta = m.flat_parameters();
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < theta.size(); i += 3) {
            VectorXd tp = theta, tm = theta;
            tp(i) += h;
            tm(i) -= h;
            m.set_flat_parameters(tp);
            const double fp = m.forward(x)(2);
            m.set_flat_parameters(tm);
            const double fm = m.forward(x)(2);
            CHECK(g(i) == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("batched backward equals the sum of per-sample gradients") {
    ModelSpec s;
    s.widths = {4, 8, 2};
    s.seed = 5;
    const auto m = init(s);
    std::mt19937_64 rng(2);
    MatrixXd xt(4, 3), og(2, 3);
    for (int j = 0; j < 3; ++j) {
        xt.col(j) = randn(4, rng);
        og.col(j) = randn(2, rng);
    }
    ForwardCache cache;
    m.forward_cached(xt, cache);
    GradientBundle g;
    m.backward(cache, og, g);
    VectorXd expect = VectorXd::Zero(m.parameter_count());
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c) expect += og(c, j) * m.grad_param(xt.col(j), c).flatten();
    CHECK((g.flatten() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("empirical NTK equals the Gram matrix of explicit gradients") {
    ModelSpec s;
    s.widths = {6, 10, 9, 2};
    s.use_bias = true;
    s.sigma_b = 0.5;
    s.seed = 9;
    const auto m = init(s);
    std::mt19937_64 rng(4);
    MatrixXd xs(5, 6);
    for (int i = 0; i < 5; ++i) xs.row(i) = randn(6, rng).transpose();
    for (Eigen::Index out = 0; out < 2; ++out) {
        const auto k = empirical_ntk(m, xs, out);
        MatrixXd j(5, m.parameter_count());
        for (int i = 0; i < 5; ++i) j.row(i) = m.grad_param(xs.row(i).transpose(), out).flatten().transpose();
        const MatrixXd gram = j * j.transpose();
        CHECK((k.matrix() - gram).cwiseAbs().maxCoeff() < 1e-12 * gram.cwiseAbs().maxCoeff());
        CHECK((empirical_ntk_diagonal(m, xs, out) - gram.diagonal()).cwiseAbs().maxCoeff() < 1e-12 * gram.maxCoeff());
    }
}

TEST_CASE("Euler identity and homogeneity on bias-free nets") {
    std::mt19937_64 rng(7);
    for (auto act : {Activation::relu, Activation::linear})
        for (int depth = 1; depth <= 4; ++depth) {
            ModelSpec s;
            s.widths.push_back(6);
            for (int l = 1; l < depth; ++l) s.widths.push_back(12);
            s.widths.push_back(2);
            s.activation = act;
            s.seed = rng();
            const auto m = init(s);
            CHECK(m.homogeneity_degree() == depth);
            const VectorXd x = randn(6, rng);
            CHECK(check_euler(m, x, 0) < 1e-10);
            CHECK(check_homogeneity(m, x, 1.7) < 1e-10);
            CHECK(check_euler(m, x, 1) < 1e-5);
        }
}

TEST_CASE("biased models are not homogeneous") {
    ModelSpec s;
    s.widths = {3, 4, 1};
    s.use_bias = true;
    s.sigma_b = 1.0;
    const auto m = init(s);
    CHECK_THROWS_AS(m.homogeneity_degree(), ValidationError);
    CHECK_THROWS_AS(check_euler(m, VectorXd::Ones(3), 0), ValidationError);
}

TEST_CASE("initialisation statistics follow the parameterisation") {
    ModelSpec s;
    s.widths = {400, 500, 1};
    s.sigma_w = 2.0;
    s.seed = 3;
    const auto ntk = init(s);
    CHECK(ntk.layer_scale(0) == doctest::Approx(2.0 / 20.0));
    const double var_ntk = ntk.weights()[0].array().square().mean();
    CHECK(var_ntk == doctest::Approx(1.0).epsilon(0.02));
    s.parameterization = Parameterization::standard;
    const auto std_m = init(s);
    CHECK(std_m.layer_scale(0) == 1.0);
    CHECK(std_m.weights()[0].array().square().mean() == doctest::Approx(4.0 / 400.0).epsilon(0.02));
    CHECK(init(s) == std_m);
}

TEST_CASE("checkpoint round trip is exact") {
    ModelSpec s;
    s.widths = {3, 5, 2};
    s.use_bias = true;
    s.sigma_w = 1.4142135623730951;
    s.sigma_b = 0.1;
    s.seed = 42;
    const auto m = init(s);
    const auto back = from_checkpoint(to_checkpoint(m));
    CHECK(back == m);
    CHECK(back.spec().sigma_w == s.sigma_w);
    CHECK_THROWS_AS(from_checkpoint("l2flow-mlp 1\nwidths 3 5"), ValidationError);
}

TEST_CASE("scale_parameters scales the squared norm quadratically") {
    ModelSpec s;
    s.widths = {3, 4, 1};
    auto m = init(s);
    const double n0 = m.squared_norm();
    m.scale_parameters(0.5);
    CHECK(m.squared_norm() == doctest::Approx(0.25 * n0));
}
