#include <doctest.h>

#include <cmath>
#include <random>

#include "l2flow/errors.hpp"
#include "l2flow/losses.hpp"

using namespace l2flow;
using Eigen::MatrixXd;

TEST_CASE("normalized softmax on zero logits") {
    MatrixXd f = MatrixXd::Zero(2, 1), y(2, 1);
    y << 1.0, 0.0;
    CHECK(loss_sum(LossKind::softmax_norm, f, y, nullptr) == doctest::Approx(std::log(2.0) / 4.0).epsilon(1e-15));
}

TEST_CASE("mse is half the squared error per sample") {
    MatrixXd f(1, 2), y(1, 2);
    f << 1.0, 3.0;
    y << 0.0, 1.0;
    MatrixXd g;
    CHECK(loss_sum(LossKind::mse, f, y, &g) == doctest::Approx(0.5 + 2.0));
    CHECK(g(0, 0) == 1.0);
    CHECK(g(0, 1) == 2.0);
}

TEST_CASE("loss gradients match central differences") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (auto kind : {LossKind::mse, LossKind::softmax_norm}) {
        MatrixXd f(4, 3), y = MatrixXd::Zero(4, 3);
        for (auto& v : f.reshaped()) v = 3.0 * n(rng);
        for (int j = 0; j < 3; ++j) y(j % 4, j) = 1.0;
        MatrixXd g;
        loss_sum(kind, f, y, &g);
        const double h = 1e-6;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) {
                MatrixXd fp = f, fm = f;
                fp(i, j) += h;
                fm(i, j) -= h;
                const double fd = (loss_sum(kind, fp, y, nullptr) - loss_sum(kind, fm, y, nullptr)) / (2 * h);
                CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-6));
            }
    }
}

TEST_CASE("softmax stays finite for large logits") {
    MatrixXd f(2, 1), y(2, 1);
    f << 1000.0, -1000.0;
    y << 0.0, 1.0;
    const double l = loss_sum(LossKind::softmax_norm, f, y, nullptr);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(2000.0 / 4.0));
}

TEST_CASE("count_errors uses sign for scalars and argmax otherwise") {
    MatrixXd f(1, 3), y(1, 3);
    f << 0.5, -0.2, 0.1;
    y << 1.0, 1.0, -1.0;
    CHECK(count_errors(f, y) == 2);
    MatrixXd f2(3, 2), y2 = MatrixXd::Zero(3, 2);
    f2 << 1, 0, 2, 5, 0, 1;
    y2(1, 0) = 1.0;
    y2(0, 1) = 1.0;
    CHECK(count_errors(f2, y2) == 1);
    CHECK(parse_loss("softmax") == LossKind::softmax_norm);
    CHECK_THROWS_AS(parse_loss("hinge"), ValidationError);
}
