#include <doctest.h>

#include <cmath>
#include <random>

#include "l2flow/autoschedule.hpp"
#include "l2flow/errors.hpp"

using namespace l2flow;
using namespace l2flow::autoschedule;

namespace {

trainer::MetricsSeries series(const std::vector<long>& steps, const std::vector<double>& acc) {
    trainer::MetricsSeries s;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        trainer::MetricsRecord r;
        r.step = steps[i];
        r.epoch = static_cast<double>(steps[i]) / 10.0;
        r.test_accuracy = acc[i];
        s.records.push_back(r);
    }
    return s;
}

} // namespace

TEST_CASE("c from a series peaking at step 100") {
    const auto s = series({0, 50, 100, 150, 200}, {0.1, 0.5, 0.9, 0.8, 0.7});
    const auto c = measure_c_from_series(s, 0.05);
    CHECK(c.c == doctest::Approx(5.0));
    CHECK(c.t_star_probe == 100.0);
    CHECK(measure_c_from_series(s, 0.05, TimeUnit::epochs).c == doctest::Approx(0.5));
    CHECK_THROWS_AS(measure_c_from_series(series({0, 1}, {0.9, 0.1}), 0.05), RuntimeFailure);
}

TEST_CASE("predict_lambda reference values") {
    CMeasurement c;
    c.c = 1.0;
    CHECK(predict_lambda(c, 1.0, TimeUnit::steps) == 1.0);
    c.c = kWideResNetC;
    c.unit = TimeUnit::epochs;
    CHECK(predict_lambda(c, 50.0, TimeUnit::epochs) == doctest::Approx(1.32e-4).epsilon(1e-12));
    CHECK(predict_lambda(c, 200.0, TimeUnit::epochs, 60.0) == doctest::Approx(1.1e-4).epsilon(1e-12));
    CHECK_THROWS_AS(predict_lambda(c, 50.0, TimeUnit::steps), ValidationError);
    CHECK_THROWS_AS(predict_lambda(c, 0.0, TimeUnit::epochs), ValidationError);
}

TEST_CASE("predict_lambda is homogeneous in the budget") {
    CMeasurement c;
    c.c = 0.37;
    for (double t : {3.0, 70.0, 1e4})
        for (double a : {0.5, 2.0, 8.0})
            CHECK(predict_lambda(c, a * t, TimeUnit::steps) == doctest::Approx(predict_lambda(c, t, TimeUnit::steps) / a));
}

TEST_CASE("AutoL2 decays after two consecutive rises past the refractory step") {
    AutoL2 a;
    CHECK(a.observe(10, 1.0, 0.5) == 0.1);
    CHECK(a.observe(20, 0.8, 0.4) == 0.1);   // minima <- (1.0, 0.5)
    CHECK(a.observe(30, 0.9, 0.45) == 0.1);  // minima <- (0.8, 0.4)
    CHECK(a.observe(40, 0.85, 0.42) == doctest::Approx(0.01));
    CHECK(a.state().min_step == doctest::Approx(40.0 + 0.1 / 0.01));
    REQUIRE(a.decays().size() == 1);
    CHECK(a.decays()[0].step == 40);
}

TEST_CASE("AutoL2 does not decay inside the refractory window") {
    AutoL2Config cfg;
    cfg.refractory_constant = 10.0;  // 100 steps at lambda = 0.1 after the first decay
    AutoL2 a(cfg);
    a.observe(10, 1.0, 0.5);
    a.observe(20, 0.5, 0.2);
    a.observe(30, 0.6, 0.3);
    a.observe(40, 0.7, 0.3);  // decay: min_step = 40 + 10 / 0.01 = 1040
    CHECK(a.state().lambda == doctest::Approx(0.01));
    for (long s = 50; s < 1040; s += 10) a.observe(s, 5.0, 1.0);
    CHECK(a.state().lambda == doctest::Approx(0.01));
    a.observe(1040, 5.0, 1.0);
    CHECK(a.state().lambda == doctest::Approx(0.001));
}

TEST_CASE("AutoL2: one rise followed by a new minimum does not decay") {
    AutoL2 a;
    a.observe(10, 1.0, 0.5);
    a.observe(20, 0.8, 0.4);
    a.observe(30, 0.9, 0.45);
    a.observe(40, 0.7, 0.35);
    CHECK(a.state().lambda == 0.1);
    CHECK(a.state().min_loss == 0.8);
    a.observe(50, 0.6, 0.3);
    CHECK(a.state().min_loss == 0.7);
    CHECK(a.state().min_error == 0.35);
}

TEST_CASE("AutoL2 trajectory is a non-increasing power-of-ten step function with honoured refractory") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AutoL2 a;
    std::vector<double> lambdas;
    for (long s = 10; s <= 200000; s += 10) lambdas.push_back(a.observe(s, u(rng), u(rng)));
    for (std::size_t i = 1; i < lambdas.size(); ++i) CHECK(lambdas[i] <= lambdas[i - 1]);
    for (const auto& e : a.decays()) {
        const double j = std::log10(0.1 / e.lambda_after);
        CHECK(std::abs(j - std::round(j)) < 1e-9);
        CHECK(e.lambda_after >= 1e-8);
    }
    for (std::size_t i = 1; i < a.decays().size(); ++i)
        CHECK(static_cast<double>(a.decays()[i].step - a.decays()[i - 1].step) >= 0.1 / a.decays()[i - 1].lambda_after);
    CHECK(a.state().lambda >= 1e-8);
}

TEST_CASE("AutoL2 hook measures every k steps; cadences 10 and 5") {
    for (long k : {10L, 5L}) {
        AutoL2Config cfg;
        cfg.measure_every = k;
        AutoL2 a(cfg);
        auto hook = a.hook();
        double loss = 1.0;
        for (long s = 1; s <= 4 * k; ++s) {
            loss = s <= 2 * k ? 1.0 / s : 2.0;
            hook({s, loss, 0.0, a.state().lambda});
        }
        CHECK(a.decays().size() == 1);
        CHECK(a.decays()[0].step % k == 0);
    }
}

TEST_CASE("AutoL2 config validation") {
    AutoL2Config c;
    c.decay_factor = 1.0;
    CHECK_THROWS_AS(AutoL2{c}, ValidationError);
    c = {};
    c.lambda0 = 0.0;
    CHECK_THROWS_AS(AutoL2{c}, ValidationError);
    CHECK(parse_unit("epochs") == TimeUnit::epochs);
    CHECK_THROWS_AS(parse_unit("hours"), ValidationError);
}
