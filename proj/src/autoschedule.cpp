#include "l2flow/autoschedule.hpp"

#include <algorithm>
#include <sstream>

#include "l2flow/harness.hpp"

namespace l2flow::autoschedule {

TimeUnit parse_unit(const std::string& name) {
    if (name == "steps") return TimeUnit::steps;
    if (name == "epochs") return TimeUnit::epochs;
    throw ValidationError("unknown time unit '" + name + "' (expected steps or epochs)");
}

std::string to_string(TimeUnit u) { return u == TimeUnit::steps ? "steps" : "epochs"; }

CMeasurement measure_c_from_series(const trainer::MetricsSeries& series, double lambda_probe,
                                   TimeUnit unit, double tol) {
    if (!(lambda_probe > 0.0)) throw ValidationError("measure_c: lambda_probe must be positive");
    const auto ts = harness::extract_tstar(series, tol);
    const auto& hit = series.records[ts.index];
    CMeasurement m;
    m.lambda_probe = lambda_probe;
    m.unit = unit;
    m.t_star_probe = unit == TimeUnit::steps ? static_cast<double>(hit.step) : hit.epoch;
    m.c = lambda_probe * m.t_star_probe;
    m.max_accuracy = ts.max_accuracy;
    if (!(m.c > 0.0))
        throw RuntimeFailure("measure_c: accuracy peaked at t = 0; the probe measured nothing");
    return m;
}

CMeasurement measure_c(trainer::MLPModel model, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, trainer::TrainConfig config, double lambda_probe,
                       int patience, TimeUnit unit, trainer::MetricsSeries* series_out) {
    if (patience < 1) throw ValidationError("measure_c: patience must be >= 1");
    config.lambda = lambda_probe;
    trainer::TrainHooks hooks;
    hooks.stop_hook = [patience](const trainer::MetricsSeries& s) {
        std::size_t best = 0;
        for (std::size_t i = 0; i < s.records.size(); ++i)
            if (s.records[i].test_accuracy > s.records[best].test_accuracy) best = i;
        return s.records.size() - 1 - best >= static_cast<std::size_t>(patience);
    };
    auto series = trainer::train(model, train_ds, test_ds, config, hooks);
    if (series_out) *series_out = series;
    if (!series.stopped_at) {
        std::ostringstream os;
        os << "measure_c: test accuracy was still improving after " << config.max_steps
           << " steps at lambda_probe=" << lambda_probe << "; use a larger lambda_probe or budget";
        throw RuntimeFailure(os.str());
    }
    return measure_c_from_series(series, lambda_probe, unit);
}

double predict_lambda(const CMeasurement& c, double budget, TimeUnit budget_unit,
                      std::optional<double> first_decay) {
    if (budget_unit != c.unit) {
        std::ostringstream os;
        os << "predict_lambda: c was measured in " << to_string(c.unit) << " but the budget is in "
           << to_string(budget_unit);
        throw ValidationError(os.str());
    }
    const double t = first_decay ? *first_decay : budget;
    if (!(t > 0.0)) throw ValidationError("predict_lambda: budget must be positive");
    return c.c / t;
}

AutoL2::AutoL2(AutoL2Config config) : config_(config) {
    if (!(config_.lambda0 > 0.0)) throw ValidationError("autol2: lambda0 must be positive");
    if (!(config_.decay_factor > 1.0)) throw ValidationError("autol2: decay_factor must exceed 1");
    if (config_.measure_every < 1) throw ValidationError("autol2: measure_every must be >= 1");
    if (!(config_.refractory_constant >= 0.0))
        throw ValidationError("autol2: refractory_constant must be non-negative");
    state_.lambda = config_.lambda0;
}

double AutoL2::observe(long step, double loss, double error) {
    auto& s = state_;
    const bool loss_up = s.prev_loss && loss > s.min_loss && *s.prev_loss > s.min_loss;
    const bool error_up = s.prev_error && error > s.min_error && *s.prev_error > s.min_error;
    const bool can_decay = s.lambda / config_.decay_factor >= config_.lambda_floor;
    if ((loss_up || error_up) && static_cast<double>(step) >= s.min_step && can_decay) {
        const double before = s.lambda;
        s.lambda /= config_.decay_factor;
        s.min_step = static_cast<double>(step) + config_.refractory_constant / s.lambda;
        decays_.push_back({step, before, s.lambda});
    } else {
        if (s.prev_loss) s.min_loss = std::min(s.min_loss, *s.prev_loss);
        if (s.prev_error) s.min_error = std::min(s.min_error, *s.prev_error);
    }
    s.prev_loss = loss;
    s.prev_error = error;
    return s.lambda;
}

trainer::LambdaHook AutoL2::hook() {
    return [this](const trainer::StepObservation& obs) {
        if (obs.step % config_.measure_every == 0) return observe(obs.step, obs.batch_loss, obs.batch_error);
        return state_.lambda;
    };
}

} // namespace l2flow::autoschedule
