#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "l2flow/trainer.hpp"

namespace l2flow::autoschedule {

enum class TimeUnit { steps, epochs };

TimeUnit parse_unit(const std::string& name);
std::string to_string(TimeUnit u);

/// Reference coefficient measured for a Wide ResNet on CIFAR-10 (epochs,
/// lambda probe 0.01 for 2 epochs). Kept for worked examples only.
inline constexpr double kWideResNetC = 0.0066;

struct CMeasurement {
    double lambda_probe = 0.0;
    double t_star_probe = 0.0;
    double c = 0.0;
    TimeUnit unit = TimeUnit::steps;
    double max_accuracy = 0.0;
};

/// c = lambda_probe * t*, with t* the first evaluation within `tol` (absolute
/// accuracy) of the series maximum.
CMeasurement measure_c_from_series(const trainer::MetricsSeries& series, double lambda_probe,
                                   TimeUnit unit = TimeUnit::steps, double tol = 0.005);

/// Trains with lambda_probe until test accuracy has not improved for
/// `patience` consecutive evaluations, then extracts c. Throws RuntimeFailure
/// if the budget (config.max_steps) runs out before the peak is detected.
CMeasurement measure_c(trainer::MLPModel model, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, trainer::TrainConfig config, double lambda_probe,
                       int patience = 5, TimeUnit unit = TimeUnit::steps,
                       trainer::MetricsSeries* series_out = nullptr);

/// c / T, or c / T1 when a first learning-rate decay time is given. The budget
/// unit must match the unit c was measured in.
double predict_lambda(const CMeasurement& c, double budget, TimeUnit budget_unit,
                      std::optional<double> first_decay = std::nullopt);

struct AutoL2Config {
    double lambda0 = 0.1;
    double decay_factor = 10.0;
    long measure_every = 10;
    double refractory_constant = 0.1;
    double lambda_floor = 1e-8;
};

/// Dynamic L2 schedule. At every measurement step t (t mod k == 0):
///   if (loss or error exceeded its running minimum at both t and t-k) and t >= min_step:
///       lambda /= decay_factor; min_step = t + refractory_constant / lambda
///   else:
///       minloss = min(minloss, loss_{t-k}); minerror = min(minerror, error_{t-k})
class AutoL2 {
public:
    struct State {
        double lambda = 0.1;
        double min_loss = std::numeric_limits<double>::infinity();
        double min_error = std::numeric_limits<double>::infinity();
        double min_step = 0.0;
        std::optional<double> prev_loss;
        std::optional<double> prev_error;
    };

    struct Event {
        long step = 0;
        double lambda_before = 0.0;
        double lambda_after = 0.0;
    };

    explicit AutoL2(AutoL2Config config = {});

    const AutoL2Config& config() const noexcept { return config_; }
    const State& state() const noexcept { return state_; }
    const std::vector<Event>& decays() const noexcept { return decays_; }

    /// Feeds one measurement taken at `step`; returns the lambda to use next.
    double observe(long step, double loss, double error);

    /// Trainer adapter: measures every `measure_every` steps on the step's batch.
    trainer::LambdaHook hook();

private:
    AutoL2Config config_;
    State state_;
    std::vector<Event> decays_;
};

} // namespace l2flow::autoschedule
