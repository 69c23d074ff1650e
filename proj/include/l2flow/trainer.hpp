#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "l2flow/data.hpp"
#include "l2flow/errors.hpp"
#include "l2flow/losses.hpp"
#include "l2flow/network.hpp"

namespace l2flow::trainer {

using network::GradientBundle;
using network::MLPModel;

/// eta is multiplied by `factor` at every boundary epoch passed.
struct PiecewiseSchedule {
    std::vector<double> boundaries;  // epochs, strictly increasing
    double factor = 0.2;
};

/// Boundaries {0.3 T, 0.6 T, 0.9 T} with factor 0.2.
PiecewiseSchedule standard_schedule(double total_epochs);

struct TrainConfig {
    double eta = 0.1;
    double lambda = 0.0;
    double momentum = 0.0;
    Eigen::Index batch_size = 0;  // 0 = full batch
    LossKind loss = LossKind::softmax_norm;
    long max_steps = 1000;
    std::optional<PiecewiseSchedule> lr_schedule;
    long eval_every = 1;
    std::uint64_t seed = 0;
    /// Also evaluate the empirical loss / error on the whole training set at
    /// every evaluation point (one extra forward pass over the training set).
    bool full_train_metrics = true;

    void validate() const;
};

struct MetricsRecord {
    long step = 0;
    double epoch = 0.0;
    double train_loss = 0.0;  // empirical loss, no L2 term
    double l2_term = 0.0;     // lambda/2 |theta|^2
    double train_error = 0.0;
    double test_accuracy = 0.0;
    double lambda = 0.0;
    double eta = 0.0;
    double wall_time = 0.0;

    /// Equality on every field except wall_time.
    bool same_values(const MetricsRecord& o) const;
};

struct MetricsSeries {
    std::vector<MetricsRecord> records;
    /// Step at which a non-finite update was detected, if any.
    std::optional<long> blow_up_step;
    /// Step at which a stop hook ended the run early, if any.
    std::optional<long> stopped_at;

    bool same_values(const MetricsSeries& o) const;
    double max_test_accuracy() const;
};

/// Columns of the metrics CSV, in order.
inline constexpr const char* kMetricsCsvHeader =
    "step,epoch,train_loss,l2_term,train_error,test_accuracy,lambda,eta,wall_time";

void write_metrics_csv(const MetricsSeries& series, std::ostream& os);
/// One JSON object per line with the same fields.
void write_metrics_record_jsonl(const MetricsRecord& rec, std::ostream& os);

/// Mean batch loss and its parameter gradient. Columns of xt / yt are samples.
struct LossAndGrad {
    double loss = 0.0;
    Eigen::Index errors = 0;
    GradientBundle grad;
};

LossAndGrad loss_and_grad(const MLPModel& m, const Eigen::MatrixXd& xt, const Eigen::MatrixXd& yt,
                          LossKind loss);

/// g_total = grad + lambda theta; v <- mu v + g_total; theta <- theta - eta v.
/// Throws BlowUpError if the update produces a non-finite parameter.
void sgd_step(MLPModel& m, const GradientBundle& grad, double eta, double lambda, double momentum,
              GradientBundle& velocity, long step = 0);

/// What a schedule hook sees after each optimisation step.
struct StepObservation {
    long step = 0;              // 1-based count of completed updates
    double batch_loss = 0.0;    // empirical loss of the batch used by this step
    double batch_error = 0.0;   // error rate on the same batch
    double lambda = 0.0;        // lambda used for this step
};

/// Called after every update; may change the lambda used from the next step on.
using LambdaHook = std::function<double(const StepObservation&)>;
/// Called after every evaluation; returning true ends the run.
using StopHook = std::function<bool(const MetricsSeries&)>;

struct TrainHooks {
    LambdaHook lambda_hook;
    StopHook stop_hook;
    /// Streams every new record as it is produced, with the model state the
    /// record was measured on.
    std::function<void(const MetricsRecord&, const MLPModel&)> on_record;
};

/// Thrown by train() on a non-finite update; carries the metrics so far.
class TrainingBlowUp : public BlowUpError {
public:
    TrainingBlowUp(const std::string& what, long step, MetricsSeries partial)
        : BlowUpError(what, static_cast<double>(step)), partial_(std::move(partial)) {}
    const MetricsSeries& partial() const noexcept { return partial_; }

private:
    MetricsSeries partial_;
};

/// Mini-batch SGD on `model` (mutated in place). Metrics are recorded at
/// step 0 and then every eval_every steps, plus the final step.
MetricsSeries train(MLPModel& model, const data::Dataset& train_ds, const data::Dataset& test_ds,
                    const TrainConfig& config, const TrainHooks& hooks = {});

/// Accuracy of the model on a dataset (sign or argmax).
double accuracy(const MLPModel& m, const data::Dataset& ds);

} // namespace l2flow::trainer
