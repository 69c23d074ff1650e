#include "l2flow/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace l2flow::trainer {

using Eigen::Index;
using Eigen::MatrixXd;

PiecewiseSchedule standard_schedule(double total_epochs) {
    return PiecewiseSchedule{{0.3 * total_epochs, 0.6 * total_epochs, 0.9 * total_epochs}, 0.2};
}

void TrainConfig::validate() const {
    if (!(eta > 0.0)) throw ValidationError("train: eta must be positive");
    if (!(lambda >= 0.0)) throw ValidationError("train: lambda must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train: momentum must lie in [0, 1)");
    if (batch_size < 0) throw ValidationError("train: batch_size must be >= 0");
    if (max_steps < 0) throw ValidationError("train: max_steps must be >= 0");
    if (eval_every < 1) throw ValidationError("train: eval_every must be >= 1");
    if (lr_schedule) {
        for (std::size_t i = 1; i < lr_schedule->boundaries.size(); ++i)
            if (!(lr_schedule->boundaries[i] > lr_schedule->boundaries[i - 1]))
                throw ValidationError("train: lr schedule boundaries must be strictly increasing");
        if (!(lr_schedule->factor > 0.0)) throw ValidationError("train: lr schedule factor must be positive");
    }
}

bool MetricsRecord::same_values(const MetricsRecord& o) const {
    return step == o.step && epoch == o.epoch && train_loss == o.train_loss && l2_term == o.l2_term &&
           train_error == o.train_error && test_accuracy == o.test_accuracy && lambda == o.lambda &&
           eta == o.eta;
}

bool MetricsSeries::same_values(const MetricsSeries& o) const {
    if (records.size() != o.records.size() || blow_up_step != o.blow_up_step) return false;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (!records[i].same_values(o.records[i])) return false;
    return true;
}

double MetricsSeries::max_test_accuracy() const {
    double best = 0.0;
    for (const auto& r : records) best = std::max(best, r.test_accuracy);
    return best;
}

void write_metrics_csv(const MetricsSeries& series, std::ostream& os) {
    os << kMetricsCsvHeader << '\n';
    os.precision(17);
    for (const auto& r : series.records)
        os << r.step << ',' << r.epoch << ',' << r.train_loss << ',' << r.l2_term << ','
           << r.train_error << ',' << r.test_accuracy << ',' << r.lambda << ',' << r.eta << ','
           << r.wall_time << '\n';
}

void write_metrics_record_jsonl(const MetricsRecord& r, std::ostream& os) {
    nlohmann::json j{{"step", r.step},           {"epoch", r.epoch},
                     {"train_loss", r.train_loss}, {"l2_term", r.l2_term},
                     {"train_error", r.train_error}, {"test_accuracy", r.test_accuracy},
                     {"lambda", r.lambda},       {"eta", r.eta},
                     {"wall_time", r.wall_time}};
    os << j.dump() << '\n';
}

namespace {

void compute_loss_and_grad(const MLPModel& m, const MatrixXd& xt, const MatrixXd& yt, LossKind loss,
                           network::ForwardCache& cache, MatrixXd& out_grad, LossAndGrad& out) {
    if (xt.cols() == 0) throw ValidationError("loss_and_grad: empty batch");
    const MatrixXd& f = m.forward_cached(xt, cache);
    const double inv_n = 1.0 / static_cast<double>(xt.cols());
    out.loss = loss_sum(loss, f, yt, &out_grad) * inv_n;
    out.errors = count_errors(f, yt);
    out_grad *= inv_n;
    m.backward(cache, out_grad, out.grad);
}

struct Evaluation {
    double loss = 0.0;
    double error = 0.0;
};

Evaluation evaluate(const MLPModel& m, const MatrixXd& xt, const MatrixXd& yt, LossKind loss,
                    network::ForwardCache& cache) {
    constexpr Index kChunk = 1024;
    double total = 0.0;
    Index wrong = 0;
    for (Index start = 0; start < xt.cols(); start += kChunk) {
        const Index len = std::min(kChunk, xt.cols() - start);
        const MatrixXd xs = xt.middleCols(start, len);
        const MatrixXd ys = yt.middleCols(start, len);
        const MatrixXd& f = m.forward_cached(xs, cache);
        total += loss_sum(loss, f, ys, nullptr);
        wrong += count_errors(f, ys);
    }
    const double n = static_cast<double>(xt.cols());
    return {total / n, static_cast<double>(wrong) / n};
}

double eta_at(const TrainConfig& cfg, double epoch) {
    double eta = cfg.eta;
    if (cfg.lr_schedule)
        for (double b : cfg.lr_schedule->boundaries)
            if (epoch >= b) eta *= cfg.lr_schedule->factor;
    return eta;
}

} // namespace

LossAndGrad loss_and_grad(const MLPModel& m, const MatrixXd& xt, const MatrixXd& yt, LossKind loss) {
    network::ForwardCache cache;
    MatrixXd g;
    LossAndGrad out;
    compute_loss_and_grad(m, xt, yt, loss, cache, g, out);
    return out;
}

void sgd_step(MLPModel& m, const GradientBundle& grad, double eta, double lambda, double momentum,
              GradientBundle& velocity, long step) {
    auto& ws = m.weights();
    auto& bs = m.biases();
    if (grad.weights.size() != ws.size() || grad.biases.size() != bs.size())
        throw ValidationError("sgd_step: gradient does not match model shape");
    bool finite = true;
    if (momentum == 0.0) {
        for (std::size_t l = 0; l < ws.size(); ++l) {
            ws[l] -= eta * (grad.weights[l] + lambda * ws[l]);
            finite = finite && ws[l].allFinite();
        }
        for (std::size_t l = 0; l < bs.size(); ++l) {
            bs[l] -= eta * (grad.biases[l] + lambda * bs[l]);
            finite = finite && bs[l].allFinite();
        }
    } else {
        if (velocity.weights.size() != ws.size()) velocity = m.zero_gradient();
        for (std::size_t l = 0; l < ws.size(); ++l) {
            velocity.weights[l] = momentum * velocity.weights[l] + grad.weights[l] + lambda * ws[l];
            ws[l] -= eta * velocity.weights[l];
            finite = finite && ws[l].allFinite();
        }
        for (std::size_t l = 0; l < bs.size(); ++l) {
            velocity.biases[l] = momentum * velocity.biases[l] + grad.biases[l] + lambda * bs[l];
            bs[l] -= eta * velocity.biases[l];
            finite = finite && bs[l].allFinite();
        }
    }
    if (!finite) {
        std::ostringstream os;
        os << "sgd_step: non-finite parameters after step " << step;
        throw BlowUpError(os.str(), static_cast<double>(step));
    }
}

double accuracy(const MLPModel& m, const data::Dataset& ds) {
    network::ForwardCache cache;
    return 1.0 - evaluate(m, ds.inputs.transpose(), ds.targets.transpose(), LossKind::mse, cache).error;
}

MetricsSeries train(MLPModel& model, const data::Dataset& train_ds, const data::Dataset& test_ds,
                    const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (train_ds.size() == 0) throw ValidationError("train: empty training set");
    if (train_ds.input_dim() != model.input_dim() || train_ds.target_dim() != model.output_dim())
        throw ValidationError("train: dataset and model dimensions disagree");
    if (test_ds.size() > 0 &&
        (test_ds.input_dim() != model.input_dim() || test_ds.target_dim() != model.output_dim()))
        throw ValidationError("train: test set and model dimensions disagree");

    const auto start = std::chrono::steady_clock::now();
    const MatrixXd x_train = train_ds.inputs.transpose();
    const MatrixXd y_train = train_ds.targets.transpose();
    const MatrixXd x_test = test_ds.inputs.transpose();
    const MatrixXd y_test = test_ds.targets.transpose();
    const Index n = train_ds.size();
    const Index batch = (cfg.batch_size == 0 || cfg.batch_size >= n) ? n : cfg.batch_size;
    const bool full_batch = batch == n;
    const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);

    network::ForwardCache cache, eval_cache;
    MatrixXd out_grad, xb, yb;
    LossAndGrad lg;
    GradientBundle velocity;
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    long perm_epoch = -1;

    double lambda = cfg.lambda;
    MetricsSeries series;

    auto record = [&](long step, double last_batch_loss, double last_batch_error) {
        MetricsRecord r;
        r.step = step;
        r.epoch = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
        if (cfg.full_train_metrics) {
            const auto ev = evaluate(model, x_train, y_train, cfg.loss, eval_cache);
            r.train_loss = ev.loss;
            r.train_error = ev.error;
        } else {
            r.train_loss = last_batch_loss;
            r.train_error = last_batch_error;
        }
        r.l2_term = 0.5 * lambda * model.squared_norm();
        r.test_accuracy = test_ds.size() > 0
                              ? 1.0 - evaluate(model, x_test, y_test, cfg.loss, eval_cache).error
                              : 0.0;
        r.lambda = lambda;
        r.eta = eta_at(cfg, r.epoch);
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        series.records.push_back(r);
        if (hooks.on_record) hooks.on_record(r, model);
    };

    record(0, std::nan(""), std::nan(""));
    if (hooks.stop_hook && hooks.stop_hook(series)) {
        series.stopped_at = 0;
        return series;
    }

    for (long step = 0; step < cfg.max_steps; ++step) {
        const long epoch = step / steps_per_epoch;
        const long pos = step % steps_per_epoch;
        const double eta = eta_at(cfg, static_cast<double>(step) / static_cast<double>(steps_per_epoch));

        const MatrixXd* xs = &x_train;
        const MatrixXd* ys = &y_train;
        Index bsize = n;
        if (!full_batch) {
            if (epoch != perm_epoch) {
                std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(epoch)};
                std::mt19937_64 rng(seq);
                std::iota(perm.begin(), perm.end(), Index{0});
                std::shuffle(perm.begin(), perm.end(), rng);
                perm_epoch = epoch;
            }
            const Index first = pos * batch;
            bsize = std::min(batch, n - first);
            xb.resize(x_train.rows(), bsize);
            yb.resize(y_train.rows(), bsize);
            for (Index j = 0; j < bsize; ++j) {
                const Index src = perm[static_cast<std::size_t>(first + j)];
                xb.col(j) = x_train.col(src);
                yb.col(j) = y_train.col(src);
            }
            xs = &xb;
            ys = &yb;
        }

        compute_loss_and_grad(model, *xs, *ys, cfg.loss, cache, out_grad, lg);
        const double batch_error = static_cast<double>(lg.errors) / static_cast<double>(bsize);
        try {
            sgd_step(model, lg.grad, eta, lambda, cfg.momentum, velocity, step + 1);
        } catch (const BlowUpError& e) {
            series.blow_up_step = step + 1;
            throw TrainingBlowUp(e.what(), step + 1, series);
        }

        const long done = step + 1;
        if (hooks.lambda_hook)
            lambda = hooks.lambda_hook(StepObservation{done, lg.loss, batch_error, lambda});

        if (done % cfg.eval_every == 0 || done == cfg.max_steps) {
            record(done, lg.loss, batch_error);
            if (hooks.stop_hook && hooks.stop_hook(series)) {
                series.stopped_at = done;
                break;
            }
        }
    }
    return series;
}

} // namespace l2flow::trainer
