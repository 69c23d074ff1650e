#include <algorithm>
#include <cmath>
#include <limits>

#include "l2flow/errors.hpp"
#include "l2flow/flow.hpp"
#include "l2flow/harness.hpp"

namespace l2flow::harness {

namespace {

trainer::TrainConfig gd_config(double eta, double lambda, long steps, long every) {
    trainer::TrainConfig cfg;
    cfg.eta = eta;
    cfg.lambda = lambda;
    cfg.loss = LossKind::mse;
    cfg.batch_size = 0;
    cfg.max_steps = steps;
    cfg.eval_every = every;
    return cfg;
}

void require_scalar_bias_free(const network::ModelSpec& spec, const data::Dataset& ds, const char* who) {
    if (spec.use_bias) throw ValidationError(std::string(who) + ": model must be bias-free");
    if (spec.widths.empty() || spec.widths.back() != 1 || ds.target_dim() != 1)
        throw ValidationError(std::string(who) + ": needs a scalar-output model and scalar targets");
}

// With ntk scaling the first-layer gradient stays in the span of the training
// inputs, so training on span coordinates is exact and much cheaper when N < d.
std::pair<network::ModelSpec, data::Dataset> reduce_inputs(network::ModelSpec spec, const data::Dataset& ds) {
    if (spec.parameterization != network::Parameterization::ntk || ds.size() >= ds.input_dim()) return {spec, ds};
    auto proj = data::project_to_span(ds);
    spec.widths.front() = proj.reduced.input_dim();
    return {spec, std::move(proj.reduced)};
}

} // namespace

std::vector<KernelDecayPoint> kernel_decay_experiment(const network::ModelSpec& full_spec,
                                                      const data::Dataset& full_ds, double eta, double lambda,
                                                      long steps, long every) {
    require_scalar_bias_free(full_spec, full_ds, "kernel_decay_experiment");
    const auto [spec, train_ds] = reduce_inputs(full_spec, full_ds);
    auto model = network::init(spec);
    const int k = model.homogeneity_degree();
    const data::Dataset empty;
    double trace0 = 0.0;
    std::vector<KernelDecayPoint> out;
    trainer::TrainHooks hooks;
    hooks.on_record = [&](const trainer::MetricsRecord& r, const network::MLPModel& m) {
        const double tr = network::empirical_ntk_diagonal(m, train_ds.inputs).sum();
        if (r.step == 0) trace0 = tr;
        const double t = static_cast<double>(r.step) * eta;
        out.push_back({t, tr / trace0, flow::kernel_scale(k, lambda, t)});
    };
    auto cfg = gd_config(eta, lambda, steps, every);
    cfg.full_train_metrics = false;
    trainer::train(model, train_ds, empty, cfg, hooks);
    return out;
}

TheoryComparison theory_vs_experiment(const network::ModelSpec& full_spec, const data::Dataset& full_ds, double eta,
                                      double lambda, double horizon, long every) {
    require_scalar_bias_free(full_spec, full_ds, "theory_vs_experiment");
    const auto [spec, train_ds] = reduce_inputs(full_spec, full_ds);
    if (!(lambda > 0.0)) throw ValidationError("theory_vs_experiment: lambda must be positive");
    if (!(horizon >= 1.0)) throw ValidationError("theory_vs_experiment: horizon must be >= 1");
    auto model = network::init(spec);
    const int k = model.homogeneity_degree();
    const double n = static_cast<double>(train_ds.size());

    // The trainer minimises the batch mean, so the flow kernel is Theta_0 / N
    // and gradient-descent step s corresponds to flow time s * eta.
    const auto theta0 = network::empirical_ntk(model, train_ds.inputs);
    const numerics::SymMatrix kernel(theta0.matrix() / n, 1e-10);
    const Eigen::MatrixXd f0 = model.forward(train_ds.inputs);
    const flow::FlowProblem problem(kernel, train_ds.targets, f0, k, lambda, LossKind::mse);
    const auto peak = flow::loss_peak_time(problem);

    TheoryComparison cmp;
    cmp.theory_t_min = peak.t_min;
    cmp.theory_interior_min = peak.interior;
    const long steps = static_cast<long>(std::ceil(horizon * peak.t_min / eta));

    const data::Dataset empty;
    trainer::TrainHooks hooks;
    hooks.on_record = [&](const trainer::MetricsRecord& r, const network::MLPModel&) {
        cmp.t.push_back(static_cast<double>(r.step) * eta);
        cmp.experiment.push_back(r.train_loss);
    };
    trainer::train(model, train_ds, empty, gd_config(eta, lambda, steps, every), hooks);

    cmp.theory = closed_form_solution(problem, cmp.t).train_loss;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cmp.t.size(); ++i) {
        if (cmp.experiment[i] < best) {
            best = cmp.experiment[i];
            cmp.experiment_t_min = cmp.t[i];
        }
        if (cmp.t[i] <= peak.t_min)
            cmp.max_rel_dev_to_min =
                std::max(cmp.max_rel_dev_to_min, std::abs(cmp.experiment[i] - cmp.theory[i]) / cmp.theory[i]);
    }
    return cmp;
}

} // namespace l2flow::harness
