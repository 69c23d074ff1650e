#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "l2flow/data.hpp"
#include "l2flow/network.hpp"
#include "l2flow/numerics.hpp"
#include "l2flow/trainer.hpp"

namespace l2flow::harness {

struct TStar {
    double t_star = 0.0;       // step of the first record within tol of the max
    double max_accuracy = 0.0;
    std::size_t index = 0;     // record index of t_star
};

/// max_acc = max test accuracy; t* = earliest evaluation with accuracy
/// >= max_acc - tol (tol in absolute accuracy units).
TStar extract_tstar(const trainer::MetricsSeries& series, double tol = 0.005);

/// First evaluation step with zero training error, if any.
std::optional<double> extract_tfit(const trainer::MetricsSeries& series);

struct BudgetPolicy {
    enum class Mode { fixed, inverse_lambda };
    Mode mode = Mode::fixed;
    double epochs = 100.0;     // fixed budget T
    double kappa = 2.0;        // inverse_lambda: T = kappa / (eta lambda) or kappa / lambda
    bool include_eta = true;

    /// Budget in epochs for one cell. lambda = 0 has no inverse budget and
    /// must be resolved by the caller.
    double epochs_for(double eta, double lambda) const;
};

struct SweepCell {
    double eta = 0.0;
    double lambda = 0.0;
    double sigma_w = 0.0;
    double t_star = 0.0;
    double max_test_acc = 0.0;
    std::optional<double> t_fit;
    long budget_steps = 0;
    bool blow_up = false;
    trainer::MetricsSeries series;
};

struct SweepResult {
    std::vector<SweepCell> cells;

    const SweepCell* find(double eta, double lambda) const;
};

struct SweepSpec {
    network::ModelSpec model;
    trainer::TrainConfig base;
    std::vector<double> etas;
    std::vector<double> lambdas;
    /// Optional third grid axis; empty means model.sigma_w only.
    std::vector<double> sigma_ws;
    BudgetPolicy budget;
    /// When > 0, each cell evaluates every max(1, budget_steps / evals_per_run)
    /// steps instead of base.eval_every.
    long evals_per_run = 0;
    int workers = 1;
    /// Per-cell metrics CSVs and grid.csv are written here when set.
    std::optional<std::filesystem::path> out_dir;
};

/// One deterministic run per (sigma_w, eta, lambda) cell, all from the same
/// initialisation seed. lambda = 0 cells run for the longest lambda > 0 budget
/// in the sweep (or the fixed budget). Cells run on a bounded worker pool;
/// results are ordered by grid position regardless of completion order.
SweepResult run_sweep(const SweepSpec& spec, const data::Dataset& train_ds,
                      const data::Dataset& test_ds);

inline constexpr const char* kGridCsvHeader = "eta,lambda,sigma_w,t_star,max_acc,t_fit,budget,blow_up";
void write_grid_csv(const SweepResult& grid, std::ostream& os);

struct ScalingReport {
    numerics::PowerLawFit fit;
    std::size_t points = 0;
    /// max - min of max_test_acc over cells whose lambda lies within the two
    /// smallest decades of the positive lambda grid.
    double plateau_spread = 0.0;
    std::vector<double> plateau_lambdas;
    double best_lambda = 0.0;
    double best_accuracy = 0.0;
    /// True when the best lambda is strictly inside the positive lambda grid.
    bool interior_optimum = false;
};

/// Fits t* = c lambda^p over the successful lambda > 0 cells at learning
/// rate `eta` and summarises the accuracy plateau.
ScalingReport scaling_report(const SweepResult& grid, double eta);

struct PresetPlan {
    std::string name;
    std::string description;
    SweepSpec sweep;
    data::TargetEncoding encoding = data::TargetEncoding::onehot;
    Eigen::Index train_size = 512;
    Eigen::Index test_size = 1000;
};

/// Desk-scale experiment presets: catapult, sigma_w, time_to_fit,
/// theory_vs_experiment.
PresetPlan preset(const std::string& name);
std::vector<std::string> preset_names();

/// Kernel-trace decay of a finite network under full-batch GD with MSE.
/// Both finite-width experiments train ntk models on span coordinates of the
/// training inputs when N < d (see data::project_to_span); this is exact.
struct KernelDecayPoint {
    double t = 0.0;             // step * eta
    double trace_ratio = 0.0;   // tr Theta_t / tr Theta_0
    double theory = 0.0;        // e^{-2(k-1) lambda t}
};

std::vector<KernelDecayPoint> kernel_decay_experiment(const network::ModelSpec& model,
                                                      const data::Dataset& train_ds, double eta,
                                                      double lambda, long steps, long every);

/// Finite-width GD training loss against the infinite-width prediction built
/// from the network's own initial empirical kernel and outputs.
struct TheoryComparison {
    std::vector<double> t;            // step * eta
    std::vector<double> experiment;   // mean 1/2 (f - y)^2
    std::vector<double> theory;
    double theory_t_min = 0.0;
    bool theory_interior_min = false;
    double experiment_t_min = 0.0;
    /// max |experiment - theory| / theory over t <= theory_t_min.
    double max_rel_dev_to_min = 0.0;
};

/// Trains for ceil(horizon * t_min / eta) steps where t_min is the theory's
/// loss-minimum time; evaluations every `every` steps.
TheoryComparison theory_vs_experiment(const network::ModelSpec& model, const data::Dataset& train_ds,
                                      double eta, double lambda, double horizon, long every);

} // namespace l2flow::harness
