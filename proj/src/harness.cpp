#include "l2flow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "l2flow/errors.hpp"

namespace l2flow::harness {

TStar extract_tstar(const trainer::MetricsSeries& series, double tol) {
    if (series.records.empty()) throw ValidationError("extract_tstar: empty metrics series");
    if (!(tol >= 0.0)) throw ValidationError("extract_tstar: tol must be non-negative");
    TStar out;
    out.max_accuracy = series.max_test_accuracy();
    for (std::size_t i = 0; i < series.records.size(); ++i) {
        if (series.records[i].test_accuracy >= out.max_accuracy - tol) {
            out.index = i;
            out.t_star = static_cast<double>(series.records[i].step);
            break;
        }
    }
    return out;
}

std::optional<double> extract_tfit(const trainer::MetricsSeries& series) {
    for (const auto& r : series.records)
        if (r.train_error == 0.0) return static_cast<double>(r.step);
    return std::nullopt;
}

double BudgetPolicy::epochs_for(double eta, double lambda) const {
    double t = 0.0;
    if (mode == Mode::fixed) {
        t = epochs;
    } else {
        if (!(lambda > 0.0)) throw ValidationError("budget: inverse_lambda needs lambda > 0");
        t = include_eta ? kappa / (eta * lambda) : kappa / lambda;
    }
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("budget: budgets must be positive and finite");
    return t;
}

const SweepCell* SweepResult::find(double eta, double lambda) const {
    for (const auto& c : cells)
        if (std::abs(c.eta - eta) <= 1e-12 * std::abs(eta) && std::abs(c.lambda - lambda) <= 1e-12 * std::abs(lambda))
            return &c;
    return nullptr;
}

namespace {

std::string cell_file_name(const SweepCell& c) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "cell_sw%g_eta%g_lambda%g.csv", c.sigma_w, c.eta, c.lambda);
    return buf;
}

long to_steps(double epochs, long steps_per_epoch) {
    return std::max(1L, static_cast<long>(std::ceil(epochs * static_cast<double>(steps_per_epoch) - 1e-9)));
}

} // namespace

SweepResult run_sweep(const SweepSpec& spec, const data::Dataset& train_ds, const data::Dataset& test_ds) {
    if (spec.etas.empty() || spec.lambdas.empty()) throw ValidationError("run_sweep: eta and lambda grids must be nonempty");
    if (spec.workers < 1) throw ValidationError("run_sweep: workers must be >= 1");
    if (train_ds.size() == 0) throw ValidationError("run_sweep: empty training set");
    for (double e : spec.etas)
        if (!(e > 0.0)) throw ValidationError("run_sweep: eta values must be positive");
    for (double l : spec.lambdas)
        if (!(l >= 0.0)) throw ValidationError("run_sweep: lambda values must be non-negative");

    const Eigen::Index n = train_ds.size();
    const Eigen::Index batch = (spec.base.batch_size == 0 || spec.base.batch_size >= n) ? n : spec.base.batch_size;
    const long spe = static_cast<long>((n + batch - 1) / batch);

    const std::vector<double> sigmas = spec.sigma_ws.empty() ? std::vector<double>{spec.model.sigma_w} : spec.sigma_ws;
    SweepResult result;
    long longest = 0;
    for (double sw : sigmas)
        for (double eta : spec.etas)
            for (double lambda : spec.lambdas) {
                SweepCell c;
                c.sigma_w = sw;
                c.eta = eta;
                c.lambda = lambda;
                if (lambda > 0.0 || spec.budget.mode == BudgetPolicy::Mode::fixed) {
                    c.budget_steps = to_steps(spec.budget.epochs_for(eta, lambda), spe);
                    if (lambda > 0.0) longest = std::max(longest, c.budget_steps);
                }
                result.cells.push_back(std::move(c));
            }
    for (auto& c : result.cells)
        if (c.lambda == 0.0) {
            const long fallback = to_steps(spec.budget.epochs, spe);
            c.budget_steps = std::max({c.budget_steps, longest, longest > 0 ? longest : fallback});
        }

    if (spec.out_dir) std::filesystem::create_directories(*spec.out_dir);

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= result.cells.size()) return;
            SweepCell& c = result.cells[i];
            try {
                network::ModelSpec ms = spec.model;
                ms.sigma_w = c.sigma_w;
                auto model = network::init(ms);
                trainer::TrainConfig cfg = spec.base;
                cfg.eta = c.eta;
                cfg.lambda = c.lambda;
                cfg.max_steps = c.budget_steps;
                if (spec.evals_per_run > 0) cfg.eval_every = std::max(1L, c.budget_steps / spec.evals_per_run);
                try {
                    c.series = trainer::train(model, train_ds, test_ds, cfg);
                } catch (const trainer::TrainingBlowUp& e) {
                    c.series = e.partial();
                    c.blow_up = true;
                }
                if (!c.series.records.empty()) {
                    const auto ts = extract_tstar(c.series);
                    c.t_star = ts.t_star;
                    c.max_test_acc = ts.max_accuracy;
                }
                c.t_fit = extract_tfit(c.series);
                if (spec.out_dir) {
                    std::ofstream f(*spec.out_dir / cell_file_name(c));
                    trainer::write_metrics_csv(c.series, f);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const int nthreads = std::min<int>(spec.workers, static_cast<int>(result.cells.size()));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    if (spec.out_dir) {
        std::ofstream f(*spec.out_dir / "grid.csv");
        write_grid_csv(result, f);
    }
    return result;
}

void write_grid_csv(const SweepResult& grid, std::ostream& os) {
    os << kGridCsvHeader << '\n';
    os.precision(17);
    for (const auto& c : grid.cells) {
        os << c.eta << ',' << c.lambda << ',' << c.sigma_w << ',' << c.t_star << ',' << c.max_test_acc << ',';
        if (c.t_fit) os << *c.t_fit;
        os << ',' << c.budget_steps << ',' << (c.blow_up ? 1 : 0) << '\n';
    }
}

ScalingReport scaling_report(const SweepResult& grid, double eta) {
    std::vector<const SweepCell*> cells;
    for (const auto& c : grid.cells)
        if (std::abs(c.eta - eta) <= 1e-12 * std::abs(eta) && c.lambda > 0.0 && !c.blow_up) cells.push_back(&c);
    std::sort(cells.begin(), cells.end(), [](auto* a, auto* b) { return a->lambda < b->lambda; });

    std::vector<std::pair<double, double>> pts;
    for (auto* c : cells)
        if (c->t_star > 0.0) pts.emplace_back(c->lambda, c->t_star);
    if (pts.size() < 3) {
        std::ostringstream os;
        os << "scaling_report: need >= 3 successful lambda > 0 cells with t* > 0 at eta=" << eta << ", have "
           << pts.size();
        throw ValidationError(os.str());
    }
    ScalingReport r;
    r.fit = numerics::fit_power_law(pts);
    r.points = pts.size();

    const double lo = cells.front()->lambda;
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    for (auto* c : cells)
        if (c->lambda < 100.0 * lo * (1.0 - 1e-12)) {
            r.plateau_lambdas.push_back(c->lambda);
            amin = std::min(amin, c->max_test_acc);
            amax = std::max(amax, c->max_test_acc);
        }
    r.plateau_spread = amax - amin;

    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i)
        if (cells[i]->max_test_acc > cells[best]->max_test_acc) best = i;
    r.best_lambda = cells[best]->lambda;
    r.best_accuracy = cells[best]->max_test_acc;
    r.interior_optimum = best > 0 && best + 1 < cells.size() &&
                         r.best_accuracy > cells.front()->max_test_acc &&
                         r.best_accuracy > cells.back()->max_test_acc;
    return r;
}

std::vector<std::string> preset_names() { return {"catapult", "sigma_w", "time_to_fit", "theory_vs_experiment"}; }

PresetPlan preset(const std::string& name) {
    PresetPlan p;
    p.name = name;
    auto& s = p.sweep;
    s.model.activation = network::Activation::relu;
    s.model.parameterization = network::Parameterization::ntk;
    s.model.seed = 0;
    s.base.batch_size = 0;
    s.evals_per_run = 200;
    if (name == "catapult") {
        p.description = "MSE loss, eta from small to large at fixed lambda=0.01; compare accuracy at t_fit with accuracy at t*";
        s.model.widths = {784, 512, 512, 512, 10};
        s.base.loss = LossKind::mse;
        s.etas = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
        s.lambdas = {0.01};
        // kappa / lambda = 2000 steps at every eta, so small-eta runs still converge
        s.budget = {BudgetPolicy::Mode::inverse_lambda, 0.0, 20.0, false};
    } else if (name == "sigma_w") {
        p.description = "sigma_w grid at fixed (eta, lambda); late-time accuracies should agree within a small band";
        s.model.widths = {784, 512, 512, 512, 10};
        s.base.loss = LossKind::softmax_norm;
        s.etas = {0.5};
        s.lambdas = {0.01};
        s.sigma_ws = {0.5, 1.0, 1.4142135623730951, 2.0};
        s.budget = {BudgetPolicy::Mode::inverse_lambda, 0.0, 2.0, true};
    } else if (name == "time_to_fit") {
        p.description = "small eta grid at fixed lambda; t_fit * eta should be roughly constant";
        s.model.widths = {784, 512, 512, 512, 10};
        s.base.loss = LossKind::softmax_norm;
        s.etas = {0.05, 0.1, 0.2, 0.4};
        s.lambdas = {1e-3};
        s.budget = {BudgetPolicy::Mode::fixed, 4000.0, 0.0, true};
        s.evals_per_run = 1000;
    } else if (name == "theory_vs_experiment") {
        p.description = "width-10^4 2-layer relu net on 200 even/odd samples vs the k=2 flow on its own empirical kernel";
        s.model.widths = {784, 10000, 1};
        s.model.sigma_w = 1.4142135623730951;
        s.base.loss = LossKind::mse;
        s.etas = {0.01};
        s.lambdas = {0.002};
        s.budget = {BudgetPolicy::Mode::inverse_lambda, 0.0, 1.0, true};
        p.encoding = data::TargetEncoding::even_odd;
        p.train_size = 200;
        p.test_size = 0;
    } else {
        std::string all;
        for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
        throw ValidationError("unknown preset '" + name + "' (expected one of: " + all + ")");
    }
    return p;
}

} // namespace l2flow::harness
