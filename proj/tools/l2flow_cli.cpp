// l2flow command-line entry point.
//
// Exit codes: 0 success, 1 runtime failure, 2 validation failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "l2flow/autoschedule.hpp"
#include "l2flow/config.hpp"
#include "l2flow/data.hpp"
#include "l2flow/errors.hpp"
#include "l2flow/flow.hpp"
#include "l2flow/harness.hpp"
#include "l2flow/network.hpp"
#include "l2flow/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace l2flow;

namespace {

struct Globals {
    std::string config_path;
    std::string out;
    std::optional<long> seed;
    std::optional<int> workers;
    std::string data_dir;
    std::vector<std::string> overrides;
};

config::RunConfig build_config(const Globals& g) {
    auto cfg = g.config_path.empty() ? config::RunConfig{} : config::RunConfig::load(g.config_path);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!g.out.empty()) cfg.set("output.dir", g.out);
    if (g.seed) cfg.set("seed", std::to_string(*g.seed));
    if (g.workers) cfg.set("workers", std::to_string(*g.workers));
    if (!g.data_dir.empty()) cfg.set("data.dir", g.data_dir);
    return cfg;
}

fs::path prepare_run_dir(const config::RunConfig& cfg) {
    const fs::path dir = cfg.str("output.dir");
    fs::create_directories(dir);
    std::ofstream(dir / "config.txt") << cfg.snapshot();
    return dir;
}

void write_summary(const fs::path& dir, const json& j) {
    std::ofstream(dir / "summary.json") << j.dump(2) << '\n';
}

std::uint64_t run_seed(const config::RunConfig& cfg) {
    const long s = cfg.integer("seed");
    if (s < 0) throw ValidationError("config key 'seed' must be non-negative");
    return static_cast<std::uint64_t>(s);
}

struct Data {
    data::Dataset train, test;
};

Data load_data(const config::RunConfig& cfg) {
    const auto seed = run_seed(cfg);
    const auto enc = data::parse_encoding(cfg.str("data.encoding"));
    const long n_train = cfg.integer("data.train_size");
    const long n_test = cfg.integer("data.test_size");
    if (n_train < 0 || n_test < 0) throw ValidationError("data.train_size and data.test_size must be >= 0");
    Data d;
    const auto source = cfg.str("data.source");
    if (source == "mnist") {
        d.train = data::load_mnist(cfg.str("data.dir"), "train");
        d.test = data::load_mnist(cfg.str("data.dir"), "test");
        if (n_train > 0) d.train = data::subset(d.train, n_train, seed);
        if (n_test > 0) d.test = data::subset(d.test, n_test, seed);
        d.train = data::encode_targets(d.train, enc);
        d.test = data::encode_targets(d.test, enc);
    } else if (source == "synthetic") {
        const long dim = cfg.integer("data.input_dim");
        d.train = data::make_synthetic(n_train > 0 ? n_train : 512, dim, seed, 12345, "train");
        d.test = data::make_synthetic(n_test > 0 ? n_test : 1000, dim, seed + 1, 12345, "test");
        // Synthetic targets are the teacher's +-1 labels; no encoding applies.
        if (cfg.is_set("data.encoding"))
            throw ValidationError("config key 'data.encoding' does not apply to data.source=synthetic");
    } else {
        throw ValidationError("config key 'data.source': expected mnist or synthetic, got '" + source + "'");
    }
    return d;
}

network::ModelSpec model_spec(const config::RunConfig& cfg) {
    network::ModelSpec s;
    for (double w : cfg.nums("model.widths")) {
        if (w < 1 || w != std::floor(w)) throw ValidationError("model.widths must be positive integers");
        s.widths.push_back(static_cast<Eigen::Index>(w));
    }
    s.activation = network::parse_activation(cfg.str("model.activation"));
    s.parameterization = network::parse_parameterization(cfg.str("model.parameterization"));
    s.sigma_w = cfg.num("model.sigma_w");
    s.sigma_b = cfg.num("model.sigma_b");
    s.use_bias = cfg.flag("model.use_bias");
    s.seed = run_seed(cfg);
    return s;
}

trainer::TrainConfig train_config(const config::RunConfig& cfg) {
    trainer::TrainConfig t;
    t.eta = cfg.num("train.eta");
    t.lambda = cfg.num("train.lambda");
    t.momentum = cfg.num("train.momentum");
    t.batch_size = cfg.integer("train.batch_size");
    t.loss = parse_loss(cfg.str("train.loss"));
    t.max_steps = cfg.integer("train.max_steps");
    t.eval_every = cfg.integer("train.eval_every");
    t.seed = run_seed(cfg);
    t.full_train_metrics = cfg.flag("train.full_train_metrics");
    const auto sched = cfg.str("train.lr_schedule");
    if (sched == "standard") {
        t.lr_schedule = trainer::standard_schedule(cfg.opt_num("train.lr_total_epochs").value_or(0.0));
    } else if (sched != "none") {
        throw ValidationError("config key 'train.lr_schedule': expected none or standard, got '" + sched + "'");
    }
    t.validate();
    return t;
}

/// Resolves the standard schedule's T once the epoch length is known.
void resolve_schedule(trainer::TrainConfig& t, const config::RunConfig& cfg, Eigen::Index n_train) {
    if (!t.lr_schedule || cfg.opt_num("train.lr_total_epochs")) return;
    const Eigen::Index batch = t.batch_size == 0 || t.batch_size >= n_train ? n_train : t.batch_size;
    const double spe = static_cast<double>((n_train + batch - 1) / batch);
    t.lr_schedule = trainer::standard_schedule(static_cast<double>(t.max_steps) / spe);
}

harness::BudgetPolicy budget_policy(const config::RunConfig& cfg) {
    harness::BudgetPolicy b;
    const auto mode = cfg.str("budget.mode");
    if (mode == "fixed") b.mode = harness::BudgetPolicy::Mode::fixed;
    else if (mode == "inverse_lambda") b.mode = harness::BudgetPolicy::Mode::inverse_lambda;
    else throw ValidationError("config key 'budget.mode': expected fixed or inverse_lambda, got '" + mode + "'");
    b.epochs = cfg.num("budget.epochs");
    b.kappa = cfg.num("budget.kappa");
    b.include_eta = cfg.flag("budget.include_eta");
    if (!(b.epochs > 0.0) || !(b.kappa > 0.0)) throw ValidationError("budget.epochs and budget.kappa must be positive");
    return b;
}

json record_json(const trainer::MetricsRecord& r) {
    return {{"step", r.step}, {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"train_error", r.train_error},
            {"test_accuracy", r.test_accuracy}, {"lambda", r.lambda}};
}

/// Trains with metrics streamed to metrics.jsonl and written to metrics.csv.
/// Returns the series; a blow-up is reported as a runtime failure after the
/// partial metrics are saved.
trainer::MetricsSeries train_logged(network::MLPModel& model, const Data& d, const trainer::TrainConfig& tc,
                                    trainer::TrainHooks hooks, const fs::path& dir) {
    std::ofstream stream(dir / "metrics.jsonl");
    auto user = hooks.on_record;
    hooks.on_record = [&](const trainer::MetricsRecord& r, const network::MLPModel& m) {
        trainer::write_metrics_record_jsonl(r, stream);
        stream.flush();
        if (user) user(r, m);
    };
    trainer::MetricsSeries series;
    try {
        series = trainer::train(model, d.train, d.test, tc, hooks);
    } catch (const trainer::TrainingBlowUp& e) {
        std::ofstream csv(dir / "metrics.csv");
        trainer::write_metrics_csv(e.partial(), csv);
        std::ostringstream os;
        os << "training blew up at step " << static_cast<long>(e.time()) << ": " << e.what();
        throw RuntimeFailure(os.str());
    }
    std::ofstream csv(dir / "metrics.csv");
    trainer::write_metrics_csv(series, csv);
    return series;
}

// ---------------------------------------------------------------------------

int cmd_verify(const config::RunConfig& cfg) {
    const double tol = cfg.num("verify.tolerance");
    const long draws = cfg.integer("verify.draws");
    const long width = cfg.integer("verify.width");
    const long dim = cfg.integer("verify.input_dim");
    if (draws < 1 || width < 1 || dim < 1) throw ValidationError("verify.draws, verify.width and verify.input_dim must be >= 1");
    if (cfg.flag("model.use_bias"))
        throw ValidationError("verify: biased networks are not homogeneous; set model.use_bias=false");
    const auto dir = prepare_run_dir(cfg);
    std::mt19937_64 rng(run_seed(cfg));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> scale(0.25, 4.0);
    bool ok = true;
    json rows = json::array();
    for (const auto& act_name : cfg.strs("verify.activations")) {
        const auto act = network::parse_activation(act_name);
        for (double dd : cfg.nums("verify.depths")) {
            const int depth = static_cast<int>(dd);
            if (depth < 1 || depth != dd) throw ValidationError("verify.depths must be positive integers");
            double euler = 0.0, homog = 0.0;
            for (long i = 0; i < draws; ++i) {
                network::ModelSpec s;
                s.widths.push_back(dim);
                for (int l = 1; l < depth; ++l) s.widths.push_back(width);
                s.widths.push_back(1);
                s.activation = act;
                s.seed = rng();
                const auto m = network::init(s);
                Eigen::VectorXd x(dim);
                for (auto& v : x) v = normal(rng);
                euler = std::max(euler, network::check_euler(m, x, 0));
                homog = std::max(homog, network::check_homogeneity(m, x, scale(rng)));
            }
            const bool pass = euler < tol && homog < tol;
            ok = ok && pass;
            std::cout << act_name << " depth " << depth << ": k=" << depth << ", euler residual " << euler
                      << ", homogeneity residual " << homog << " < " << tol << ": " << (pass ? "PASS" : "FAIL")
                      << '\n';
            rows.push_back({{"activation", act_name}, {"depth", depth}, {"k", depth}, {"euler_residual", euler},
                            {"homogeneity_residual", homog}, {"pass", pass}});
        }
    }
    write_summary(dir, {{"checks", rows}, {"tolerance", tol}, {"pass", ok}});
    return ok ? 0 : 2;
}

Eigen::MatrixXd read_matrix(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ValidationError("cannot open " + p.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof()) throw ValidationError(p.string() + ": non-numeric entry");
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError(p.string() + ": empty matrix");
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw ValidationError(p.string() + ": ragged rows");
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

int cmd_flow(const config::RunConfig& cfg) {
    const int k = static_cast<int>(cfg.integer("flow.k"));
    const double lambda = cfg.num("flow.lambda");
    const long points = cfg.integer("flow.points");
    if (points < 1) throw ValidationError("flow.points must be >= 1");
    const auto dir = prepare_run_dir(cfg);

    Eigen::MatrixXd kernel, targets;
    std::optional<Eigen::MatrixXd> f0;
    if (cfg.str("flow.kernel") == "file") {
        kernel = read_matrix(cfg.str("flow.kernel_file"));
        targets = read_matrix(cfg.str("flow.targets_file"));
    } else if (cfg.str("flow.kernel") == "empirical") {
        const auto d = load_data(cfg);
        const auto m = network::init(model_spec(cfg));
        kernel = network::empirical_ntk(m, d.train.inputs).matrix();
        if (cfg.flag("flow.normalize")) kernel /= static_cast<double>(d.train.size());
        targets = d.train.targets;
        f0 = m.forward(d.train.inputs);
    } else {
        throw ValidationError("config key 'flow.kernel': expected empirical or file");
    }
    const flow::FlowProblem problem(numerics::SymMatrix(kernel, 1e-10), targets, f0, k, lambda, LossKind::mse);

    double t_max = 0.0;
    if (auto tm = cfg.opt_num("flow.t_max")) t_max = *tm;
    else if (lambda > 0.0) t_max = 5.0 / lambda;
    else throw ValidationError("flow.t_max is required when flow.lambda = 0");
    if (!(t_max >= 0.0)) throw ValidationError("flow.t_max must be non-negative");
    std::vector<double> grid;
    if (t_max == 0.0 || points == 1) grid = {0.0};
    else
        for (long i = 0; i < points; ++i) grid.push_back(t_max * static_cast<double>(i) / static_cast<double>(points - 1));

    const auto method = cfg.str("flow.method");
    flow::FlowSolution sol;
    if (method == "closed_form") sol = flow::closed_form_solution(problem, grid);
    else if (method == "ode") sol = flow::evolve_ode(problem, grid);
    else throw ValidationError("config key 'flow.method': expected closed_form or ode");
    {
        std::ofstream f(dir / "flow.csv");
        flow::write_csv(sol, f);
    }
    json summary{{"k", k}, {"lambda", lambda}, {"t_max", t_max}, {"method", method},
                 {"late_time_max_abs_f", sol.outputs.back().cwiseAbs().maxCoeff()},
                 {"final_train_loss", sol.train_loss.back()}};
    std::cout << "late-time max |f| = " << sol.outputs.back().cwiseAbs().maxCoeff();
    if (k >= 2 && lambda > 0.0) {
        const auto peak = flow::loss_peak_time(problem);
        summary["loss_min_time"] = peak.t_min;
        summary["loss_min"] = peak.loss_min;
        summary["interior_minimum"] = peak.interior;
        std::cout << ", loss minimum at t = " << peak.t_min << " (loss " << peak.loss_min
                  << (peak.interior ? "" : ", not interior") << ")";
    }
    std::cout << '\n';
    write_summary(dir, summary);
    return 0;
}

int cmd_train(const config::RunConfig& cfg) {
    const auto d = load_data(cfg);
    auto tc = train_config(cfg);
    resolve_schedule(tc, cfg, d.train.size());
    auto model = network::init(model_spec(cfg));
    const auto dir = prepare_run_dir(cfg);
    const auto series = train_logged(model, d, tc, {}, dir);
    const auto ts = harness::extract_tstar(series);
    const auto tfit = harness::extract_tfit(series);
    json s{{"steps", series.records.back().step}, {"max_test_accuracy", ts.max_accuracy}, {"t_star", ts.t_star},
           {"final", record_json(series.records.back())}};
    if (tfit) s["t_fit"] = *tfit;
    write_summary(dir, s);
    network::save_checkpoint(model, dir / "model.ckpt");
    std::cout << "max test accuracy " << ts.max_accuracy << " at t* = " << ts.t_star << " steps\n";
    return 0;
}

harness::SweepSpec sweep_spec(const config::RunConfig& cfg, const fs::path& dir) {
    harness::SweepSpec s;
    s.model = model_spec(cfg);
    s.base = train_config(cfg);
    s.etas = cfg.nums("sweep.etas");
    s.lambdas = cfg.nums("sweep.lambdas");
    s.sigma_ws = cfg.nums("sweep.sigma_ws");
    s.budget = budget_policy(cfg);
    s.evals_per_run = cfg.integer("sweep.evals_per_run");
    s.workers = static_cast<int>(cfg.integer("workers"));
    s.out_dir = dir;
    return s;
}

json sweep_summary(const harness::SweepResult& grid, const std::vector<double>& etas) {
    json reports = json::array();
    for (double eta : etas) {
        try {
            const auto r = harness::scaling_report(grid, eta);
            reports.push_back({{"eta", eta}, {"coefficient", r.fit.coefficient}, {"exponent", r.fit.exponent},
                               {"residual", r.fit.residual}, {"plateau_spread", r.plateau_spread},
                               {"plateau_lambdas", r.plateau_lambdas}, {"best_lambda", r.best_lambda},
                               {"best_accuracy", r.best_accuracy}, {"interior_optimum", r.interior_optimum}});
            std::cout << "eta " << eta << ": t* = " << r.fit.coefficient << " * lambda^" << r.fit.exponent
                      << ", plateau spread " << r.plateau_spread << ", best lambda " << r.best_lambda << '\n';
        } catch (const ValidationError& e) {
            reports.push_back({{"eta", eta}, {"error", e.what()}});
        }
    }
    json cells = json::array();
    for (const auto& c : grid.cells) {
        json j{{"eta", c.eta}, {"lambda", c.lambda}, {"sigma_w", c.sigma_w}, {"t_star", c.t_star},
               {"max_test_acc", c.max_test_acc}, {"budget", c.budget_steps}, {"blow_up", c.blow_up}};
        if (c.t_fit) j["t_fit"] = *c.t_fit;
        cells.push_back(j);
    }
    return {{"scaling", reports}, {"cells", cells}};
}

int cmd_sweep(const config::RunConfig& cfg) {
    const auto d = load_data(cfg);
    const auto dir = prepare_run_dir(cfg);
    const auto spec = sweep_spec(cfg, dir);
    const auto grid = harness::run_sweep(spec, d.train, d.test);
    write_summary(dir, sweep_summary(grid, spec.etas));
    return 0;
}

int cmd_autol2(const config::RunConfig& cfg) {
    const auto d = load_data(cfg);
    auto tc = train_config(cfg);
    if (tc.lr_schedule) throw ValidationError("autol2: combining AutoL2 with an LR schedule is not supported");
    autoschedule::AutoL2Config ac;
    ac.lambda0 = cfg.num("autol2.lambda0");
    ac.decay_factor = cfg.num("autol2.decay_factor");
    ac.measure_every = cfg.integer("autol2.measure_every");
    ac.refractory_constant = cfg.num("autol2.refractory_constant");
    ac.lambda_floor = cfg.num("autol2.lambda_floor");
    const bool enabled = cfg.flag("autol2.enabled");
    autoschedule::AutoL2 schedule(ac);
    tc.lambda = enabled ? ac.lambda0 : tc.lambda;
    auto model = network::init(model_spec(cfg));
    const auto dir = prepare_run_dir(cfg);
    trainer::TrainHooks hooks;
    if (enabled) hooks.lambda_hook = schedule.hook();
    const auto series = train_logged(model, d, tc, hooks, dir);
    {
        std::ofstream f(dir / "lambda_trajectory.csv");
        f.precision(17);
        f << "step,lambda\n0," << tc.lambda << '\n';
        for (const auto& e : schedule.decays()) f << e.step << ',' << e.lambda_after << '\n';
    }
    const auto ts = harness::extract_tstar(series);
    json decays = json::array();
    for (const auto& e : schedule.decays()) decays.push_back({{"step", e.step}, {"lambda", e.lambda_after}});
    write_summary(dir, {{"max_test_accuracy", ts.max_accuracy}, {"t_star", ts.t_star}, {"decays", decays},
                        {"final_lambda", schedule.state().lambda}});
    std::cout << "AutoL2: " << schedule.decays().size() << " decays, final lambda " << schedule.state().lambda
              << ", max test accuracy " << ts.max_accuracy << '\n';
    return 0;
}

struct GridRow {
    double eta, lambda, max_acc;
};

std::vector<GridRow> read_grid(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ValidationError("cannot open grid " + p.string());
    std::string line;
    std::getline(f, line);
    if (line != harness::kGridCsvHeader) throw ValidationError(p.string() + ": not a sweep grid.csv");
    std::vector<GridRow> rows;
    while (std::getline(f, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (cols.size() < 5) continue;
        rows.push_back({std::stod(cols[0]), std::stod(cols[1]), std::stod(cols[4])});
    }
    return rows;
}

int cmd_predict_lambda(const config::RunConfig& cfg) {
    const auto unit = autoschedule::parse_unit(cfg.str("predict.unit"));
    const double budget = cfg.num("predict.budget");
    const auto first_decay = cfg.opt_num("predict.first_decay");
    const auto dir = prepare_run_dir(cfg);
    autoschedule::CMeasurement c;
    if (auto given = cfg.opt_num("predict.c")) {
        c.c = *given;
        c.unit = unit;
        if (!(c.c > 0.0)) throw ValidationError("predict.c must be positive");
    } else {
        if (!cfg.flag("probe.enabled")) throw ValidationError("predict-lambda: set predict.c or enable the probe");
        const auto d = load_data(cfg);
        auto tc = train_config(cfg);
        tc.max_steps = cfg.integer("probe.max_steps");
        tc.eval_every = cfg.integer("probe.eval_every");
        trainer::MetricsSeries probe;
        c = autoschedule::measure_c(network::init(model_spec(cfg)), d.train, d.test, tc, cfg.num("probe.lambda"),
                                    static_cast<int>(cfg.integer("probe.patience")), unit, &probe);
        std::ofstream f(dir / "probe_metrics.csv");
        trainer::write_metrics_csv(probe, f);
    }
    const double pred = autoschedule::predict_lambda(c, budget, unit, first_decay);
    json s{{"c", c.c}, {"lambda_probe", c.lambda_probe}, {"t_star_probe", c.t_star_probe},
           {"unit", autoschedule::to_string(unit)}, {"budget", budget}, {"lambda_pred", pred}};
    std::cout << "c = " << c.c << ", lambda_pred = " << pred;
    if (!cfg.str("predict.grid").empty()) {
        const auto rows = read_grid(cfg.str("predict.grid"));
        std::optional<double> eta = cfg.opt_num("predict.grid_eta");
        const GridRow* best = nullptr;
        for (const auto& r : rows) {
            if (!eta) eta = r.eta;
            if (std::abs(r.eta - *eta) > 1e-12 * *eta || !(r.lambda > 0.0)) continue;
            if (!best || r.max_acc > best->max_acc) best = &r;
        }
        if (!best) throw ValidationError("predict.grid has no lambda > 0 rows at the requested eta");
        const double gap = std::log10(pred / best->lambda);
        s["lambda_tuned"] = best->lambda;
        s["log10_gap"] = gap;
        std::cout << ", lambda_tuned = " << best->lambda << ", log10 gap = " << gap;
    }
    std::cout << '\n';
    write_summary(dir, s);
    return 0;
}

int cmd_deeplinear(const config::RunConfig& cfg) {
    flow::DeepLinearProblem p;
    p.depth = static_cast<int>(cfg.integer("deeplinear.depth"));
    p.width = cfg.integer("deeplinear.width");
    p.lambda = cfg.num("deeplinear.lambda");
    const auto beta = cfg.str("deeplinear.beta");
    if (beta == "ntk") p.beta_mode = flow::BetaMode::ntk;
    else if (beta == "standard") p.beta_mode = flow::BetaMode::standard;
    else throw ValidationError("config key 'deeplinear.beta': expected ntk or standard");
    p.x = Eigen::VectorXd::Constant(1, cfg.num("deeplinear.x"));
    p.y = cfg.num("deeplinear.y");
    const double eta = cfg.num("deeplinear.eta");
    const long max_steps = cfg.integer("deeplinear.max_steps");
    const auto seed = run_seed(cfg);
    const auto dir = prepare_run_dir(cfg);

    const auto fp = flow::deep_linear_fixed_point(p);
    const auto gd = flow::train_deep_linear(p, eta, max_steps, 1e-11, seed);
    json s{{"fixed_point_f", fp.f}, {"trivial", fp.trivial}, {"gd_f", gd.f}, {"difference", gd.f - fp.f},
           {"gd_steps", gd.steps}, {"gd_converged", gd.converged}};
    if (std::isfinite(fp.explicit_plus)) {
        s["explicit_plus"] = fp.explicit_plus;
        s["explicit_minus"] = fp.explicit_minus;
    }
    std::cout << "fixed point f = " << fp.f << (fp.trivial ? " (trivial)" : "") << ", GD f = " << gd.f
              << ", difference = " << gd.f - fp.f << (gd.converged ? "" : " (GD not converged)") << '\n';
    if (cfg.flag("deeplinear.scan")) {
        const auto scan = flow::deep_linear_transition(p, cfg.num("deeplinear.scan_lo"), cfg.num("deeplinear.scan_hi"),
                                                       static_cast<int>(cfg.integer("deeplinear.scan_ppd")), eta,
                                                       max_steps, 0.05, seed);
        s["transition_lambda"] = scan.lambda_transition;
        s["scan"] = scan.trained;
        std::cout << "trivial/non-trivial transition at lambda ~ " << scan.lambda_transition << '\n';
    }
    write_summary(dir, s);
    return 0;
}

/// Writes the preset as a sweep config; with `run`, executes it and adds the
/// preset-specific comparison to the summary.
int cmd_preset(const config::RunConfig& base, const std::string& name, bool run) {
    const auto plan = harness::preset(name);
    auto cfg = base;
    const auto& s = plan.sweep;
    auto join = [](const auto& v) {
        std::ostringstream os;
        os.precision(17);
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        return os.str();
    };
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    cfg.set("model.widths", join(s.model.widths));
    cfg.set("model.sigma_w", num(s.model.sigma_w));
    cfg.set("train.loss", to_string(s.base.loss));
    cfg.set("sweep.etas", join(s.etas));
    cfg.set("sweep.lambdas", join(s.lambdas));
    cfg.set("sweep.sigma_ws", join(s.sigma_ws));
    cfg.set("sweep.evals_per_run", std::to_string(s.evals_per_run));
    cfg.set("budget.mode", s.budget.mode == harness::BudgetPolicy::Mode::fixed ? "fixed" : "inverse_lambda");
    cfg.set("budget.epochs", num(s.budget.epochs));
    cfg.set("budget.kappa", num(s.budget.kappa));
    cfg.set("budget.include_eta", s.budget.include_eta ? "true" : "false");
    cfg.set("data.encoding", to_string(plan.encoding));
    cfg.set("data.train_size", std::to_string(plan.train_size));
    cfg.set("data.test_size", std::to_string(plan.test_size));
    if (name == "theory_vs_experiment") {
        cfg.set("flow.k", "2");
        cfg.set("flow.lambda", num(s.lambdas[0]));
        cfg.set("train.eta", num(s.etas[0]));
    }
    const auto dir = prepare_run_dir(cfg);
    std::ofstream(dir / "preset.cfg") << "# " << plan.description << '\n' << cfg.snapshot();
    std::cout << "preset " << name << ": " << plan.description << "\nconfig written to " << (dir / "preset.cfg")
              << '\n';
    if (!run) return 0;

    cfg.check_paths();
    const auto d = load_data(cfg);
    if (name == "theory_vs_experiment") {
        const auto cmp = harness::theory_vs_experiment(model_spec(cfg), d.train, s.etas[0], s.lambdas[0], 1.5,
                                                       cfg.integer("train.eval_every"));
        std::ofstream f(dir / "comparison.csv");
        f.precision(17);
        f << "t,experiment,theory\n";
        for (std::size_t i = 0; i < cmp.t.size(); ++i)
            f << cmp.t[i] << ',' << cmp.experiment[i] << ',' << cmp.theory[i] << '\n';
        write_summary(dir, {{"theory_t_min", cmp.theory_t_min}, {"experiment_t_min", cmp.experiment_t_min},
                            {"max_rel_dev_to_min", cmp.max_rel_dev_to_min}});
        std::cout << "max relative deviation through the loss minimum: " << cmp.max_rel_dev_to_min << '\n';
        return 0;
    }
    const auto grid = harness::run_sweep(sweep_spec(cfg, dir), d.train, d.test);
    json summary = sweep_summary(grid, s.etas);
    json rows = json::array();
    for (const auto& c : grid.cells) {
        json r{{"eta", c.eta}, {"lambda", c.lambda}, {"sigma_w", c.sigma_w}, {"acc_at_t_star", c.max_test_acc},
               {"blow_up", c.blow_up}};
        if (c.t_fit) {
            r["t_fit"] = *c.t_fit;
            r["t_fit_times_eta"] = *c.t_fit * c.eta;
            for (const auto& rec : c.series.records)
                if (rec.step == static_cast<long>(*c.t_fit)) r["acc_at_fit"] = rec.test_accuracy;
        }
        rows.push_back(r);
        std::cout << "eta " << c.eta << " sigma_w " << c.sigma_w << ": " << r.dump() << '\n';
    }
    summary["preset"] = rows;
    write_summary(dir, summary);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"l2flow: L2-regularised training dynamics toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "key=value run configuration file");
    app.add_option("--out", g.out, "output directory (output.dir)");
    app.add_option("--seed", g.seed, "run seed");
    app.add_option("--workers", g.workers, "sweep worker threads");
    app.add_option("--data-dir", g.data_dir, "MNIST IDX directory (data.dir)");
    app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");

    auto* verify = app.add_subcommand("verify", "Euler identity and homogeneity checks on random bias-free nets");
    auto* flow_cmd = app.add_subcommand("flow", "infinite-width gradient flow on a kernel");
    auto* train = app.add_subcommand("train", "train one network");
    auto* sweep = app.add_subcommand("sweep", "(eta, lambda) grid sweep with t* extraction");
    auto* autol2 = app.add_subcommand("autol2", "train with the AutoL2 schedule");
    auto* predict = app.add_subcommand("predict-lambda", "measure c and predict lambda = c / T");
    auto* deeplinear = app.add_subcommand("deeplinear", "deep linear fixed point vs gradient descent");
    auto* preset = app.add_subcommand("preset", "emit (and optionally run) a desk-scale preset");
    std::string preset_name;
    bool preset_run = false;
    preset->add_option("name", preset_name, "catapult | sigma_w | time_to_fit | theory_vs_experiment")->required();
    preset->add_flag("--run", preset_run, "execute the preset after writing its config");
    (void)verify;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        auto cfg = build_config(g);
        auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        const bool needs_data = name == "train" || name == "sweep" || name == "autol2" ||
                                (name == "predict-lambda" && cfg.str("predict.c").empty()) ||
                                (name == "flow" && cfg.str("flow.kernel") == "empirical");
        if (needs_data) cfg.check_paths();
        if (name == "verify") return cmd_verify(cfg);
        if (name == "flow") return cmd_flow(cfg);
        if (name == "train") return cmd_train(cfg);
        if (name == "sweep") return cmd_sweep(cfg);
        if (name == "autol2") return cmd_autol2(cfg);
        if (name == "predict-lambda") return cmd_predict_lambda(cfg);
        if (name == "deeplinear") return cmd_deeplinear(cfg);
        if (name == "preset") return cmd_preset(cfg, preset_name, preset_run);
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
