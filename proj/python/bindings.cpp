#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "l2flow/autoschedule.hpp"
#include "l2flow/data.hpp"
#include "l2flow/errors.hpp"
#include "l2flow/flow.hpp"
#include "l2flow/harness.hpp"
#include "l2flow/network.hpp"
#include "l2flow/numerics.hpp"
#include "l2flow/trainer.hpp"

namespace py = pybind11;
using namespace l2flow;

namespace {

py::dict series_dict(const trainer::MetricsSeries& s) {
    std::vector<long> step;
    std::vector<double> loss, err, acc, lam;
    for (const auto& r : s.records) {
        step.push_back(r.step);
        loss.push_back(r.train_loss);
        err.push_back(r.train_error);
        acc.push_back(r.test_accuracy);
        lam.push_back(r.lambda);
    }
    py::dict d;
    d["step"] = step;
    d["train_loss"] = loss;
    d["train_error"] = err;
    d["test_accuracy"] = acc;
    d["lambda"] = lam;
    d["blow_up_step"] = s.blow_up_step;
    return d;
}

trainer::MetricsSeries series_from(const std::vector<long>& steps, const std::vector<double>& acc) {
    if (steps.size() != acc.size()) throw ValidationError("steps and accuracies differ in length");
    trainer::MetricsSeries s;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        trainer::MetricsRecord r;
        r.step = steps[i];
        r.epoch = static_cast<double>(steps[i]);
        r.test_accuracy = acc[i];
        s.records.push_back(r);
    }
    return s;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "L2-regularised training dynamics: kernels, flows, training and schedules";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

    m.def("eig_sym", [](const Eigen::MatrixXd& a) {
        const auto e = numerics::eig_sym(numerics::SymMatrix(a));
        return py::make_tuple(e.values, e.vectors);
    }, py::arg("matrix"), "Eigenvalues (descending) and eigenvectors of a symmetric matrix.");

    m.def("fit_power_law", [](const std::vector<double>& x, const std::vector<double>& y) {
        if (x.size() != y.size()) throw ValidationError("x and y differ in length");
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < x.size(); ++i) pts.emplace_back(x[i], y[i]);
        const auto f = numerics::fit_power_law(pts);
        return py::make_tuple(f.coefficient, f.exponent, f.residual);
    }, py::arg("x"), py::arg("y"), "Least-squares fit y = c x^p in log-log space; returns (c, p, residual).");

    py::class_<data::Dataset>(m, "Dataset")
        .def_readonly("inputs", &data::Dataset::inputs)
        .def_readonly("labels", &data::Dataset::labels)
        .def_readonly("targets", &data::Dataset::targets)
        .def("__len__", &data::Dataset::size)
        .def("fingerprint", &data::Dataset::fingerprint);

    m.def("load_mnist", [](const std::string& dir, const std::string& split, Eigen::Index n, std::uint64_t seed,
                           const std::string& encoding) {
        auto ds = data::load_mnist(dir, split);
        if (n > 0) ds = data::subset(ds, n, seed);
        return data::encode_targets(ds, data::parse_encoding(encoding));
    }, py::arg("dir"), py::arg("split") = "train", py::arg("n") = 0, py::arg("seed") = 0,
       py::arg("encoding") = "onehot");

    m.def("make_synthetic", &data::make_synthetic, py::arg("n"), py::arg("d"), py::arg("seed") = 0,
          py::arg("teacher_seed") = 12345, py::arg("split") = "train");

    py::class_<network::MLPModel>(m, "MLP")
        .def(py::init([](std::vector<Eigen::Index> widths, const std::string& activation,
                         const std::string& parameterization, double sigma_w, std::uint64_t seed) {
                 network::ModelSpec s;
                 s.widths = std::move(widths);
                 s.activation = network::parse_activation(activation);
                 s.parameterization = network::parse_parameterization(parameterization);
                 s.sigma_w = sigma_w;
                 s.seed = seed;
                 return network::init(s);
             }),
             py::arg("widths"), py::arg("activation") = "relu", py::arg("parameterization") = "ntk",
             py::arg("sigma_w") = 1.0, py::arg("seed") = 0)
        .def("forward", py::overload_cast<const Eigen::MatrixXd&>(&network::MLPModel::forward, py::const_),
             "Outputs for the rows of x.")
        .def_property_readonly("homogeneity_degree", &network::MLPModel::homogeneity_degree)
        .def_property_readonly("parameter_count", &network::MLPModel::parameter_count)
        .def("parameters", &network::MLPModel::flat_parameters)
        .def("euler_residual", [](const network::MLPModel& mdl, const Eigen::VectorXd& x, int order) {
            return network::check_euler(mdl, x, order);
        }, py::arg("x"), py::arg("order") = 0)
        .def("homogeneity_residual", &network::check_homogeneity, py::arg("x"), py::arg("a"))
        .def("empirical_ntk", [](const network::MLPModel& mdl, const Eigen::MatrixXd& xs, Eigen::Index out) {
            return network::empirical_ntk(mdl, xs, out).matrix();
        }, py::arg("xs"), py::arg("output_index") = 0)
        .def("to_checkpoint", &network::to_checkpoint)
        .def_static("from_checkpoint", &network::from_checkpoint);

    m.def("flow_closed_form", [](const Eigen::MatrixXd& kernel, const Eigen::MatrixXd& y,
                                 std::optional<Eigen::MatrixXd> f0, int k, double lambda,
                                 const std::vector<double>& t) {
        const flow::FlowProblem p(numerics::SymMatrix(kernel), y, f0, k, lambda);
        const auto sol = flow::closed_form_solution(p, t);
        return py::make_tuple(sol.outputs, sol.train_loss, sol.kernel_scale);
    }, py::arg("kernel"), py::arg("targets"), py::arg("f0") = py::none(), py::arg("k") = 2,
       py::arg("lambda_"), py::arg("t"), "Closed-form MSE flow; returns (outputs per t, mean loss, kernel scale).");

    m.def("flow_ode", [](const Eigen::MatrixXd& kernel, const Eigen::MatrixXd& y, std::optional<Eigen::MatrixXd> f0,
                         int k, double lambda, const std::vector<double>& t, double step) {
        const flow::FlowProblem p(numerics::SymMatrix(kernel), y, f0, k, lambda);
        const auto sol = flow::evolve_ode(p, t, step);
        return py::make_tuple(sol.outputs, sol.train_loss);
    }, py::arg("kernel"), py::arg("targets"), py::arg("f0") = py::none(), py::arg("k") = 2,
       py::arg("lambda_"), py::arg("t"), py::arg("step") = 0.0);

    m.def("ridge_flow", [](const Eigen::MatrixXd& kernel, double lambda, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& f0, double t) {
        return flow::ridge_flow(numerics::eig_sym(numerics::SymMatrix(kernel)), lambda, y, f0, t);
    }, py::arg("kernel"), py::arg("lambda_"), py::arg("y"), py::arg("f0"), py::arg("t"));

    m.def("loss_peak_time", [](const Eigen::MatrixXd& kernel, const Eigen::MatrixXd& y,
                               std::optional<Eigen::MatrixXd> f0, int k, double lambda) {
        const auto pk = flow::loss_peak_time(flow::FlowProblem(numerics::SymMatrix(kernel), y, f0, k, lambda));
        return py::make_tuple(pk.t_min, pk.loss_min, pk.interior);
    }, py::arg("kernel"), py::arg("targets"), py::arg("f0") = py::none(), py::arg("k") = 2, py::arg("lambda_"));

    m.def("kernel_scale", &flow::kernel_scale, py::arg("k"), py::arg("lambda_"), py::arg("t"));

    m.def("train", [](network::MLPModel model, const data::Dataset& train, const data::Dataset& test, double eta,
                      double lambda, long steps, const std::string& loss, long eval_every, long batch_size,
                      double momentum, std::uint64_t seed) {
        trainer::TrainConfig c;
        c.eta = eta;
        c.lambda = lambda;
        c.max_steps = steps;
        c.loss = parse_loss(loss);
        c.eval_every = eval_every;
        c.batch_size = batch_size;
        c.momentum = momentum;
        c.seed = seed;
        trainer::MetricsSeries s;
        {
            py::gil_scoped_release release;
            try {
                s = trainer::train(model, train, test, c);
            } catch (const trainer::TrainingBlowUp& e) {
                s = e.partial();
            }
        }
        return py::make_tuple(model, series_dict(s));
    }, py::arg("model"), py::arg("train"), py::arg("test"), py::arg("eta"), py::arg("lambda_") = 0.0,
       py::arg("steps") = 100, py::arg("loss") = "softmax_norm", py::arg("eval_every") = 10,
       py::arg("batch_size") = 0, py::arg("momentum") = 0.0, py::arg("seed") = 0,
       "Trains a copy of the model; returns (trained model, metrics dict).");

    m.def("extract_tstar", [](const std::vector<long>& steps, const std::vector<double>& acc, double tol) {
        const auto t = harness::extract_tstar(series_from(steps, acc), tol);
        return py::make_tuple(t.t_star, t.max_accuracy);
    }, py::arg("steps"), py::arg("accuracies"), py::arg("tol") = 0.005);

    m.def("measure_c", [](const std::vector<long>& steps, const std::vector<double>& acc, double lambda_probe) {
        return autoschedule::measure_c_from_series(series_from(steps, acc), lambda_probe).c;
    }, py::arg("steps"), py::arg("accuracies"), py::arg("lambda_probe"));

    m.def("predict_lambda", [](double c, double budget, std::optional<double> first_decay) {
        autoschedule::CMeasurement cm;
        cm.c = c;
        return autoschedule::predict_lambda(cm, budget, autoschedule::TimeUnit::steps, first_decay);
    }, py::arg("c"), py::arg("budget"), py::arg("first_decay") = py::none());

    py::class_<autoschedule::AutoL2>(m, "AutoL2")
        .def(py::init([](double lambda0, double decay_factor, long measure_every, double refractory) {
                 autoschedule::AutoL2Config c;
                 c.lambda0 = lambda0;
                 c.decay_factor = decay_factor;
                 c.measure_every = measure_every;
                 c.refractory_constant = refractory;
                 return autoschedule::AutoL2(c);
             }),
             py::arg("lambda0") = 0.1, py::arg("decay_factor") = 10.0, py::arg("measure_every") = 10,
             py::arg("refractory_constant") = 0.1)
        .def("observe", &autoschedule::AutoL2::observe, py::arg("step"), py::arg("loss"), py::arg("error"))
        .def_property_readonly("lambda_", [](const autoschedule::AutoL2& a) { return a.state().lambda; })
        .def_property_readonly("min_step", [](const autoschedule::AutoL2& a) { return a.state().min_step; });

    m.def("deep_linear_fixed_point", [](int depth, Eigen::Index width, double lambda, double x, double y) {
        flow::DeepLinearProblem p;
        p.depth = depth;
        p.width = width;
        p.lambda = lambda;
        p.x = Eigen::VectorXd::Constant(1, x);
        p.y = y;
        const auto r = flow::deep_linear_fixed_point(p);
        return py::make_tuple(r.f, r.trivial);
    }, py::arg("depth"), py::arg("width"), py::arg("lambda_"), py::arg("x") = 1.0, py::arg("y") = 1.0);

    m.def("train_deep_linear", [](int depth, Eigen::Index width, double lambda, double eta, long max_steps,
                                  std::uint64_t seed) {
        flow::DeepLinearProblem p;
        p.depth = depth;
        p.width = width;
        p.lambda = lambda;
        const auto r = flow::train_deep_linear(p, eta, max_steps, 1e-11, seed);
        return py::make_tuple(r.f, r.converged);
    }, py::arg("depth"), py::arg("width"), py::arg("lambda_"), py::arg("eta") = 0.5,
       py::arg("max_steps") = 200000, py::arg("seed") = 0);
}
