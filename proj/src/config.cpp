#include "l2flow/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>

#include "l2flow/errors.hpp"

namespace l2flow::config {

const std::vector<KeyInfo>& schema() {
    static const std::vector<KeyInfo> keys = {
        {"seed", "0", "run seed (model init, subsets, shuffling)"},
        {"workers", "1", "sweep worker threads"},
        {"output.dir", "runs/latest", "run directory"},

        {"data.source", "mnist", "mnist | synthetic"},
        {"data.dir", "data/mnist", "directory with the four MNIST IDX files"},
        {"data.train_size", "512", "training subset size (0 = whole split)"},
        {"data.test_size", "0", "test subset size (0 = whole split)"},
        {"data.encoding", "onehot", "onehot | even_odd"},
        {"data.input_dim", "32", "synthetic input dimension"},

        {"model.widths", "784,2048,2048,2048,10", "layer widths, input first"},
        {"model.activation", "relu", "relu | linear"},
        {"model.parameterization", "ntk", "ntk | standard"},
        {"model.sigma_w", "1", "weight scale"},
        {"model.sigma_b", "0", "bias scale"},
        {"model.use_bias", "false", "add biases (breaks homogeneity)"},

        {"train.eta", "0.15", "learning rate"},
        {"train.lambda", "0", "L2 coefficient"},
        {"train.momentum", "0", "heavy-ball momentum"},
        {"train.batch_size", "0", "mini-batch size (0 = full batch)"},
        {"train.loss", "softmax_norm", "softmax_norm | mse"},
        {"train.max_steps", "1000", "number of updates"},
        {"train.eval_every", "10", "evaluation cadence in steps"},
        {"train.lr_schedule", "none", "none | standard (x0.2 at 0.3T, 0.6T, 0.9T)"},
        {"train.lr_total_epochs", "", "T for the standard schedule (default: run length)"},
        {"train.full_train_metrics", "true", "evaluate the whole training set at each eval"},

        {"budget.mode", "inverse_lambda", "fixed | inverse_lambda"},
        {"budget.epochs", "100", "fixed budget T (epochs)"},
        {"budget.kappa", "2", "inverse budget constant"},
        {"budget.include_eta", "true", "T = kappa/(eta lambda) when true, kappa/lambda otherwise"},

        {"sweep.etas", "0.15", "learning-rate grid"},
        {"sweep.lambdas", "0.001,0.01,0.1", "L2 grid"},
        {"sweep.sigma_ws", "", "optional sigma_w grid"},
        {"sweep.evals_per_run", "300", "evaluations per cell (0 = use train.eval_every)"},

        {"autol2.enabled", "true", "attach AutoL2 in the autol2 subcommand"},
        {"autol2.lambda0", "0.1", "initial lambda"},
        {"autol2.decay_factor", "10", "division factor per decay"},
        {"autol2.measure_every", "10", "measurement cadence in steps"},
        {"autol2.refractory_constant", "0.1", "refractory period constant (steps = const / lambda)"},
        {"autol2.lambda_floor", "1e-8", "lambda never decays below this"},

        {"probe.enabled", "true", "run a probe to measure c"},
        {"probe.lambda", "0.1", "probe L2 coefficient"},
        {"probe.patience", "5", "evaluations without improvement before stopping"},
        {"probe.max_steps", "5000", "probe step budget"},
        {"probe.eval_every", "1", "probe evaluation cadence"},
        {"predict.c", "", "use this c instead of probing"},
        {"predict.budget", "1000", "training budget T"},
        {"predict.unit", "steps", "steps | epochs"},
        {"predict.first_decay", "", "time of first LR decay T1"},
        {"predict.grid", "", "grid.csv from a sweep, for lambda_tuned"},
        {"predict.grid_eta", "", "eta row of the grid to use (default: first)"},

        {"flow.kernel", "empirical", "empirical | file"},
        {"flow.kernel_file", "", "whitespace-separated kernel matrix"},
        {"flow.targets_file", "", "targets for a file kernel (one row per sample)"},
        {"flow.k", "2", "homogeneity degree"},
        {"flow.lambda", "0.002", "L2 coefficient"},
        {"flow.t_max", "", "last time (default 5/lambda)"},
        {"flow.points", "200", "time points"},
        {"flow.method", "closed_form", "closed_form | ode"},
        {"flow.normalize", "true", "divide an empirical kernel by N (batch-mean loss)"},

        {"deeplinear.depth", "1", "L"},
        {"deeplinear.width", "100", "n"},
        {"deeplinear.lambda", "0.01", "L2 coefficient"},
        {"deeplinear.beta", "ntk", "ntk | standard"},
        {"deeplinear.x", "1", "scalar input"},
        {"deeplinear.y", "1", "target"},
        {"deeplinear.eta", "0.5", "GD learning rate"},
        {"deeplinear.max_steps", "200000", "GD step cap"},
        {"deeplinear.scan", "false", "also scan lambda for the trivial/non-trivial transition"},
        {"deeplinear.scan_lo", "1e-4", "scan start"},
        {"deeplinear.scan_hi", "1", "scan end"},
        {"deeplinear.scan_ppd", "8", "scan points per decade"},

        {"verify.depths", "1,2,3,4", "depths to check"},
        {"verify.activations", "relu,linear", "activations to check"},
        {"verify.draws", "100", "random nets per (depth, activation)"},
        {"verify.width", "16", "hidden width"},
        {"verify.input_dim", "8", "input dimension"},
        {"verify.tolerance", "1e-8", "residual tolerance"},
    };
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
        throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
    return d;
}

} // namespace

RunConfig::RunConfig() {
    for (const auto& k : schema()) values_[k.key] = k.default_value;
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError(source + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        try {
            cfg.set(key, trim(t.substr(eq + 1)));
        } catch (const ValidationError& e) {
            throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file " + path.string());
    return parse(f, path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ValidationError("unknown config key '" + key + "'");
    values_[key] = value;
    explicit_[key] = true;
}

bool RunConfig::is_set(const std::string& key) const { return explicit_.count(key) > 0; }

const std::string& RunConfig::raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
}

std::string RunConfig::str(const std::string& key) const { return raw(key); }

double RunConfig::num(const std::string& key) const { return to_double(key, raw(key)); }

long RunConfig::integer(const std::string& key) const {
    const double d = num(key);
    if (d != static_cast<double>(static_cast<long>(d)))
        throw ValidationError("config key '" + key + "': expected an integer, got '" + raw(key) + "'");
    return static_cast<long>(d);
}

bool RunConfig::flag(const std::string& key) const {
    const auto& v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<double> RunConfig::nums(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(raw(key))) out.push_back(to_double(key, s));
    return out;
}

std::vector<std::string> RunConfig::strs(const std::string& key) const { return split_list(raw(key)); }

std::optional<double> RunConfig::opt_num(const std::string& key) const {
    if (raw(key).empty()) return std::nullopt;
    return num(key);
}

void RunConfig::check_paths() const {
    auto need = [&](const std::string& key, bool required) {
        const auto& p = raw(key);
        if (p.empty()) {
            if (required) throw ValidationError("config key '" + key + "' must be set");
            return;
        }
        if (!std::filesystem::exists(p))
            throw ValidationError("config key '" + key + "': path '" + p + "' does not exist");
    };
    if (raw("data.source") == "mnist") need("data.dir", true);
    need("flow.kernel_file", raw("flow.kernel") == "file");
    need("flow.targets_file", raw("flow.kernel") == "file");
    need("predict.grid", false);
}

std::string RunConfig::snapshot() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
}

} // namespace l2flow::config
