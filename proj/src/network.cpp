#include "l2flow/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "l2flow/errors.hpp"

namespace l2flow::network {

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "linear") return Activation::linear;
    throw ValidationError("unknown activation '" + name + "' (expected relu or linear)");
}

Parameterization parse_parameterization(const std::string& name) {
    if (name == "ntk") return Parameterization::ntk;
    if (name == "standard") return Parameterization::standard;
    throw ValidationError("unknown parameterization '" + name + "' (expected ntk or standard)");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }
std::string to_string(Parameterization p) {
    return p == Parameterization::ntk ? "ntk" : "standard";
}

Index GradientBundle::size() const {
    Index n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

Vector GradientBundle::flatten() const {
    Vector out(size());
    Index pos = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.segment(pos, weights[l].size()) = weights[l].reshaped();
        pos += weights[l].size();
        if (l < biases.size()) {
            out.segment(pos, biases[l].size()) = biases[l];
            pos += biases[l].size();
        }
    }
    return out;
}

double GradientBundle::squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : biases) s += b.squaredNorm();
    return s;
}

bool GradientBundle::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

MLPModel::MLPModel(const ModelSpec& spec) : spec_(spec) {
    if (spec.widths.size() < 2)
        throw ValidationError("MLPModel: need at least input and output widths");
    for (Index w : spec.widths)
        if (w < 1) throw ValidationError("MLPModel: all widths must be >= 1");
    if (!(spec.sigma_w >= 0.0) || !(spec.sigma_b >= 0.0))
        throw ValidationError("MLPModel: sigma_w and sigma_b must be non-negative");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t layers = spec.widths.size() - 1;
    weights_.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const Index fan_in = spec.widths[l];
        const Index fan_out = spec.widths[l + 1];
        const double std_dev = spec.parameterization == Parameterization::ntk
                                   ? 1.0
                                   : spec.sigma_w / std::sqrt(static_cast<double>(fan_in));
        Matrix w(fan_out, fan_in);
        for (Index i = 0; i < fan_out; ++i)
            for (Index j = 0; j < fan_in; ++j) w(i, j) = std_dev * normal(rng);
        weights_.push_back(std::move(w));
    }
    if (spec.use_bias) {
        const double b_std = spec.parameterization == Parameterization::ntk ? 1.0 : spec.sigma_b;
        for (std::size_t l = 0; l < layers; ++l) {
            Vector b(spec.widths[l + 1]);
            for (Index i = 0; i < b.size(); ++i) b(i) = b_std * normal(rng);
            biases_.push_back(std::move(b));
        }
    }
}

MLPModel init(const ModelSpec& spec) { return MLPModel(spec); }

int MLPModel::homogeneity_degree() const {
    if (spec_.use_bias)
        throw ValidationError("model has biases and is not homogeneous; use a bias-free model");
    return depth();
}

Index MLPModel::parameter_count() const {
    Index n = 0;
    for (const auto& w : weights_) n += w.size();
    for (const auto& b : biases_) n += b.size();
    return n;
}

double MLPModel::layer_scale(int layer) const {
    if (spec_.parameterization == Parameterization::standard) return 1.0;
    return spec_.sigma_w / std::sqrt(static_cast<double>(spec_.widths[static_cast<std::size_t>(layer)]));
}

double MLPModel::bias_scale() const {
    return spec_.parameterization == Parameterization::ntk ? spec_.sigma_b : 1.0;
}

const Matrix& MLPModel::forward_cached(const Matrix& xt, ForwardCache& cache) const {
    if (xt.rows() != input_dim()) {
        std::ostringstream os;
        os << "forward: input dimension " << xt.rows() << " does not match model input " << input_dim();
        throw ValidationError(os.str());
    }
    const auto layers = weights_.size();
    cache.pre.resize(layers);
    cache.post.resize(layers);
    cache.post[0] = xt;
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix& z = cache.pre[l];
        z.noalias() = weights_[l] * cache.post[l];
        z *= layer_scale(static_cast<int>(l));
        if (spec_.use_bias) z.colwise() += bias_scale() * biases_[l];
        if (l + 1 < layers) {
            if (spec_.activation == Activation::relu) cache.post[l + 1] = z.cwiseMax(0.0);
            else cache.post[l + 1] = z;
        }
    }
    return cache.pre.back();
}

void MLPModel::backward(const ForwardCache& cache, const Matrix& output_grad,
                        GradientBundle& grad) const {
    const auto layers = weights_.size();
    grad.weights.resize(layers);
    grad.biases.resize(spec_.use_bias ? layers : 0);
    Matrix delta = output_grad;
    for (std::size_t li = layers; li-- > 0;) {
        const double s = layer_scale(static_cast<int>(li));
        grad.weights[li].noalias() = delta * cache.post[li].transpose();
        grad.weights[li] *= s;
        if (spec_.use_bias) grad.biases[li] = bias_scale() * delta.rowwise().sum();
        if (li == 0) break;
        Matrix back(weights_[li].cols(), delta.cols());
        back.noalias() = weights_[li].transpose() * delta;
        back *= s;
        if (spec_.activation == Activation::relu)
            back.array() *= (cache.pre[li - 1].array() > 0.0).cast<double>();
        delta = std::move(back);
    }
}

Vector MLPModel::forward(const Vector& x) const {
    ForwardCache cache;
    return forward_cached(Matrix(x), cache).col(0);
}

Matrix MLPModel::forward(const Matrix& x) const {
    ForwardCache cache;
    return forward_cached(x.transpose(), cache).transpose();
}

GradientBundle MLPModel::grad_param(const Vector& x, Index output_index) const {
    if (output_index < 0 || output_index >= output_dim())
        throw ValidationError("grad_param: output index out of range");
    ForwardCache cache;
    forward_cached(Matrix(x), cache);
    Matrix g = Matrix::Zero(output_dim(), 1);
    g(output_index, 0) = 1.0;
    GradientBundle out;
    backward(cache, g, out);
    return out;
}

GradientBundle MLPModel::zero_gradient() const {
    GradientBundle g;
    for (const auto& w : weights_) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : biases_) g.biases.push_back(Vector::Zero(b.size()));
    return g;
}

Vector MLPModel::flat_parameters() const {
    GradientBundle view{weights_, biases_};
    return view.flatten();
}

void MLPModel::set_flat_parameters(const Vector& flat) {
    if (flat.size() != parameter_count())
        throw ValidationError("set_flat_parameters: size mismatch");
    Index pos = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        weights_[l].reshaped() = flat.segment(pos, weights_[l].size());
        pos += weights_[l].size();
        if (l < biases_.size()) {
            biases_[l] = flat.segment(pos, biases_[l].size());
            pos += biases_[l].size();
        }
    }
}

double MLPModel::squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights_) s += w.squaredNorm();
    for (const auto& b : biases_) s += b.squaredNorm();
    return s;
}

void MLPModel::scale_parameters(double a) {
    for (auto& w : weights_) w *= a;
    for (auto& b : biases_) b *= a;
}

bool MLPModel::operator==(const MLPModel& other) const {
    if (spec_.widths != other.spec_.widths || spec_.activation != other.spec_.activation ||
        spec_.parameterization != other.spec_.parameterization ||
        spec_.sigma_w != other.spec_.sigma_w || spec_.sigma_b != other.spec_.sigma_b ||
        spec_.use_bias != other.spec_.use_bias || spec_.seed != other.spec_.seed)
        return false;
    if (weights_.size() != other.weights_.size() || biases_.size() != other.biases_.size())
        return false;
    for (std::size_t l = 0; l < weights_.size(); ++l)
        if (weights_[l] != other.weights_[l]) return false;
    for (std::size_t l = 0; l < biases_.size(); ++l)
        if (biases_[l] != other.biases_[l]) return false;
    return true;
}

namespace {

// Per-layer backprop deltas of output `idx` for every column of xt.
void collect_deltas(const MLPModel& m, const Matrix& xt, Index idx, ForwardCache& cache,
                    std::vector<Matrix>& deltas) {
    if (idx < 0 || idx >= m.output_dim())
        throw ValidationError("empirical_ntk: output index out of range");
    m.forward_cached(xt, cache);
    const auto layers = m.weights().size();
    deltas.assign(layers, Matrix());
    Matrix delta = Matrix::Zero(m.output_dim(), xt.cols());
    delta.row(idx).setOnes();
    for (std::size_t li = layers; li-- > 0;) {
        deltas[li] = delta;
        if (li == 0) break;
        Matrix back(m.weights()[li].cols(), delta.cols());
        back.noalias() = m.weights()[li].transpose() * delta;
        back *= m.layer_scale(static_cast<int>(li));
        if (m.spec().activation == Activation::relu)
            back.array() *= (cache.pre[li - 1].array() > 0.0).cast<double>();
        delta = std::move(back);
    }
}

} // namespace

numerics::SymMatrix empirical_ntk(const MLPModel& m, const Matrix& xs, Index output_index,
                                  Index max_samples) {
    if (xs.rows() > max_samples) {
        std::ostringstream os;
        os << "empirical_ntk: " << xs.rows() << " samples exceeds the configured cap of " << max_samples;
        throw ValidationError(os.str());
    }
    ForwardCache cache;
    std::vector<Matrix> deltas;
    collect_deltas(m, xs.transpose(), output_index, cache, deltas);
    const Index n = xs.rows();
    Matrix theta = Matrix::Zero(n, n);
    for (std::size_t l = 0; l < deltas.size(); ++l) {
        const double s = m.layer_scale(static_cast<int>(l));
        Matrix dd(n, n), aa(n, n);
        dd.noalias() = deltas[l].transpose() * deltas[l];
        aa.noalias() = cache.post[l].transpose() * cache.post[l];
        theta.noalias() += (s * s) * dd.cwiseProduct(aa);
        if (m.spec().use_bias) theta.noalias() += (m.bias_scale() * m.bias_scale()) * dd;
    }
    return numerics::SymMatrix(theta, 1e-10);
}

Vector empirical_ntk_diagonal(const MLPModel& m, const Matrix& xs, Index output_index) {
    ForwardCache cache;
    std::vector<Matrix> deltas;
    collect_deltas(m, xs.transpose(), output_index, cache, deltas);
    Vector diag = Vector::Zero(xs.rows());
    for (std::size_t l = 0; l < deltas.size(); ++l) {
        const double s = m.layer_scale(static_cast<int>(l));
        const Vector dn = deltas[l].colwise().squaredNorm().transpose();
        const Vector an = cache.post[l].colwise().squaredNorm().transpose();
        diag += (s * s) * dn.cwiseProduct(an);
        if (m.spec().use_bias) diag += (m.bias_scale() * m.bias_scale()) * dn;
    }
    return diag;
}

double check_euler(const MLPModel& m, const Vector& x, int order, double fd_step) {
    const int k = m.homogeneity_degree();
    if (order != 0 && order != 1) throw ValidationError("check_euler: order must be 0 or 1");
    constexpr double kEps = 1e-12;
    const Vector theta = m.flat_parameters();
    double worst = 0.0;
    if (order == 0) {
        const Vector f = m.forward(x);
        for (Index c = 0; c < m.output_dim(); ++c) {
            const double contraction = theta.dot(m.grad_param(x, c).flatten());
            worst = std::max(worst, std::abs(contraction - k * f(c)) / std::max(std::abs(f(c)), kEps));
        }
        return worst;
    }
    MLPModel up = m, down = m;
    up.scale_parameters(1.0 + fd_step);
    down.scale_parameters(1.0 - fd_step);
    for (Index c = 0; c < m.output_dim(); ++c) {
        const Vector g = m.grad_param(x, c).flatten();
        const Vector hv = (up.grad_param(x, c).flatten() - down.grad_param(x, c).flatten()) / (2.0 * fd_step);
        const double scale = std::max(g.cwiseAbs().maxCoeff(), kEps);
        worst = std::max(worst, (hv - (k - 1.0) * g).cwiseAbs().maxCoeff() / scale);
    }
    return worst;
}

double check_homogeneity(const MLPModel& m, const Vector& x, double a) {
    if (!(a > 0.0)) throw ValidationError("check_homogeneity: scale must be positive");
    const int k = m.homogeneity_degree();
    const Vector f = m.forward(x);
    MLPModel scaled = m;
    scaled.scale_parameters(a);
    const Vector fa = scaled.forward(x);
    const double denom = std::max(f.cwiseAbs().maxCoeff(), 1e-12);
    return (fa - std::pow(a, k) * f).cwiseAbs().maxCoeff() / denom;
}

namespace {

constexpr const char* kCheckpointMagic = "l2flow-mlp";
constexpr int kCheckpointVersion = 1;

void put_hex(std::ostream& os, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    os << buf;
}

double get_hex(std::istream& is) {
    std::string tok;
    if (!(is >> tok)) throw ValidationError("checkpoint: unexpected end of file");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ValidationError("checkpoint: bad number '" + tok + "'");
    return v;
}

void expect(std::istream& is, const std::string& word) {
    std::string tok;
    if (!(is >> tok) || tok != word)
        throw ValidationError("checkpoint: expected '" + word + "', got '" + tok + "'");
}

} // namespace

std::string to_checkpoint(const MLPModel& m) {
    std::ostringstream os;
    const auto& s = m.spec();
    os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    os << "widths " << s.widths.size();
    for (Index w : s.widths) os << ' ' << w;
    os << "\nactivation " << to_string(s.activation);
    os << "\nparameterization " << to_string(s.parameterization);
    os << "\nsigma_w ";
    put_hex(os, s.sigma_w);
    os << "\nsigma_b ";
    put_hex(os, s.sigma_b);
    os << "\nuse_bias " << (s.use_bias ? 1 : 0);
    os << "\nseed " << s.seed << '\n';
    for (std::size_t l = 0; l < m.weights().size(); ++l) {
        const auto& w = m.weights()[l];
        os << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
        for (Index i = 0; i < w.rows(); ++i) {
            for (Index j = 0; j < w.cols(); ++j) {
                if (j) os << ' ';
                put_hex(os, w(i, j));
            }
            os << '\n';
        }
    }
    for (std::size_t l = 0; l < m.biases().size(); ++l) {
        const auto& b = m.biases()[l];
        os << "bias " << l << ' ' << b.size() << '\n';
        for (Index i = 0; i < b.size(); ++i) {
            if (i) os << ' ';
            put_hex(os, b(i));
        }
        os << '\n';
    }
    os << "end\n";
    return os.str();
}

MLPModel from_checkpoint(const std::string& text) {
    std::istringstream is(text);
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != kCheckpointMagic)
        throw ValidationError("checkpoint: not an l2flow model file");
    if (version != kCheckpointVersion)
        throw ValidationError("checkpoint: unsupported version " + std::to_string(version));

    ModelSpec spec;
    std::size_t count = 0;
    expect(is, "widths");
    is >> count;
    spec.widths.resize(count);
    for (auto& w : spec.widths) is >> w;
    std::string word;
    expect(is, "activation");
    is >> word;
    spec.activation = parse_activation(word);
    expect(is, "parameterization");
    is >> word;
    spec.parameterization = parse_parameterization(word);
    expect(is, "sigma_w");
    spec.sigma_w = get_hex(is);
    expect(is, "sigma_b");
    spec.sigma_b = get_hex(is);
    int bias = 0;
    expect(is, "use_bias");
    is >> bias;
    spec.use_bias = bias != 0;
    expect(is, "seed");
    is >> spec.seed;
    if (!is) throw ValidationError("checkpoint: malformed header");

    // Re-initialising from the spec gives correctly shaped storage; every
    // value is then overwritten from the file.
    MLPModel m(spec);
    for (std::size_t l = 0; l < m.weights().size(); ++l) {
        auto& w = m.weights()[l];
        std::size_t idx = 0;
        Index rows = 0, cols = 0;
        expect(is, "weight");
        is >> idx >> rows >> cols;
        if (idx != l || rows != w.rows() || cols != w.cols())
            throw ValidationError("checkpoint: weight block shape mismatch at layer " + std::to_string(l));
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) w(i, j) = get_hex(is);
    }
    for (std::size_t l = 0; l < m.biases().size(); ++l) {
        auto& b = m.biases()[l];
        std::size_t idx = 0;
        Index n = 0;
        expect(is, "bias");
        is >> idx >> n;
        if (idx != l || n != b.size())
            throw ValidationError("checkpoint: bias block shape mismatch at layer " + std::to_string(l));
        for (Index i = 0; i < n; ++i) b(i) = get_hex(is);
    }
    expect(is, "end");
    return m;
}

void save_checkpoint(const MLPModel& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    out << to_checkpoint(m);
}

MLPModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_checkpoint(ss.str());
}

} // namespace l2flow::network
