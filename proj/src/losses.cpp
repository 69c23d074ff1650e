#include "l2flow/losses.hpp"

#include <cmath>

#include "l2flow/errors.hpp"

namespace l2flow {

LossKind parse_loss(const std::string& name) {
    if (name == "mse") return LossKind::mse;
    if (name == "softmax_norm" || name == "softmax") return LossKind::softmax_norm;
    throw ValidationError("unknown loss '" + name + "' (expected mse or softmax_norm)");
}

std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "softmax_norm"; }

double loss_sum(LossKind kind, const Eigen::MatrixXd& f, const Eigen::MatrixXd& y,
                Eigen::MatrixXd* grad) {
    if (f.rows() != y.rows() || f.cols() != y.cols())
        throw ValidationError("loss: prediction and target shapes differ");
    if (kind == LossKind::mse) {
        const Eigen::MatrixXd diff = f - y;
        if (grad) *grad = diff;
        return 0.5 * diff.squaredNorm();
    }

    const double c = static_cast<double>(f.rows());
    const double norm = 1.0 / (2.0 * c);
    if (grad) grad->resize(f.rows(), f.cols());
    double total = 0.0;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
        const double mx = f.col(j).maxCoeff();
        const Eigen::VectorXd shifted = f.col(j).array() - mx;
        const double lse = std::log(shifted.array().exp().sum());
        // log p_i = shifted_i - lse, finite for every class.
        const Eigen::VectorXd logp = shifted.array() - lse;
        total += -norm * y.col(j).dot(logp);
        if (grad) {
            const Eigen::VectorXd p = logp.array().exp();
            grad->col(j) = norm * (y.col(j).sum() * p - y.col(j));
        }
    }
    return total;
}

Eigen::Index count_errors(const Eigen::MatrixXd& f, const Eigen::MatrixXd& y) {
    Eigen::Index wrong = 0;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
        if (f.rows() == 1) {
            if ((f(0, j) >= 0.0) != (y(0, j) >= 0.0)) ++wrong;
        } else {
            Eigen::Index pf = 0, py = 0;
            f.col(j).maxCoeff(&pf);
            y.col(j).maxCoeff(&py);
            if (pf != py) ++wrong;
        }
    }
    return wrong;
}

} // namespace l2flow
