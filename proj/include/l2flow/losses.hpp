#pragma once

#include <Eigen/Dense>

#include <string>

namespace l2flow {

/// Per-sample losses shared by the finite-width trainer and the flow ODE.
///   mse:          l = 1/2 |f - y|^2
///   softmax_norm: l = -(1 / (2C)) sum_i y_i log softmax(f)_i
/// Batch losses are means of these over the batch.
enum class LossKind { mse, softmax_norm };

LossKind parse_loss(const std::string& name);
std::string to_string(LossKind kind);

/// Columns of `f` and `y` are samples (C x N). Returns the summed per-sample
/// loss and, when `grad` is non-null, writes dl/df per sample into it.
double loss_sum(LossKind kind, const Eigen::MatrixXd& f, const Eigen::MatrixXd& y,
                Eigen::MatrixXd* grad);

/// Number of columns whose prediction disagrees with the target: sign for a
/// single output, argmax otherwise.
Eigen::Index count_errors(const Eigen::MatrixXd& f, const Eigen::MatrixXd& y);

} // namespace l2flow
