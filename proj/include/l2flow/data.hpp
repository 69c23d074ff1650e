#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace l2flow::data {

enum class TargetEncoding { none, onehot, even_odd };

TargetEncoding parse_encoding(const std::string& name);
std::string to_string(TargetEncoding enc);

/// Row-per-sample dataset. `labels` holds the raw class ids (0-9 for MNIST);
/// `targets` is filled in by encode_targets (N x 10 one-hot, or N x 1 with
/// entries +1 for even digits and -1 for odd digits).
struct Dataset {
    Eigen::MatrixXd inputs;
    std::vector<int> labels;
    Eigen::MatrixXd targets;
    TargetEncoding encoding = TargetEncoding::none;
    std::string split;

    Eigen::Index size() const noexcept { return inputs.rows(); }
    Eigen::Index input_dim() const noexcept { return inputs.cols(); }
    Eigen::Index target_dim() const noexcept { return targets.cols(); }

    std::array<int, 10> class_counts() const;
    /// FNV-1a over the raw input bytes, labels and targets; used as a
    /// regression fingerprint.
    std::uint64_t fingerprint() const;
};

/// Reads an IDX image/label file pair. Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Loads `train` or `test` from a directory holding the four files under
/// their conventional names (train-images-idx3-ubyte, ...).
Dataset load_mnist(const std::filesystem::path& dir, const std::string& split);

/// First n items of a seed-deterministic permutation.
Dataset subset(const Dataset& ds, Eigen::Index n, std::uint64_t seed);

Dataset encode_targets(const Dataset& ds, TargetEncoding mode);

/// Gaussian inputs x ~ N(0, I/d), labels sign(w . x) in {-1, +1} from a
/// random linear teacher w ~ N(0, I). Teacher is fixed by `teacher_seed`
/// so train and test splits drawn with different `seed` values share it.
Dataset make_synthetic(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                       std::uint64_t teacher_seed = 12345, const std::string& split = "train");

/// Inputs rewritten in an orthonormal basis Q (d x r, r = min(N, d)) of the
/// span of the training inputs, scaled by sqrt(r / d). For an ntk-parameterised
/// network whose first layer is trained by gradient descent, the first-layer
/// gradient always lies in that span, so a net on the reduced inputs with
/// W' = W Q follows exactly the same function-space trajectory on the training
/// set at a fraction of the cost when d > N. Off-span inputs are not covered.
struct SpanProjection {
    Dataset reduced;
    Eigen::MatrixXd basis;  // Q, d x r
    double input_scale = 1.0;
};

SpanProjection project_to_span(const Dataset& ds);

} // namespace l2flow::data
