#include "l2flow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "l2flow/errors.hpp"

namespace l2flow::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
    if (buf.size() < offset + 4) {
        std::ostringstream os;
        os << path.string() << ": truncated header (expected at least " << offset + 4
           << " bytes, got " << buf.size() << ")";
        throw ValidationError(os.str());
    }
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
    if (got != want) {
        std::ostringstream os;
        os << path.string() << ": bad IDX magic 0x" << std::hex << got << ", expected 0x" << want;
        throw ValidationError(os.str());
    }
}

void check_size(std::size_t actual, std::size_t expected, const std::filesystem::path& path) {
    if (actual != expected) {
        std::ostringstream os;
        os << path.string() << ": expected " << expected << " bytes, got " << actual;
        throw ValidationError(os.str());
    }
}

} // namespace

TargetEncoding parse_encoding(const std::string& name) {
    if (name == "onehot") return TargetEncoding::onehot;
    if (name == "even_odd") return TargetEncoding::even_odd;
    if (name == "none") return TargetEncoding::none;
    throw ValidationError("unknown target encoding '" + name + "' (expected onehot or even_odd)");
}

std::string to_string(TargetEncoding enc) {
    switch (enc) {
    case TargetEncoding::onehot: return "onehot";
    case TargetEncoding::even_odd: return "even_odd";
    case TargetEncoding::none: break;
    }
    return "none";
}

std::array<int, 10> Dataset::class_counts() const {
    std::array<int, 10> counts{};
    for (int l : labels)
        if (l >= 0 && l < 10) ++counts[static_cast<std::size_t>(l)];
    return counts;
}

std::uint64_t Dataset::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    mix(inputs.data(), sizeof(double) * static_cast<std::size_t>(inputs.size()));
    mix(labels.data(), sizeof(int) * labels.size());
    mix(targets.data(), sizeof(double) * static_cast<std::size_t>(targets.size()));
    return h;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    check_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
    check_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);

    const std::size_t count = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t label_count = read_be32(lab, 4, labels_path);

    const std::size_t pixels = rows * cols;
    check_size(img.size(), 16 + count * pixels, images_path);
    check_size(lab.size(), 8 + label_count, labels_path);
    if (count != label_count) {
        std::ostringstream os;
        os << "IDX count mismatch: " << count << " images vs " << label_count << " labels";
        throw ValidationError(os.str());
    }

    Dataset ds;
    ds.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* row = img.data() + 16 + i * pixels;
        for (std::size_t j = 0; j < pixels; ++j)
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j] / 255.0;
        ds.labels[i] = lab[8 + i];
    }
    return ds;
}

Dataset load_mnist(const std::filesystem::path& dir, const std::string& split) {
    std::string prefix;
    if (split == "train") prefix = "train";
    else if (split == "test") prefix = "t10k";
    else throw ValidationError("load_mnist: split must be train or test, got '" + split + "'");
    auto ds = load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
    ds.split = split;
    return ds;
}

Dataset subset(const Dataset& ds, Eigen::Index n, std::uint64_t seed) {
    if (n < 0 || n > ds.size()) {
        std::ostringstream os;
        os << "subset: requested " << n << " samples from a dataset of " << ds.size();
        throw ValidationError(os.str());
    }
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(ds.size()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    Dataset out;
    out.split = ds.split;
    out.encoding = ds.encoding;
    out.inputs.resize(n, ds.input_dim());
    if (ds.targets.size()) out.targets.resize(n, ds.target_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = perm[static_cast<std::size_t>(i)];
        out.inputs.row(i) = ds.inputs.row(src);
        if (ds.targets.size()) out.targets.row(i) = ds.targets.row(src);
        if (!ds.labels.empty()) out.labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
    }
    return out;
}

Dataset encode_targets(const Dataset& ds, TargetEncoding mode) {
    if (ds.labels.size() != static_cast<std::size_t>(ds.size()))
        throw ValidationError("encode_targets: dataset has no integer labels");
    Dataset out = ds;
    out.encoding = mode;
    const auto n = ds.size();
    switch (mode) {
    case TargetEncoding::onehot:
        out.targets = Eigen::MatrixXd::Zero(n, 10);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int l = ds.labels[static_cast<std::size_t>(i)];
            if (l < 0 || l > 9) throw ValidationError("encode_targets: label out of range 0-9");
            out.targets(i, l) = 1.0;
        }
        break;
    case TargetEncoding::even_odd:
        out.targets.resize(n, 1);
        for (Eigen::Index i = 0; i < n; ++i)
            out.targets(i, 0) = (ds.labels[static_cast<std::size_t>(i)] % 2 == 0) ? 1.0 : -1.0;
        break;
    case TargetEncoding::none:
        throw ValidationError("encode_targets: mode must be onehot or even_odd");
    }
    return out;
}

Dataset make_synthetic(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                       std::uint64_t teacher_seed, const std::string& split) {
    if (n < 1 || d < 1) throw ValidationError("make_synthetic: n and d must be positive");
    std::mt19937_64 teacher_rng(teacher_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd w(d);
    for (Eigen::Index j = 0; j < d; ++j) w(j) = normal(teacher_rng);

    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.split = split;
    ds.encoding = TargetEncoding::even_odd;
    ds.inputs.resize(n, d);
    ds.targets.resize(n, 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) ds.inputs(i, j) = scale * normal(rng);
        const double s = ds.inputs.row(i).dot(w);
        ds.targets(i, 0) = s >= 0.0 ? 1.0 : -1.0;
        // Even/odd stand-in so the label vector stays meaningful.
        ds.labels.push_back(s >= 0.0 ? 0 : 1);
    }
    return ds;
}

SpanProjection project_to_span(const Dataset& ds) {
    if (ds.size() < 1) throw ValidationError("project_to_span: empty dataset");
    const Eigen::Index d = ds.input_dim();
    const Eigen::Index r = std::min(ds.size(), d);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(ds.inputs.transpose());
    SpanProjection out;
    out.basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, r);
    out.input_scale = std::sqrt(static_cast<double>(r) / static_cast<double>(d));
    out.reduced = ds;
    out.reduced.inputs = out.input_scale * (ds.inputs * out.basis);
    return out;
}

} // namespace l2flow::data
