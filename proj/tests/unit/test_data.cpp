#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "l2flow/data.hpp"
#include "l2flow/errors.hpp"
#include "l2flow/trainer.hpp"

using namespace l2flow;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& f, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

struct TinyIdx {
    fs::path dir;
    TinyIdx(int n, int truncate_images = 0) {
        dir = fs::temp_directory_path() / ("l2flow_idx_" + std::to_string(n) + "_" + std::to_string(truncate_images));
        fs::create_directories(dir);
        std::ofstream img(dir / "img", std::ios::binary);
        put_be32(img, 0x803);
        put_be32(img, n);
        put_be32(img, 2);
        put_be32(img, 2);
        for (int i = 0; i < n * 4 - truncate_images; ++i) img.put(static_cast<char>((i * 17) % 256));
        std::ofstream lab(dir / "lab", std::ios::binary);
        put_be32(lab, 0x801);
        put_be32(lab, n);
        for (int i = 0; i < n; ++i) lab.put(static_cast<char>(i % 10));
    }
    ~TinyIdx() { fs::remove_all(dir); }
};

} // namespace

TEST_CASE("load_idx reads shapes, scales pixels and keeps labels") {
    TinyIdx t(3);
    const auto ds = data::load_idx(t.dir / "img", t.dir / "lab");
    REQUIRE(ds.size() == 3);
    CHECK(ds.input_dim() == 4);
    CHECK(ds.inputs(0, 1) == doctest::Approx(17.0 / 255.0));
    CHECK(ds.inputs(2, 3) == doctest::Approx(((11 * 17) % 256) / 255.0));
    CHECK(ds.labels == std::vector<int>{0, 1, 2});
}

TEST_CASE("load_idx reports truncation with byte counts") {
    TinyIdx t(3, 5);
    try {
        data::load_idx(t.dir / "img", t.dir / "lab");
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected 28 bytes, got 23") != std::string::npos);
    }
}

TEST_CASE("load_idx rejects a bad magic number and a missing file") {
    TinyIdx t(2);
    CHECK_THROWS_AS(data::load_idx(t.dir / "lab", t.dir / "img"), ValidationError);
    CHECK_THROWS_AS(data::load_idx(t.dir / "nope", t.dir / "lab"), ValidationError);
}

TEST_CASE("bundled MNIST matches an independent IDX reader") {
    const auto train = data::load_mnist(L2FLOW_DATA_DIR, "train");
    REQUIRE(train.size() == 4000);
    CHECK(train.input_dim() == 784);
    CHECK(train.labels[0] == 0);
    CHECK(train.inputs.row(0).sum() == doctest::Approx(121.94117647058823).epsilon(1e-12));
    for (int c : train.class_counts()) CHECK(c == 400);
    const auto test = data::load_mnist(L2FLOW_DATA_DIR, "test");
    REQUIRE(test.size() == 1000);
    CHECK(test.labels.back() == 9);
    for (int c : test.class_counts()) CHECK(c == 100);
    CHECK_THROWS_AS(data::load_mnist(L2FLOW_DATA_DIR, "validation"), ValidationError);
}

TEST_CASE("subset is seed-deterministic and its fingerprint is stable") {
    const auto train = data::load_mnist(L2FLOW_DATA_DIR, "train");
    const auto a = data::subset(train, 512, 0);
    const auto b = data::subset(train, 512, 0);
    const auto c = data::subset(train, 512, 1);
    CHECK(a.size() == 512);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != c.fingerprint());
    CHECK(a.fingerprint() == 14898111503988396256ULL);  // frozen fixture
    CHECK_THROWS_AS(data::subset(train, 5000, 0), ValidationError);
}

TEST_CASE("encode_targets: one-hot and even/odd") {
    data::Dataset ds;
    ds.inputs = Eigen::MatrixXd::Zero(3, 2);
    ds.labels = {0, 3, 8};
    const auto oh = data::encode_targets(ds, data::TargetEncoding::onehot);
    CHECK(oh.targets.rows() == 3);
    CHECK(oh.targets.cols() == 10);
    CHECK(oh.targets(1, 3) == 1.0);
    CHECK(oh.targets.row(1).sum() == 1.0);
    const auto eo = data::encode_targets(ds, data::TargetEncoding::even_odd);
    CHECK(eo.targets.cols() == 1);
    CHECK(eo.targets(0, 0) == 1.0);
    CHECK(eo.targets(1, 0) == -1.0);
    CHECK(eo.targets(2, 0) == 1.0);
    CHECK_THROWS_AS(data::parse_encoding("binary"), ValidationError);
}

TEST_CASE("make_synthetic shares the teacher across splits") {
    const auto a = data::make_synthetic(200, 16, 1);
    const auto b = data::make_synthetic(200, 16, 2, 12345, "test");
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(a.fingerprint() == data::make_synthetic(200, 16, 1).fingerprint());
    CHECK((a.inputs.array().square().rowwise().sum().mean()) == doctest::Approx(1.0).epsilon(0.1));
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::abs(a.targets(i, 0)) == 1.0);
}

TEST_CASE("project_to_span preserves training dynamics of an ntk two-layer net") {
    const auto full = data::encode_targets(data::subset(data::load_mnist(L2FLOW_DATA_DIR, "train"), 12, 3),
                                           data::TargetEncoding::even_odd);
    const auto proj = data::project_to_span(full);
    REQUIRE(proj.reduced.input_dim() == 12);
    CHECK((proj.basis.transpose() * proj.basis - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-12);

    network::ModelSpec spec;
    spec.widths = {784, 64, 1};
    spec.sigma_w = std::sqrt(2.0);
    auto big = network::init(spec);
    spec.widths = {12, 64, 1};
    auto small = network::init(spec);
    small.weights()[0] = big.weights()[0] * proj.basis;
    small.weights()[1] = big.weights()[1];

    CHECK((big.forward(full.inputs) - small.forward(proj.reduced.inputs)).cwiseAbs().maxCoeff() < 1e-12);
    const auto kb = network::empirical_ntk(big, full.inputs);
    const auto ks = network::empirical_ntk(small, proj.reduced.inputs);
    CHECK((kb.matrix() - ks.matrix()).cwiseAbs().maxCoeff() < 1e-11 * kb.matrix().cwiseAbs().maxCoeff());

    trainer::TrainConfig cfg;
    cfg.loss = LossKind::mse;
    cfg.eta = 0.5;
    cfg.lambda = 0.01;
    cfg.max_steps = 50;
    const auto sb = trainer::train(big, full, full, cfg);
    const auto ss = trainer::train(small, proj.reduced, proj.reduced, cfg);
    CHECK(sb.records.back().train_loss == doctest::Approx(ss.records.back().train_loss).epsilon(1e-9));
    CHECK((big.forward(full.inputs) - small.forward(proj.reduced.inputs)).cwiseAbs().maxCoeff() < 1e-9);
}
