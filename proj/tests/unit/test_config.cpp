#include <doctest.h>

#include <sstream>

#include "l2flow/config.hpp"
#include "l2flow/errors.hpp"

using namespace l2flow;
using config::RunConfig;

TEST_CASE("parse key=value documents with comments") {
    std::istringstream in("# sweep\n train.eta = 0.3 \n\nsweep.lambdas=1e-3, 1e-2,0.1\nmodel.use_bias=false\n");
    const auto c = RunConfig::parse(in);
    CHECK(c.num("train.eta") == 0.3);
    CHECK(c.nums("sweep.lambdas") == std::vector<double>{1e-3, 1e-2, 0.1});
    CHECK_FALSE(c.flag("model.use_bias"));
    CHECK(c.is_set("train.eta"));
    CHECK_FALSE(c.is_set("train.lambda"));
    CHECK(c.num("train.lambda") == 0.0);
}

TEST_CASE("unknown keys and malformed lines are rejected with their location") {
    std::istringstream bad("train.eta=0.1\ntrain.etaa=0.2\n");
    try {
        RunConfig::parse(bad, "run.cfg");
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        const std::string m = e.what();
        CHECK(m.find("run.cfg:2") != std::string::npos);
        CHECK(m.find("train.etaa") != std::string::npos);
    }
    std::istringstream no_eq("train.eta 0.1\n");
    CHECK_THROWS_AS(RunConfig::parse(no_eq), ValidationError);
}

TEST_CASE("typed accessors validate values") {
    RunConfig c;
    c.set("train.max_steps", "12.5");
    CHECK_THROWS_AS(c.integer("train.max_steps"), ValidationError);
    c.set("train.eta", "fast");
    CHECK_THROWS_AS(c.num("train.eta"), ValidationError);
    c.set("model.use_bias", "maybe");
    CHECK_THROWS_AS(c.flag("model.use_bias"), ValidationError);
    CHECK_FALSE(c.opt_num("predict.c").has_value());
    CHECK_THROWS_AS(c.set("nope", "1"), ValidationError);
}

TEST_CASE("snapshot round-trips") {
    RunConfig c;
    c.set("sweep.etas", "0.1,0.2");
    c.set("seed", "7");
    std::istringstream in(c.snapshot());
    const auto back = RunConfig::parse(in);
    CHECK(back.snapshot() == c.snapshot());
    CHECK(back.integer("seed") == 7);
}

TEST_CASE("input paths are checked") {
    RunConfig c;
    c.set("data.dir", "/definitely/not/here");
    CHECK_THROWS_AS(c.check_paths(), ValidationError);
    c.set("data.dir", L2FLOW_DATA_DIR);
    CHECK_NOTHROW(c.check_paths());
    c.set("flow.kernel", "file");
    CHECK_THROWS_AS(c.check_paths(), ValidationError);
}
