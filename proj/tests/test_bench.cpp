#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nearfar/bench.hpp"
#include "nearfar/errors.hpp"

using namespace nearfar;

TEST_CASE("fit_slope: exact synthetic power laws") {
    std::vector<double> n{256, 512, 1024, 2048, 4096};
    std::vector<double> linear, quadratic;
    for (double x : n) {
        linear.push_back(3.5e-9 * x);
        quadratic.push_back(1.25e-12 * x * x);
    }
    SlopeFit lf = fit_slope(n, linear);
    CHECK(std::abs(lf.slope - 1.0) <= 1e-9);
    CHECK(lf.r2 >= 1.0 - 1e-12);
    SlopeFit qf = fit_slope(n, quadratic);
    CHECK(std::abs(qf.slope - 2.0) <= 1e-9);

    CHECK_THROWS_AS(fit_slope({1, 2, 3}, {1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(fit_slope({1, 2, 3, 4}, {1, 2, 3}), DimensionError);
}

TEST_CASE("run_scaling: smoke record with positive fields") {
    Rng rng(1);
    const auto records =
        run_scaling({BenchVariantSpec::make_linear()}, {256}, 3, rng, 16);
    REQUIRE(records.size() == 1);
    const BenchRecord& r = records[0];
    CHECK(r.feasible);
    CHECK(r.fwd_s > 0.0);
    CHECK(r.bwd_s > 0.0);
    CHECK(r.repeats == 3);
    // Peak must cover at least the q/k/v/upstream inputs.
    CHECK(r.peak_bytes >= 4 * 256 * 16 * sizeof(double));

    CHECK_THROWS_AS(run_scaling({BenchVariantSpec::make_linear()}, {256}, 2, rng, 16),
                    ConfigError);
    CHECK_THROWS_AS(run_scaling({BenchVariantSpec::make_linear()}, {512, 256}, 3, rng, 16),
                    ConfigError);
}

TEST_CASE("run_scaling: fmm memory stays near-linear at small scale") {
    Rng rng(2);
    const auto records = run_scaling({BenchVariantSpec::make_fmm(8, 2)}, {256, 512, 1024, 2048},
                                     3, rng, 16);
    REQUIRE(records.size() == 4);
    for (std::size_t i = 1; i < records.size(); ++i) {
        REQUIRE(records[i].feasible);
        const double ratio = static_cast<double>(records[i].peak_bytes) /
                             static_cast<double>(records[i - 1].peak_bytes);
        CHECK(ratio <= 2.5);
    }
    SlopeFit mem = fit_memory_slope(records, "fmm_band8_rank2");
    CHECK(mem.slope <= 1.3);
}

TEST_CASE("bench variants: parser accepts the catalogue") {
    CHECK(BenchVariantSpec::parse("softmax").softmax);
    CHECK(BenchVariantSpec::parse("linear").attention.feature_maps.size() == 1);
    CHECK(BenchVariantSpec::parse("rank3").attention.feature_maps.size() == 3);
    CHECK(BenchVariantSpec::parse("fmm").attention.band_enabled());
    CHECK_THROWS_AS(BenchVariantSpec::parse("nope"), ConfigError);
    CHECK(BenchVariantSpec::default_set().size() == 5);
}

TEST_CASE("bench csv: header comments and schema") {
    Rng rng(3);
    const auto records = run_scaling({BenchVariantSpec::make_linear()}, {128}, 3, rng, 8);
    write_bench_csv("test_bench.csv", records, {"meta line"});

    std::ifstream in("test_bench.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "# meta line");
    std::getline(in, line);
    CHECK(line == "variant,N,fwd_s,bwd_s,peak_bytes,repeats");
    std::getline(in, line);
    CHECK(line.substr(0, 11) == "linear,128,");
    in.close();
    std::remove("test_bench.csv");
}
