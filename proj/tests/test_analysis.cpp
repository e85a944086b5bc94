#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nearfar/analysis.hpp"
#include "nearfar/attention.hpp"
#include "nearfar/errors.hpp"
#include "nearfar/rng.hpp"

using namespace nearfar;

namespace {
// Band + off-band outer products with positive independent factors. The
// low-rank terms live strictly outside the band so removal at the true
// bandwidth leaves exactly the rank-r remainder.
RealMatrix synthetic_composite(Rng& rng, std::size_t n, std::size_t bandwidth,
                               std::size_t rank) {
    RealMatrix q = rand_matrix(rng, n, 4, 1.0);
    RealMatrix k = rand_matrix(rng, n, 4, 1.0);
    RealMatrix a = build_near_field(q, k, bandwidth).densify();

    const std::size_t half = n / 2;
    for (std::size_t r = 0; r < rank; ++r) {
        const bool upper = r % 2 == 0;
        RealMatrix u(n, 1), v(n, 1);
        // Row/column supports separated by more than the bandwidth.
        for (std::size_t i = 0; i < half - bandwidth; ++i) {
            const std::size_t row = upper ? i : n - 1 - i;
            u(row, 0) = 0.2 + rng.uniform();
        }
        for (std::size_t j = 0; j < half - bandwidth; ++j) {
            const std::size_t col = upper ? n - 1 - j : j;
            v(col, 0) = 0.2 + rng.uniform();
        }
        axpy(a, 1.0, matmul_abt(u, v));
    }
    return a;
}
}  // namespace

TEST_CASE("band removal: exact split and b=0 no-op") {
    Rng rng(1);
    RealMatrix a = rand_matrix(rng, 12, 12, 1.0);
    for (std::size_t b : {0u, 1u, 3u, 11u}) {
        RealMatrix remainder = remove_band(a, b);
        RealMatrix band = band_part(a, b);
        RealMatrix sum = add(remainder, band);
        CHECK(max_abs_diff(sum, a) == 0.0);
    }
    CHECK(max_abs_diff(remove_band(a, 0), a) == 0.0);
}

TEST_CASE("band_removed_rank: banded-only matrix vanishes under full removal") {
    Rng rng(2);
    const std::size_t n = 10;
    RealMatrix q = rand_matrix(rng, n, 4, 1.0);
    RealMatrix a = build_near_field(q, q, 2).densify();
    const auto profiles = band_removed_rank(a, {0, 2, n - 1}, 1e-6, "banded");
    CHECK(profiles[2].eps_rank_abs == 0);
    CHECK(profiles[2].eps_rank_rel == 0);
    CHECK(profiles[0].eps_rank_abs > 0);

    CHECK_THROWS_AS(band_removed_rank(a, {5, 2}, 1e-6, "x"), ConfigError);
}

TEST_CASE("band_removed_rank: recovers the planted low-rank remainder") {
    Rng rng(3);
    for (std::size_t rank : {2u, 3u}) {
        RealMatrix a = synthetic_composite(rng, 24, 5, rank);
        const auto profiles = band_removed_rank(a, {0, 5}, 1e-6, "synthetic");
        CHECK(profiles[1].eps_rank_abs == rank);
        CHECK(profiles[0].eps_rank_abs > rank);  // band mass dominates before removal
    }
}

TEST_CASE("rank_distribution_report: single profile and hand-computed set") {
    RankProfile p;
    p.source = "a";
    p.bandwidth_removed = 5;
    p.eps_rank_abs = 4;
    p.eps_rank_rel = 4;
    const auto single = rank_distribution_report({p});
    REQUIRE(single.size() == 1);
    CHECK(single[0].median_abs == 4.0);

    RankProfile q = p, r = p;
    q.eps_rank_abs = 2;
    r.eps_rank_abs = 2;
    // ranks {2, 2, 4}: median 2, mean 8/3
    const auto multi = rank_distribution_report({p, q, r});
    REQUIRE(multi.size() == 1);
    CHECK(multi[0].median_abs == 2.0);
    CHECK(multi[0].mean_abs == doctest::Approx(8.0 / 3.0));

    CHECK_THROWS_AS(rank_distribution_report({}), ConfigError);
}

TEST_CASE("harvest_attention: stochastic rows, causal support, count") {
    TrainConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.model_dim = 16;
    cfg.ffn_dim = 24;
    cfg.max_len = 24;
    cfg.variant = AttentionVariant::Softmax;
    cfg.seed = 4;
    Rng rng(cfg.seed);
    ModelParams params = init_params(cfg, rng);

    Rng data(5);
    const auto batch = gen_copy_batch(data, 6, cfg.max_len);
    const auto mats = harvest_attention(params, batch, 1, 0);
    REQUIRE(mats.size() == batch.size());
    for (std::size_t s = 0; s < mats.size(); ++s) {
        const RealMatrix& a = mats[s];
        REQUIRE(a.rows() == batch[s].tokens.size());
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) {
                sum += a(i, j);
                if (j > i) CHECK(a(i, j) == 0.0);  // causal mask
            }
            CHECK(std::abs(sum - 1.0) <= 1e-10);
        }
    }

    CHECK_THROWS_AS(harvest_attention(params, batch, 2, 0), ConfigError);
    CHECK_THROWS_AS(harvest_attention(params, batch, 0, 2), ConfigError);
}

TEST_CASE("profiles and spectra CSV emission") {
    Rng rng(6);
    RealMatrix a = rand_matrix(rng, 8, 8, 1.0);
    const auto profiles = band_removed_rank(a, {0, 2}, 1e-6, "m0");
    write_profiles_csv("test_profiles.csv", profiles);
    write_spectra_csv("test_spectra.csv", profiles);

    std::ifstream in("test_profiles.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "source,bandwidth,eps_rank_abs,eps_rank_rel");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2);
    in.close();

    std::ifstream sp("test_spectra.csv");
    std::getline(sp, line);
    CHECK(line == "source,bandwidth,index,sigma");
    rows = 0;
    while (std::getline(sp, line)) ++rows;
    CHECK(rows == 16);  // 8 singular values x 2 bandwidths
    sp.close();

    std::remove("test_profiles.csv");
    std::remove("test_spectra.csv");
}
