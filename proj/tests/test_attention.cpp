#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nearfar/attention.hpp"
#include "nearfar/errors.hpp"
#include "nearfar/oracle.hpp"
#include "nearfar/rng.hpp"

using namespace nearfar;

namespace {
constexpr FeatureMapKind kPhi1 = FeatureMapKind::EluPlusOne;
constexpr FeatureMapKind kPhi2 = FeatureMapKind::NegEluPlusOne;
constexpr FeatureMapKind kPhi3 = FeatureMapKind::Tanh;

std::vector<FeatureMapSet> nonempty_subsets() {
    std::vector<FeatureMapSet> out;
    const FeatureMapKind all[] = {kPhi1, kPhi2, kPhi3};
    for (unsigned mask = 1; mask < 8; ++mask) {
        std::vector<FeatureMapKind> kinds;
        for (unsigned b = 0; b < 3; ++b)
            if (mask & (1u << b)) kinds.push_back(all[b]);
        out.emplace_back(std::move(kinds));
    }
    return out;
}
}  // namespace

TEST_CASE("near field: full band equals dense row softmax") {
    Rng rng(100);
    const std::size_t n = 12, d = 6;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    BandedMatrix band = build_near_field(q, k, n - 1);
    RealMatrix dense = dense_banded_oracle(q, k, n - 1, false);
    CHECK(max_abs_diff(band.densify(), dense) <= 1e-10);
}

TEST_CASE("near field: bandwidth 0 is the identity weight matrix") {
    Rng rng(101);
    RealMatrix q = rand_matrix(rng, 5, 3, 1.0);
    RealMatrix k = rand_matrix(rng, 5, 3, 1.0);
    BandedMatrix band = build_near_field(q, k, 0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(band.at(i, i) == 1.0);
}

TEST_CASE("near field: bandwidth >= n rejected") {
    Rng rng(102);
    RealMatrix q = rand_matrix(rng, 4, 3, 1.0);
    CHECK_THROWS_AS(build_near_field(q, q, 4), ConfigError);
}

TEST_CASE("near field: N=16 bandwidth=3 matches dense masked-softmax oracle") {
    Rng rng(103);
    const std::size_t n = 16, d = 8;
    RealMatrix q = rand_matrix(rng, n, d, 1.5);
    RealMatrix k = rand_matrix(rng, n, d, 1.5);
    BandedMatrix band = build_near_field(q, k, 3);
    CHECK(max_abs_diff(band.densify(), dense_banded_oracle(q, k, 3, false)) <= 1e-10);

    // Row stochasticity over in-band entries.
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = band.row_begin(i); j <= band.row_end(i); ++j) sum += band.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-10);
    }
}

TEST_CASE("near_field_apply: identity band returns V") {
    Rng rng(104);
    RealMatrix q = rand_matrix(rng, 6, 4, 1.0);
    RealMatrix v = rand_matrix(rng, 6, 5, 1.0);
    BandedMatrix band = build_near_field(q, q, 0);
    CHECK(max_abs_diff(near_field_apply(band, v, false), v) == 0.0);
}

TEST_CASE("near_field_apply: causal matches dense lower-triangular band oracle") {
    Rng rng(105);
    const std::size_t n = 8, d = 4;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 3, 1.0);
    BandedMatrix band = build_near_field(q, k, 2);
    RealMatrix fast = near_field_apply(band, v, true);
    RealMatrix oracle = matmul(dense_banded_oracle(q, k, 2, true), v);
    CHECK(max_abs_diff(fast, oracle) <= 1e-10);
}

TEST_CASE("near_field_apply: random N=32 k=5 matches densify-and-multiply") {
    Rng rng(106);
    const std::size_t n = 32, d = 7;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 4, 1.0);
    BandedMatrix band = build_near_field(q, k, 5);
    CHECK(max_abs_diff(near_field_apply(band, v, false), matmul(band.densify(), v)) <= 1e-10);
}

TEST_CASE("far field: single position returns the value row") {
    Rng rng(107);
    RealMatrix q = rand_matrix(rng, 1, 6, 1.0);
    RealMatrix k = rand_matrix(rng, 1, 6, 1.0);
    RealMatrix v = rand_matrix(rng, 1, 4, 1.0);
    for (bool causal : {false, true}) {
        RealMatrix out = far_field_apply(q, k, v, FeatureMapSet{kPhi1}, causal);
        CHECK(max_abs_diff(out, v) <= 1e-14);
    }
}

TEST_CASE("far field: one map matches explicit dense kernel construction") {
    Rng rng(108);
    const std::size_t n = 16, d = 8;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 5, 1.0);
    RealMatrix fast = far_field_apply(q, k, v, FeatureMapSet{kPhi1}, false);
    RealMatrix oracle = matmul(dense_lowrank_oracle(q, k, FeatureMapSet{kPhi1}, false), v);
    CHECK(max_abs_diff(fast, oracle) <= 1e-9);
}

TEST_CASE("far field: causal two maps matches dense causal oracle") {
    Rng rng(109);
    const std::size_t n = 12, d = 6;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 4, 1.0);
    FeatureMapSet maps{kPhi1, kPhi2};
    RealMatrix fast = far_field_apply(q, k, v, maps, true);
    RealMatrix oracle = matmul(dense_lowrank_oracle(q, k, maps, true), v);
    CHECK(max_abs_diff(fast, oracle) <= 1e-9);
}

TEST_CASE("far field: empty maps and NaN inputs rejected") {
    Rng rng(110);
    RealMatrix q = rand_matrix(rng, 3, 2, 1.0);
    RealMatrix v = rand_matrix(rng, 3, 2, 1.0);
    CHECK_THROWS_AS(far_field_apply(q, q, v, FeatureMapSet{}, false), ConfigError);
    RealMatrix bad = q;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(far_field_apply(bad, q, v, FeatureMapSet{kPhi1}, false), NumericError);
}

TEST_CASE("fmm_attention: gate saturation isolates the near field") {
    Rng rng(111);
    const std::size_t n = 10, d = 5;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 4, 1.0);

    AttentionConfig cfg;
    cfg.bandwidth = 2;
    cfg.feature_maps = FeatureMapSet{kPhi1};
    cfg.blend.raw_w1 = 30.0;
    cfg.blend.raw_w2 = -30.0;
    RealMatrix out = fmm_attention(q, k, v, cfg);
    RealMatrix near = near_field_apply(build_near_field(q, k, 2), v, false);
    CHECK(max_abs_diff(out, near) <= 1e-6);
}

TEST_CASE("fmm_attention: band disabled reduces to scaled far field") {
    Rng rng(112);
    const std::size_t n = 9, d = 4;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 3, 1.0);

    AttentionConfig cfg;
    cfg.feature_maps = FeatureMapSet{kPhi2};
    cfg.blend.raw_w2 = 0.7;
    RealMatrix out = fmm_attention(q, k, v, cfg);
    RealMatrix far = scaled(far_field_apply(q, k, v, cfg.feature_maps, false), cfg.blend.w2());
    CHECK(max_abs_diff(out, far) <= 1e-12);
}

TEST_CASE("fmm_attention: full causal config matches dense composite oracle") {
    Rng rng(113);
    const std::size_t n = 24, d = 8;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 6, 1.0);

    AttentionConfig cfg;
    cfg.bandwidth = 4;
    cfg.feature_maps = FeatureMapSet{kPhi1, kPhi2};
    cfg.causal = true;
    cfg.blend.raw_w1 = 0.3;
    cfg.blend.raw_w2 = -0.9;

    RealMatrix fast = fmm_attention(q, k, v, cfg);
    RealMatrix composite = scaled(dense_banded_oracle(q, k, 4, true), cfg.blend.w1());
    axpy(composite, cfg.blend.w2(), dense_lowrank_oracle(q, k, cfg.feature_maps, true));
    CHECK(max_abs_diff(fast, matmul(composite, v)) <= 1e-9);
}

TEST_CASE("fmm_attention: empty config rejected") {
    AttentionConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("oracle-equivalence sweep: bandwidths, map subsets, causal flags") {
    const auto subsets = nonempty_subsets();
    for (std::size_t n : {1u, 2u, 7u, 16u, 33u}) {
        Rng rng(200 + n);
        const std::size_t d = 5, dv = 4;
        RealMatrix q = rand_matrix(rng, n, d, 1.0);
        RealMatrix k = rand_matrix(rng, n, d, 1.0);
        RealMatrix v = rand_matrix(rng, n, dv, 1.0);

        std::vector<std::size_t> bandwidths{0};
        if (n > 1) bandwidths.push_back(n - 1);
        if (n > 5) bandwidths.push_back(5);
        for (bool causal : {false, true}) {
            for (std::size_t bw : bandwidths) {
                BandedMatrix band = build_near_field(q, k, bw);
                RealMatrix fast = near_field_apply(band, v, causal);
                RealMatrix oracle = matmul(dense_banded_oracle(q, k, bw, causal), v);
                CHECK(max_abs_diff(fast, oracle) <= 1e-9);
            }
            for (const FeatureMapSet& maps : subsets) {
                RealMatrix fast = far_field_apply(q, k, v, maps, causal);
                RealMatrix oracle = matmul(dense_lowrank_oracle(q, k, maps, causal), v);
                CHECK(max_abs_diff(fast, oracle) <= 1e-9);
            }
        }
    }
}

TEST_CASE("locality: out-of-band value perturbations leave rows bit-identical") {
    Rng rng(300);
    const std::size_t n = 16, d = 4, bw = 3;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 3, 1.0);
    BandedMatrix band = build_near_field(q, k, bw);
    RealMatrix base = near_field_apply(band, v, false);

    RealMatrix v2 = v;
    const std::size_t target_row = 2;
    for (std::size_t j = 0; j < n; ++j)
        if (j > target_row + bw || j + bw < target_row)
            for (std::size_t b = 0; b < v.cols(); ++b) v2(j, b) += 100.0;
    RealMatrix perturbed = near_field_apply(band, v2, false);
    for (std::size_t b = 0; b < v.cols(); ++b)
        CHECK(perturbed(target_row, b) == base(target_row, b));
}

TEST_CASE("causality: future inputs cannot change past outputs (bit-exact)") {
    Rng rng(301);
    const std::size_t n = 12, d = 4;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);
    RealMatrix v = rand_matrix(rng, n, 3, 1.0);

    AttentionConfig cfg;
    cfg.bandwidth = 3;
    cfg.feature_maps = FeatureMapSet{kPhi1, kPhi3};
    cfg.causal = true;

    RealMatrix base = fmm_attention(q, k, v, cfg);
    const std::size_t cut = 6;
    RealMatrix q2 = q, k2 = k, v2 = v;
    for (std::size_t i = cut + 1; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            q2(i, a) = -q(i, a) + 3.0;
            k2(i, a) = 5.0 * k(i, a) - 1.0;
        }
    for (std::size_t i = cut + 1; i < n; ++i)
        for (std::size_t b = 0; b < v.cols(); ++b) v2(i, b) = v(i, b) * 7.0;
    RealMatrix changed = fmm_attention(q2, k2, v2, cfg);
    for (std::size_t i = 0; i <= cut; ++i)
        for (std::size_t b = 0; b < v.cols(); ++b) CHECK(changed(i, b) == base(i, b));
}

TEST_CASE("row stochasticity: densified near field and positive-map far field") {
    Rng rng(302);
    const std::size_t n = 10, d = 5;
    RealMatrix q = rand_matrix(rng, n, d, 1.0);
    RealMatrix k = rand_matrix(rng, n, d, 1.0);

    RealMatrix dense_band = build_near_field(q, k, 3).densify();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += dense_band(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-10);
    }

    // Each positive map contributes a row-stochastic term.
    for (FeatureMapKind kind : {kPhi1, kPhi2}) {
        RealMatrix low = dense_lowrank_oracle(q, k, FeatureMapSet{kind}, false);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) sum += low(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("attention config: round-trips through flat key-value form") {
    AttentionConfig cfg;
    cfg.bandwidth = 7;
    cfg.feature_maps = FeatureMapSet{kPhi1, kPhi3};
    cfg.causal = true;
    cfg.blend.raw_w1 = -1.25;
    cfg.blend.raw_w2 = 2.5;

    KeyValueConfig kv;
    cfg.to_config(kv);
    AttentionConfig back = AttentionConfig::from_config(kv);
    CHECK(back.bandwidth == cfg.bandwidth);
    CHECK(back.feature_maps == cfg.feature_maps);
    CHECK(back.causal == cfg.causal);
    CHECK(back.blend.raw_w1 == cfg.blend.raw_w1);
    CHECK(back.blend.raw_w2 == cfg.blend.raw_w2);

    AttentionConfig no_band;
    no_band.feature_maps = FeatureMapSet{kPhi2};
    KeyValueConfig kv2;
    no_band.to_config(kv2);
    CHECK(kv2.get("bandwidth") == "none");
    CHECK(!AttentionConfig::from_config(kv2).band_enabled());
}
