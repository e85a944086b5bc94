// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with its elapsed time. Trained models are cached and shared across
// criteria so the expensive runs happen once.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "nearfar/analysis.hpp"
#include "nearfar/attention.hpp"
#include "nearfar/bench.hpp"
#include "nearfar/grad.hpp"
#include "nearfar/model.hpp"
#include "nearfar/oracle.hpp"
#include "nearfar/rng.hpp"
#include "nearfar/verify.hpp"

using namespace nearfar;

namespace {

using Clock = std::chrono::steady_clock;

struct Timer {
    Clock::time_point start = Clock::now();
    double seconds() const {
        return std::chrono::duration<double>(Clock::now() - start).count();
    }
};

void report(int criterion, bool passed, double elapsed, const std::string& detail) {
    std::cout << "[criterion " << criterion << "] " << (passed ? "PASS" : "FAIL") << " ("
              << elapsed << " s) " << detail << "\n";
}

constexpr FeatureMapKind kPhi1 = FeatureMapKind::EluPlusOne;
constexpr FeatureMapKind kPhi2 = FeatureMapKind::NegEluPlusOne;
constexpr FeatureMapKind kPhi3 = FeatureMapKind::Tanh;

std::vector<FeatureMapSet> nonempty_subsets() {
    const FeatureMapKind all[] = {kPhi1, kPhi2, kPhi3};
    std::vector<FeatureMapSet> out;
    for (unsigned mask = 1; mask < 8; ++mask) {
        std::vector<FeatureMapKind> kinds;
        for (unsigned b = 0; b < 3; ++b)
            if (mask & (1u << b)) kinds.push_back(all[b]);
        out.emplace_back(std::move(kinds));
    }
    return out;
}

// Desk-scale copy-task setup shared by the training criteria.
TrainConfig desk_config(AttentionVariant variant, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.model_dim = 64;
    cfg.ffn_dim = 128;
    cfg.batch = 32;
    cfg.steps = 3000;
    cfg.max_len = 128;
    cfg.lr = 1e-3;
    cfg.lr_decay_step = 3000;
    cfg.warmup_steps = 100;
    cfg.variant = variant;
    cfg.seed = seed;
    switch (variant) {
        case AttentionVariant::Linear:
            cfg.feature_maps = FeatureMapSet{kPhi1};
            break;
        case AttentionVariant::Fmm:
            cfg.bandwidth = 10;
            cfg.feature_maps = FeatureMapSet{kPhi1, kPhi2};
            break;
        default:
            break;
    }
    return cfg;
}

// Final loss = mean over the last 100 recorded steps, damping batch noise.
double final_loss(const std::vector<double>& losses) {
    const std::size_t window = std::min<std::size_t>(100, losses.size());
    double sum = 0.0;
    for (std::size_t i = losses.size() - window; i < losses.size(); ++i) sum += losses[i];
    return sum / static_cast<double>(window);
}

// Cache of trained runs keyed by (variant tag, seed).
const TrainResult& cached_run(const std::string& tag, const TrainConfig& cfg) {
    static std::map<std::string, TrainResult> cache;
    const std::string key = tag + "#" + std::to_string(cfg.seed);
    auto it = cache.find(key);
    if (it == cache.end()) {
        Timer t;
        it = cache.emplace(key, train(cfg)).first;
        std::cout << "  trained " << key << " in " << t.seconds() << " s, final loss "
                  << final_loss(it->second.losses) << "\n";
    }
    return it->second;
}

}  // namespace

TEST_CASE("criterion 1: oracle equivalence across the full sweep") {
    Timer t;
    VerifyOptions options;
    options.seed = 1;
    options.n_max = 64;
    options.seeds_per_config = 5;
    options.tolerance = 1e-9;
    std::ostringstream sink;
    VerifyResult result = run_verification(options, sink);

    const bool passed = result.passed && t.seconds() < 120.0;
    report(1, passed, t.seconds(),
           "worst max-abs error " + std::to_string(result.worst_error) + " over " +
               std::to_string(result.configs_checked) + " configs");
    CHECK(result.passed);
    CHECK(result.worst_error <= 1e-9);
    CHECK(t.seconds() < 120.0);
}

TEST_CASE("criterion 2: kernel-sum rank equals the map count") {
    Timer t;
    bool all_match = true;
    const auto subsets = nonempty_subsets();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        // 32x16 random input, vectorized: each map contributes one outer
        // product of its elementwise image, so the rank must equal r.
        RealMatrix x = rand_matrix(rng, 32 * 16, 1, 1.0);
        for (const FeatureMapSet& maps : subsets) {
            const RealMatrix l = dense_lowrank_unnormalized(x, x, maps);
            const std::size_t rank = epsilon_rank(l, 1e-9);
            if (rank != maps.size()) all_match = false;
            CHECK(rank == maps.size());
        }
    }
    report(2, all_match && t.seconds() < 30.0, t.seconds(), "7 subsets x 10 seeds, N = 512");
    CHECK(t.seconds() < 30.0);
}

TEST_CASE("criterion 3: separated-kernel error decay matches log delta") {
    Timer t;
    bool all_ok = true;
    std::string detail;
    for (double delta : {0.3, 0.5, 0.7}) {
        Rng rng(42);
        std::vector<double> targets(16), sources(16);
        for (auto& q : targets) {
            const double mag = rng.uniform(1.0, 2.0);
            q = rng.uniform() < 0.5 ? -mag : mag;
        }
        for (auto& k : sources) k = rng.uniform(-delta, delta);
        SeparatedKernelProblem prob(std::move(targets), std::move(sources), 0.0, delta);
        const RealMatrix dense = prob.dense_kernel();

        std::vector<double> errors;
        for (std::size_t p = 1; p <= 9; ++p) {
            const LowRankFactors f = lemma1_factorize(prob, p);
            errors.push_back(max_abs_diff(matmul_abt(f.u, f.v), dense));
        }
        bool decreasing = true;
        for (std::size_t i = 1; i < errors.size(); ++i)
            if (!(errors[i] < errors[i - 1])) decreasing = false;

        // Least-squares slope of ln(error) against p over p = 2..8.
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        const std::size_t lo = 2, hi = 8, count = hi - lo + 1;
        for (std::size_t p = lo; p <= hi; ++p) {
            const double x = static_cast<double>(p), y = std::log(errors[p - 1]);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double n = static_cast<double>(count);
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double target = std::log(delta);
        const bool slope_ok = std::abs(slope - target) <= 0.3 * std::abs(target);

        detail += "delta=" + std::to_string(delta) + " slope=" + std::to_string(slope) + " ";
        CHECK(decreasing);
        CHECK(slope_ok);
        all_ok = all_ok && decreasing && slope_ok;
    }
    report(3, all_ok && t.seconds() < 10.0, t.seconds(), detail);
    CHECK(t.seconds() < 10.0);
}

TEST_CASE("criterion 4: gradient correctness via finite differences") {
    Timer t;
    double worst = 0.0;
    const auto subsets = nonempty_subsets();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 4 + seed % 13;  // 4..16

        for (std::size_t bw : {std::size_t{0}, std::size_t{1}, std::size_t{5}, n - 1}) {
            if (bw >= n) continue;
            AttentionConfig near;
            near.bandwidth = bw;
            near.causal = seed % 2 == 1;
            near.blend.raw_w1 = 40.0;
            worst = std::max(worst, attention_fd_check(near, n, 5, 4, 900 + seed, 1e-6, false));
        }
        for (const FeatureMapSet& maps : subsets) {
            AttentionConfig far;
            far.feature_maps = maps;
            far.causal = seed % 2 == 0;
            far.blend.raw_w2 = 40.0;
            worst = std::max(worst,
                             attention_fd_check(far, n, 5, 4, 1700 + 7 * seed, 1e-6, false));
        }
        AttentionConfig blend;
        blend.bandwidth = std::min<std::size_t>(3, n - 1);
        blend.feature_maps = subsets[seed % subsets.size()];
        blend.causal = seed % 2 == 1;
        blend.blend.raw_w1 = -0.3;
        blend.blend.raw_w2 = 0.6;
        worst = std::max(worst, attention_fd_check(blend, n, 5, 4, 2600 + seed, 1e-6, true));

        TrainConfig tiny;
        tiny.layers = 1;
        tiny.heads = 2;
        tiny.model_dim = 8;
        tiny.ffn_dim = 12;
        tiny.max_len = 16;
        tiny.batch = 2;
        tiny.variant = AttentionVariant::Fmm;
        tiny.bandwidth = 2;
        tiny.feature_maps = FeatureMapSet{kPhi1, kPhi2};
        tiny.seed = 3500 + seed;
        worst = std::max(worst, model_fd_check(tiny, 3500 + seed, 1e-6));
    }
    const bool passed = worst <= 1e-5 && t.seconds() < 300.0;
    report(4, passed, t.seconds(), "max relative FD error " + std::to_string(worst));
    CHECK(worst <= 1e-5);
    CHECK(t.seconds() < 300.0);
}

TEST_CASE("criterion 5: linear vs quadratic complexity scaling") {
    Timer t;
    Rng rng(7);
    const std::vector<std::size_t> lengths{512, 1024, 2048, 4096, 8192};
    const auto records = run_scaling(
        {BenchVariantSpec::make_softmax(), BenchVariantSpec::make_fmm(30, 3)}, lengths, 3, rng,
        64);

    const SlopeFit soft_time = fit_time_slope(records, "softmax");
    const SlopeFit fmm_time = fit_time_slope(records, "fmm_band30_rank3");

    const auto peak_of = [&](const std::string& variant, std::size_t n) -> double {
        for (const BenchRecord& r : records)
            if (r.variant == variant && r.n == n && r.feasible)
                return static_cast<double>(r.peak_bytes);
        return -1.0;
    };

    bool fmm_mem_ok = true;
    for (std::size_t n : {1024u, 2048u, 4096u}) {
        const double a = peak_of("fmm_band30_rank3", n), b = peak_of("fmm_band30_rank3", 2 * n);
        if (a <= 0 || b <= 0 || b / a > 2.5) fmm_mem_ok = false;
    }
    bool soft_mem_ok = true;
    for (std::size_t n : {2048u, 4096u}) {
        const double a = peak_of("softmax", n), b = peak_of("softmax", 2 * n);
        if (a <= 0 || b <= 0 || b / a < 3.5) soft_mem_ok = false;
    }

    const bool passed = soft_time.slope >= 1.7 && fmm_time.slope <= 1.3 && fmm_mem_ok &&
                        soft_mem_ok && t.seconds() < 600.0;
    report(5, passed, t.seconds(),
           "softmax time slope " + std::to_string(soft_time.slope) + ", fmm time slope " +
               std::to_string(fmm_time.slope));
    CHECK(soft_time.slope >= 1.7);
    CHECK(fmm_time.slope <= 1.3);
    CHECK(fmm_mem_ok);
    CHECK(soft_mem_ok);
    CHECK(t.seconds() < 600.0);
}

TEST_CASE("criterion 6: copy-task convergence comparisons") {
    Timer t;

    double fmm_mean = 0.0, linear_mean = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        fmm_mean += final_loss(cached_run("fmm_b10_r2", desk_config(AttentionVariant::Fmm, seed))
                                   .losses);
        linear_mean +=
            final_loss(cached_run("linear", desk_config(AttentionVariant::Linear, seed)).losses);
    }
    fmm_mean /= 3.0;
    linear_mean /= 3.0;

    TrainConfig strong = desk_config(AttentionVariant::Fmm, 1);
    strong.bandwidth = 30;
    strong.feature_maps = FeatureMapSet{kPhi1, kPhi2, kPhi3};
    const double strong_loss = final_loss(cached_run("fmm_b30_r3", strong).losses);
    const double softmax_loss =
        final_loss(cached_run("softmax", desk_config(AttentionVariant::Softmax, 1)).losses);

    const bool blend_beats_linear = fmm_mean <= linear_mean;
    const bool within_2x = strong_loss <= 2.0 * softmax_loss;
    const bool softmax_converged = softmax_loss < 0.1 * std::log(11.0);

    const bool passed =
        blend_beats_linear && within_2x && softmax_converged && t.seconds() < 3600.0;
    report(6, passed, t.seconds(),
           "fmm(b10,r2) " + std::to_string(fmm_mean) + " vs linear " +
               std::to_string(linear_mean) + "; fmm(b30,r3) " + std::to_string(strong_loss) +
               " vs softmax " + std::to_string(softmax_loss));
    CHECK(blend_beats_linear);
    CHECK(within_2x);
    CHECK(softmax_converged);
    CHECK(t.seconds() < 3600.0);
}

TEST_CASE("criterion 7: rank after band removal is non-increasing") {
    Timer t;
    const TrainResult& softmax_run =
        cached_run("softmax", desk_config(AttentionVariant::Softmax, 1));
    const ModelParams& params = softmax_run.params;

    Rng data(77);
    std::vector<RankProfile> profiles;
    const std::vector<std::size_t> bandwidths{0, 5, 10, 20};
    std::size_t harvested = 0;
    while (harvested < 200) {
        for (std::size_t l = 0; l < params.cfg.layers && harvested < 200; ++l) {
            for (std::size_t h = 0; h < params.cfg.heads && harvested < 200; ++h) {
                const auto batch = gen_copy_batch(data, 1, params.cfg.max_len);
                const auto mats = harvest_attention(params, batch, l, h);
                const auto prof = band_removed_rank(mats.front(), bandwidths, 1e-6,
                                                    "a" + std::to_string(harvested));
                profiles.insert(profiles.end(), prof.begin(), prof.end());
                ++harvested;
            }
        }
    }

    const auto summaries = rank_distribution_report(profiles);
    bool non_increasing = true;
    std::string detail = "medians:";
    double prev = 1e18;
    for (const RankSummary& s : summaries) {
        detail += " b" + std::to_string(s.bandwidth_removed) + "=" +
                  std::to_string(s.median_abs);
        if (s.median_abs > prev) non_increasing = false;
        prev = s.median_abs;
    }

    const bool passed = non_increasing && t.seconds() < 300.0;
    report(7, passed, t.seconds(), detail);
    CHECK(non_increasing);
    CHECK(t.seconds() < 300.0);
}

TEST_CASE("criterion 8: full-band closed-gate blend ties back to softmax") {
    Timer t;
    TrainConfig soft = desk_config(AttentionVariant::Softmax, 9);
    soft.steps = 200;

    TrainConfig tied = soft;
    tied.variant = AttentionVariant::Fmm;
    tied.bandwidth = soft.max_len - 1;
    tied.feature_maps = FeatureMapSet{kPhi1};
    tied.w1_logit = 800.0;   // sigmoid saturates to exactly 1
    tied.w2_logit = -800.0;  // sigmoid saturates to exactly 0

    const TrainResult a = train(soft);
    const TrainResult b = train(tied);
    REQUIRE(a.losses.size() == b.losses.size());

    double worst = 0.0;
    for (std::size_t i = 0; i < a.losses.size(); ++i)
        worst = std::max(worst, std::abs(a.losses[i] - b.losses[i]));

    const bool passed = worst <= 1e-6 && t.seconds() < 300.0;
    report(8, passed, t.seconds(), "max pointwise loss gap " + std::to_string(worst));
    CHECK(worst <= 1e-6);
    CHECK(t.seconds() < 300.0);
}
