// Command-line surface: oracle-equivalence verification, copy-task
// training, rank analysis, separated-kernel decay demonstration, scaling
// benchmarks, and gradient checks.
//
// Exit codes: 0 success, 1 verification/assertion failure, 2 usage/config
// error.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nearfar/analysis.hpp"
#include "nearfar/attention.hpp"
#include "nearfar/bench.hpp"
#include "nearfar/errors.hpp"
#include "nearfar/grad.hpp"
#include "nearfar/model.hpp"
#include "nearfar/oracle.hpp"
#include "nearfar/rng.hpp"
#include "nearfar/verify.hpp"

namespace fs = std::filesystem;
using namespace nearfar;

namespace {

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        const std::string tok = csv.substr(pos, comma - pos);
        if (!tok.empty()) out.push_back(std::stoull(tok));
        pos = comma + 1;
    }
    return out;
}

void echo_config(const KeyValueConfig& kv) {
    std::cout << "# resolved config\n";
    std::istringstream lines(kv.to_string());
    std::string line;
    while (std::getline(lines, line)) std::cout << "#   " << line << "\n";
}

int cmd_verify(std::uint64_t seed, std::size_t n_max, double tolerance,
               const std::string& fault) {
    VerifyOptions options;
    options.seed = seed;
    options.n_max = n_max;
    options.tolerance = tolerance;
    options.fault = parse_fault(fault);

    KeyValueConfig kv;
    kv.set("seed", seed);
    kv.set("n_max", static_cast<std::uint64_t>(n_max));
    kv.set("tolerance", tolerance);
    kv.set("inject_fault", fault.empty() ? "none" : fault);
    echo_config(kv);

    VerifyResult result = run_verification(options, std::cout);
    std::cout << "checked " << result.configs_checked << " configurations, worst error "
              << result.worst_error << " (" << result.worst_config << ")\n";
    if (!result.passed) {
        std::cout << "FAIL: " << result.failure << "\n";
        return 1;
    }
    std::cout << "PASS\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& variant_override,
              std::uint64_t seed_override, bool has_seed, const std::string& out_dir) {
    KeyValueConfig kv =
        config_path.empty() ? KeyValueConfig() : KeyValueConfig::parse_file(config_path);
    if (!variant_override.empty()) kv.set("variant", variant_override);
    if (has_seed) kv.set("seed", seed_override);
    TrainConfig cfg = TrainConfig::from_config(kv);

    KeyValueConfig resolved;
    cfg.to_config(resolved);
    echo_config(resolved);

    fs::create_directories(out_dir);
    TrainResult result = train(cfg);

    const std::string tag =
        std::string(variant_token(cfg.variant)) + "_seed" + std::to_string(cfg.seed);
    const std::string csv_path = (fs::path(out_dir) / ("loss_" + tag + ".csv")).string();
    const std::string ckpt_path = (fs::path(out_dir) / ("checkpoint_" + tag + ".bin")).string();
    write_loss_csv(csv_path, result.losses, variant_token(cfg.variant), cfg.seed);
    save_checkpoint(ckpt_path, result.params);

    std::cout << "steps " << result.losses.size() << ", final loss "
              << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n";
    std::cout << "wrote " << csv_path << "\n";
    std::cout << "wrote " << ckpt_path << "\n";
    return 0;
}

int cmd_analyze(const std::string& checkpoint, std::size_t count,
                const std::string& bandwidths_csv, double eps, int layer, int head,
                std::uint64_t seed, const std::string& out_dir) {
    const std::vector<std::size_t> bandwidths = parse_size_list(bandwidths_csv);
    KeyValueConfig kv;
    kv.set("checkpoint", checkpoint);
    kv.set("count", static_cast<std::uint64_t>(count));
    kv.set("bandwidths", bandwidths_csv);
    kv.set("eps", eps);
    kv.set("seed", seed);
    echo_config(kv);

    ModelParams params = load_checkpoint(checkpoint);
    Rng rng(seed);

    std::vector<RankProfile> profiles;
    std::size_t harvested = 0;
    std::size_t source_id = 0;
    while (harvested < count) {
        // Round-robin over layer/head unless pinned by flags.
        for (std::size_t l = 0; l < params.cfg.layers && harvested < count; ++l) {
            if (layer >= 0 && static_cast<std::size_t>(layer) != l) continue;
            for (std::size_t h = 0; h < params.cfg.heads && harvested < count; ++h) {
                if (head >= 0 && static_cast<std::size_t>(head) != h) continue;
                const auto batch = gen_copy_batch(rng, 1, params.cfg.max_len);
                const auto mats = harvest_attention(params, batch, l, h);
                const std::string source = "a" + std::to_string(source_id++) + "_l" +
                                           std::to_string(l) + "h" + std::to_string(h);
                const auto prof = band_removed_rank(mats.front(), bandwidths, eps, source);
                profiles.insert(profiles.end(), prof.begin(), prof.end());
                ++harvested;
            }
        }
    }

    fs::create_directories(out_dir);
    const std::string profiles_path = (fs::path(out_dir) / "profiles.csv").string();
    const std::string spectra_path = (fs::path(out_dir) / "spectra.csv").string();
    write_profiles_csv(profiles_path, profiles);
    write_spectra_csv(spectra_path, profiles);

    const auto summaries = rank_distribution_report(profiles);
    std::cout << format_rank_summary(summaries);
    std::cout << "wrote " << profiles_path << "\n";
    std::cout << "wrote " << spectra_path << "\n";
    return 0;
}

int cmd_lemma1(double delta, std::size_t p_max, std::size_t n_targets, std::size_t n_sources,
               std::uint64_t seed, const std::string& out_dir) {
    if (!(delta > 0.0 && delta < 1.0))
        throw ConfigError("lemma1: delta must be in (0, 1)");
    KeyValueConfig kv;
    kv.set("delta", delta);
    kv.set("p_max", static_cast<std::uint64_t>(p_max));
    kv.set("targets", static_cast<std::uint64_t>(n_targets));
    kv.set("sources", static_cast<std::uint64_t>(n_sources));
    kv.set("seed", seed);
    echo_config(kv);

    Rng rng(seed);
    std::vector<double> targets(n_targets), sources(n_sources);
    for (auto& q : targets) {
        const double mag = rng.uniform(1.0, 2.0);
        q = rng.uniform() < 0.5 ? -mag : mag;
    }
    for (auto& k : sources) k = rng.uniform(-delta, delta);
    SeparatedKernelProblem prob(std::move(targets), std::move(sources), 0.0, delta);
    const RealMatrix dense = prob.dense_kernel();

    fs::create_directories(out_dir);
    const std::string csv_path = (fs::path(out_dir) / "lemma1.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw ConfigError("lemma1: cannot open " + csv_path);
    csv << "# delta = " << delta << ", seed = " << seed << "\n";
    csv << "p,max_abs_error\n";
    csv.precision(17);
    std::cout << "p  max_abs_error\n";
    for (std::size_t p = 1; p <= p_max; ++p) {
        const LowRankFactors f = lemma1_factorize(prob, p);
        const double err = max_abs_diff(matmul_abt(f.u, f.v), dense);
        csv << p << ',' << err << '\n';
        std::cout << p << "  " << err << "\n";
    }
    std::cout << "wrote " << csv_path << "\n";
    return 0;
}

int cmd_bench(const std::string& lengths_csv, std::size_t repeats,
              const std::string& variants_csv, std::size_t dim, std::uint64_t seed,
              const std::string& out_dir) {
    const std::vector<std::size_t> lengths = parse_size_list(lengths_csv);
    std::vector<BenchVariantSpec> variants;
    if (variants_csv.empty() || variants_csv == "all") {
        variants = BenchVariantSpec::default_set();
    } else {
        std::size_t pos = 0;
        while (pos < variants_csv.size()) {
            std::size_t comma = variants_csv.find(',', pos);
            if (comma == std::string::npos) comma = variants_csv.size();
            variants.push_back(BenchVariantSpec::parse(variants_csv.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }

    KeyValueConfig kv;
    kv.set("lengths", lengths_csv);
    kv.set("repeats", static_cast<std::uint64_t>(repeats));
    kv.set("dim", static_cast<std::uint64_t>(dim));
    kv.set("seed", seed);
    echo_config(kv);

    Rng rng(seed);
    const auto records = run_scaling(variants, lengths, repeats, rng, dim);

    fs::create_directories(out_dir);
    const std::string csv_path = (fs::path(out_dir) / "bench.csv").string();
    std::vector<std::string> header{
        "single-thread CPU measurement, batch 1",
        "fwd_s: forward only; bwd_s: forward+backward; peak_bytes: live matrix storage",
        "dim = " + std::to_string(dim) + ", seed = " + std::to_string(seed)};
    write_bench_csv(csv_path, records, header);

    for (const BenchVariantSpec& spec : variants) {
        try {
            const SlopeFit time_fit = fit_time_slope(records, spec.name);
            const SlopeFit mem_fit = fit_memory_slope(records, spec.name);
            std::cout << spec.name << ": time slope " << time_fit.slope
                      << " (R2 " << time_fit.r2 << "), memory slope " << mem_fit.slope << "\n";
        } catch (const ConfigError&) {
            std::cout << spec.name << ": not enough feasible points for a fit\n";
        }
    }
    std::cout << "wrote " << csv_path << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t n_max, std::size_t n_seeds, double h,
                  double tolerance) {
    KeyValueConfig kv;
    kv.set("seed", seed);
    kv.set("n_max", static_cast<std::uint64_t>(n_max));
    kv.set("seeds", static_cast<std::uint64_t>(n_seeds));
    kv.set("h", h);
    kv.set("tolerance", tolerance);
    echo_config(kv);

    double worst_near = 0.0, worst_far = 0.0, worst_blend = 0.0, worst_model = 0.0;
    for (std::uint64_t s = 0; s < n_seeds; ++s) {
        const std::size_t n = 3 + (seed + s) % (n_max - 2);

        AttentionConfig near;
        near.bandwidth = s % std::min<std::size_t>(n, 4);
        near.causal = s % 2 == 1;
        near.blend.raw_w1 = 40.0;
        worst_near = std::max(worst_near,
                              attention_fd_check(near, n, 5, 4, seed + 11 * s, h, false));

        const FeatureMapSet sets[] = {
            FeatureMapSet{FeatureMapKind::EluPlusOne},
            FeatureMapSet{FeatureMapKind::EluPlusOne, FeatureMapKind::NegEluPlusOne},
            FeatureMapSet{FeatureMapKind::EluPlusOne, FeatureMapKind::NegEluPlusOne,
                          FeatureMapKind::Tanh}};
        AttentionConfig far;
        far.feature_maps = sets[s % 3];
        far.causal = s % 2 == 0;
        far.blend.raw_w2 = 40.0;
        worst_far =
            std::max(worst_far, attention_fd_check(far, n, 5, 4, seed + 13 * s, h, false));

        AttentionConfig blend;
        blend.bandwidth = 1 + s % std::min<std::size_t>(n - 1, 3);
        blend.feature_maps = sets[s % 3];
        blend.causal = s % 2 == 1;
        blend.blend.raw_w1 = -0.5;
        blend.blend.raw_w2 = 0.5;
        worst_blend =
            std::max(worst_blend, attention_fd_check(blend, n, 5, 4, seed + 17 * s, h, true));

        if (s < 3) {
            TrainConfig tiny;
            tiny.layers = 1;
            tiny.heads = 2;
            tiny.model_dim = 8;
            tiny.ffn_dim = 12;
            tiny.max_len = 12;
            tiny.batch = 2;
            tiny.variant = AttentionVariant::Fmm;
            tiny.bandwidth = 2;
            tiny.feature_maps = FeatureMapSet{FeatureMapKind::EluPlusOne};
            tiny.seed = seed + s;
            worst_model = std::max(worst_model, model_fd_check(tiny, seed + s, h));
        }
    }

    std::cout << "near-field  max rel error " << worst_near << "\n";
    std::cout << "far-field   max rel error " << worst_far << "\n";
    std::cout << "blend       max rel error " << worst_blend << "\n";
    std::cout << "full model  max rel error " << worst_model << "\n";
    const double worst = std::max({worst_near, worst_far, worst_blend, worst_model});
    if (worst > tolerance) {
        std::cout << "FAIL: worst " << worst << " > tolerance " << tolerance << "\n";
        return 1;
    }
    std::cout << "PASS\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"banded near-field + kernelized far-field attention toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

    // verify
    auto* verify = app.add_subcommand("verify", "fast paths vs dense oracles");
    std::size_t n_max = 64;
    double tolerance = 1e-9;
    std::string fault;
    verify->add_option("--n-max", n_max, "largest sequence length")->capture_default_str();
    verify->add_option("--tolerance", tolerance, "max-abs error bound")->capture_default_str();
    verify->add_option("--inject-fault", fault,
                       "testing hook: perturb one output (near_field|far_field|blend)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a copy-task model");
    std::string config_path, variant_override, out_dir = "out";
    train_cmd->add_option("--config", config_path, "flat key = value config file");
    train_cmd->add_option("--variant", variant_override,
                          "override variant (softmax|linear|band|fmm)");
    train_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "rank analysis of harvested attention");
    std::string checkpoint;
    std::size_t count = 200;
    std::string bandwidths_csv = "0,5,10,20";
    double eps = 1e-6;
    int layer = -1, head = -1;
    analyze->add_option("--checkpoint", checkpoint, "trained softmax checkpoint")->required();
    analyze->add_option("--count", count, "matrices to harvest")->capture_default_str();
    analyze->add_option("--bandwidths", bandwidths_csv, "bands to remove")
        ->capture_default_str();
    analyze->add_option("--eps", eps, "singular value threshold")->capture_default_str();
    analyze->add_option("--layer", layer, "pin one layer (-1 = all)")->capture_default_str();
    analyze->add_option("--head", head, "pin one head (-1 = all)")->capture_default_str();
    analyze->add_option("--out", out_dir, "output directory")->capture_default_str();

    // lemma1
    auto* lemma1 = app.add_subcommand("lemma1", "separated-kernel low-rank error decay");
    double delta = 0.5;
    std::size_t p_max = 10, n_targets = 16, n_sources = 16;
    lemma1->add_option("--delta", delta, "separation ratio in (0,1)")->capture_default_str();
    lemma1->add_option("--p-max", p_max, "largest factor rank")->capture_default_str();
    lemma1->add_option("--targets", n_targets, "target count")->capture_default_str();
    lemma1->add_option("--sources", n_sources, "source count")->capture_default_str();
    lemma1->add_option("--out", out_dir, "output directory")->capture_default_str();

    // bench
    auto* bench = app.add_subcommand("bench", "time/memory scaling in sequence length");
    std::string lengths_csv = "256,512,1024,2048,4096,8192";
    std::size_t repeats = 5, dim = 64;
    std::string variants_csv = "all";
    bench->add_option("--lengths", lengths_csv, "ascending lengths")->capture_default_str();
    bench->add_option("--repeats", repeats, "repeats per point (median)")
        ->capture_default_str();
    bench->add_option("--variants", variants_csv, "softmax|linear|rank2|rank3|fmm or 'all'")
        ->capture_default_str();
    bench->add_option("--dim", dim, "feature dimension")->capture_default_str();
    bench->add_option("--out", out_dir, "output directory")->capture_default_str();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::size_t gc_n_max = 16, gc_seeds = 20;
    double gc_h = 1e-6, gc_tol = 1e-5;
    gradcheck->add_option("--n-max", gc_n_max, "largest sequence length")
        ->capture_default_str();
    gradcheck->add_option("--seeds", gc_seeds, "number of random seeds")
        ->capture_default_str();
    gradcheck->add_option("--h", gc_h, "finite-difference step")->capture_default_str();
    gradcheck->add_option("--tolerance", gc_tol, "max relative error")->capture_default_str();

    bool train_seed_given = false;
    try {
        app.parse(argc, argv);
        train_seed_given = app.count("--seed") > 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*verify) return cmd_verify(seed, n_max, tolerance, fault);
        if (*train_cmd)
            return cmd_train(config_path, variant_override, seed, train_seed_given, out_dir);
        if (*analyze)
            return cmd_analyze(checkpoint, count, bandwidths_csv, eps, layer, head, seed,
                               out_dir);
        if (*lemma1) return cmd_lemma1(delta, p_max, n_targets, n_sources, seed, out_dir);
        if (*bench) return cmd_bench(lengths_csv, repeats, variants_csv, dim, seed, out_dir);
        if (*gradcheck) return cmd_gradcheck(seed, gc_n_max, gc_seeds, gc_h, gc_tol);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
