#include "nearfar/verify.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <sstream>

#include "nearfar/attention.hpp"
#include "nearfar/errors.hpp"
#include "nearfar/oracle.hpp"
#include "nearfar/rng.hpp"

namespace nearfar {

FaultInjection parse_fault(const std::string& token) {
    if (token.empty() || token == "none") return FaultInjection::None;
    if (token == "near_field") return FaultInjection::NearField;
    if (token == "far_field") return FaultInjection::FarField;
    if (token == "blend") return FaultInjection::Blend;
    throw ConfigError("unknown fault injection target: '" + token + "'");
}

namespace {

std::vector<FeatureMapSet> all_subsets() {
    const FeatureMapKind all[] = {FeatureMapKind::EluPlusOne, FeatureMapKind::NegEluPlusOne,
                                  FeatureMapKind::Tanh};
    std::vector<FeatureMapSet> out;
    for (unsigned mask = 0; mask < 8; ++mask) {
        std::vector<FeatureMapKind> kinds;
        for (unsigned b = 0; b < 3; ++b)
            if (mask & (1u << b)) kinds.push_back(all[b]);
        out.emplace_back(std::move(kinds));
    }
    return out;
}

struct Check {
    std::string label;
    double error = 0.0;
};

}  // namespace

VerifyResult run_verification(const VerifyOptions& options, std::ostream& log) {
    VerifyResult result;
    const std::vector<FeatureMapSet> subsets = all_subsets();
    const std::vector<std::size_t> n_values = {1, 2, 7, 16, 33, 64};

    const auto record = [&](const std::string& label, double err) {
        ++result.configs_checked;
        if (err > result.worst_error) {
            result.worst_error = err;
            result.worst_config = label;
        }
        if (err > options.tolerance && result.failure.empty()) {
            result.passed = false;
            result.failure = label + " error=" + std::to_string(err);
        }
    };

    for (std::size_t n : n_values) {
        if (n > options.n_max) break;
        for (int causal = 0; causal < 2; ++causal) {
            double group_worst = 0.0;
            for (std::uint64_t s = 0; s < options.seeds_per_config; ++s) {
                Rng rng(options.seed + 977 * s + 31 * n + static_cast<std::uint64_t>(causal));
                const std::size_t d = 6, dv = 5;
                const RealMatrix q = rand_matrix(rng, n, d, 1.0);
                const RealMatrix k = rand_matrix(rng, n, d, 1.0);
                const RealMatrix v = rand_matrix(rng, n, dv, 1.0);

                std::set<std::size_t> bandwidths{0, n - 1};
                if (n > 1) bandwidths.insert(1);
                if (n > 5) bandwidths.insert(5);

                for (std::size_t bw : bandwidths) {
                    std::ostringstream label;
                    label << "near_field N=" << n << " bw=" << bw << " causal=" << causal
                          << " seed=" << s;
                    BandedMatrix band = build_near_field(q, k, bw);
                    if (options.fault == FaultInjection::NearField)
                        band.ref(n / 2, n / 2) += 1e-3;
                    const RealMatrix fast = near_field_apply(band, v, causal != 0);
                    const RealMatrix oracle =
                        matmul(dense_banded_oracle(q, k, bw, causal != 0), v);
                    record(label.str(), max_abs_diff(fast, oracle));
                    group_worst = std::max(group_worst, max_abs_diff(fast, oracle));
                }

                for (const FeatureMapSet& maps : subsets) {
                    if (maps.empty()) continue;
                    std::ostringstream label;
                    label << "far_field N=" << n << " maps=" << maps.to_string()
                          << " causal=" << causal << " seed=" << s;
                    RealMatrix fast = far_field_apply(q, k, v, maps, causal != 0);
                    if (options.fault == FaultInjection::FarField) fast(0, 0) += 1e-3;
                    const RealMatrix oracle =
                        matmul(dense_lowrank_oracle(q, k, maps, causal != 0), v);
                    record(label.str(), max_abs_diff(fast, oracle));
                    group_worst = std::max(group_worst, max_abs_diff(fast, oracle));
                }

                // Blended composite: every bandwidth paired with every subset.
                for (std::size_t bw : bandwidths) {
                    for (const FeatureMapSet& maps : subsets) {
                        AttentionConfig cfg;
                        cfg.bandwidth = bw;
                        cfg.feature_maps = maps;
                        cfg.causal = causal != 0;
                        cfg.blend.raw_w1 = 0.25;
                        cfg.blend.raw_w2 = -0.5;

                        std::ostringstream label;
                        label << "blend N=" << n << " bw=" << bw << " maps=" << maps.to_string()
                              << " causal=" << causal << " seed=" << s;
                        RealMatrix fast = fmm_attention(q, k, v, cfg);
                        if (options.fault == FaultInjection::Blend) fast(0, 0) += 1e-3;
                        RealMatrix composite =
                            scaled(dense_banded_oracle(q, k, bw, causal != 0), cfg.blend.w1());
                        if (!maps.empty())
                            axpy(composite, cfg.blend.w2(),
                                 dense_lowrank_oracle(q, k, maps, causal != 0));
                        record(label.str(), max_abs_diff(fast, matmul(composite, v)));
                        group_worst =
                            std::max(group_worst, max_abs_diff(fast, matmul(composite, v)));
                    }
                }
            }
            log << "N=" << n << " causal=" << causal << " worst max-abs error " << group_worst
                << "\n";
        }
    }
    return result;
}

}  // namespace nearfar
