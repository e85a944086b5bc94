#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace nearfar {

enum class FaultInjection { None, NearField, FarField, Blend };

FaultInjection parse_fault(const std::string& token);

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::size_t n_max = 64;
    std::size_t seeds_per_config = 5;
    double tolerance = 1e-9;
    FaultInjection fault = FaultInjection::None;
};

struct VerifyResult {
    bool passed = true;
    std::size_t configs_checked = 0;
    double worst_error = 0.0;
    std::string worst_config;
    std::string failure;  // first failing configuration, empty if none
};

/// Sweeps every fast path against its dense oracle: N up to n_max,
/// bandwidths {0, 1, 5, N-1}, all feature-map subsets, causal on/off.
/// Prints one worst-error line per (N, causal) group to `log`.
VerifyResult run_verification(const VerifyOptions& options, std::ostream& log);

}  // namespace nearfar
