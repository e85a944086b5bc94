#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nearfar/attention.hpp"
#include "nearfar/rng.hpp"

namespace nearfar {

/// One attention implementation under measurement. `softmax` selects the
/// dense quadratic path; otherwise `attention` drives the fast path.
struct BenchVariantSpec {
    std::string name;
    bool softmax = false;
    AttentionConfig attention;

    static BenchVariantSpec make_softmax();
    static BenchVariantSpec make_linear();                 // far field, phi_1
    static BenchVariantSpec make_rank(std::size_t rank);   // far field, r maps
    static BenchVariantSpec make_fmm(std::size_t bandwidth, std::size_t rank);
    static std::vector<BenchVariantSpec> default_set();
    static BenchVariantSpec parse(const std::string& token);
};

struct BenchRecord {
    std::string variant;
    std::size_t n = 0;
    double fwd_s = 0.0;        // forward only
    double bwd_s = 0.0;        // forward + backward
    std::size_t peak_bytes = 0;
    std::size_t repeats = 0;
    bool feasible = true;
};

/// Median-of-repeats wall time and peak matrix-storage bytes for each
/// variant x length, head dimension `dim`. Out-of-memory marks the record
/// infeasible and the run continues.
std::vector<BenchRecord> run_scaling(const std::vector<BenchVariantSpec>& variants,
                                     const std::vector<std::size_t>& lengths,
                                     std::size_t repeats, Rng& rng, std::size_t dim = 64);

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Least-squares fit of log(y) on log(x). Needs at least 4 points.
SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Convenience: forward-time and peak-memory slopes for one variant's records.
SlopeFit fit_time_slope(const std::vector<BenchRecord>& records, const std::string& variant);
SlopeFit fit_memory_slope(const std::vector<BenchRecord>& records, const std::string& variant);

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records,
                     const std::vector<std::string>& header_comments);

}  // namespace nearfar
