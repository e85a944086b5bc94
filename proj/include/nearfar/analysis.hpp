#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nearfar/matrix.hpp"
#include "nearfar/model.hpp"

namespace nearfar {

/// Spectrum and thresholded ranks of one attention matrix after removing a
/// band. bandwidth_removed = 0 means nothing was removed.
struct RankProfile {
    std::string source;
    std::size_t bandwidth_removed = 0;
    std::vector<double> singular_values;
    std::size_t eps_rank_abs = 0;  // sigma > eps
    std::size_t eps_rank_rel = 0;  // sigma > eps * sigma_1
};

/// Dense attention maps harvested from the softmax path of a trained model,
/// one per sample, for the given layer/head.
std::vector<RealMatrix> harvest_attention(const ModelParams& params,
                                          const std::vector<CopyTaskSample>& batch,
                                          std::size_t layer, std::size_t head);

/// Copy of `a` with the band |i-j| <= bandwidth zeroed. bandwidth = 0
/// removes nothing (not even the diagonal).
RealMatrix remove_band(const RealMatrix& a, std::size_t bandwidth);

/// The removed banded part, so that remove_band(a,b) + band_part(a,b) == a.
RealMatrix band_part(const RealMatrix& a, std::size_t bandwidth);

/// Rank profiles of a after removing each bandwidth (must be ascending).
std::vector<RankProfile> band_removed_rank(const RealMatrix& a,
                                           const std::vector<std::size_t>& bandwidths,
                                           double eps, const std::string& source);

struct RankSummary {
    std::size_t bandwidth_removed = 0;
    std::size_t count = 0;
    double median_abs = 0.0, mean_abs = 0.0;
    double median_rel = 0.0, mean_rel = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> histogram_abs;  // rank -> count
};

std::vector<RankSummary> rank_distribution_report(const std::vector<RankProfile>& profiles);

void write_profiles_csv(const std::string& path, const std::vector<RankProfile>& profiles);
void write_spectra_csv(const std::string& path, const std::vector<RankProfile>& profiles);
std::string format_rank_summary(const std::vector<RankSummary>& summaries);

}  // namespace nearfar
