#include "nearfar/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "nearfar/errors.hpp"
#include "nearfar/svd.hpp"

namespace nearfar {

std::vector<RealMatrix> harvest_attention(const ModelParams& params,
                                          const std::vector<CopyTaskSample>& batch,
                                          std::size_t layer, std::size_t head) {
    if (params.cfg.variant != AttentionVariant::Softmax)
        throw ConfigError("harvest_attention: needs the softmax variant (dense maps)");
    if (layer >= params.cfg.layers || head >= params.cfg.heads)
        throw ConfigError("harvest_attention: layer/head out of range");

    std::vector<RealMatrix> out;
    out.reserve(batch.size());
    for (const CopyTaskSample& sample : batch) {
        Tape tape = forward_with_tape(params, sample.tokens);
        const auto& state = std::get<DenseAttentionState>(tape.layers[layer].heads[head]);
        out.push_back(state.attn);
    }
    return out;
}

RealMatrix remove_band(const RealMatrix& a, std::size_t bandwidth) {
    RealMatrix out = a;
    if (bandwidth == 0) return out;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const std::size_t lo = i >= bandwidth ? i - bandwidth : 0;
        const std::size_t hi = std::min(i + bandwidth, a.cols() - 1);
        for (std::size_t j = lo; j <= hi; ++j) out(i, j) = 0.0;
    }
    return out;
}

RealMatrix band_part(const RealMatrix& a, std::size_t bandwidth) {
    RealMatrix out(a.rows(), a.cols());
    if (bandwidth == 0) return out;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const std::size_t lo = i >= bandwidth ? i - bandwidth : 0;
        const std::size_t hi = std::min(i + bandwidth, a.cols() - 1);
        for (std::size_t j = lo; j <= hi; ++j) out(i, j) = a(i, j);
    }
    return out;
}

std::vector<RankProfile> band_removed_rank(const RealMatrix& a,
                                           const std::vector<std::size_t>& bandwidths,
                                           double eps, const std::string& source) {
    if (!std::is_sorted(bandwidths.begin(), bandwidths.end()))
        throw ConfigError("band_removed_rank: bandwidths must be ascending");
    if (!(eps > 0.0)) throw ConfigError("band_removed_rank: eps must be > 0");

    std::vector<RankProfile> out;
    out.reserve(bandwidths.size());
    for (std::size_t b : bandwidths) {
        const RealMatrix remainder = remove_band(a, b);
        RankProfile profile;
        profile.source = source;
        profile.bandwidth_removed = b;
        profile.singular_values = svd(remainder).singular_values;
        const double sigma1 =
            profile.singular_values.empty() ? 0.0 : profile.singular_values.front();
        for (double sigma : profile.singular_values) {
            if (sigma > eps) ++profile.eps_rank_abs;
            if (sigma1 > 0.0 && sigma > eps * sigma1) ++profile.eps_rank_rel;
        }
        out.push_back(std::move(profile));
    }
    return out;
}

std::vector<RankSummary> rank_distribution_report(const std::vector<RankProfile>& profiles) {
    if (profiles.empty()) throw ConfigError("rank_distribution_report: no profiles");

    std::map<std::size_t, std::vector<const RankProfile*>> by_band;
    for (const RankProfile& p : profiles) by_band[p.bandwidth_removed].push_back(&p);

    const auto median_of = [](std::vector<double> values) {
        std::sort(values.begin(), values.end());
        const std::size_t n = values.size();
        return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    };

    std::vector<RankSummary> out;
    for (const auto& [band, list] : by_band) {
        RankSummary s;
        s.bandwidth_removed = band;
        s.count = list.size();
        std::vector<double> abs_ranks, rel_ranks;
        std::map<std::size_t, std::size_t> hist;
        for (const RankProfile* p : list) {
            abs_ranks.push_back(static_cast<double>(p->eps_rank_abs));
            rel_ranks.push_back(static_cast<double>(p->eps_rank_rel));
            ++hist[p->eps_rank_abs];
            s.mean_abs += static_cast<double>(p->eps_rank_abs);
            s.mean_rel += static_cast<double>(p->eps_rank_rel);
        }
        s.mean_abs /= static_cast<double>(list.size());
        s.mean_rel /= static_cast<double>(list.size());
        s.median_abs = median_of(abs_ranks);
        s.median_rel = median_of(rel_ranks);
        s.histogram_abs.assign(hist.begin(), hist.end());
        out.push_back(std::move(s));
    }
    return out;
}

void write_profiles_csv(const std::string& path, const std::vector<RankProfile>& profiles) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("write_profiles_csv: cannot open " + path);
    out << "source,bandwidth,eps_rank_abs,eps_rank_rel\n";
    for (const RankProfile& p : profiles)
        out << p.source << ',' << p.bandwidth_removed << ',' << p.eps_rank_abs << ','
            << p.eps_rank_rel << '\n';
}

void write_spectra_csv(const std::string& path, const std::vector<RankProfile>& profiles) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("write_spectra_csv: cannot open " + path);
    out << "source,bandwidth,index,sigma\n";
    out.precision(17);
    for (const RankProfile& p : profiles)
        for (std::size_t i = 0; i < p.singular_values.size(); ++i)
            out << p.source << ',' << p.bandwidth_removed << ',' << i << ','
                << p.singular_values[i] << '\n';
}

std::string format_rank_summary(const std::vector<RankSummary>& summaries) {
    std::ostringstream os;
    os << "bandwidth  count  median_abs  mean_abs  median_rel  mean_rel\n";
    for (const RankSummary& s : summaries) {
        os << s.bandwidth_removed << "  " << s.count << "  " << s.median_abs << "  "
           << s.mean_abs << "  " << s.median_rel << "  " << s.mean_rel << "\n";
    }
    return os.str();
}

}  // namespace nearfar
