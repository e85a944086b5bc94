#include "nearfar/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <new>

#include "nearfar/errors.hpp"
#include "nearfar/grad.hpp"
#include "nearfar/memtrack.hpp"
#include "nearfar/oracle.hpp"

namespace nearfar {

namespace {
using Clock = std::chrono::steady_clock;

FeatureMapSet rank_maps(std::size_t rank) {
    std::vector<FeatureMapKind> kinds;
    const FeatureMapKind all[] = {FeatureMapKind::EluPlusOne, FeatureMapKind::NegEluPlusOne,
                                  FeatureMapKind::Tanh};
    if (rank < 1 || rank > 3) throw ConfigError("bench: rank must be 1..3");
    for (std::size_t i = 0; i < rank; ++i) kinds.push_back(all[i]);
    return FeatureMapSet(std::move(kinds));
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}
}  // namespace

BenchVariantSpec BenchVariantSpec::make_softmax() {
    BenchVariantSpec spec;
    spec.name = "softmax";
    spec.softmax = true;
    return spec;
}

BenchVariantSpec BenchVariantSpec::make_linear() {
    BenchVariantSpec spec;
    spec.name = "linear";
    spec.attention.feature_maps = rank_maps(1);
    spec.attention.blend.raw_w2 = 40.0;  // weight saturates to 1
    return spec;
}

BenchVariantSpec BenchVariantSpec::make_rank(std::size_t rank) {
    BenchVariantSpec spec;
    spec.name = "rank" + std::to_string(rank);
    spec.attention.feature_maps = rank_maps(rank);
    spec.attention.blend.raw_w2 = 40.0;
    return spec;
}

BenchVariantSpec BenchVariantSpec::make_fmm(std::size_t bandwidth, std::size_t rank) {
    BenchVariantSpec spec;
    spec.name = "fmm_band" + std::to_string(bandwidth) + "_rank" + std::to_string(rank);
    spec.attention.bandwidth = bandwidth;
    spec.attention.feature_maps = rank_maps(rank);
    spec.attention.blend.raw_w1 = 0.0;
    spec.attention.blend.raw_w2 = 0.0;
    return spec;
}

std::vector<BenchVariantSpec> BenchVariantSpec::default_set() {
    return {make_softmax(), make_linear(), make_rank(2), make_rank(3), make_fmm(30, 3)};
}

BenchVariantSpec BenchVariantSpec::parse(const std::string& token) {
    if (token == "softmax") return make_softmax();
    if (token == "linear") return make_linear();
    if (token == "rank2") return make_rank(2);
    if (token == "rank3") return make_rank(3);
    if (token == "fmm") return make_fmm(30, 3);
    throw ConfigError("bench: unknown variant '" + token +
                      "' (expected softmax|linear|rank2|rank3|fmm)");
}

namespace {

// One forward (and optionally backward) pass of the variant under test.
void run_once(const BenchVariantSpec& spec, const RealMatrix& q, const RealMatrix& k,
              const RealMatrix& v, const RealMatrix& upstream, bool with_backward) {
    if (spec.softmax) {
        if (!with_backward) {
            volatile double sink = dense_softmax_attention(q, k, v, false).out(0, 0);
            (void)sink;
            return;
        }
        DenseAttentionState st = dense_attention_forward(q, k, v, false);
        GradBundle g = backward_dense_attention(st, upstream);
        volatile double sink = g.d_q(0, 0);
        (void)sink;
        return;
    }
    if (!with_backward) {
        volatile double sink = fmm_attention(q, k, v, spec.attention)(0, 0);
        (void)sink;
        return;
    }
    BlendState st = fmm_attention_forward(q, k, v, spec.attention);
    GradBundle g = backward_blend(st, upstream);
    volatile double sink = g.d_q(0, 0);
    (void)sink;
}

}  // namespace

std::vector<BenchRecord> run_scaling(const std::vector<BenchVariantSpec>& variants,
                                     const std::vector<std::size_t>& lengths,
                                     std::size_t repeats, Rng& rng, std::size_t dim) {
    if (!std::is_sorted(lengths.begin(), lengths.end()))
        throw ConfigError("run_scaling: lengths must be ascending");
    if (repeats < 3) throw ConfigError("run_scaling: repeats must be >= 3");

    std::vector<BenchRecord> records;
    for (const BenchVariantSpec& spec : variants) {
        for (std::size_t n : lengths) {
            BenchRecord rec;
            rec.variant = spec.name;
            rec.n = n;
            rec.repeats = repeats;
            try {
                const RealMatrix q = rand_matrix(rng, n, dim, 1.0);
                const RealMatrix k = rand_matrix(rng, n, dim, 1.0);
                const RealMatrix v = rand_matrix(rng, n, dim, 1.0);
                const RealMatrix upstream = rand_matrix(rng, n, dim, 1.0);

                std::vector<double> fwd_times, bwd_times;
                for (std::size_t r = 0; r < repeats; ++r) {
                    const auto t0 = Clock::now();
                    run_once(spec, q, k, v, upstream, false);
                    const auto t1 = Clock::now();
                    fwd_times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                memtrack::reset_peak();
                for (std::size_t r = 0; r < repeats; ++r) {
                    const auto t0 = Clock::now();
                    run_once(spec, q, k, v, upstream, true);
                    const auto t1 = Clock::now();
                    bwd_times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                rec.peak_bytes = memtrack::peak_bytes();
                rec.fwd_s = median(fwd_times);
                rec.bwd_s = median(bwd_times);
            } catch (const std::bad_alloc&) {
                rec.feasible = false;
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("fit_slope: size mismatch");
    if (x.size() < 4) throw ConfigError("fit_slope: need at least 4 points");
    const std::size_t n = x.size();

    double sx = 0.0, sy = 0.0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        sx += lx[i];
        sy += ly[i];
    }
    const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pred = fit.intercept + fit.slope * lx[i];
        ss_res += (ly[i] - pred) * (ly[i] - pred);
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

namespace {
SlopeFit fit_records(const std::vector<BenchRecord>& records, const std::string& variant,
                     bool memory) {
    std::vector<double> xs, ys;
    for (const BenchRecord& r : records) {
        if (r.variant != variant || !r.feasible) continue;
        xs.push_back(static_cast<double>(r.n));
        ys.push_back(memory ? static_cast<double>(r.peak_bytes) : r.fwd_s);
    }
    return fit_slope(xs, ys);
}
}  // namespace

SlopeFit fit_time_slope(const std::vector<BenchRecord>& records, const std::string& variant) {
    return fit_records(records, variant, false);
}

SlopeFit fit_memory_slope(const std::vector<BenchRecord>& records, const std::string& variant) {
    return fit_records(records, variant, true);
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records,
                     const std::vector<std::string>& header_comments) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("write_bench_csv: cannot open " + path);
    for (const std::string& line : header_comments) out << "# " << line << '\n';
    out << "variant,N,fwd_s,bwd_s,peak_bytes,repeats\n";
    out.precision(9);
    for (const BenchRecord& r : records) {
        if (!r.feasible) {
            out << r.variant << ',' << r.n << ",inf,inf,0," << r.repeats << '\n';
            continue;
        }
        out << r.variant << ',' << r.n << ',' << r.fwd_s << ',' << r.bwd_s << ','
            << r.peak_bytes << ',' << r.repeats << '\n';
    }
}

}  // namespace nearfar
