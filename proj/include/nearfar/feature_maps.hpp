#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "nearfar/matrix.hpp"
#include "nearfar/rng.hpp"

namespace nearfar {

/// Elementwise kernel feature maps applied to queries/keys. The first two
/// are strictly positive everywhere, which keeps the far-field row
/// normalizer bounded away from zero; tanh is admitted but signed.
enum class FeatureMapKind {
    EluPlusOne,     // x > 0 ? x + 1 : exp(x)
    NegEluPlusOne,  // EluPlusOne(-x)
    Tanh,
};

double apply_scalar(FeatureMapKind kind, double x) noexcept;
double apply_derivative_scalar(FeatureMapKind kind, double x) noexcept;

RealMatrix apply(FeatureMapKind kind, const RealMatrix& m);
RealMatrix apply_derivative(FeatureMapKind kind, const RealMatrix& m);

/// Config token: "elu1", "neg_elu1", "tanh".
std::string_view feature_map_token(FeatureMapKind kind) noexcept;
FeatureMapKind parse_feature_map(std::string_view token);

/// Ordered set of distinct feature maps. Empty means "no far field";
/// at most the three catalogued kinds.
class FeatureMapSet {
  public:
    FeatureMapSet() = default;
    FeatureMapSet(std::initializer_list<FeatureMapKind> kinds)
        : FeatureMapSet(std::vector<FeatureMapKind>(kinds)) {}
    explicit FeatureMapSet(std::vector<FeatureMapKind> kinds);

    /// Parses a comma list of tokens; empty string gives the empty set.
    static FeatureMapSet parse(std::string_view csv);
    std::string to_string() const;

    std::size_t size() const noexcept { return kinds_.size(); }
    bool empty() const noexcept { return kinds_.empty(); }
    FeatureMapKind operator[](std::size_t i) const noexcept { return kinds_[i]; }
    auto begin() const noexcept { return kinds_.begin(); }
    auto end() const noexcept { return kinds_.end(); }
    bool operator==(const FeatureMapSet&) const = default;

  private:
    std::vector<FeatureMapKind> kinds_;
};

/// True iff the maps evaluated at n_points random scalars give a full-rank
/// evaluation matrix (sigma_r > 1e-9 * sigma_1).
bool independence_probe(const FeatureMapSet& set, Rng& rng, std::size_t n_points);

}  // namespace nearfar
