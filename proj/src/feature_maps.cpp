#include "nearfar/feature_maps.hpp"

#include <algorithm>
#include <cmath>

#include "nearfar/errors.hpp"
#include "nearfar/svd.hpp"

namespace nearfar {

double apply_scalar(FeatureMapKind kind, double x) noexcept {
    switch (kind) {
        case FeatureMapKind::EluPlusOne:
            return x > 0.0 ? x + 1.0 : std::exp(x);
        case FeatureMapKind::NegEluPlusOne:
            return -x > 0.0 ? -x + 1.0 : std::exp(-x);
        case FeatureMapKind::Tanh:
            return std::tanh(x);
    }
    return 0.0;  // unreachable
}

double apply_derivative_scalar(FeatureMapKind kind, double x) noexcept {
    switch (kind) {
        case FeatureMapKind::EluPlusOne:
            return x > 0.0 ? 1.0 : std::exp(x);
        case FeatureMapKind::NegEluPlusOne:
            return -x > 0.0 ? -1.0 : -std::exp(-x);
        case FeatureMapKind::Tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 0.0;  // unreachable
}

RealMatrix apply(FeatureMapKind kind, const RealMatrix& m) {
    RealMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = apply_scalar(kind, m.data()[i]);
    return out;
}

RealMatrix apply_derivative(FeatureMapKind kind, const RealMatrix& m) {
    RealMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i)
        out.data()[i] = apply_derivative_scalar(kind, m.data()[i]);
    return out;
}

std::string_view feature_map_token(FeatureMapKind kind) noexcept {
    switch (kind) {
        case FeatureMapKind::EluPlusOne:
            return "elu1";
        case FeatureMapKind::NegEluPlusOne:
            return "neg_elu1";
        case FeatureMapKind::Tanh:
            return "tanh";
    }
    return "";
}

FeatureMapKind parse_feature_map(std::string_view token) {
    if (token == "elu1") return FeatureMapKind::EluPlusOne;
    if (token == "neg_elu1") return FeatureMapKind::NegEluPlusOne;
    if (token == "tanh") return FeatureMapKind::Tanh;
    throw ConfigError("unknown feature map token: '" + std::string(token) + "'");
}

FeatureMapSet::FeatureMapSet(std::vector<FeatureMapKind> kinds) : kinds_(std::move(kinds)) {
    if (kinds_.size() > 3) throw ConfigError("FeatureMapSet: at most 3 feature maps");
    for (std::size_t i = 0; i < kinds_.size(); ++i)
        for (std::size_t j = i + 1; j < kinds_.size(); ++j)
            if (kinds_[i] == kinds_[j])
                throw ConfigError("FeatureMapSet: duplicate feature map '" +
                                  std::string(feature_map_token(kinds_[i])) + "'");
}

FeatureMapSet FeatureMapSet::parse(std::string_view csv) {
    std::vector<FeatureMapKind> kinds;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string_view::npos) comma = csv.size();
        std::string_view tok = csv.substr(pos, comma - pos);
        while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
        while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
        if (!tok.empty()) kinds.push_back(parse_feature_map(tok));
        pos = comma + 1;
    }
    return FeatureMapSet(std::move(kinds));
}

std::string FeatureMapSet::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < kinds_.size(); ++i) {
        if (i) out += ',';
        out += feature_map_token(kinds_[i]);
    }
    return out;
}

bool independence_probe(const FeatureMapSet& set, Rng& rng, std::size_t n_points) {
    if (set.empty()) return true;
    if (n_points < set.size())
        throw ConfigError("independence_probe: need at least r sample points");
    RealMatrix eval(n_points, set.size());
    for (std::size_t i = 0; i < n_points; ++i) {
        const double x = rng.uniform(-3.0, 3.0);
        for (std::size_t l = 0; l < set.size(); ++l) eval(i, l) = apply_scalar(set[l], x);
    }
    const SvdResult s = svd(eval);
    return s.singular_values.back() > 1e-9 * s.singular_values.front();
}

}  // namespace nearfar
