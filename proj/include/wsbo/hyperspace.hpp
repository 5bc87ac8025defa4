#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsbo/errors.hpp"

namespace wsbo {

/// A point in a hyperparameter space, coordinates in raw units.
using HyperparameterVector = std::vector<double>;

enum class DimKind {
    Real,     ///< closed real interval [lower, upper]
    IntCast,  ///< real interval, casted to integer at evaluation time
    IntSet,   ///< finite strictly increasing set of integers
};

struct DimensionSpec {
    std::string name;
    DimKind kind = DimKind::Real;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<long long> int_set;  // populated iff kind == IntSet

    static DimensionSpec real(std::string name, double lower, double upper) {
        return DimensionSpec{std::move(name), DimKind::Real, lower, upper, {}};
    }
    static DimensionSpec int_cast(std::string name, double lower, double upper) {
        return DimensionSpec{std::move(name), DimKind::IntCast, lower, upper, {}};
    }
    static DimensionSpec int_members(std::string name, std::vector<long long> members) {
        DimensionSpec d{std::move(name), DimKind::IntSet, 0.0, 0.0, std::move(members)};
        if (!d.int_set.empty()) {
            d.lower = static_cast<double>(d.int_set.front());
            d.upper = static_cast<double>(d.int_set.back());
        }
        return d;
    }
};

/// The domain of optimization: an ordered list of dimension specs.
///
/// Integer-set dimensions are embedded on the continuous [min, max] axis
/// for GP / sampling purposes and snapped to the nearest member when a
/// point is materialized; this mirrors how batch sizes and layer counts
/// are handled by the canonical six-dimensional space.
class HyperparameterSpace {
public:
    HyperparameterSpace() = default;

    explicit HyperparameterSpace(std::vector<DimensionSpec> dims) : dims_(std::move(dims)) {
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            const auto& d = dims_[i];
            if (d.name.empty()) throw DomainError("dimension " + std::to_string(i) + " has an empty name");
            for (std::size_t j = 0; j < i; ++j) {
                if (dims_[j].name == d.name) throw DomainError("duplicate dimension name '" + d.name + "'");
            }
            if (d.kind == DimKind::IntSet) {
                if (d.int_set.empty()) throw DomainError("dimension '" + d.name + "': empty integer set");
                for (std::size_t j = 1; j < d.int_set.size(); ++j) {
                    if (d.int_set[j] <= d.int_set[j - 1]) {
                        throw DomainError("dimension '" + d.name + "': integer set must be strictly increasing");
                    }
                }
                if (d.int_set.size() < 2) {
                    throw DomainError("dimension '" + d.name + "': singleton integer set is degenerate");
                }
                if (d.lower != static_cast<double>(d.int_set.front()) ||
                    d.upper != static_cast<double>(d.int_set.back())) {
                    throw DomainError("dimension '" + d.name + "': bounds disagree with the integer set");
                }
            } else {
                if (!(d.lower < d.upper)) {
                    throw DomainError("dimension '" + d.name + "': requires lower < upper");
                }
            }
        }
    }

    std::size_t size() const { return dims_.size(); }
    const DimensionSpec& dim(std::size_t i) const { return dims_.at(i); }
    const std::vector<DimensionSpec>& dims() const { return dims_; }

    /// True iff every coordinate satisfies its dimension spec. Throws on
    /// length mismatch; integer-cast coordinates are valid as reals since
    /// casting happens at evaluation time.
    bool validate(const HyperparameterVector& v) const {
        check_length(v);
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            const auto& d = dims_[i];
            const double x = v[i];
            if (!std::isfinite(x)) return false;
            switch (d.kind) {
                case DimKind::Real:
                case DimKind::IntCast:
                    if (x < d.lower || x > d.upper) return false;
                    break;
                case DimKind::IntSet: {
                    const bool member = std::any_of(d.int_set.begin(), d.int_set.end(),
                                                    [x](long long m) { return static_cast<double>(m) == x; });
                    if (!member) return false;
                    break;
                }
            }
        }
        return true;
    }

    /// Affine map of each coordinate onto [0,1] using the space bounds
    /// (integer sets use min/max of the set).
    std::vector<double> normalize(const HyperparameterVector& v) const {
        check_length(v);
        if (!validate(v)) throw DomainError("cannot normalize a vector that fails validation");
        std::vector<double> u(dims_.size());
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            u[i] = (v[i] - dims_[i].lower) / (dims_[i].upper - dims_[i].lower);
        }
        return u;
    }

    /// Inverse of normalize; integer-set coordinates snap to the nearest member.
    HyperparameterVector denormalize(const std::vector<double>& u) const {
        check_length(u);
        HyperparameterVector v(dims_.size());
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            const double ui = u[i];
            if (!(ui >= 0.0 && ui <= 1.0)) {
                throw DomainError("unit-cube coordinate " + std::to_string(i) + " outside [0,1]");
            }
            const auto& d = dims_[i];
            const double raw = d.lower + ui * (d.upper - d.lower);
            v[i] = (d.kind == DimKind::IntSet) ? nearest_member(d, raw) : raw;
        }
        return v;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["dims"] = nlohmann::ordered_json::array();
        for (const auto& d : dims_) {
            nlohmann::ordered_json jd;
            jd["name"] = d.name;
            jd["kind"] = d.kind == DimKind::Real ? "real" : d.kind == DimKind::IntCast ? "int_cast" : "int_set";
            jd["lower"] = d.lower;
            jd["upper"] = d.upper;
            if (d.kind == DimKind::IntSet) jd["set"] = d.int_set;
            j["dims"].push_back(std::move(jd));
        }
        return j;
    }

    template <typename Json>
    static HyperparameterSpace from_json(const Json& j) {
        if (!j.contains("dims") || !j["dims"].is_array()) {
            throw ParseError("space: missing 'dims' array");
        }
        std::vector<DimensionSpec> dims;
        for (const auto& jd : j["dims"]) {
            DimensionSpec d;
            try {
                d.name = jd.at("name").template get<std::string>();
                const auto kind = jd.at("kind").template get<std::string>();
                if (kind == "real") {
                    d.kind = DimKind::Real;
                } else if (kind == "int_cast") {
                    d.kind = DimKind::IntCast;
                } else if (kind == "int_set") {
                    d.kind = DimKind::IntSet;
                } else {
                    throw ParseError("space: unknown dimension kind '" + kind + "'");
                }
                if (d.kind == DimKind::IntSet) {
                    d.int_set = jd.at("set").template get<std::vector<long long>>();
                    d.lower = d.int_set.empty() ? 0.0 : static_cast<double>(d.int_set.front());
                    d.upper = d.int_set.empty() ? 0.0 : static_cast<double>(d.int_set.back());
                } else {
                    d.lower = jd.at("lower").template get<double>();
                    d.upper = jd.at("upper").template get<double>();
                }
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("space: malformed dimension entry: ") + e.what());
            }
            dims.push_back(std::move(d));
        }
        return HyperparameterSpace(std::move(dims));
    }

private:
    template <typename V>
    void check_length(const V& v) const {
        if (v.size() != dims_.size()) {
            throw DimensionMismatchError("vector length " + std::to_string(v.size()) +
                                         " does not match space dimension " + std::to_string(dims_.size()));
        }
    }

    static double nearest_member(const DimensionSpec& d, double raw) {
        double best = static_cast<double>(d.int_set.front());
        double best_dist = std::abs(raw - best);
        for (long long m : d.int_set) {
            const double dist = std::abs(raw - static_cast<double>(m));
            if (dist < best_dist) {
                best = static_cast<double>(m);
                best_dist = dist;
            }
        }
        return best;
    }

    std::vector<DimensionSpec> dims_;
};

/// The canonical six-dimensional CNN hyperparameter space shipped as a
/// built-in: learning-rate and decay exponents, batch size (casted to
/// integer at evaluation), layer counts, dropout rate.
inline HyperparameterSpace canonical_cnn_space() {
    std::vector<DimensionSpec> dims;
    dims.push_back(DimensionSpec::real("log10_learning_rate", -5.0, 0.0));
    dims.push_back(DimensionSpec::real("log10_decay_rate", -8.0, -4.0));
    dims.push_back(DimensionSpec::int_cast("batch_size", 100.0, 400.0));
    dims.push_back(DimensionSpec::int_members("num_layers_conv", {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    dims.push_back(DimensionSpec::int_members("num_layers_fc", {1, 2, 3}));
    dims.push_back(DimensionSpec::real("dropout_rate", 0.0, 0.9));
    return HyperparameterSpace(std::move(dims));
}

}  // namespace wsbo
