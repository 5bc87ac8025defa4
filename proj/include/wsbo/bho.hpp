#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wsbo/acquisition.hpp"
#include "wsbo/errors.hpp"
#include "wsbo/gp.hpp"
#include "wsbo/history.hpp"
#include "wsbo/hyperspace.hpp"
#include "wsbo/metafeature.hpp"

namespace wsbo {

/// Evaluation contract: maps a hyperparameter vector to a validation error
/// in [0,1]. Evaluations are counted; a trace of length T implies exactly T
/// calls.
using TargetFunction = std::function<double(const HyperparameterVector&)>;

/// One optimization run: the acquired sequence plus its cumulative minimum.
struct Trace {
    std::vector<HyperparameterVector> points;
    std::vector<double> errors;
    std::vector<double> best_so_far;  // best_so_far[t] = min(errors[0..t])
    std::size_t init_count = 0;
    std::string method_tag;

    std::size_t size() const { return errors.size(); }

    double final_best() const { return best_so_far.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                           : best_so_far.back(); }

    void push(HyperparameterVector v, double error) {
        points.push_back(std::move(v));
        errors.push_back(error);
        best_so_far.push_back(best_so_far.empty() ? error : std::min(best_so_far.back(), error));
    }
};

/// The target returned a non-finite error; the partial trace up to that
/// point rides along.
struct EvaluationError : Error {
    Trace partial;
    EvaluationError(const std::string& msg, Trace t) : Error(msg), partial(std::move(t)) {}
};

namespace detail {

inline bool near_duplicate(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-9) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > tol) return false;
    }
    return true;
}

inline double checked_evaluate(const TargetFunction& target, const HyperparameterVector& v, Trace& trace) {
    const double e = target(v);
    if (!std::isfinite(e)) {
        throw EvaluationError("target returned a non-finite error", trace);
    }
    return e;
}

}  // namespace detail

/// The BHO loop: evaluates the provided init vectors, then for each further
/// step refits the GP on all acquired pairs (from scratch, per iteration),
/// maximizes the acquisition, and evaluates the chosen point. Exactly T
/// target evaluations. When the maximizer lands within 1e-9 (normalized,
/// max-norm) of an already-acquired point, the best unacquired Halton
/// candidate is evaluated instead, which keeps noise-free runs from
/// re-evaluating a point.
inline Trace run_bho(const TargetFunction& target, const HyperparameterSpace& space,
                     const std::vector<HyperparameterVector>& init, std::size_t T,
                     const AcquisitionConfig& acq, std::string method_tag = "bho") {
    const std::size_t k = init.size();
    if (k < 1) throw DomainError("run_bho: need at least one init vector");
    if (k > T) throw DomainError("run_bho: init count exceeds the evaluation limit T");
    for (const auto& v : init) {
        if (!space.validate(v)) throw DomainError("run_bho: init vector fails validation");
    }

    Trace trace;
    trace.init_count = k;
    trace.method_tag = std::move(method_tag);

    std::vector<std::vector<double>> acquired_unit;
    for (const auto& v : init) {
        const double e = detail::checked_evaluate(target, v, trace);
        trace.push(v, e);
        acquired_unit.push_back(space.normalize(v));
    }

    for (std::size_t j = k; j < T; ++j) {
        const GpModel model = fit(acquired_unit, trace.errors, FitBounds{}, derive_seed(acq.seed, "fit", j));

        AcquisitionConfig step_cfg = acq;
        step_cfg.seed = derive_seed(acq.seed, "maximize", j);
        const MaximizerResult best = maximize_acquisition_full(model, space, step_cfg);

        HyperparameterVector chosen = best.point;
        std::vector<double> chosen_unit = space.normalize(chosen);
        const bool duplicate = std::any_of(acquired_unit.begin(), acquired_unit.end(),
                                           [&](const auto& u) { return detail::near_duplicate(u, chosen_unit); });
        if (duplicate) {
            const double incumbent = trace.best_so_far.back();
            const SampleBatch fallback = halton(space.size(), static_cast<std::size_t>(acq.maximizer_budget), 1);
            double best_val = -std::numeric_limits<double>::infinity();
            bool found = false;
            for (const auto& u : fallback.points) {
                HyperparameterVector cand = space.denormalize(u);
                std::vector<double> cand_unit = space.normalize(cand);
                const bool used = std::any_of(acquired_unit.begin(), acquired_unit.end(), [&](const auto& a) {
                    return detail::near_duplicate(a, cand_unit);
                });
                if (used) continue;
                const double val = acquisition_value(model, step_cfg, incumbent, cand_unit);
                if (val > best_val) {
                    best_val = val;
                    chosen = std::move(cand);
                    chosen_unit = std::move(cand_unit);
                    found = true;
                }
            }
            if (!found) {
                // Everything in the fallback batch is acquired; keep the duplicate.
                chosen = best.point;
                chosen_unit = space.normalize(chosen);
            }
        }

        const double e = detail::checked_evaluate(target, chosen, trace);
        trace.push(chosen, e);
        acquired_unit.push_back(chosen_unit);
    }
    return trace;
}

/// Warm-start initialization: embeds the new dataset, retrieves the k
/// nearest stored records, and returns each one's grid-best vector in
/// ascending-distance order. Duplicates are kept when neighbors share a
/// grid-best.
inline std::vector<HyperparameterVector> warm_start_init(const WingParams& wing, const HistoryStore& store,
                                                         const InstanceSet& new_instances, std::size_t k,
                                                         std::size_t tau, std::uint64_t seed) {
    const MetaFeature query = embed_instances(wing, new_instances, tau, seed);
    const std::vector<std::string> ids = knn(query, store, k);
    std::vector<HyperparameterVector> init;
    init.reserve(k);
    for (const auto& id : ids) init.push_back(best_on_grid(store, id));
    return init;
}

/// Warm-started BHO: the same loop as run_bho, differing only in where the
/// k init vectors come from.
inline Trace run_warm_bho(const WingParams& wing, const HistoryStore& store, const InstanceSet& new_instances,
                          const TargetFunction& target, const HyperparameterSpace& space, std::size_t k,
                          std::size_t T, const AcquisitionConfig& acq, std::size_t tau = 200,
                          std::uint64_t embed_seed = 0) {
    const auto init = warm_start_init(wing, store, new_instances, k, tau, embed_seed);
    return run_bho(target, space, init, T, acq, "warmstart");
}

/// Trace CSV: iteration, theta_1..theta_d, error, best_so_far, method, seed.
/// With include_phase a trailing column tags each row init or bo.
inline void write_trace_csv(const Trace& trace, const HyperparameterSpace& space, std::uint64_t seed,
                            const std::filesystem::path& path, bool include_phase = false) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << "iteration";
    for (std::size_t i = 1; i <= space.size(); ++i) out << ",theta_" << i;
    out << ",error,best_so_far,method,seed";
    if (include_phase) out << ",phase";
    out << "\n";
    char buf[64];
    for (std::size_t t = 0; t < trace.size(); ++t) {
        out << (t + 1);
        for (double x : trace.points[t]) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            out << "," << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", trace.errors[t]);
        out << "," << buf;
        std::snprintf(buf, sizeof buf, "%.17g", trace.best_so_far[t]);
        out << "," << buf << "," << trace.method_tag << "," << seed;
        if (include_phase) out << "," << (t < trace.init_count ? "init" : "bo");
        out << "\n";
    }
}

}  // namespace wsbo
