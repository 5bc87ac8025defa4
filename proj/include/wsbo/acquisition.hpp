#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wsbo/errors.hpp"
#include "wsbo/gp.hpp"
#include "wsbo/hyperspace.hpp"
#include "wsbo/rng.hpp"
#include "wsbo/sampling.hpp"

namespace wsbo {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) * 0.39894228040143267794; }

/// Expected improvement below the incumbent minimum `best` (we minimize
/// validation error): (best - mu) Phi(z) + sigma phi(z), z = (best - mu)/sigma.
/// The sigma -> 0 limit is the deterministic improvement max(0, best - mu).
inline double expected_improvement(double mu, double sigma, double best) {
    if (sigma < 0.0) throw DomainError("expected_improvement: sigma must be >= 0");
    if (sigma == 0.0) return std::max(0.0, best - mu);
    const double z = (best - mu) / sigma;
    return (best - mu) * normal_cdf(z) + sigma * normal_pdf(z);
}

/// GP-UCB for minimization: -mu + kappa * sigma. Maximizing it favors low
/// predicted error plus exploration.
inline double gp_ucb(double mu, double sigma, double kappa) {
    if (sigma < 0.0) throw DomainError("gp_ucb: sigma must be >= 0");
    if (kappa < 0.0) throw DomainError("gp_ucb: kappa must be >= 0");
    return -mu + kappa * sigma;
}

enum class AcquisitionKind { EI, UCB };

inline const char* to_string(AcquisitionKind k) { return k == AcquisitionKind::EI ? "ei" : "ucb"; }

struct AcquisitionConfig {
    AcquisitionKind kind = AcquisitionKind::EI;
    double kappa = 2.0;            // UCB only
    int maximizer_budget = 2048;   // candidate evaluations
    int restarts = 4;              // local refinements from the top candidates
    std::uint64_t seed = 0;

    void check() const {
        if (kind == AcquisitionKind::UCB && kappa < 0.0) throw DomainError("kappa must be >= 0");
        if (maximizer_budget < 1 || restarts < 1) throw DomainError("budgets must be >= 1");
    }
};

/// Acquisition value at a normalized query. `incumbent` is the best (lowest)
/// target observed so far; it is only used by EI.
inline double acquisition_value(const GpModel& m, const AcquisitionConfig& cfg, double incumbent,
                                const std::vector<double>& u) {
    const auto [mu, sigma2] = posterior(m, u);
    const double sigma = std::sqrt(sigma2);
    return cfg.kind == AcquisitionKind::EI ? expected_improvement(mu, sigma, incumbent)
                                           : gp_ucb(mu, sigma, cfg.kappa);
}

struct MaximizerResult {
    std::vector<double> unit;    // argmax in normalized space
    HyperparameterVector point;  // denormalized (integer sets snapped)
    double value = 0.0;
};

namespace detail {

/// Coordinate pattern search: step halving from 0.1 down to 1e-4 in
/// normalized space, greedy accept per coordinate.
template <typename F>
void pattern_search(const F& f, std::vector<double>& u, double& val) {
    const std::size_t d = u.size();
    for (double step = 0.1; step >= 1e-4; step *= 0.5) {
        bool improved = true;
        for (int sweep = 0; improved && sweep < 64; ++sweep) {
            improved = false;
            for (std::size_t i = 0; i < d; ++i) {
                const double orig = u[i];
                for (const double delta : {step, -step}) {
                    const double x = std::clamp(orig + delta, 0.0, 1.0);
                    if (x == orig) continue;
                    u[i] = x;
                    const double fx = f(u);
                    if (fx > val) {
                        val = fx;
                        improved = true;
                        break;  // keep the move
                    }
                    u[i] = orig;
                }
            }
        }
    }
}

}  // namespace detail

/// Maximizes the acquisition over the space: a seeded batch of quasi-random
/// candidates (Halton plus Gaussian jitter around the incumbent input,
/// std 0.05) scored in index order, then pattern-search refinement from the
/// top `restarts` candidates. Ties in candidate value break toward the
/// lowest index, so the result is deterministic and independent of any
/// parallel evaluation order.
inline MaximizerResult maximize_acquisition_full(const GpModel& m, const HyperparameterSpace& space,
                                                 const AcquisitionConfig& cfg) {
    cfg.check();
    if (space.size() != m.dim()) throw DimensionMismatchError("space dimension does not match the model");
    const std::size_t d = space.size();

    const double incumbent = m.targets.minCoeff();
    Eigen::Index inc_row = 0;
    m.targets.minCoeff(&inc_row);

    const std::size_t n_jitter = static_cast<std::size_t>(cfg.maximizer_budget) / 4;
    const std::size_t n_halton = static_cast<std::size_t>(cfg.maximizer_budget) - n_jitter;

    std::vector<std::vector<double>> candidates;
    candidates.reserve(static_cast<std::size_t>(cfg.maximizer_budget));
    for (auto& p : halton(d, n_halton, 1).points) candidates.push_back(std::move(p));
    Rng rng(derive_seed(cfg.seed, "acq-jitter"));
    for (std::size_t j = 0; j < n_jitter; ++j) {
        std::vector<double> p(d);
        for (std::size_t i = 0; i < d; ++i) {
            p[i] = std::clamp(m.inputs(inc_row, static_cast<Eigen::Index>(i)) + 0.05 * rng.next_gaussian(),
                              0.0, 1.0);
        }
        candidates.push_back(std::move(p));
    }

    auto score = [&](const std::vector<double>& u) { return acquisition_value(m, cfg, incumbent, u); };

    std::vector<double> values(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) values[i] = score(candidates[i]);

    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

    const std::size_t n_refine = std::min<std::size_t>(static_cast<std::size_t>(cfg.restarts), order.size());
    std::vector<double> best_u = candidates[order[0]];
    double best_val = values[order[0]];
    for (std::size_t r = 0; r < n_refine; ++r) {
        std::vector<double> u = candidates[order[r]];
        double val = values[order[r]];
        detail::pattern_search(score, u, val);
        if (val > best_val) {
            best_val = val;
            best_u = u;
        }
    }

    MaximizerResult res;
    res.unit = best_u;
    res.point = space.denormalize(best_u);
    res.value = best_val;
    return res;
}

/// See maximize_acquisition_full; this is the plain entry point returning
/// the chosen hyperparameter vector in raw units.
inline HyperparameterVector maximize_acquisition(const GpModel& m, const HyperparameterSpace& space,
                                                 const AcquisitionConfig& cfg) {
    return maximize_acquisition_full(m, space, cfg).point;
}

}  // namespace wsbo
