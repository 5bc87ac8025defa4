#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wsbo/errors.hpp"
#include "wsbo/sampling.hpp"

namespace wsbo {

/// ARD Matern 5/2 kernel hyperparameters plus observation noise.
struct KernelParams {
    Eigen::VectorXd lengthscales;  // one per input dimension, > 0
    double signal_variance = 1.0;  // > 0
    double noise_variance = 0.0;   // >= 0

    void check(std::size_t d) const {
        if (static_cast<std::size_t>(lengthscales.size()) != d) {
            throw DimensionMismatchError("kernel has " + std::to_string(lengthscales.size()) +
                                         " lengthscales for " + std::to_string(d) + " input dims");
        }
        if ((lengthscales.array() <= 0.0).any()) throw DomainError("lengthscales must be positive");
        if (!(signal_variance > 0.0)) throw DomainError("signal variance must be positive");
        if (noise_variance < 0.0) throw DomainError("noise variance must be non-negative");
    }
};

/// k(x,x') = sf2 * (1 + sqrt5*r + 5r^2/3) * exp(-sqrt5*r),
/// r^2 = sum_i (x_i - x'_i)^2 / l_i^2.
inline double matern52_ard(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const KernelParams& p) {
    if (x.size() != y.size() || x.size() != p.lengthscales.size()) {
        throw DimensionMismatchError("matern52_ard: input dimensions disagree");
    }
    const double r2 = ((x - y).array() / p.lengthscales.array()).square().sum();
    const double r = std::sqrt(r2);
    constexpr double sqrt5 = 2.2360679774997896964;
    const double a = sqrt5 * r;
    return p.signal_variance * (1.0 + a + 5.0 * r2 / 3.0) * std::exp(-a);
}

inline double matern52_ard(const std::vector<double>& x, const std::vector<double>& y, const KernelParams& p) {
    return matern52_ard(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())),
                        Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), p);
}

/// Fitted GP surrogate. Immutable after construction; posterior queries are
/// read-only and safe to run concurrently.
struct GpModel {
    Eigen::MatrixXd inputs;   // n_obs x d, unit-cube rows
    Eigen::VectorXd targets;  // raw targets (validation errors)
    KernelParams params;
    double target_mean = 0.0;  // subtracted before fitting, added back in posterior
    Eigen::MatrixXd factor;    // lower Cholesky of K + (noise + jitter) I
    Eigen::VectorXd alpha;     // (K + (noise + jitter) I)^{-1} (targets - mean)
    double jitter = 0.0;       // extra diagonal actually applied (0 unless Cholesky needed it)

    std::size_t n_obs() const { return static_cast<std::size_t>(inputs.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
};

namespace detail {

inline Eigen::MatrixXd gram_matrix(const Eigen::MatrixXd& X, const KernelParams& p) {
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = p.signal_variance;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double k = matern52_ard(Eigen::VectorXd(X.row(i)), Eigen::VectorXd(X.row(j)), p);
            K(i, j) = k;
            K(j, i) = k;
        }
    }
    return K;
}

/// Cholesky with a jitter ladder 1e-10 -> 1e-4 (x10 steps); throws
/// NumericalError once the ladder is exhausted.
inline std::pair<Eigen::MatrixXd, double> cholesky_with_jitter(const Eigen::MatrixXd& A) {
    double jitter = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        Eigen::MatrixXd B = A;
        if (jitter > 0.0) B.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() == Eigen::Success) {
            return {llt.matrixL(), jitter};
        }
        jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
    }
    throw NumericalError("Cholesky failed after exhausting the jitter ladder (1e-10..1e-4)");
}

inline Eigen::MatrixXd rows_to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DataError("no observations");
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index d = static_cast<Eigen::Index>(rows.front().size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != d) {
            throw DimensionMismatchError("observation rows have inconsistent dimension");
        }
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return X;
}

}  // namespace detail

/// Builds a model with fixed kernel parameters (no hyperparameter search).
inline GpModel make_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const KernelParams& params) {
    if (X.rows() != y.size() || X.rows() < 1) throw DataError("inputs and targets must pair up, n >= 1");
    if (!y.allFinite()) throw DataError("targets must be finite");
    params.check(static_cast<std::size_t>(X.cols()));

    GpModel m;
    m.inputs = X;
    m.targets = y;
    m.params = params;
    m.target_mean = y.mean();

    const Eigen::MatrixXd K = detail::gram_matrix(X, params);
    Eigen::MatrixXd C = K;
    C.diagonal().array() += params.noise_variance;
    auto [L, jitter] = detail::cholesky_with_jitter(C);
    m.factor = L;
    m.jitter = jitter;

    const Eigen::VectorXd yc = y.array() - m.target_mean;
    m.alpha = m.factor.triangularView<Eigen::Lower>().solve(yc);
    m.factor.triangularView<Eigen::Lower>().transpose().solveInPlace(m.alpha);
    return m;
}

inline GpModel make_gp(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                       const KernelParams& params) {
    return make_gp(detail::rows_to_matrix(X),
                   Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), params);
}

/// -1/2 yc' alpha - sum log diag(L) - n/2 log 2pi, on mean-centered targets.
inline double log_marginal_likelihood(const GpModel& m) {
    const Eigen::VectorXd yc = m.targets.array() - m.target_mean;
    const double quad = yc.dot(m.alpha);
    const double logdet = m.factor.diagonal().array().log().sum();
    constexpr double log2pi = 1.8378770664093454836;
    return -0.5 * quad - logdet - 0.5 * static_cast<double>(m.n_obs()) * log2pi;
}

/// Posterior mean and variance at a unit-cube query; variance is clamped
/// to be non-negative.
inline std::pair<double, double> posterior(const GpModel& m, const Eigen::VectorXd& x) {
    if (x.size() != m.inputs.cols()) throw DimensionMismatchError("posterior: query dimension mismatch");
    const Eigen::Index n = m.inputs.rows();
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ks(i) = matern52_ard(Eigen::VectorXd(m.inputs.row(i)), x, m.params);
    }
    const double mu = ks.dot(m.alpha) + m.target_mean;
    const Eigen::VectorXd v = m.factor.triangularView<Eigen::Lower>().solve(ks);
    double sigma2 = m.params.signal_variance - v.squaredNorm();
    if (sigma2 < 0.0) sigma2 = 0.0;
    return {mu, sigma2};
}

inline std::pair<double, double> posterior(const GpModel& m, const std::vector<double>& x) {
    return posterior(m, Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
}

/// Search ranges for the marginal-likelihood maximization, as (lo, hi)
/// pairs. Defaults assume unit-cube inputs and targets in [0,1].
struct FitBounds {
    std::pair<double, double> lengthscale{1e-2, 1e1};
    std::pair<double, double> signal_variance{1e-4, 1e2};
    std::pair<double, double> noise_variance{1e-8, 1e-1};
};

namespace detail {

template <typename F>
std::pair<double, double> golden_section_max(const F& f, double lo, double hi, int evals,
                                             double seed_x, double seed_f) {
    // Keeps the best point seen; never returns worse than the seed.
    constexpr double invphi = 0.6180339887498949;
    double best_x = seed_x, best_f = seed_f;
    auto probe = [&](double x) {
        const double fx = f(x);
        if (fx > best_f) {
            best_f = fx;
            best_x = x;
        }
        return fx;
    };
    double a = lo, b = hi;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = probe(c), fd = probe(d);
    for (int i = 2; i < evals; ++i) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = probe(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = probe(d);
        }
    }
    return {best_x, best_f};
}

}  // namespace detail

/// Fits kernel hyperparameters by maximizing the log marginal likelihood:
/// multi-start over a Halton batch in log-parameter space followed by
/// coordinate-wise golden-section refinement (derivative-free, deterministic;
/// the seed parameter is accepted for interface stability but the schedule
/// itself is deterministic). Roughly `evals_per_start` likelihood
/// evaluations per start.
inline GpModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const FitBounds& bounds = {},
                   std::uint64_t seed = 0, int starts = 8, int evals_per_start = 200) {
    (void)seed;
    if (X.rows() < 2) throw DataError("fit requires at least 2 observations");
    if (!y.allFinite()) throw DataError("targets must be finite");
    const std::size_t d = static_cast<std::size_t>(X.cols());
    const std::size_t n_params = d + 2;  // log lengthscales, log sf2, log noise

    std::vector<std::pair<double, double>> log_bounds(n_params);
    for (std::size_t i = 0; i < d; ++i) {
        log_bounds[i] = {std::log(bounds.lengthscale.first), std::log(bounds.lengthscale.second)};
    }
    log_bounds[d] = {std::log(bounds.signal_variance.first), std::log(bounds.signal_variance.second)};
    log_bounds[d + 1] = {std::log(bounds.noise_variance.first), std::log(bounds.noise_variance.second)};

    auto to_params = [&](const std::vector<double>& logp) {
        KernelParams p;
        p.lengthscales.resize(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) p.lengthscales(static_cast<Eigen::Index>(i)) = std::exp(logp[i]);
        p.signal_variance = std::exp(logp[d]);
        p.noise_variance = std::exp(logp[d + 1]);
        return p;
    };
    auto objective = [&](const std::vector<double>& logp) -> double {
        try {
            return log_marginal_likelihood(make_gp(X, Eigen::VectorXd(y), to_params(logp)));
        } catch (const NumericalError&) {
            return -std::numeric_limits<double>::infinity();
        }
    };

    const SampleBatch start_batch = halton(n_params, static_cast<std::size_t>(starts), 1);
    std::vector<double> best_logp;
    double best_val = -std::numeric_limits<double>::infinity();

    const int cycles = 2;
    const int evals_per_coord =
        std::max(6, evals_per_start / (cycles * static_cast<int>(n_params)));

    for (int s = 0; s < starts; ++s) {
        std::vector<double> logp(n_params);
        for (std::size_t i = 0; i < n_params; ++i) {
            const auto [lo, hi] = log_bounds[i];
            logp[i] = lo + start_batch.points[static_cast<std::size_t>(s)][i] * (hi - lo);
        }
        double val = objective(logp);
        for (int cycle = 0; cycle < cycles; ++cycle) {
            for (std::size_t i = 0; i < n_params; ++i) {
                const auto [lo, hi] = log_bounds[i];
                auto line = [&](double xi) {
                    std::vector<double> probe = logp;
                    probe[i] = xi;
                    return objective(probe);
                };
                auto [bx, bf] = detail::golden_section_max(line, lo, hi, evals_per_coord, logp[i], val);
                logp[i] = bx;
                val = bf;
            }
        }
        if (val > best_val) {
            best_val = val;
            best_logp = logp;
        }
    }
    if (best_logp.empty()) throw NumericalError("fit: no kernel parameters produced a finite likelihood");
    return make_gp(X, Eigen::VectorXd(y), to_params(best_logp));
}

inline GpModel fit(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                   const FitBounds& bounds = {}, std::uint64_t seed = 0, int starts = 8,
                   int evals_per_start = 200) {
    return fit(detail::rows_to_matrix(X),
               Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), bounds, seed,
               starts, evals_per_start);
}

/// Debug dump: kernel parameters plus the training data.
inline nlohmann::ordered_json gp_to_json(const GpModel& m) {
    nlohmann::ordered_json j;
    j["lengthscales"] = std::vector<double>(m.params.lengthscales.data(),
                                            m.params.lengthscales.data() + m.params.lengthscales.size());
    j["signal_variance"] = m.params.signal_variance;
    j["noise_variance"] = m.params.noise_variance;
    j["jitter"] = m.jitter;
    j["target_mean"] = m.target_mean;
    std::vector<std::vector<double>> rows(m.n_obs(), std::vector<double>(m.dim()));
    for (std::size_t i = 0; i < m.n_obs(); ++i) {
        for (std::size_t k = 0; k < m.dim(); ++k) {
            rows[i][k] = m.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
    }
    j["inputs"] = rows;
    j["targets"] = std::vector<double>(m.targets.data(), m.targets.data() + m.targets.size());
    return j;
}

}  // namespace wsbo
