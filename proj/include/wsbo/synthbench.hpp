#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wsbo/bho.hpp"
#include "wsbo/errors.hpp"
#include "wsbo/history.hpp"
#include "wsbo/hyperspace.hpp"
#include "wsbo/metafeature.hpp"
#include "wsbo/rng.hpp"
#include "wsbo/sampling.hpp"

namespace wsbo {

struct GaussianBump {
    Eigen::VectorXd center;  // in normalized space
    Eigen::VectorXd widths;  // per-dimension, anisotropic
    double depth = 0.5;
};

/// A synthetic stand-in for one dataset's validation-error landscape: a
/// baseline error level minus a handful of Gaussian bumps over normalized
/// space, clamped to [0.02, 1], plus the instance-cloud parameters that tie
/// dataset contents to the surface (instance similarity predicts surface
/// similarity, which is what gives the metric learner signal).
struct SyntheticTask {
    std::string id;
    std::string family;
    double fraction = 1.0;
    HyperparameterSpace space;
    std::vector<GaussianBump> bumps;
    double baseline = 0.9;
    Eigen::VectorXd instance_mean;
    double instance_scale = 0.3;
    InstanceSet instances;
};

/// Deterministic surface evaluation; the clamp floor keeps the grid minimum
/// positive.
inline double evaluate_task(const SyntheticTask& task, const HyperparameterVector& v) {
    const auto u = task.space.normalize(v);
    const Eigen::Map<const Eigen::VectorXd> uu(u.data(), static_cast<Eigen::Index>(u.size()));
    double value = task.baseline;
    for (const auto& bump : task.bumps) {
        const double r2 = ((uu - bump.center).array() / bump.widths.array()).square().sum();
        value -= bump.depth * std::exp(-0.5 * r2);
    }
    return std::clamp(value, 0.02, 1.0);
}

struct CollectionSpec {
    std::size_t family_count = 8;
    std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t instance_dim = 8;
    std::size_t instances_per_task = 64;
    std::size_t grid_size = 64;
    std::size_t bumps_per_task = 3;
    std::uint64_t seed = 0;

    void check() const {
        if (family_count < 1 || instance_dim < 1 || instances_per_task < 1 || grid_size < 1 ||
            bumps_per_task < 1 || fractions.empty()) {
            throw DomainError("collection spec: all counts must be >= 1");
        }
        for (double f : fractions) {
            if (!(f > 0.0 && f <= 1.0)) throw DomainError("collection spec: fractions must lie in (0,1]");
        }
    }
};

namespace detail {

/// Family base surface plus a single perturbation direction; fraction
/// variants move along that direction with coefficient (1 - fraction), so
/// within-family target distances grow with the fraction gap.
struct FamilyParams {
    std::vector<GaussianBump> bumps;
    double baseline = 0.9;
    std::vector<Eigen::VectorXd> center_shift;  // per bump
    std::vector<double> depth_shift;
    Eigen::VectorXd instance_mean;
    Eigen::VectorXd instance_shift;
};

inline FamilyParams make_family(std::size_t d, std::size_t instance_dim, std::size_t bumps,
                                std::uint64_t seed) {
    Rng rng(seed);
    FamilyParams fam;
    fam.baseline = 0.85 + 0.10 * rng.next_double();
    for (std::size_t q = 0; q < bumps; ++q) {
        GaussianBump b;
        b.center.resize(static_cast<Eigen::Index>(d));
        b.widths.resize(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) {
            b.center(static_cast<Eigen::Index>(i)) = rng.next_double();
            b.widths(static_cast<Eigen::Index>(i)) = 0.15 + 0.55 * rng.next_double();
        }
        b.depth = (q == 0) ? 0.55 + 0.25 * rng.next_double() : 0.15 + 0.25 * rng.next_double();
        fam.bumps.push_back(std::move(b));

        Eigen::VectorXd cs(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) cs(static_cast<Eigen::Index>(i)) = 0.08 * rng.next_gaussian();
        fam.center_shift.push_back(std::move(cs));
        fam.depth_shift.push_back(0.08 * rng.next_gaussian());
    }
    fam.instance_mean.resize(static_cast<Eigen::Index>(instance_dim));
    fam.instance_shift.resize(static_cast<Eigen::Index>(instance_dim));
    for (std::size_t i = 0; i < instance_dim; ++i) {
        fam.instance_mean(static_cast<Eigen::Index>(i)) = 2.0 * rng.next_gaussian();
        fam.instance_shift(static_cast<Eigen::Index>(i)) = rng.next_gaussian();
    }
    return fam;
}

inline SyntheticTask make_variant(const FamilyParams& fam, const HyperparameterSpace& space,
                                  const CollectionSpec& spec, std::size_t family_index, double fraction,
                                  const std::string& id, std::uint64_t instance_seed) {
    SyntheticTask task;
    task.id = id;
    task.family = "fam" + std::to_string(family_index);
    task.fraction = fraction;
    task.space = space;
    task.baseline = fam.baseline;
    const double a = 1.0 - fraction;
    for (std::size_t q = 0; q < fam.bumps.size(); ++q) {
        GaussianBump b = fam.bumps[q];
        b.center += a * fam.center_shift[q];
        for (Eigen::Index i = 0; i < b.center.size(); ++i) {
            b.center(i) = std::clamp(b.center(i), 0.0, 1.0);
        }
        b.depth = std::clamp(b.depth + a * fam.depth_shift[q], 0.05, 0.95);
        task.bumps.push_back(std::move(b));
    }
    task.instance_mean = fam.instance_mean + a * fam.instance_shift;
    task.instance_scale = 0.3;

    const std::size_t count =
        std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(
                                     static_cast<double>(spec.instances_per_task) * fraction)));
    Rng rng(instance_seed);
    Eigen::MatrixXd data(count, static_cast<Eigen::Index>(spec.instance_dim));
    std::vector<int> labels(count);
    for (std::size_t p = 0; p < count; ++p) {
        labels[p] = static_cast<int>(p % 2);
        const double label_offset = (labels[p] == 0) ? -0.4 : 0.4;
        for (std::size_t i = 0; i < spec.instance_dim; ++i) {
            double x = task.instance_mean(static_cast<Eigen::Index>(i)) +
                       task.instance_scale * rng.next_gaussian();
            if (i == 0) x += label_offset;
            data(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = x;
        }
    }
    task.instances = InstanceSet::make(std::move(data), std::move(labels));
    return task;
}

}  // namespace detail

/// Builds the default benchmark collection: family base tasks from the seed,
/// per-fraction variants whose surfaces and instance clouds move together,
/// everything evaluated on one Halton grid of n points. Deterministic given
/// the seed; K = family_count x |fractions|.
inline std::pair<HistoryStore, std::vector<SyntheticTask>> make_collection(const CollectionSpec& spec,
                                                                           const HyperparameterSpace& space) {
    spec.check();
    const std::size_t d = space.size();

    EvaluationGrid grid;
    grid.space = space;
    for (const auto& u : halton(d, spec.grid_size, 1).points) {
        grid.points.push_back(space.denormalize(u));
    }

    std::vector<SyntheticTask> tasks;
    std::vector<DatasetRecord> records;
    for (std::size_t f = 0; f < spec.family_count; ++f) {
        const auto fam = detail::make_family(d, spec.instance_dim, spec.bumps_per_task,
                                             derive_seed(spec.seed, "family", f));
        for (std::size_t fi = 0; fi < spec.fractions.size(); ++fi) {
            const double fraction = spec.fractions[fi];
            const std::string id =
                "fam" + std::to_string(f) + "_p" + std::to_string(static_cast<int>(std::lround(fraction * 100)));
            SyntheticTask task = detail::make_variant(fam, space, spec, f, fraction, id,
                                                      derive_seed(spec.seed, "instances-" + id));
            DatasetRecord rec;
            rec.id = task.id;
            rec.fraction = fraction;
            rec.parent = task.family;
            rec.instances = task.instances;
            rec.errors.reserve(grid.size());
            for (const auto& p : grid.points) rec.errors.push_back(evaluate_task(task, p));
            records.push_back(std::move(rec));
            tasks.push_back(std::move(task));
        }
    }
    return {HistoryStore(std::move(grid), std::move(records)), std::move(tasks)};
}

/// Extra per-family variants at fractions outside the collection's ladder;
/// they are never part of the store and serve as new datasets.
inline std::vector<SyntheticTask> make_holdout_tasks(const CollectionSpec& spec,
                                                     const HyperparameterSpace& space, std::size_t count,
                                                     double fraction = 0.55) {
    spec.check();
    if (count > spec.family_count) throw DomainError("cannot hold out more tasks than families");
    std::vector<SyntheticTask> tasks;
    for (std::size_t f = 0; f < count; ++f) {
        const auto fam = detail::make_family(space.size(), spec.instance_dim, spec.bumps_per_task,
                                             derive_seed(spec.seed, "family", f));
        const std::string id = "holdout_fam" + std::to_string(f);
        tasks.push_back(detail::make_variant(fam, space, spec, f, fraction, id,
                                             derive_seed(spec.seed, "instances-" + id)));
    }
    return tasks;
}

// --- task file ----------------------------------------------------------------

inline nlohmann::ordered_json task_to_json(const SyntheticTask& task) {
    nlohmann::ordered_json j;
    j["id"] = task.id;
    j["family"] = task.family;
    j["fraction"] = task.fraction;
    j["space"] = task.space.to_json();
    j["baseline"] = task.baseline;
    j["bumps"] = nlohmann::ordered_json::array();
    for (const auto& b : task.bumps) {
        nlohmann::ordered_json jb;
        jb["center"] = std::vector<double>(b.center.data(), b.center.data() + b.center.size());
        jb["widths"] = std::vector<double>(b.widths.data(), b.widths.data() + b.widths.size());
        jb["depth"] = b.depth;
        j["bumps"].push_back(std::move(jb));
    }
    j["instance_mean"] =
        std::vector<double>(task.instance_mean.data(), task.instance_mean.data() + task.instance_mean.size());
    j["instance_scale"] = task.instance_scale;
    nlohmann::ordered_json ji;
    ji["dim"] = task.instances.dim();
    ji["labels"] = task.instances.labels;
    std::vector<std::vector<double>> rows(task.instances.count(), std::vector<double>(task.instances.dim()));
    for (std::size_t a = 0; a < task.instances.count(); ++a) {
        for (std::size_t b = 0; b < task.instances.dim(); ++b) {
            rows[a][b] = task.instances.data(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
    }
    ji["data"] = rows;
    j["instances"] = std::move(ji);
    return j;
}

template <typename Json>
SyntheticTask task_from_json(const Json& j) {
    try {
        SyntheticTask task;
        task.id = j.at("id").template get<std::string>();
        task.family = j.at("family").template get<std::string>();
        task.fraction = j.at("fraction").template get<double>();
        task.space = HyperparameterSpace::from_json(j.at("space"));
        task.baseline = j.at("baseline").template get<double>();
        for (const auto& jb : j.at("bumps")) {
            GaussianBump b;
            const auto center = jb.at("center").template get<std::vector<double>>();
            const auto widths = jb.at("widths").template get<std::vector<double>>();
            b.center = Eigen::Map<const Eigen::VectorXd>(center.data(), static_cast<Eigen::Index>(center.size()));
            b.widths = Eigen::Map<const Eigen::VectorXd>(widths.data(), static_cast<Eigen::Index>(widths.size()));
            b.depth = jb.at("depth").template get<double>();
            task.bumps.push_back(std::move(b));
        }
        const auto mean = j.at("instance_mean").template get<std::vector<double>>();
        task.instance_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        task.instance_scale = j.at("instance_scale").template get<double>();
        const auto& ji = j.at("instances");
        const auto dim = ji.at("dim").template get<std::size_t>();
        auto labels = ji.at("labels").template get<std::vector<int>>();
        const auto rows = ji.at("data").template get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd data(rows.size(), dim);
        for (std::size_t a = 0; a < rows.size(); ++a) {
            for (std::size_t b = 0; b < dim; ++b) {
                data(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = rows[a][b];
            }
        }
        task.instances = InstanceSet::make(std::move(data), std::move(labels));
        return task;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("task: ") + e.what());
    }
}

inline void save_tasks(const std::vector<SyntheticTask>& tasks, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["tasks"] = nlohmann::ordered_json::array();
    for (const auto& t : tasks) j["tasks"].push_back(task_to_json(t));
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

inline std::vector<SyntheticTask> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("task file '" + path.string() + "' cannot be opened");
    nlohmann::json j;
    try {
        in >> j;
        std::vector<SyntheticTask> tasks;
        for (const auto& jt : j.at("tasks")) tasks.push_back(task_from_json(jt));
        return tasks;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("task file '" + path.string() + "': " + e.what());
    }
}

// --- initializer comparison harness ------------------------------------------

struct CompareConfig {
    std::vector<std::string> methods{"uniform", "latin", "halton", "warmstart"};
    std::vector<AcquisitionKind> acqs{AcquisitionKind::EI, AcquisitionKind::UCB};
    std::size_t k = 3;
    std::size_t T = 15;
    std::size_t seeds = 5;
    std::uint64_t seed = 0;
    std::size_t tau = 200;          // embedding subsample for warm-start queries
    std::uint64_t embed_seed = 0;   // must match the store's metafeature convention
    double kappa = 2.0;
    int maximizer_budget = 2048;
    int restarts = 4;
    int jobs = 1;
};

struct ComparisonCell {
    std::string task_id;
    std::string method;
    AcquisitionKind acq = AcquisitionKind::EI;
    std::uint64_t seed = 0;
    Trace trace;
    bool failed = false;
    std::string error;
};

struct ComparisonResult {
    std::vector<ComparisonCell> cells;
    std::size_t T = 0;
};

/// Runs the (held-out task x method x acquisition x seed) grid. Cells are
/// independent with isolated RNG streams; the output ordering is the sorted
/// cell order regardless of jobs. The optional callback fires once per cell
/// in that order (used by the CLI to flush completed rows).
inline ComparisonResult compare_initializations(
    const HistoryStore& store, const std::vector<SyntheticTask>& heldout, const WingParams* wing,
    const CompareConfig& cfg, const std::function<void(const ComparisonCell&)>& on_cell = {}) {
    if (heldout.empty()) throw DomainError("compare: no held-out tasks");
    if (cfg.k < 1 || cfg.k > cfg.T) throw DomainError("compare: need 1 <= k <= T");
    for (const auto& t : heldout) {
        bool present = true;
        try {
            store.index_of(t.id);
        } catch (const LookupError&) {
            present = false;
        }
        if (present) throw DataError("held-out task '" + t.id + "' is present in the store");
    }
    const bool wants_warmstart =
        std::find(cfg.methods.begin(), cfg.methods.end(), "warmstart") != cfg.methods.end();
    if (wants_warmstart) {
        if (!wing) throw DomainError("compare: warmstart requested without wing weights");
        if (!store.metafeatures()) throw DataError("compare: warmstart requires store metafeatures");
    }

    struct CellSpec {
        const SyntheticTask* task;
        std::string method;
        AcquisitionKind acq;
        std::uint64_t run_seed;
        std::uint64_t cell_key;
    };
    std::vector<CellSpec> specs;
    for (const auto& task : heldout) {
        for (const auto& method : cfg.methods) {
            for (const auto acq : cfg.acqs) {
                for (std::size_t s = 0; s < cfg.seeds; ++s) {
                    const std::uint64_t key = derive_seed(
                        derive_seed(derive_seed(cfg.seed, task.id), method + "/" + to_string(acq)), "seed", s);
                    specs.push_back(CellSpec{&task, method, acq, s, key});
                }
            }
        }
    }

    ComparisonResult result;
    result.T = cfg.T;
    result.cells.resize(specs.size());

    const HyperparameterSpace& space = heldout.front().space;
    auto run_cell = [&](std::size_t idx) {
        const CellSpec& cs = specs[idx];
        ComparisonCell cell;
        cell.task_id = cs.task->id;
        cell.method = cs.method;
        cell.acq = cs.acq;
        cell.seed = cs.run_seed;
        try {
            AcquisitionConfig acq;
            acq.kind = cs.acq;
            acq.kappa = cfg.kappa;
            acq.maximizer_budget = cfg.maximizer_budget;
            acq.restarts = cfg.restarts;
            acq.seed = derive_seed(cs.cell_key, "acq");

            const TargetFunction target = [&](const HyperparameterVector& v) {
                return evaluate_task(*cs.task, v);
            };

            if (cs.method == "warmstart") {
                cell.trace = run_warm_bho(*wing, store, cs.task->instances, target, space, cfg.k, cfg.T, acq,
                                          cfg.tau, cfg.embed_seed);
            } else {
                SampleBatch batch;
                if (cs.method == "uniform") {
                    batch = uniform_sample(space.size(), cfg.k, derive_seed(cs.cell_key, "init"));
                } else if (cs.method == "latin") {
                    batch = latin_hypercube(space.size(), cfg.k, derive_seed(cs.cell_key, "init"));
                } else if (cs.method == "halton") {
                    batch = halton(space.size(), cfg.k, 1);
                } else {
                    throw DomainError("unknown initialization method '" + cs.method + "'");
                }
                std::vector<HyperparameterVector> init;
                for (const auto& u : batch.points) init.push_back(space.denormalize(u));
                cell.trace = run_bho(target, space, init, cfg.T, acq, cs.method);
            }
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
        result.cells[idx] = std::move(cell);
    };

    if (cfg.jobs <= 1) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            run_cell(i);
            if (on_cell) on_cell(result.cells[i]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex mu;
        std::vector<bool> done(specs.size(), false);
        std::size_t flushed = 0;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= specs.size()) return;
                run_cell(i);
                std::lock_guard<std::mutex> lock(mu);
                done[i] = true;
                while (flushed < specs.size() && done[flushed]) {
                    if (on_cell) on_cell(result.cells[flushed]);
                    ++flushed;
                }
            }
        };
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(specs.size()));
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return result;
}

/// Per-iteration best-so-far summaries: median and mean over seeds for each
/// (task, method, acq, iteration), plus pooled rows across tasks under
/// task_id "all".
struct SummaryRow {
    std::string task_id;
    std::string method;
    AcquisitionKind acq;
    std::size_t iteration;  // 1-based
    double median_best;
    double mean_best;
};

inline std::vector<SummaryRow> summarize_comparison(const ComparisonResult& result) {
    std::map<std::tuple<std::string, std::string, int, std::size_t>, std::vector<double>> groups;
    for (const auto& cell : result.cells) {
        if (cell.failed) continue;
        for (std::size_t t = 0; t < cell.trace.size(); ++t) {
            groups[{cell.task_id, cell.method, static_cast<int>(cell.acq), t}].push_back(
                cell.trace.best_so_far[t]);
            groups[{"all", cell.method, static_cast<int>(cell.acq), t}].push_back(cell.trace.best_so_far[t]);
        }
    }
    std::vector<SummaryRow> rows;
    for (auto& [key, values] : groups) {
        std::sort(values.begin(), values.end());
        const std::size_t n = values.size();
        const double median = (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(n);
        rows.push_back(SummaryRow{std::get<0>(key), std::get<1>(key),
                                  static_cast<AcquisitionKind>(std::get<2>(key)), std::get<3>(key) + 1, median,
                                  mean});
    }
    return rows;
}

inline void write_comparison_csv(const ComparisonResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << "task_id,method,acq,seed,iteration,best_so_far\n";
    char buf[64];
    for (const auto& cell : result.cells) {
        if (cell.failed) continue;
        for (std::size_t t = 0; t < cell.trace.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%.17g", cell.trace.best_so_far[t]);
            out << cell.task_id << "," << cell.method << "," << to_string(cell.acq) << "," << cell.seed << ","
                << (t + 1) << "," << buf << "\n";
        }
    }
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << "task_id,method,acq,iteration,median_best_so_far,mean_best_so_far\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.task_id << "," << r.method << "," << to_string(r.acq) << "," << r.iteration;
        std::snprintf(buf, sizeof buf, "%.17g", r.median_best);
        out << "," << buf;
        std::snprintf(buf, sizeof buf, "%.17g", r.mean_best);
        out << "," << buf << "\n";
    }
}

}  // namespace wsbo
