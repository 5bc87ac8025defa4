// Command-line surface for the warm-started Bayesian hyperparameter
// optimization pipeline: build synthetic collections, train the dataset
// metric, run and compare optimizations, report CCoV diagnostics.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wsbo/bho.hpp"
#include "wsbo/errors.hpp"
#include "wsbo/history.hpp"
#include "wsbo/hyperspace.hpp"
#include "wsbo/metafeature.hpp"
#include "wsbo/rng.hpp"
#include "wsbo/sampling.hpp"
#include "wsbo/synthbench.hpp"
#include "wsbo/version.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt_g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Records how a command was invoked next to its outputs; the resolved
/// key-value block can be fed back through --config to reproduce them.
void write_manifest(const CLI::App& sub, std::uint64_t seed, const std::vector<std::string>& outputs,
                    double duration_seconds) {
    if (outputs.empty()) return;
    const CLI::App* root = &sub;
    while (root->get_parent()) root = root->get_parent();
    nlohmann::ordered_json j;
    j["command"] = sub.get_name();
    j["version"] = wsbo::kVersion;
    j["seed"] = seed;
    j["config_path"] = root->get_config_ptr() && root->get_config_ptr()->count()
                           ? root->get_config_ptr()->as<std::string>()
                           : "";
    j["resolved"] = "[" + sub.get_name() + "]\n" + const_cast<CLI::App&>(sub).config_to_str(true, false);
    j["outputs"] = outputs;
    j["duration_seconds"] = duration_seconds;
    const fs::path path = outputs.front() + ".manifest.json";
    std::ofstream out(path);
    if (!out) throw wsbo::DataError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

wsbo::AcquisitionKind parse_acq(const std::string& name) {
    if (name == "ei") return wsbo::AcquisitionKind::EI;
    if (name == "ucb") return wsbo::AcquisitionKind::UCB;
    throw wsbo::DomainError("unknown acquisition '" + name + "' (expected ei or ucb)");
}

struct SampleArgs {
    std::string method = "uniform";
    std::size_t d = 2;
    std::size_t k = 8;
    std::uint64_t seed = 0;
    std::uint64_t start = 1;
    std::string out;
};

int cmd_sample(const CLI::App& sub, const SampleArgs& a) {
    Stopwatch watch;
    wsbo::SampleBatch batch;
    if (a.method == "uniform") {
        batch = wsbo::uniform_sample(a.d, a.k, a.seed);
    } else if (a.method == "latin") {
        batch = wsbo::latin_hypercube(a.d, a.k, a.seed);
    } else if (a.method == "halton") {
        batch = wsbo::halton(a.d, a.k, a.start);
    } else {
        throw wsbo::DomainError("unknown sample method '" + a.method + "'");
    }
    std::ostringstream csv;
    for (std::size_t i = 1; i <= a.d; ++i) csv << (i > 1 ? "," : "") << "x" << i;
    csv << "\n";
    for (const auto& p : batch.points) {
        for (std::size_t i = 0; i < p.size(); ++i) csv << (i > 0 ? "," : "") << fmt_g17(p[i]);
        csv << "\n";
    }
    if (a.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(a.out);
        if (!out) throw wsbo::DataError("cannot open '" + a.out + "' for writing");
        out << csv.str();
        write_manifest(sub, a.seed, {a.out}, watch.seconds());
        std::cout << a.method << " batch: k=" << a.k << " d=" << a.d << " -> " << a.out << "\n";
    }
    return 0;
}

struct MakeCollectionArgs {
    wsbo::CollectionSpec spec;
    std::size_t holdout = 4;
    double holdout_fraction = 0.55;
    bool external_instances = false;
    std::string out = "store.json";
};

int cmd_make_collection(const CLI::App& sub, const MakeCollectionArgs& a) {
    Stopwatch watch;
    const auto space = wsbo::canonical_cnn_space();
    auto [store, tasks] = wsbo::make_collection(a.spec, space);
    const auto heldout = wsbo::make_holdout_tasks(a.spec, space, a.holdout, a.holdout_fraction);
    wsbo::save_store(store, a.out, a.external_instances);
    const std::string tasks_path = a.out + ".holdout.json";
    wsbo::save_tasks(heldout, tasks_path);
    write_manifest(sub, a.spec.seed, {a.out, tasks_path}, watch.seconds());
    std::cout << "K=" << store.size() << " n=" << store.grid().size() << " holdout=" << heldout.size()
              << " -> " << a.out << "\n";
    return 0;
}

struct TrainMetricArgs {
    std::string store;
    std::string out = "wing.json";
    std::string loss_csv;
    std::string metafeatures;
    wsbo::TrainConfig cfg;
};

int cmd_train_metric(const CLI::App& sub, TrainMetricArgs& a) {
    Stopwatch watch;
    auto store = wsbo::load_store(a.store);
    const auto result = wsbo::train(store, a.cfg);
    wsbo::save_wing(result.wing, a.out);
    const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
    wsbo::write_loss_csv(result.trace, loss_path);

    const std::uint64_t embed_seed = wsbo::derive_seed(a.cfg.seed, "embed");
    store.set_metafeatures(wsbo::compute_metafeatures(store, result.wing, a.cfg.tau, embed_seed));
    const std::string mf_path = a.metafeatures.empty() ? a.store + ".metafeatures.json" : a.metafeatures;
    wsbo::save_metafeatures(store, mf_path, a.cfg.tau, embed_seed);

    write_manifest(sub, a.cfg.seed, {a.out, loss_path, mf_path}, watch.seconds());
    std::cout << "trained " << a.cfg.iterations << " iterations: loss "
              << fmt_g17(result.trace.front().train_loss) << " -> "
              << fmt_g17(result.trace.back().train_loss) << "\n"
              << "weights -> " << a.out << "\nmetafeatures -> " << mf_path << "\n";
    return 0;
}

struct RunArgs {
    std::string store;
    std::string tasks;
    std::string task_id;
    std::string init = "uniform";
    std::string weights;
    std::string metafeatures;
    std::size_t k = 3;
    std::size_t T = 15;
    std::string acq = "ei";
    double kappa = 2.0;
    int budget = 2048;
    int restarts = 4;
    std::uint64_t seed = 0;
    std::string out = "trace.csv";
};

int cmd_run(const CLI::App& sub, const RunArgs& a) {
    Stopwatch watch;
    if (a.k >= a.T) throw wsbo::DomainError("need k < T (got k=" + std::to_string(a.k) +
                                            ", T=" + std::to_string(a.T) + ")");
    auto store = wsbo::load_store(a.store);
    const auto tasks = wsbo::load_tasks(a.tasks);
    const wsbo::SyntheticTask* task = nullptr;
    for (const auto& t : tasks) {
        if (t.id == a.task_id) task = &t;
    }
    if (!task) throw wsbo::DomainError("task '" + a.task_id + "' not found in " + a.tasks);
    const auto& space = task->space;
    const wsbo::TargetFunction target = [&](const wsbo::HyperparameterVector& v) {
        return wsbo::evaluate_task(*task, v);
    };

    wsbo::AcquisitionConfig acq;
    acq.kind = parse_acq(a.acq);
    acq.kappa = a.kappa;
    acq.maximizer_budget = a.budget;
    acq.restarts = a.restarts;
    acq.seed = wsbo::derive_seed(a.seed, "acq");

    wsbo::Trace trace;
    if (a.init == "warmstart") {
        if (a.weights.empty() || a.metafeatures.empty()) {
            throw wsbo::DomainError("warmstart needs --weights and --metafeatures");
        }
        const auto wing = wsbo::load_wing(a.weights);
        const auto [tau, embed_seed] = wsbo::load_metafeatures(store, a.metafeatures);
        trace = wsbo::run_warm_bho(wing, store, task->instances, target, space, a.k, a.T, acq, tau,
                                   embed_seed);
    } else {
        wsbo::SampleBatch batch;
        const std::uint64_t init_seed = wsbo::derive_seed(a.seed, "init");
        if (a.init == "uniform") {
            batch = wsbo::uniform_sample(space.size(), a.k, init_seed);
        } else if (a.init == "latin") {
            batch = wsbo::latin_hypercube(space.size(), a.k, init_seed);
        } else if (a.init == "halton") {
            batch = wsbo::halton(space.size(), a.k, 1);
        } else {
            throw wsbo::DomainError("unknown init method '" + a.init + "'");
        }
        std::vector<wsbo::HyperparameterVector> init;
        for (const auto& u : batch.points) init.push_back(space.denormalize(u));
        trace = wsbo::run_bho(target, space, init, a.T, acq, a.init);
    }

    wsbo::write_trace_csv(trace, space, a.seed, a.out, true);
    write_manifest(sub, a.seed, {a.out}, watch.seconds());

    std::size_t best_index = 0;
    for (std::size_t t = 1; t < trace.size(); ++t) {
        if (trace.errors[t] < trace.errors[best_index]) best_index = t;
    }
    std::cout << "best error " << fmt_g17(trace.errors[best_index]) << " at (";
    for (std::size_t i = 0; i < trace.points[best_index].size(); ++i) {
        std::cout << (i > 0 ? ", " : "") << fmt_g17(trace.points[best_index][i]);
    }
    std::cout << ")\ntrace -> " << a.out << "\n";
    return 0;
}

struct CompareArgs {
    std::string store;
    std::string tasks;
    std::string weights;
    std::string metafeatures;
    std::vector<std::string> methods{"uniform", "latin", "halton", "warmstart"};
    std::vector<std::string> acqs{"ei", "ucb"};
    std::size_t k = 3;
    std::size_t T = 15;
    std::size_t seeds = 5;
    double kappa = 2.0;
    int budget = 2048;
    int restarts = 4;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out = "comparison.csv";
    std::string summary = "summary.csv";
};

int cmd_compare(const CLI::App& sub, const CompareArgs& a) {
    Stopwatch watch;
    auto store = wsbo::load_store(a.store);
    const auto heldout = wsbo::load_tasks(a.tasks);

    wsbo::CompareConfig cfg;
    cfg.methods = a.methods;
    cfg.acqs.clear();
    for (const auto& name : a.acqs) cfg.acqs.push_back(parse_acq(name));
    cfg.k = a.k;
    cfg.T = a.T;
    cfg.seeds = a.seeds;
    cfg.seed = a.seed;
    cfg.kappa = a.kappa;
    cfg.maximizer_budget = a.budget;
    cfg.restarts = a.restarts;
    cfg.jobs = a.jobs;

    wsbo::WingParams wing;
    const bool wants_warmstart =
        std::find(a.methods.begin(), a.methods.end(), "warmstart") != a.methods.end();
    if (wants_warmstart) {
        if (a.weights.empty() || a.metafeatures.empty()) {
            throw wsbo::DomainError("warmstart needs --weights and --metafeatures");
        }
        wing = wsbo::load_wing(a.weights);
        const auto [tau, embed_seed] = wsbo::load_metafeatures(store, a.metafeatures);
        cfg.tau = tau;
        cfg.embed_seed = embed_seed;
    }

    // Rows stream out as cells complete (in deterministic cell order), so an
    // interrupted run leaves the finished rows on disk.
    std::ofstream out(a.out);
    if (!out) throw wsbo::DataError("cannot open '" + a.out + "' for writing");
    out << "task_id,method,acq,seed,iteration,best_so_far\n";
    std::size_t failed = 0;
    const auto on_cell = [&](const wsbo::ComparisonCell& cell) {
        if (cell.failed) {
            ++failed;
            std::cerr << "cell failed: " << cell.task_id << "/" << cell.method << "/"
                      << wsbo::to_string(cell.acq) << " seed " << cell.seed << ": " << cell.error << "\n";
            return;
        }
        for (std::size_t t = 0; t < cell.trace.size(); ++t) {
            out << cell.task_id << "," << cell.method << "," << wsbo::to_string(cell.acq) << ","
                << cell.seed << "," << (t + 1) << "," << fmt_g17(cell.trace.best_so_far[t]) << "\n";
        }
        out.flush();
    };

    const auto result =
        wsbo::compare_initializations(store, heldout, wants_warmstart ? &wing : nullptr, cfg, on_cell);
    out.close();
    wsbo::write_summary_csv(wsbo::summarize_comparison(result), a.summary);
    write_manifest(sub, a.seed, {a.out, a.summary}, watch.seconds());
    std::cout << "cells=" << result.cells.size() << " failed=" << failed << "\n"
              << "comparison -> " << a.out << "\nsummary -> " << a.summary << "\n";
    return failed == 0 ? 0 : 1;
}

struct CcovArgs {
    std::string store;
    std::string out = "ccov.csv";
};

int cmd_ccov(const CLI::App& sub, const CcovArgs& a) {
    Stopwatch watch;
    const auto store = wsbo::load_store(a.store);
    std::ofstream out(a.out);
    if (!out) throw wsbo::DataError("cannot open '" + a.out + "' for writing");
    out << "record_id,dim_name,subtracted_ccov,warning\n";
    for (const auto& record : store.records()) {
        for (std::size_t i = 0; i < store.grid().space.size(); ++i) {
            out << record.id << "," << store.grid().space.dim(i).name << ",";
            try {
                out << fmt_g17(wsbo::ccov(record, store.grid(), i) - 0.5) << ",\n";
            } catch (const wsbo::UndefinedCcovError&) {
                out << "nan,all-zero-errors\n";
            } catch (const wsbo::DegenerateDimensionError&) {
                out << "nan,degenerate-dimension\n";
            }
        }
    }
    out.close();
    write_manifest(sub, 0, {a.out}, watch.seconds());
    std::cout << "ccov table (" << store.size() << " records x " << store.grid().space.size()
              << " dims) -> " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"warm-started Bayesian hyperparameter optimization"};
    app.set_version_flag("--version", std::string("wsbo ") + wsbo::kVersion);
    app.require_subcommand(1);
    app.set_config("--config", "", "key-value config file; use a [subcommand] section");

    SampleArgs sample_args;
    auto* sample = app.add_subcommand("sample", "draw an initialization batch");
    sample->add_option("--method", sample_args.method, "uniform|latin|halton")->capture_default_str();
    sample->add_option("--d", sample_args.d, "dimensions")->capture_default_str();
    sample->add_option("--k", sample_args.k, "points")->capture_default_str();
    sample->add_option("--seed", sample_args.seed, "seed (uniform/latin)")->capture_default_str();
    sample->add_option("--start", sample_args.start, "halton start index")->capture_default_str();
    sample->add_option("--out", sample_args.out, "output CSV (stdout when omitted)");

    MakeCollectionArgs mc_args;
    auto* mc = app.add_subcommand("make-collection", "build the synthetic task collection");
    mc->add_option("--families", mc_args.spec.family_count, "task families")->capture_default_str();
    mc->add_option("--fractions", mc_args.spec.fractions, "subsample fractions")
        ->delimiter(',')
        ->capture_default_str();
    mc->add_option("--instance-dim", mc_args.spec.instance_dim, "instance vector dimension")
        ->capture_default_str();
    mc->add_option("--instances-per-task", mc_args.spec.instances_per_task, "instances at fraction 1.0")
        ->capture_default_str();
    mc->add_option("--grid-size", mc_args.spec.grid_size, "evaluation grid points")->capture_default_str();
    mc->add_option("--bumps", mc_args.spec.bumps_per_task, "surface modes per task")->capture_default_str();
    mc->add_option("--holdout", mc_args.holdout, "held-out task count")->capture_default_str();
    mc->add_option("--holdout-fraction", mc_args.holdout_fraction, "fraction tag for held-out tasks")
        ->capture_default_str();
    mc->add_option("--seed", mc_args.spec.seed, "collection seed")->capture_default_str();
    mc->add_option("--out", mc_args.out, "store file")->capture_default_str();
    mc->add_flag("--external-instances", mc_args.external_instances,
                 "write instances as external float32 binaries");

    TrainMetricArgs tm_args;
    auto* tm = app.add_subcommand("train-metric", "train the Siamese dataset metric");
    tm->add_option("--store", tm_args.store, "history store file")->required();
    tm->add_option("--out", tm_args.out, "wing weights file")->capture_default_str();
    tm->add_option("--loss-csv", tm_args.loss_csv, "loss trace CSV (default <out>.loss.csv)");
    tm->add_option("--metafeatures", tm_args.metafeatures,
                   "metafeature sidecar (default <store>.metafeatures.json)");
    tm->add_option("--tau", tm_args.cfg.tau, "instances subsampled per dataset")->capture_default_str();
    tm->add_option("--iterations", tm_args.cfg.iterations, "gradient steps")->capture_default_str();
    tm->add_option("--batch-pairs", tm_args.cfg.batch_pairs, "dataset pairs per step")->capture_default_str();
    tm->add_option("--step-size", tm_args.cfg.step_size, "initial learning rate")->capture_default_str();
    tm->add_option("--decay", tm_args.cfg.decay, "learning-rate decay rate")->capture_default_str();
    tm->add_option("--val-pairs", tm_args.cfg.val_pairs, "held-out pairs in the loss trace")
        ->capture_default_str();
    tm->add_option("--seed", tm_args.cfg.seed, "training seed")->capture_default_str();

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "run one optimization");
    run->add_option("--store", run_args.store, "history store file")->required();
    run->add_option("--tasks", run_args.tasks, "held-out task file")->required();
    run->add_option("--task", run_args.task_id, "task id to optimize")->required();
    run->add_option("--init", run_args.init, "uniform|latin|halton|warmstart")->capture_default_str();
    run->add_option("--weights", run_args.weights, "wing weights (warmstart)");
    run->add_option("--metafeatures", run_args.metafeatures, "metafeature sidecar (warmstart)");
    run->add_option("--k", run_args.k, "init vectors")->capture_default_str();
    run->add_option("--T", run_args.T, "total evaluations")->capture_default_str();
    run->add_option("--acq", run_args.acq, "ei|ucb")->capture_default_str();
    run->add_option("--kappa", run_args.kappa, "UCB exploration weight")->capture_default_str();
    run->add_option("--budget", run_args.budget, "acquisition maximizer candidates")->capture_default_str();
    run->add_option("--restarts", run_args.restarts, "acquisition refinement restarts")
        ->capture_default_str();
    run->add_option("--seed", run_args.seed, "run seed")->capture_default_str();
    run->add_option("--out", run_args.out, "trace CSV")->capture_default_str();

    CompareArgs cmp_args;
    auto* cmp = app.add_subcommand("compare", "compare initialization methods");
    cmp->add_option("--store", cmp_args.store, "history store file")->required();
    cmp->add_option("--tasks", cmp_args.tasks, "held-out task file")->required();
    cmp->add_option("--weights", cmp_args.weights, "wing weights (warmstart)");
    cmp->add_option("--metafeatures", cmp_args.metafeatures, "metafeature sidecar (warmstart)");
    cmp->add_option("--methods", cmp_args.methods, "initialization methods")
        ->delimiter(',')
        ->capture_default_str();
    cmp->add_option("--acqs", cmp_args.acqs, "acquisition functions")->delimiter(',')->capture_default_str();
    cmp->add_option("--k", cmp_args.k, "init vectors")->capture_default_str();
    cmp->add_option("--T", cmp_args.T, "total evaluations")->capture_default_str();
    cmp->add_option("--seeds", cmp_args.seeds, "repeats per cell")->capture_default_str();
    cmp->add_option("--kappa", cmp_args.kappa, "UCB exploration weight")->capture_default_str();
    cmp->add_option("--budget", cmp_args.budget, "acquisition maximizer candidates")->capture_default_str();
    cmp->add_option("--restarts", cmp_args.restarts, "acquisition refinement restarts")
        ->capture_default_str();
    cmp->add_option("--seed", cmp_args.seed, "root seed")->capture_default_str();
    cmp->add_option("--jobs", cmp_args.jobs, "parallel cells")->capture_default_str();
    cmp->add_option("--out", cmp_args.out, "comparison CSV")->capture_default_str();
    cmp->add_option("--summary", cmp_args.summary, "summary CSV")->capture_default_str();

    CcovArgs ccov_args;
    auto* ccov = app.add_subcommand("ccov", "subtracted-CCoV diagnostics table");
    ccov->add_option("--store", ccov_args.store, "history store file")->required();
    ccov->add_option("--out", ccov_args.out, "output CSV")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sample->parsed()) return cmd_sample(*sample, sample_args);
        if (mc->parsed()) return cmd_make_collection(*mc, mc_args);
        if (tm->parsed()) return cmd_train_metric(*tm, tm_args);
        if (run->parsed()) return cmd_run(*run, run_args);
        if (cmp->parsed()) return cmd_compare(*cmp, cmp_args);
        if (ccov->parsed()) return cmd_ccov(*ccov, ccov_args);
    } catch (const wsbo::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const wsbo::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const wsbo::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
