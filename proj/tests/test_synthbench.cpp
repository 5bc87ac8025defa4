#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "wsbo/synthbench.hpp"

using namespace wsbo;

namespace {

CollectionSpec small_spec() {
    CollectionSpec spec;
    spec.family_count = 3;
    spec.fractions = {0.5, 1.0};
    spec.instance_dim = 4;
    spec.instances_per_task = 16;
    spec.grid_size = 16;
    spec.seed = 7;
    return spec;
}

}  // namespace

TEST_CASE("default collection has 80 records on one shared grid") {
    CollectionSpec spec;
    spec.seed = 1;
    const auto space = canonical_cnn_space();
    const auto [store, tasks] = make_collection(spec, space);
    CHECK(store.size() == 80);
    CHECK(tasks.size() == 80);
    CHECK(store.grid().size() == 64);
    std::set<std::string> ids;
    for (const auto& r : store.records()) {
        ids.insert(r.id);
        CHECK(r.errors.size() == 64);
        for (double e : r.errors) {
            CHECK(e >= 0.02);
            CHECK(e <= 1.0);
        }
    }
    CHECK(ids.size() == 80);
}

TEST_CASE("the full-fraction variant reproduces the family base surface") {
    auto spec_a = small_spec();
    spec_a.fractions = {1.0};
    auto spec_b = small_spec();
    spec_b.fractions = {0.5, 1.0};
    const auto space = canonical_cnn_space();
    const auto [store_a, tasks_a] = make_collection(spec_a, space);
    const auto [store_b, tasks_b] = make_collection(spec_b, space);
    for (std::size_t f = 0; f < spec_a.family_count; ++f) {
        const auto& base = store_a.record("fam" + std::to_string(f) + "_p100");
        const auto& variant = store_b.record("fam" + std::to_string(f) + "_p100");
        CHECK(base.errors == variant.errors);
    }
}

TEST_CASE("same seed gives byte-identical store files") {
    const auto spec = small_spec();
    const auto space = canonical_cnn_space();
    const auto dir = std::filesystem::temp_directory_path() / "wsbo_bench_test";
    std::filesystem::create_directories(dir);
    const auto [store_a, tasks_a] = make_collection(spec, space);
    const auto [store_b, tasks_b] = make_collection(spec, space);
    save_store(store_a, dir / "a.json");
    save_store(store_b, dir / "b.json");
    std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
    const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
}

TEST_CASE("task evaluation: bump depth, baseline reversion, determinism") {
    SyntheticTask task;
    task.id = "manual";
    task.space = HyperparameterSpace({DimensionSpec::real("a", 0.0, 1.0), DimensionSpec::real("b", 0.0, 1.0)});
    task.baseline = 0.95;
    GaussianBump bump;
    bump.center = Eigen::Vector2d(0.3, 0.7);
    bump.widths = Eigen::Vector2d(0.05, 0.05);
    bump.depth = 0.9;
    task.bumps.push_back(bump);

    CHECK(evaluate_task(task, {0.3, 0.7}) == Catch::Approx(0.05).margin(1e-12));
    CHECK(evaluate_task(task, {0.95, 0.05}) == Catch::Approx(0.95).margin(1e-6));  // far away
    CHECK(evaluate_task(task, {0.5, 0.5}) == evaluate_task(task, {0.5, 0.5}));

    // The clamp keeps surfaces inside [0.02, 1].
    bump.depth = 0.95;
    task.bumps.push_back(bump);
    task.bumps.push_back(bump);
    CHECK(evaluate_task(task, {0.3, 0.7}) == 0.02);
}

TEST_CASE("within-family distances grow with the fraction gap") {
    CollectionSpec spec;
    spec.seed = 0;
    const auto space = canonical_cnn_space();
    const auto [store, tasks] = make_collection(spec, space);
    const std::size_t F = spec.family_count;
    const std::size_t P = spec.fractions.size();
    std::size_t ordered = 0, total = 0;
    for (std::size_t f = 0; f < F; ++f) {
        auto id_of = [&](std::size_t pi) {
            return "fam" + std::to_string(f) + "_p" +
                   std::to_string(static_cast<int>(std::lround(spec.fractions[pi] * 100)));
        };
        for (std::size_t a = 0; a < P; ++a) {
            for (std::size_t b1 = 0; b1 < P; ++b1) {
                for (std::size_t b2 = b1 + 1; b2 < P; ++b2) {
                    const double g1 = std::abs(spec.fractions[a] - spec.fractions[b1]);
                    const double g2 = std::abs(spec.fractions[a] - spec.fractions[b2]);
                    if (g1 == g2 || b1 == a || b2 == a) continue;
                    const double d1 = target_distance(store, id_of(a), id_of(b1));
                    const double d2 = target_distance(store, id_of(a), id_of(b2));
                    ++total;
                    if ((g1 < g2 && d1 <= d2) || (g2 < g1 && d2 <= d1)) ++ordered;
                }
            }
        }
    }
    INFO("ordered " << ordered << " of " << total);
    CHECK(static_cast<double>(ordered) >= 0.90 * static_cast<double>(total));
}

TEST_CASE("cross-family distances dominate within-family distances") {
    CollectionSpec spec;
    spec.seed = 0;
    const auto space = canonical_cnn_space();
    const auto [store, tasks] = make_collection(spec, space);
    double within = 0.0, cross = 0.0;
    std::size_t n_within = 0, n_cross = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        for (std::size_t j = i + 1; j < store.size(); ++j) {
            const double d = target_distance(store, store.records()[i].id, store.records()[j].id);
            if (store.records()[i].parent == store.records()[j].parent) {
                within += d;
                ++n_within;
            } else {
                cross += d;
                ++n_cross;
            }
        }
    }
    within /= static_cast<double>(n_within);
    cross /= static_cast<double>(n_cross);
    INFO("within " << within << " cross " << cross);
    CHECK(cross / within >= 1.5);
}

TEST_CASE("families expose different subtracted-ccov sign patterns") {
    CollectionSpec spec;
    spec.seed = 0;
    const auto space = canonical_cnn_space();
    const auto [store, tasks] = make_collection(spec, space);
    bool found_opposed = false;
    const auto first = subtracted_ccov(store.records()[9], store.grid());   // fam0 full fraction
    for (std::size_t f = 1; f < spec.family_count && !found_opposed; ++f) {
        const auto other = subtracted_ccov(store.records()[f * 10 + 9], store.grid());
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (first[i] * other[i] < 0.0 && std::abs(first[i]) > 0.01 && std::abs(other[i]) > 0.01) {
                found_opposed = true;
                break;
            }
        }
    }
    CHECK(found_opposed);
}

TEST_CASE("held-out tasks never appear in the store") {
    const auto spec = small_spec();
    const auto space = canonical_cnn_space();
    const auto [store, tasks] = make_collection(spec, space);
    const auto heldout = make_holdout_tasks(spec, space, 2);
    REQUIRE(heldout.size() == 2);
    for (const auto& t : heldout) {
        CHECK_THROWS_AS(store.index_of(t.id), LookupError);
        CHECK(t.instances.count() >= 2);
    }
    CHECK_THROWS_AS(make_holdout_tasks(spec, space, 99), DomainError);
}

TEST_CASE("comparison harness produces the full grid of cells") {
    const auto spec = small_spec();
    const auto space = canonical_cnn_space();
    auto [store, tasks] = make_collection(spec, space);
    auto heldout = make_holdout_tasks(spec, space, 2);

    const auto wing = wsbo_test::make_stub_wing(spec.instance_dim);
    store.set_metafeatures(compute_metafeatures(store, wing, 32, 0));

    CompareConfig cfg;
    cfg.methods = {"uniform", "latin", "halton", "warmstart"};
    cfg.acqs = {AcquisitionKind::EI};
    cfg.k = 2;
    cfg.T = 4;
    cfg.seeds = 2;
    cfg.seed = 5;
    cfg.tau = 32;
    cfg.embed_seed = 0;
    cfg.maximizer_budget = 256;
    cfg.restarts = 2;

    const auto result = compare_initializations(store, heldout, &wing, cfg);
    CHECK(result.cells.size() == 2 * 4 * 1 * 2);
    std::set<std::string> methods;
    for (const auto& cell : result.cells) {
        CHECK_FALSE(cell.failed);
        CHECK(cell.trace.size() == 4);
        methods.insert(cell.method);
    }
    CHECK(methods == std::set<std::string>{"uniform", "latin", "halton", "warmstart"});

    // Parallel execution returns identical cells in identical order.
    auto cfg4 = cfg;
    cfg4.jobs = 4;
    std::vector<std::string> flush_order;
    const auto result4 = compare_initializations(store, heldout, &wing, cfg4,
                                                 [&](const ComparisonCell& c) { flush_order.push_back(c.task_id + c.method); });
    REQUIRE(result4.cells.size() == result.cells.size());
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        CHECK(result4.cells[i].task_id == result.cells[i].task_id);
        CHECK(result4.cells[i].method == result.cells[i].method);
        CHECK(result4.cells[i].trace.errors == result.cells[i].trace.errors);
        CHECK(flush_order[i] == result.cells[i].task_id + result.cells[i].method);
    }
}

TEST_CASE("comparison harness rejects leaking held-out tasks into the store") {
    const auto spec = small_spec();
    const auto space = canonical_cnn_space();
    auto [store, tasks] = make_collection(spec, space);
    std::vector<SyntheticTask> fake{tasks[0]};  // id present in the store
    CompareConfig cfg;
    cfg.methods = {"uniform"};
    cfg.k = 1;
    cfg.T = 2;
    cfg.seeds = 1;
    CHECK_THROWS_AS(compare_initializations(store, fake, nullptr, cfg), DataError);
}

TEST_CASE("summaries aggregate medians and means per iteration") {
    ComparisonResult result;
    result.T = 2;
    auto make_cell = [](double e0, double e1, std::uint64_t seed) {
        ComparisonCell c;
        c.task_id = "t";
        c.method = "uniform";
        c.acq = AcquisitionKind::EI;
        c.seed = seed;
        c.trace.push({0.5}, e0);
        c.trace.push({0.5}, e1);
        return c;
    };
    result.cells.push_back(make_cell(0.4, 0.2, 0));
    result.cells.push_back(make_cell(0.6, 0.5, 1));
    result.cells.push_back(make_cell(0.8, 0.1, 2));
    const auto rows = summarize_comparison(result);
    bool checked = false;
    for (const auto& r : rows) {
        if (r.task_id == "t" && r.iteration == 1) {
            CHECK(r.median_best == 0.6);
            CHECK(r.mean_best == Catch::Approx(0.6));
            checked = true;
        }
        if (r.task_id == "t" && r.iteration == 2) {
            CHECK(r.median_best == 0.2);
        }
    }
    CHECK(checked);

    const auto dir = std::filesystem::temp_directory_path() / "wsbo_bench_test";
    std::filesystem::create_directories(dir);
    write_comparison_csv(result, dir / "cmp.csv");
    write_summary_csv(rows, dir / "sum.csv");
    std::ifstream in(dir / "cmp.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "task_id,method,acq,seed,iteration,best_so_far");
    std::ifstream in2(dir / "sum.csv");
    std::getline(in2, line);
    CHECK(line == "task_id,method,acq,iteration,median_best_so_far,mean_best_so_far");
}
