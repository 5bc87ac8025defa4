#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "wsbo/history.hpp"
#include "wsbo/rng.hpp"
#include "wsbo/sampling.hpp"

using namespace wsbo;

namespace {

InstanceSet tiny_instances(std::uint64_t seed, std::size_t count = 4, std::size_t dim = 3) {
    Rng rng(seed);
    Eigen::MatrixXd data(count, dim);
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        labels[i] = static_cast<int>(i % 2);
        for (std::size_t j = 0; j < dim; ++j) {
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.next_gaussian();
        }
    }
    return InstanceSet::make(std::move(data), std::move(labels));
}

HistoryStore small_store(const std::vector<std::vector<double>>& error_rows) {
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0), DimensionSpec::real("b", -1.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    const std::size_t n = error_rows.front().size();
    for (const auto& u : halton(2, n, 1).points) grid.points.push_back(space.denormalize(u));
    std::vector<DatasetRecord> records;
    for (std::size_t i = 0; i < error_rows.size(); ++i) {
        DatasetRecord r;
        r.id = "rec" + std::to_string(i);
        r.errors = error_rows[i];
        r.instances = tiny_instances(i);
        r.fraction = 1.0;
        records.push_back(std::move(r));
    }
    return HistoryStore(grid, std::move(records));
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "wsbo_history_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("target distance evaluates the L1 sum") {
    const auto store = small_store({{0.1, 0.3, 0.5}, {0.2, 0.5, 0.4}, {0.1, 0.3, 0.5}});
    CHECK(target_distance(store, "rec0", "rec1") == Catch::Approx(0.4).epsilon(1e-12));
    CHECK(target_distance(store, "rec0", "rec2") == 0.0);
    CHECK(target_distance(store, "rec0", "rec1") == target_distance(store, "rec1", "rec0"));
    CHECK_THROWS_AS(target_distance(store, "rec0", "nope"), LookupError);
}

TEST_CASE("target distance is an L1 metric on random stores") {
    Rng rng(77);
    const std::size_t n = 16;
    std::vector<std::vector<double>> rows(6, std::vector<double>(n));
    for (auto& row : rows) {
        for (auto& e : row) e = rng.next_double();
    }
    const auto store = small_store(rows);
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = "rec" + std::to_string(rng.next_index(6));
        const auto b = "rec" + std::to_string(rng.next_index(6));
        const auto c = "rec" + std::to_string(rng.next_index(6));
        const double dab = target_distance(store, a, b);
        const double dba = target_distance(store, b, a);
        const double dac = target_distance(store, a, c);
        const double dcb = target_distance(store, c, b);
        CHECK(dab >= 0.0);
        CHECK(dab == dba);
        CHECK(dab <= dac + dcb + 1e-12);
        if (a == b) CHECK(dab == 0.0);
    }
}

TEST_CASE("ccov weighted means on constructed grids") {
    // Grid with observed coordinates spanning [0,1] in dim 0.
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    grid.points = {{0.0}, {1.0}};
    DatasetRecord r;
    r.id = "x";
    r.errors = {0.25, 0.75};  // same ratio as weights 1:3
    r.instances = tiny_instances(1);
    CHECK(ccov(r, grid, 0) == Catch::Approx(0.75).epsilon(1e-12));

    EvaluationGrid grid3;
    grid3.space = space;
    grid3.points = {{0.0}, {0.5}, {1.0}};
    DatasetRecord r3;
    r3.id = "y";
    r3.errors = {0.25, 0.25, 0.5};  // weights 1:1:2
    r3.instances = tiny_instances(2);
    CHECK(ccov(r3, grid3, 0) == Catch::Approx(0.625).epsilon(1e-12));

    // Equal errors reduce to the unweighted mean of normalized coordinates.
    DatasetRecord req;
    req.id = "z";
    req.errors = {0.4, 0.4, 0.4};
    req.instances = tiny_instances(3);
    CHECK(ccov(req, grid3, 0) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ccov error cases") {
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0), DimensionSpec::real("b", 0.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    grid.points = {{0.0, 0.5}, {1.0, 0.5}};  // dim 1 constant over the grid
    DatasetRecord r;
    r.id = "x";
    r.errors = {0.0, 0.0};
    r.instances = tiny_instances(4);
    CHECK_THROWS_AS(ccov(r, grid, 0), UndefinedCcovError);
    r.errors = {0.5, 0.5};
    CHECK_THROWS_AS(ccov(r, grid, 1), DegenerateDimensionError);
    CHECK_THROWS_AS(ccov(r, grid, 2), DomainError);
}

TEST_CASE("subtracted ccov recovers opposed mode locations with opposite signs") {
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    for (int i = 0; i < 11; ++i) grid.points.push_back({i / 10.0});
    // Error mass concentrated at the high end vs the low end of the axis.
    DatasetRecord high, low;
    high.id = "high";
    low.id = "low";
    high.instances = tiny_instances(5);
    low.instances = tiny_instances(6);
    for (int i = 0; i < 11; ++i) {
        const double u = i / 10.0;
        high.errors.push_back(0.05 + 0.9 * u);
        low.errors.push_back(0.05 + 0.9 * (1.0 - u));
    }
    const auto sh = subtracted_ccov(high, grid);
    const auto sl = subtracted_ccov(low, grid);
    CHECK(sh[0] > 0.0);
    CHECK(sl[0] < 0.0);
    CHECK(sh[0] >= -0.5);
    CHECK(sh[0] <= 0.5);
    // A symmetric landscape sits at zero.
    DatasetRecord sym;
    sym.id = "sym";
    sym.instances = tiny_instances(7);
    for (int i = 0; i < 11; ++i) sym.errors.push_back(0.1 + 0.5 * std::abs(i / 10.0 - 0.5));
    CHECK(subtracted_ccov(sym, grid)[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ccov lies within the normalized coordinate range") {
    Rng rng(15);
    HyperparameterSpace space({DimensionSpec::real("a", -3.0, 7.0)});
    EvaluationGrid grid;
    grid.space = space;
    for (int i = 0; i < 20; ++i) grid.points.push_back({-3.0 + 10.0 * rng.next_double()});
    for (int trial = 0; trial < 20; ++trial) {
        DatasetRecord r;
        r.id = "t";
        r.instances = tiny_instances(trial);
        for (int i = 0; i < 20; ++i) r.errors.push_back(0.01 + 0.98 * rng.next_double());
        const double c = ccov(r, grid, 0);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
    }
}

TEST_CASE("best_on_grid argmin and tie-breaking") {
    const auto store = small_store({{0.3, 0.1, 0.2}, {0.1, 0.1, 0.5}});
    CHECK(best_on_grid(store, "rec0") == store.grid().points[1]);
    CHECK(best_on_grid(store, "rec1") == store.grid().points[0]);  // tie -> lowest index
    CHECK_THROWS_AS(best_on_grid(store, "nope"), LookupError);
    const double best_err = *std::min_element(store.record("rec0").errors.begin(),
                                              store.record("rec0").errors.end());
    CHECK(best_err == 0.1);
}

TEST_CASE("store construction enforces the data contracts") {
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    grid.points = {{0.2}, {0.8}};

    DatasetRecord ok;
    ok.id = "ok";
    ok.errors = {0.5, 0.5};
    ok.instances = tiny_instances(0);

    auto bad_len = ok;
    bad_len.errors = {0.5};
    CHECK_THROWS_AS(HistoryStore(grid, {bad_len}), DataError);

    auto bad_range = ok;
    bad_range.errors = {0.5, 1.5};
    CHECK_THROWS_AS(HistoryStore(grid, {bad_range}), DataError);

    CHECK_THROWS_AS(HistoryStore(grid, {ok, ok}), DataError);  // duplicate id

    EvaluationGrid dup_grid;
    dup_grid.space = space;
    dup_grid.points = {{0.2}, {0.2}};
    CHECK_THROWS_AS(HistoryStore(dup_grid, {ok}), DataError);
}

TEST_CASE("store save/load round-trip") {
    const auto dir = temp_dir();
    const auto store = small_store({{0.1, 0.3, 0.5}, {0.2, 0.5, 0.4}});
    const auto path = dir / "store.json";
    save_store(store, path);
    const auto back = load_store(path);
    REQUIRE(back.size() == store.size());
    CHECK(back.grid().points == store.grid().points);
    for (std::size_t i = 0; i < store.size(); ++i) {
        CHECK(back.records()[i].id == store.records()[i].id);
        CHECK(back.records()[i].errors == store.records()[i].errors);
        CHECK(back.records()[i].fraction == store.records()[i].fraction);
        CHECK(back.records()[i].instances.data == store.records()[i].instances.data);
        CHECK(back.records()[i].instances.labels == store.records()[i].instances.labels);
        CHECK(back.records()[i].instances.num_classes == store.records()[i].instances.num_classes);
    }
    // Saving twice produces identical bytes.
    const auto path2 = dir / "store2.json";
    save_store(store, path2);
    std::ifstream a(path), b(path2);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("store round-trips through external binary instances") {
    const auto dir = temp_dir();
    // float32-representable values survive the external format exactly.
    HyperparameterSpace space({DimensionSpec::real("a", 0.0, 1.0)});
    EvaluationGrid grid;
    grid.space = space;
    grid.points = {{0.25}, {0.75}};
    Eigen::MatrixXd data(2, 2);
    data << 0.5, -1.25, 2.0, 0.125;
    DatasetRecord r;
    r.id = "bin";
    r.errors = {0.1, 0.9};
    r.instances = InstanceSet::make(data, {0, 1});
    const HistoryStore store(grid, {r});
    const auto path = dir / "ext.json";
    save_store(store, path, true);
    const auto back = load_store(path);
    CHECK(back.record("bin").instances.data == data);
    CHECK(back.record("bin").instances.labels == std::vector<int>{0, 1});
}

TEST_CASE("load failures carry context") {
    const auto dir = temp_dir();
    const auto path = dir / "bad.json";
    {
        std::ofstream out(path);
        out << "{\"space\": {\"dims\": [{\"name\":\"a\",\"kind\":\"real\",\"lower\":0,\"upper\":1}]},"
            << "\"grid\": [[0.2],[0.8]],"
            << "\"records\": [{\"id\":\"r0\",\"fraction\":1.0,\"errors\":[0.5],"
            << "\"instances\":{\"dim\":1,\"labels\":[0],\"data\":[[0.0]]}}]}";
    }
    CHECK_THROWS_MATCHES(load_store(path), ParseError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("r0")));

    const auto path2 = dir / "noinst.json";
    {
        std::ofstream out(path2);
        out << "{\"space\": {\"dims\": [{\"name\":\"a\",\"kind\":\"real\",\"lower\":0,\"upper\":1}]},"
            << "\"grid\": [[0.2]],"
            << "\"records\": [{\"id\":\"r7\",\"fraction\":1.0,\"errors\":[0.5]}]}";
    }
    CHECK_THROWS_MATCHES(load_store(path2), ParseError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("r7")));

    CHECK_THROWS_AS(load_store(dir / "missing.json"), ParseError);

    const auto path3 = dir / "syntax.json";
    {
        std::ofstream out(path3);
        out << "{not json";
    }
    CHECK_THROWS_AS(load_store(path3), ParseError);
}

TEST_CASE("metafeature sidecar round-trip") {
    const auto dir = temp_dir();
    auto store = small_store({{0.1, 0.3, 0.5}, {0.2, 0.5, 0.4}});
    std::vector<Eigen::VectorXd> mf;
    mf.push_back(Eigen::Vector3d(1.0, 2.0, 3.0));
    mf.push_back(Eigen::Vector3d(4.0, 5.0, 6.0));
    store.set_metafeatures(mf);
    const auto path = dir / "mf.json";
    save_metafeatures(store, path, 200, 42);

    auto fresh = small_store({{0.1, 0.3, 0.5}, {0.2, 0.5, 0.4}});
    const auto [tau, seed] = load_metafeatures(fresh, path);
    CHECK(tau == 200);
    CHECK(seed == 42);
    REQUIRE(fresh.metafeatures());
    CHECK((*fresh.metafeatures())[0] == mf[0]);
    CHECK((*fresh.metafeatures())[1] == mf[1]);
}
