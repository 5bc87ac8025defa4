#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "wsbo/metafeature.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path log = dir / "cli_output.txt";
    const std::string cmd = std::string(WSBO_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch() {
    const auto dir = fs::temp_directory_path() / "wsbo_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("cli end-to-end pipeline") {
    const auto dir = scratch();
    const auto in_dir = [&](const std::string& name) { return (dir / name).string(); };

    SECTION("version flag") {
        const auto r = run_cli("--version", dir);
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("0.1.0") != std::string::npos);
    }

    SECTION("sample determinism and stratification flags") {
        const auto a = run_cli("sample --method latin --d 3 --k 5 --seed 9 --out " + in_dir("a.csv"), dir);
        const auto b = run_cli("sample --method latin --d 3 --k 5 --seed 9 --out " + in_dir("b.csv"), dir);
        CHECK(a.exit_code == 0);
        CHECK(b.exit_code == 0);
        CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
        const auto bad = run_cli("sample --method nope", dir);
        CHECK(bad.exit_code == 2);
    }

    SECTION("full pipeline: collection, metric, run, compare, ccov") {
        const auto mk = run_cli(
            "make-collection --families 2 --fractions 0.5,1.0 --instance-dim 4 --instances-per-task 8 "
            "--grid-size 8 --holdout 1 --seed 3 --out " + in_dir("store.json"), dir);
        REQUIRE(mk.exit_code == 0);
        CHECK(mk.output.find("K=4") != std::string::npos);
        CHECK(fs::exists(dir / "store.json.manifest.json"));
        CHECK(fs::exists(dir / "store.json.holdout.json"));

        const auto tm = run_cli("train-metric --store " + in_dir("store.json") + " --out " +
                                    in_dir("wing.json") + " --iterations 15 --tau 8 --batch-pairs 2 "
                                    "--val-pairs 0 --seed 1", dir);
        REQUIRE(tm.exit_code == 0);
        CHECK(fs::exists(dir / "wing.json"));
        CHECK(fs::exists(dir / "wing.json.loss.csv"));
        CHECK(fs::exists(dir / "store.json.metafeatures.json"));

        // Deterministic halton run: identical CSVs.
        const std::string run_common =
            "run --store " + in_dir("store.json") + " --tasks " + in_dir("store.json.holdout.json") +
            " --task holdout_fam0 --init halton --k 2 --T 5 --budget 128 --seed 4 ";
        const auto r1 = run_cli(run_common + "--out " + in_dir("t1.csv"), dir);
        const auto r2 = run_cli(run_common + "--out " + in_dir("t2.csv"), dir);
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r2.exit_code == 0);
        CHECK(slurp(dir / "t1.csv") == slurp(dir / "t2.csv"));
        CHECK(r1.output.find("best error") != std::string::npos);

        // Warm-start run: T rows, the first k tagged init.
        const auto rw = run_cli("run --store " + in_dir("store.json") + " --tasks " +
                                    in_dir("store.json.holdout.json") +
                                    " --task holdout_fam0 --init warmstart --weights " + in_dir("wing.json") +
                                    " --metafeatures " + in_dir("store.json.metafeatures.json") +
                                    " --k 3 --T 10 --budget 128 --out " + in_dir("warm.csv"), dir);
        REQUIRE(rw.exit_code == 0);
        std::ifstream wf(dir / "warm.csv");
        std::string line;
        std::getline(wf, line);
        CHECK(line.find(",phase") != std::string::npos);
        std::size_t rows = 0, init_rows = 0;
        while (std::getline(wf, line)) {
            ++rows;
            if (line.find(",init") != std::string::npos) {
                ++init_rows;
                CHECK(rows <= 3);
            }
        }
        CHECK(rows == 10);
        CHECK(init_rows == 3);

        // k >= T is a usage error.
        const auto bad = run_cli(run_common + "--k 10 --T 10 --out " + in_dir("bad.csv"), dir);
        CHECK(bad.exit_code == 2);

        // Compare: full grid with both acquisitions present.
        const auto cp = run_cli(
            "compare --store " + in_dir("store.json") + " --tasks " + in_dir("store.json.holdout.json") +
                " --weights " + in_dir("wing.json") + " --metafeatures " +
                in_dir("store.json.metafeatures.json") + " --k 2 --T 4 --seeds 2 --budget 128 --jobs 2 "
                "--out " + in_dir("cmp.csv") + " --summary " + in_dir("sum.csv"), dir);
        REQUIRE(cp.exit_code == 0);
        const auto cmp_text = slurp(dir / "cmp.csv");
        for (const char* m : {"uniform", "latin", "halton", "warmstart"}) {
            CHECK(cmp_text.find(m) != std::string::npos);
        }
        CHECK(cmp_text.find(",ei,") != std::string::npos);
        CHECK(cmp_text.find(",ucb,") != std::string::npos);
        // 1 task x 4 methods x 2 acqs x 2 seeds x 4 iterations + header
        std::size_t lines = 0;
        for (char c : cmp_text) lines += (c == '\n');
        CHECK(lines == 1 + 4 * 2 * 2 * 4);

        // CCoV table stays within [-0.5, 0.5].
        const auto cc = run_cli("ccov --store " + in_dir("store.json") + " --out " + in_dir("ccov.csv"), dir);
        REQUIRE(cc.exit_code == 0);
        std::ifstream cf(dir / "ccov.csv");
        std::getline(cf, line);
        CHECK(line == "record_id,dim_name,subtracted_ccov,warning");
        while (std::getline(cf, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            const auto c3 = line.find(',', c2 + 1);
            const double v = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
            CHECK(v >= -0.5);
            CHECK(v <= 0.5);
        }
    }

    SECTION("missing store is a usage error") {
        const auto r = run_cli("train-metric --store " + in_dir("nothere.json"), dir);
        CHECK(r.exit_code == 2);
        const auto r2 = run_cli("ccov --store " + in_dir("nothere.json"), dir);
        CHECK(r2.exit_code == 2);
    }

    SECTION("unwritable output directory is a usage error") {
        const auto r = run_cli("make-collection --families 1 --fractions 1.0 --instance-dim 2 "
                               "--instances-per-task 4 --grid-size 4 --holdout 1 --out /nonexistent/x.json",
                               dir);
        CHECK(r.exit_code == 2);
    }

    SECTION("zero step size leaves weights at initialization") {
        const auto mk = run_cli(
            "make-collection --families 2 --fractions 1.0 --instance-dim 4 --instances-per-task 6 "
            "--grid-size 4 --holdout 1 --seed 2 --out " + in_dir("s2.json"), dir);
        REQUIRE(mk.exit_code == 0);
        const auto tm = run_cli("train-metric --store " + in_dir("s2.json") + " --out " + in_dir("w0.json") +
                                    " --iterations 1 --step-size 0 --tau 6 --batch-pairs 1 --val-pairs 0 "
                                    "--seed 5", dir);
        REQUIRE(tm.exit_code == 0);
        const auto loaded = wsbo::load_wing(dir / "w0.json");
        const auto fresh = wsbo::init_wing(4, wsbo::WingConfig{}, 5);
        REQUIRE(loaded.extractor.size() == fresh.extractor.size());
        for (std::size_t i = 0; i < fresh.extractor.size(); ++i) {
            CHECK(loaded.extractor[i].W == fresh.extractor[i].W);
        }
        for (std::size_t i = 0; i < fresh.head.size(); ++i) {
            CHECK(loaded.head[i].W == fresh.head[i].W);
        }
    }

    SECTION("re-running from a manifest reproduces outputs byte-identically") {
        const auto mk = run_cli(
            "make-collection --families 2 --fractions 0.5,1.0 --instance-dim 3 --instances-per-task 6 "
            "--grid-size 6 --holdout 1 --seed 11 --out " + in_dir("m1.json"), dir);
        REQUIRE(mk.exit_code == 0);
        // Extract the resolved config block from the manifest and replay it.
        const auto manifest = slurp(dir / "m1.json.manifest.json");
        const auto key = std::string("\"resolved\": \"");
        const auto from = manifest.find(key) + key.size();
        const auto to = manifest.find('"', from);
        std::string ini = manifest.substr(from, to - from);
        std::string unescaped;
        for (std::size_t i = 0; i < ini.size(); ++i) {
            if (ini[i] == '\\' && i + 1 < ini.size()) {
                unescaped += (ini[i + 1] == 'n') ? '\n' : ini[i + 1];
                ++i;
            } else {
                unescaped += ini[i];
            }
        }
        {
            std::ofstream out(dir / "replay.ini");
            out << unescaped;
        }
        const auto replay = run_cli("--config " + in_dir("replay.ini") + " make-collection --out " +
                                        in_dir("m2.json"), dir);
        REQUIRE(replay.exit_code == 0);
        CHECK(slurp(dir / "m1.json") == slurp(dir / "m2.json"));
        CHECK(slurp(dir / "m1.json.holdout.json") == slurp(dir / "m2.json.holdout.json"));
    }

    SECTION("config file supplies values and flags override it") {
        {
            std::ofstream cfg(dir / "sample.ini");
            cfg << "[sample]\nmethod=halton\nd=2\nk=3\n";
        }
        const auto r = run_cli("--config " + in_dir("sample.ini") + " sample --out " + in_dir("cfg.csv"), dir);
        REQUIRE(r.exit_code == 0);
        const auto text = slurp(dir / "cfg.csv");
        CHECK(text.find("0.5,0.33333333333333331") != std::string::npos);

        const auto r2 = run_cli("--config " + in_dir("sample.ini") + " sample --k 1 --out " +
                                    in_dir("cfg2.csv"), dir);
        REQUIRE(r2.exit_code == 0);
        std::size_t lines = 0;
        for (char c : slurp(dir / "cfg2.csv")) lines += (c == '\n');
        CHECK(lines == 2);  // header + one point
    }
}
