#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "fcshrink/commands.hpp"
#include "test_support.hpp"

using namespace fcshrink;
using fcshrink::testing::snapshot;
using fcshrink::testing::TempDir;

namespace {

struct RunResult {
    int status = 0;
    std::string stderr_text;
};

RunResult run_cli(const std::string& args, const TempDir& dir) {
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(FCSHRINK_CLI_PATH) + " " + args + " 2> \"" + err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(err);
    std::ostringstream buf;
    buf << in.rdbuf();
    r.stderr_text = buf.str();
    return r;
}

void write_params(const std::filesystem::path& path, std::size_t n, std::size_t q, const std::string& extra = "") {
    csv::write_file(path, "{\"n_subjects\": " + std::to_string(n) + ", \"q\": " + std::to_string(q) +
                              ", \"mu\": 0.3, \"between_var\": 0.02, \"state_var\": 0.005, \"sampling_coeff\": 6," +
                              " \"scan_lengths\": [40, 80], \"seed\": 11" + extra + "}");
}

}  // namespace

TEST_CASE("simulate writes a manifest and one CSV per subject visit", "[cli]") {
    TempDir dir("cli_sim");
    write_params(dir / "params.json", 4, 3);
    const auto out = dir / "cohort";
    REQUIRE(run_cli("simulate --params " + (dir / "params.json").string() + " --out " + out.string(), dir).status == 0);

    std::size_t csvs = 0;
    for (const auto& e : std::filesystem::directory_iterator(out)) csvs += e.path().extension() == ".csv";
    CHECK(csvs == 8);
    const auto manifest = load_manifest(out / "manifest.json");
    CHECK(manifest.subjects.size() == 4);
    CHECK(std::filesystem::exists(out / "ground_truth.json"));

    const auto again = dir / "cohort2";
    REQUIRE(run_cli("simulate --params " + (dir / "params.json").string() + " --out " + again.string() +
                        " --threads 4",
                    dir)
                .status == 0);
    CHECK(snapshot(out) == snapshot(again));
}

TEST_CASE("simulate rejects invalid parameters and names the field", "[cli]") {
    TempDir dir("cli_bad");
    csv::write_file(dir / "params.json",
                    R"({"n_subjects": 4, "q": 3, "mu": 0.3, "between_var": -0.02, "sampling_coeff": 6})");
    const auto r = run_cli("simulate --params " + (dir / "params.json").string() + " --out " +
                               (dir / "out").string(),
                           dir);
    CHECK(r.status != 0);
    CHECK(r.stderr_text.find("between_var") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "out"));
}

TEST_CASE("sweep over a manifest and report", "[cli]") {
    TempDir dir("cli_sweep");
    write_params(dir / "params.json", 6, 3);
    REQUIRE(run_cli("simulate --params " + (dir / "params.json").string() + " --out " + (dir / "cohort").string(),
                    dir)
                .status == 0);
    const auto run = dir / "run";
    REQUIRE(run_cli("sweep --input " + (dir / "cohort/manifest.json").string() +
                        " --scan-lengths 40,80 --methods raw,oracle --kinds intersession,endpoint --out " +
                        run.string(),
                    dir)
                .status == 0);
    CHECK(std::filesystem::exists(run / "run_summary.json"));
    CHECK(std::filesystem::exists(run / "variance/oracle_l40.csv"));
    CHECK(std::filesystem::exists(run / "records/raw_endpoint_l80.csv"));

    REQUIRE(run_cli("report --run " + run.string(), dir).status == 0);
    const auto rows = csv::read_lines(run / "report.csv");
    std::size_t omnibus = 0;
    for (const auto& r : rows) omnibus += r.find(",omnibus,") != std::string::npos;
    CHECK(omnibus == 2 * 2 * 2);

    // Values pass through unchanged from the summary files.
    const auto omni_lines = csv::read_lines(run / "summary/omnibus.csv");
    for (std::size_t i = 1; i < omni_lines.size(); ++i) {
        const auto cells = csv::split(omni_lines[i]);
        const std::string expect = std::string(cells[0]) + ',' + std::string(cells[1]) + ',' +
                                   std::string(cells[2]) + ",omnibus,all," + std::string(cells[3]);
        CHECK(std::find(rows.begin(), rows.end(), expect) != rows.end());
    }
}

TEST_CASE("report over 2 methods x 2 kinds x 8 lengths has 32 omnibus rows", "[cli]") {
    TempDir dir("cli_report");
    csv::write_file(dir / "params.json",
                    R"({"n_subjects": 20, "q": 3, "mu": 0.3, "between_var": 0.02, "sampling_coeff": 6, "seed": 2})");
    cli::RunConfig cfg;
    cfg.input = dir / "params.json";
    cfg.methods = {EstimateMethod::Raw, EstimateMethod::OracleShrink};
    cfg.output_dir = dir / "run";
    cli::cmd_sweep(cfg);
    const std::string table = cli::report_csv(dir / "run");
    std::size_t omnibus = 0, pos = 0;
    while ((pos = table.find(",omnibus,", pos)) != std::string::npos) {
        ++omnibus;
        ++pos;
    }
    CHECK(omnibus == 32);
    CHECK(std::filesystem::exists(dir / "run/ground_truth_lambda.csv"));
}

TEST_CASE("report on a missing run fails with MissingRun", "[cli]") {
    TempDir dir("cli_missing");
    try {
        cli::report_csv(dir / "nope");
        FAIL("expected MissingRun");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingRun);
    }
    CHECK(run_cli("report --run " + (dir / "nope").string(), dir).status != 0);
}

TEST_CASE("sweep is byte identical across thread counts and reruns", "[cli][property]") {
    TempDir dir("cli_det");
    write_params(dir / "params.json", 30, 4);
    const std::string base = "sweep --input " + (dir / "params.json").string() + " --out ";
    REQUIRE(run_cli(base + (dir / "a").string() + " --threads 1", dir).status == 0);
    REQUIRE(run_cli(base + (dir / "b").string() + " --threads 8", dir).status == 0);
    REQUIRE(run_cli(base + (dir / "c").string() + " --threads 1", dir).status == 0);
    const auto a = snapshot(dir / "a");
    CHECK(a.size() > 10);
    CHECK(a == snapshot(dir / "b"));
    CHECK(a == snapshot(dir / "c"));
}

TEST_CASE("config file values are overridden by flags", "[cli]") {
    TempDir dir("cli_cfg");
    write_params(dir / "params.json", 8, 3);
    csv::write_file(dir / "config.json",
                    R"({"input": "params.json", "methods": ["raw"], "kinds": ["endpoint"], "output_dir": "from_config"})");
    REQUIRE(run_cli("sweep --config " + (dir / "config.json").string(), dir).status == 0);
    CHECK(std::filesystem::exists(dir / "from_config/records/raw_endpoint_l80.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "from_config/records/raw_intersession_l80.csv"));

    REQUIRE(run_cli("sweep --config " + (dir / "config.json").string() + " --kinds intersession --out " +
                        (dir / "from_flags").string(),
                    dir)
                .status == 0);
    CHECK(std::filesystem::exists(dir / "from_flags/records/raw_intersession_l80.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "from_flags/records/raw_endpoint_l80.csv"));
}

TEST_CASE("connectivity, shrink and reliability subcommands", "[cli]") {
    TempDir dir("cli_single");
    write_params(dir / "params.json", 5, 3);
    REQUIRE(run_cli("simulate --params " + (dir / "params.json").string() + " --out " + (dir / "cohort").string(),
                    dir)
                .status == 0);

    const auto v1 = (dir / "cohort/S0001_v1.csv").string();
    REQUIRE(run_cli("connectivity --input " + v1 + " --out " + (dir / "full.csv").string(), dir).status == 0);
    REQUIRE(run_cli("connectivity --input " + v1 + " --scan-length 40 --out " + (dir / "short.csv").string(), dir)
                .status == 0);
    const auto full = load_edges_csv(dir / "full.csv");
    CHECK(full.edges == vectorize(pearson_matrix(load_timeseries(v1))));

    REQUIRE(run_cli("reliability --estimate " + (dir / "full.csv").string() + " --reference " +
                        (dir / "full.csv").string() + " --out " + (dir / "ape.csv").string(),
                    dir)
                .status == 0);
    const auto ape_rows = csv::read_lines(dir / "ape.csv");
    REQUIRE(ape_rows.size() == 4);
    for (std::size_t i = 1; i < ape_rows.size(); ++i) CHECK(ape_rows[i].ends_with(",0"));

    REQUIRE(run_cli("shrink --manifest " + (dir / "cohort/manifest.json").string() +
                        " --scan-length 40 --method oracle --out " + (dir / "shrunk").string(),
                    dir)
                .status == 0);
    CHECK(std::filesystem::exists(dir / "shrunk/variance.csv"));
    CHECK(std::filesystem::exists(dir / "shrunk/group_mean.csv"));
    CHECK(std::filesystem::exists(dir / "shrunk/shrunk/S0005.csv"));

    CHECK(run_cli("connectivity --input " + (dir / "absent.csv").string() + " --out x.csv", dir).status == 1);
}
