#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fcshrink/commands.hpp"

namespace {

using namespace fcshrink;
namespace fs = std::filesystem;

struct SweepFlags {
    std::string config;
    std::string input;
    std::vector<std::size_t> scan_lengths;
    std::vector<std::string> methods;
    std::vector<std::string> kinds;
    std::optional<double> guard;
    bool fisher_z = false;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string maps;
    std::string level;
};

cli::RunConfig resolve(const SweepFlags& f) {
    cli::RunConfig cfg;
    if (!f.config.empty()) cli::apply_config_file(cfg, f.config);
    if (!f.input.empty()) cfg.input = f.input;
    if (!f.scan_lengths.empty()) cfg.scan_lengths = f.scan_lengths;
    if (!f.methods.empty()) cfg.methods = cli::parse_methods(f.methods);
    if (!f.kinds.empty()) cfg.kinds = cli::parse_kinds(f.kinds);
    if (f.guard) cfg.guard = *f.guard;
    if (f.fisher_z) cfg.fisher_z = true;
    if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.maps.empty()) cfg.maps = fs::path(f.maps);
    if (!f.level.empty()) cfg.level = cli::parse_level(f.level);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Connectivity estimation, empirical Bayes shrinkage and reliability"};
    app.require_subcommand(1);

    // simulate
    std::string sim_params, sim_out;
    std::optional<std::uint64_t> sim_seed;
    std::size_t sim_threads = 1;
    auto* simulate = app.add_subcommand("simulate", "Write a synthetic time-series cohort");
    simulate->add_option("--params", sim_params, "Simulation parameter file (JSON)")->required();
    simulate->add_option("--out", sim_out, "Output directory")->required();
    simulate->add_option("--seed", sim_seed, "Override the parameter file's seed");
    simulate->add_option("--threads", sim_threads, "Worker threads")->check(CLI::PositiveNumber);

    // connectivity
    cli::ConnectivityOptions conn;
    std::string conn_in, conn_out, conn_matrix, conn_maps;
    std::optional<std::size_t> conn_ell;
    auto* connectivity = app.add_subcommand("connectivity", "Pearson connectivity of one time series");
    connectivity->add_option("--input", conn_in, "Time-series CSV (T x Q, or T x V with --maps)")->required();
    connectivity->add_option("--out", conn_out, "Edge CSV output")->required();
    connectivity->add_option("--matrix-out", conn_matrix, "Optional full-matrix CSV output");
    connectivity->add_option("--maps", conn_maps, "Spatial maps CSV (V x Q) for dual regression");
    connectivity->add_option("--scan-length", conn_ell, "Use only the first N volumes");
    connectivity->add_flag("--header", conn.has_header, "Input CSV starts with a region-id row");
    connectivity->add_flag("--fisher-z", conn.fisher_z, "Write Fisher z-transformed values");

    // shrink
    cli::ShrinkOptions shr;
    std::string shr_manifest, shr_out, shr_method = "single_session";
    auto* shrink = app.add_subcommand("shrink", "Shrink visit-1 estimates toward the group mean");
    shrink->add_option("--manifest", shr_manifest, "Scan manifest (JSON)")->required();
    shrink->add_option("--scan-length", shr.scan_length, "Scan length in volumes")->required();
    shrink->add_option("--method", shr_method, "single_session or oracle")
        ->check(CLI::IsMember({"single_session", "oracle"}));
    shrink->add_option("--out", shr_out, "Output directory")->required();
    shrink->add_flag("--fisher-z", shr.fisher_z, "Shrink in Fisher z space");
    shrink->add_option("--threads", shr.threads, "Worker threads")->check(CLI::PositiveNumber);

    // reliability
    std::string rel_est, rel_ref, rel_out;
    double rel_guard = kDefaultGuard;
    auto* reliability = app.add_subcommand("reliability", "Absolute percent error between two edge CSVs");
    reliability->add_option("--estimate", rel_est, "Estimate edge CSV")->required();
    reliability->add_option("--reference", rel_ref, "Reference edge CSV")->required();
    reliability->add_option("--out", rel_out, "APE CSV output")->required();
    reliability->add_option("--guard", rel_guard, "Smallest |reference| scored")->check(CLI::PositiveNumber);

    // sweep
    SweepFlags sw;
    auto* sweep = app.add_subcommand("sweep", "Scan-length sweep over methods and reliability kinds");
    sweep->add_option("--config", sw.config, "JSON config file; flags override it");
    sweep->add_option("--input", sw.input, "Scan manifest or simulation parameter file");
    sweep->add_option("--scan-lengths", sw.scan_lengths, "Scan lengths in volumes")->delimiter(',');
    sweep->add_option("--methods", sw.methods, "raw, single_session, oracle")->delimiter(',');
    sweep->add_option("--kinds", sw.kinds, "intersession, endpoint")->delimiter(',');
    sweep->add_option("--guard", sw.guard, "Smallest |reference| scored by APE");
    sweep->add_flag("--fisher-z", sw.fisher_z, "Shrink in Fisher z space");
    sweep->add_option("--out", sw.output_dir, "Output directory");
    sweep->add_option("--seed", sw.seed, "Override the simulation seed");
    sweep->add_option("--threads", sw.threads, "Worker threads");
    sweep->add_option("--maps", sw.maps, "Spatial maps CSV; inputs are then T x V data");
    sweep->add_option("--level", sw.level, "Simulation level for parameter inputs: parameter or timeseries");

    // report
    std::string rep_run, rep_out;
    auto* report = app.add_subcommand("report", "Long-format table of a finished sweep");
    report->add_option("--run", rep_run, "Sweep output directory")->required();
    report->add_option("--out", rep_out, "Output CSV (default <run>/report.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) {
            cli::cmd_simulate(sim_params, sim_out, sim_seed, sim_threads);
        } else if (*connectivity) {
            conn.input = conn_in;
            conn.output = conn_out;
            if (!conn_matrix.empty()) conn.matrix_output = fs::path(conn_matrix);
            if (!conn_maps.empty()) conn.maps = fs::path(conn_maps);
            conn.scan_length = conn_ell;
            cli::cmd_connectivity(conn);
        } else if (*shrink) {
            shr.manifest = shr_manifest;
            shr.output_dir = shr_out;
            shr.method = shr_method == "oracle" ? ComponentMethod::Oracle : ComponentMethod::SingleSession;
            cli::cmd_shrink(shr);
        } else if (*reliability) {
            cli::cmd_reliability(rel_est, rel_ref, rel_out, rel_guard);
        } else if (*sweep) {
            cli::cmd_sweep(resolve(sw));
        } else if (*report) {
            std::optional<fs::path> out;
            if (!rep_out.empty()) out = fs::path(rep_out);
            cli::cmd_report(rep_run, out);
        }
    } catch (const Error& e) {
        std::cerr << "fcshrink: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fcshrink: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
