#pragma once

// Subcommands behind the `fcshrink` executable. Each one reads its inputs,
// writes its outputs and throws fcshrink::Error on failure; directory
// outputs are staged next to the destination and moved into place only
// once complete.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"
#include "fcshrink/pipeline.hpp"
#include "fcshrink/reliability.hpp"
#include "fcshrink/shrinkage.hpp"
#include "fcshrink/simulator.hpp"
#include "fcshrink/timeseries.hpp"

namespace fcshrink::cli {

namespace fs = std::filesystem;

enum class SimulationLevel { Parameter, Timeseries };

/// Settings of a sweep. Defaults, then a JSON config file, then command
/// line flags, each overriding the previous.
struct RunConfig {
    fs::path input;                           // manifest or simulation parameters
    std::vector<std::size_t> scan_lengths;    // empty: default grid (or the params' grid)
    std::vector<EstimateMethod> methods{EstimateMethod::Raw, EstimateMethod::SingleSessionShrink,
                                        EstimateMethod::OracleShrink};
    std::vector<ReliabilityKind> kinds{ReliabilityKind::Intersession, ReliabilityKind::EndPoint};
    double guard = kDefaultGuard;
    bool fisher_z = false;
    fs::path output_dir = "fcshrink_run";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::optional<fs::path> maps;             // dual regression of T x V inputs
    SimulationLevel level = SimulationLevel::Parameter;

    void validate() const {
        if (input.empty()) throw Error(Errc::InvalidParams, "input: a manifest or parameter file is required");
        for (std::size_t k = 0; k < scan_lengths.size(); ++k) {
            if (scan_lengths[k] < 2) throw Error(Errc::InvalidParams, "scan_lengths: each length must be >= 2");
            if (k && scan_lengths[k] <= scan_lengths[k - 1])
                throw Error(Errc::InvalidParams, "scan_lengths: must be strictly increasing");
        }
        if (methods.empty()) throw Error(Errc::InvalidParams, "methods: select at least one");
        if (kinds.empty()) throw Error(Errc::InvalidParams, "kinds: select at least one");
        if (!(guard > 0.0)) throw Error(Errc::InvalidParams, "guard: must be positive");
        if (threads < 1) throw Error(Errc::InvalidParams, "threads: must be >= 1");
    }
};

inline std::vector<EstimateMethod> parse_methods(const std::vector<std::string>& names) {
    std::vector<EstimateMethod> out;
    for (const auto& n : names) {
        auto m = parse_method(n);
        if (!m) throw Error(Errc::InvalidParams, "methods: unknown method '" + n + "'");
        if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
    }
    return out;
}

inline std::vector<ReliabilityKind> parse_kinds(const std::vector<std::string>& names) {
    std::vector<ReliabilityKind> out;
    for (const auto& n : names) {
        auto k = parse_kind(n);
        if (!k) throw Error(Errc::InvalidParams, "kinds: unknown reliability kind '" + n + "'");
        if (std::find(out.begin(), out.end(), *k) == out.end()) out.push_back(*k);
    }
    return out;
}

inline SimulationLevel parse_level(const std::string& s) {
    if (s == "parameter") return SimulationLevel::Parameter;
    if (s == "timeseries") return SimulationLevel::Timeseries;
    throw Error(Errc::InvalidParams, "level: expected 'parameter' or 'timeseries', got '" + s + "'");
}

inline nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(csv::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::SchemaError, path.string() + ": " + e.what());
    }
}

/// Applies the keys of a JSON config document onto `cfg`. Relative paths
/// resolve against the config file's directory.
inline void apply_config_file(RunConfig& cfg, const fs::path& path) {
    const auto doc = read_json(path);
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    try {
        if (doc.contains("input")) cfg.input = resolve(doc["input"].get<std::string>());
        if (doc.contains("scan_lengths")) cfg.scan_lengths = doc["scan_lengths"].get<std::vector<std::size_t>>();
        if (doc.contains("methods")) cfg.methods = parse_methods(doc["methods"].get<std::vector<std::string>>());
        if (doc.contains("kinds")) cfg.kinds = parse_kinds(doc["kinds"].get<std::vector<std::string>>());
        if (doc.contains("guard")) cfg.guard = doc["guard"].get<double>();
        if (doc.contains("fisher_z")) cfg.fisher_z = doc["fisher_z"].get<bool>();
        if (doc.contains("output_dir")) cfg.output_dir = resolve(doc["output_dir"].get<std::string>());
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("threads")) cfg.threads = doc["threads"].get<std::size_t>();
        if (doc.contains("maps")) cfg.maps = resolve(doc["maps"].get<std::string>());
        if (doc.contains("level")) cfg.level = parse_level(doc["level"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaError, path.string() + ": " + e.what());
    }
}

namespace detail {

/// Writes into `<dest>.partial` and renames onto `dest` when `fill`
/// succeeds; the staging directory is removed on failure.
template <typename Fill>
void write_staged(const fs::path& dest, Fill&& fill) {
    fs::path staging = dest;
    staging += ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging);
    try {
        fill(staging);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
    fs::remove_all(dest);
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    fs::rename(staging, dest);
}

inline bool is_manifest(const nlohmann::json& doc) { return doc.is_object() && doc.contains("subjects"); }

inline std::string lambda_table_csv(const GenerativeParams& p) {
    std::string out = "region_a,region_b,scan_length,lambda\n";
    const auto ids = default_region_ids(p.q);
    for (std::size_t ell : p.scan_lengths) {
        const auto lam = ground_truth_lambda(p, ell);
        std::size_t k = 0;
        for (std::size_t a = 0; a < p.q; ++a)
            for (std::size_t b = a + 1; b < p.q; ++b, ++k)
                out += ids[a] + ',' + ids[b] + ',' + std::to_string(ell) + ',' + csv::format_double(lam[k]) + '\n';
    }
    return out;
}

inline TimeSeriesMatrix load_visit(const ScanManifest& manifest, const VisitRecord& visit,
                                   const std::optional<SpatialMaps>& maps) {
    if (maps) {
        const Matrix data = load_matrix_csv(visit.path, manifest.has_header);
        return dual_regression_stage1(data, *maps, visit.tr_seconds);
    }
    return load_timeseries(visit.path, std::nullopt, manifest.has_header, visit.tr_seconds);
}

inline bool needs_visit2(const RunConfig& cfg) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), EstimateMethod::OracleShrink) != cfg.methods.end() ||
           std::find(cfg.kinds.begin(), cfg.kinds.end(), ReliabilityKind::Intersession) != cfg.kinds.end();
}

inline bool needs_subsamples(const RunConfig& cfg) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), EstimateMethod::SingleSessionShrink) !=
           cfg.methods.end();
}

inline CohortEstimates manifest_estimates(const ScanManifest& manifest, const std::vector<std::size_t>& lengths,
                                          const RunConfig& cfg) {
    bool all_have_visit2 = true;
    std::vector<std::string> ids;
    for (const auto& s : manifest.subjects) {
        ids.push_back(s.subject_id);
        if (!s.visit(1)) throw Error(Errc::MissingVisit, "subject " + s.subject_id + " has no visit 1");
        if (!s.visit(2)) {
            if (needs_visit2(cfg)) {
                throw Error(Errc::MissingVisit, "subject " + s.subject_id +
                                                    " has no visit 2 (needed by oracle shrinkage or intersession reliability)");
            }
            all_have_visit2 = false;
        }
    }
    std::optional<SpatialMaps> maps;
    if (cfg.maps) maps = SpatialMaps{load_matrix_csv(*cfg.maps)};
    const bool visit2 = all_have_visit2 && needs_visit2(cfg);
    return estimates_from_series(
        ids, visit2,
        [&](std::size_t i, std::size_t v) {
            return load_visit(manifest, *manifest.subjects[i].visit(static_cast<int>(v + 1)), maps);
        },
        lengths, needs_subsamples(cfg), cfg.threads);
}

inline nlohmann::json config_echo(const RunConfig& cfg, const std::vector<std::size_t>& lengths) {
    nlohmann::json methods = nlohmann::json::array(), kinds = nlohmann::json::array();
    for (auto m : cfg.methods) methods.push_back(to_string(m));
    for (auto k : cfg.kinds) kinds.push_back(to_string(k));
    nlohmann::json doc = {{"input", cfg.input.generic_string()},
                          {"scan_lengths", lengths},
                          {"methods", methods},
                          {"kinds", kinds},
                          {"guard", cfg.guard},
                          {"fisher_z", cfg.fisher_z},
                          {"level", cfg.level == SimulationLevel::Parameter ? "parameter" : "timeseries"}};
    doc["seed"] = cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr);
    doc["maps"] = cfg.maps ? nlohmann::json(cfg.maps->generic_string()) : nlohmann::json(nullptr);
    return doc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline nlohmann::json ground_truth_document(const TimeseriesCohort& cohort) {
    const auto& p = cohort.params;
    const auto ids = default_region_ids(p.q);
    nlohmann::json edges = nlohmann::json::array();
    std::size_t k = 0;
    for (std::size_t a = 0; a < p.q; ++a) {
        for (std::size_t b = a + 1; b < p.q; ++b, ++k) {
            nlohmann::json lam = nlohmann::json::object();
            for (std::size_t ell : p.scan_lengths) lam[std::to_string(ell)] = ground_truth_lambda(p, ell)[k];
            edges.push_back({{"region_a", ids[a]},
                             {"region_b", ids[b]},
                             {"mu", p.mu[k]},
                             {"shared_correlation", cohort.shared[k]},
                             {"between_var", p.between_var[k]},
                             {"state_var", p.state_var[k]},
                             {"sampling_coeff", p.sampling_coeff[k]},
                             {"lambda", lam}});
        }
    }
    nlohmann::json subjects = nlohmann::json::array();
    for (std::size_t i = 0; i < cohort.subject_ids.size(); ++i) {
        subjects.push_back({{"subject_id", cohort.subject_ids[i]},
                            {"long_term", cohort.long_term[i].values},
                            {"visit_1", cohort.session[i][0].values},
                            {"visit_2", cohort.session[i][1].values}});
    }
    return {{"params", params_to_json(p)}, {"edges", edges}, {"subjects", subjects}};
}

/// Writes manifest.json, one CSV per subject-visit and ground_truth.json.
inline void cmd_simulate(const fs::path& params_path, const fs::path& out_dir,
                         std::optional<std::uint64_t> seed = std::nullopt, std::size_t threads = 1) {
    GenerativeParams params = params_from_json(read_json(params_path));
    if (seed) params.seed = *seed;
    const TimeseriesCohort cohort = simulate_timeseries_level(params, threads);

    detail::write_staged(out_dir, [&](const fs::path& dir) {
        ScanManifest manifest;
        for (std::size_t i = 0; i < cohort.subject_ids.size(); ++i) {
            SubjectRecord rec{cohort.subject_ids[i], {}};
            for (std::size_t v = 0; v < 2; ++v) {
                const std::string file = cohort.subject_ids[i] + "_v" + std::to_string(v + 1) + ".csv";
                save_timeseries(dir / file, cohort.series[i][v]);
                rec.visits.push_back({static_cast<int>(v + 1), file, cohort.series[i][v].n_volumes(), params.tr_seconds});
            }
            manifest.subjects.push_back(std::move(rec));
        }
        csv::write_file(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
        csv::write_file(dir / "ground_truth.json", ground_truth_document(cohort).dump(2) + "\n");
    });
}

// ---------------------------------------------------------------------------
// connectivity

struct ConnectivityOptions {
    fs::path input;
    fs::path output;
    std::optional<fs::path> matrix_output;
    std::optional<fs::path> maps;
    std::optional<std::size_t> scan_length;
    bool has_header = false;
    bool fisher_z = false;
};

inline void cmd_connectivity(const ConnectivityOptions& opt) {
    TimeSeriesMatrix ts;
    if (opt.maps) {
        ts = dual_regression_stage1(load_matrix_csv(opt.input, opt.has_header), SpatialMaps{load_matrix_csv(*opt.maps)});
    } else {
        ts = load_timeseries(opt.input, std::nullopt, opt.has_header);
    }
    if (opt.scan_length) ts = truncate(ts, *opt.scan_length);
    ConnectivityMatrix cm = pearson_matrix(ts);
    EdgeVector ev = vectorize(cm);
    if (opt.fisher_z) ev = fisher_z(ev);
    csv::write_file(opt.output, edges_to_csv(ev, cm.region_ids));
    if (opt.matrix_output) {
        const auto full = devectorize(ev, cm.region_ids);
        csv::write_file(*opt.matrix_output, matrix_to_csv(full.values, &full.region_ids));
    }
}

// ---------------------------------------------------------------------------
// shrink

struct ShrinkOptions {
    fs::path manifest;
    fs::path output_dir;
    std::size_t scan_length = 0;
    ComponentMethod method = ComponentMethod::SingleSession;
    bool fisher_z = false;
    std::size_t threads = 1;
};

/// Shrinks every subject's visit-1 estimate at one scan length. Writes
/// variance.csv, group_mean.csv and shrunk/<subject>.csv.
inline void cmd_shrink(const ShrinkOptions& opt) {
    const ScanManifest manifest = load_manifest(opt.manifest);
    RunConfig cfg;
    cfg.threads = opt.threads;
    cfg.kinds = {ReliabilityKind::EndPoint};
    cfg.methods = {opt.method == ComponentMethod::Oracle ? EstimateMethod::OracleShrink
                                                         : EstimateMethod::SingleSessionShrink};
    if (opt.scan_length == 0) throw Error(Errc::InvalidParams, "scan length is required");
    const CohortEstimates est = detail::manifest_estimates(manifest, {opt.scan_length}, cfg);

    SweepOptions sweep;
    sweep.methods = cfg.methods;
    sweep.kinds = cfg.kinds;
    sweep.fisher_z = opt.fisher_z;
    const SweepResult res = run_sweep(est, sweep);
    const ShrinkageCell& cell = res.shrinkage.front();

    detail::write_staged(opt.output_dir, [&](const fs::path& dir) {
        csv::write_file(dir / "variance.csv", components_to_csv(cell.components, cell.weights, est.region_ids));
        EdgeVector target = opt.fisher_z ? inverse_fisher_z(cell.weights.target) : cell.weights.target;
        csv::write_file(dir / "group_mean.csv", edges_to_csv(target, est.region_ids));
        const auto& v1 = est.by_visit[0][0];
        for (std::size_t i = 0; i < est.n_subjects(); ++i) {
            EdgeVector e = opt.fisher_z ? fisher_z(v1[i].full) : v1[i].full;
            EdgeVector s = apply_shrinkage(e, cell.weights);
            if (opt.fisher_z) s = inverse_fisher_z(s);
            csv::write_file(dir / "shrunk" / (est.subject_ids[i] + ".csv"), edges_to_csv(s, est.region_ids));
        }
    });
}

// ---------------------------------------------------------------------------
// reliability

inline void cmd_reliability(const fs::path& estimate, const fs::path& reference, const fs::path& output,
                            double guard = kDefaultGuard) {
    const auto est = load_edges_csv(estimate);
    const auto ref = load_edges_csv(reference);
    if (est.region_ids != ref.region_ids) throw Error(Errc::ShapeMismatch, "estimate and reference regions differ");
    const ApeVector values = ape(est.edges, ref.edges, guard);
    std::string out = "region_a,region_b,ape\n";
    std::size_t k = 0;
    for (std::size_t a = 0; a < est.edges.q; ++a)
        for (std::size_t b = a + 1; b < est.edges.q; ++b, ++k)
            out += est.region_ids[a] + ',' + est.region_ids[b] + ',' + csv::format_optional(values[k]) + '\n';
    csv::write_file(output, out);
}

// ---------------------------------------------------------------------------
// sweep

/// Estimates for the configured input: a manifest on disk, or simulation
/// parameters generated in memory at the configured level.
inline CohortEstimates sweep_estimates(const RunConfig& cfg, std::vector<std::size_t>& lengths,
                                       std::optional<GenerativeParams>& params) {
    const auto doc = read_json(cfg.input);
    if (detail::is_manifest(doc)) {
        lengths = cfg.scan_lengths.empty() ? default_scan_lengths() : cfg.scan_lengths;
        return detail::manifest_estimates(load_manifest(cfg.input), lengths, cfg);
    }
    GenerativeParams p = params_from_json(doc);
    if (cfg.seed) p.seed = *cfg.seed;
    if (!cfg.scan_lengths.empty()) {
        p.scan_lengths = cfg.scan_lengths;
        validate(p);
    }
    lengths = p.scan_lengths;
    params = p;
    if (cfg.level == SimulationLevel::Parameter) {
        return estimates_from_cohort(simulate_parameter_level(p, cfg.threads));
    }
    const TimeseriesCohort cohort = simulate_timeseries_level(p, cfg.threads);
    return estimates_from_series(
        cohort.subject_ids, true, [&](std::size_t i, std::size_t v) { return cohort.series[i][v]; }, lengths,
        detail::needs_subsamples(cfg), cfg.threads);
}

/// Runs the full sweep and writes the output tree (see pipeline.hpp). For
/// parameter inputs, ground_truth_lambda.csv is written alongside.
inline SweepResult cmd_sweep(const RunConfig& cfg) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> lengths;
    std::optional<GenerativeParams> params;
    const CohortEstimates est = sweep_estimates(cfg, lengths, params);

    SweepOptions opt;
    opt.methods = cfg.methods;
    opt.kinds = cfg.kinds;
    opt.guard = cfg.guard;
    opt.fisher_z = cfg.fisher_z;
    opt.threads = cfg.threads;
    SweepResult res = run_sweep(est, opt);

    detail::write_staged(cfg.output_dir, [&](const fs::path& dir) {
        write_sweep_outputs(res, dir, detail::config_echo(cfg, lengths));
        if (params) csv::write_file(dir / "ground_truth_lambda.csv", detail::lambda_table_csv(*params));
    });
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    std::clog << "sweep: " << res.subject_ids.size() << " subjects, " << lengths.size() << " scan lengths, "
              << res.summaries.size() << " cells in " << elapsed.count() << " s\n";
    return res;
}

// ---------------------------------------------------------------------------
// report

namespace detail {

inline std::vector<std::vector<std::string>> read_table(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : csv::read_lines(path)) {
        std::vector<std::string> row;
        for (auto cell : csv::split(line)) row.emplace_back(csv::trim(cell));
        rows.push_back(std::move(row));
    }
    if (!rows.empty()) rows.erase(rows.begin());
    return rows;
}

}  // namespace detail

/// Long-format table "method,kind,scan_length,level,key,value" built from a
/// finished run. Reliability values are copied verbatim from the summary
/// files; rows with level "lambda" carry the median shrinkage weight (kind
/// "none").
inline std::string report_csv(const fs::path& run_dir) {
    const fs::path summary_path = run_dir / "run_summary.json";
    if (!fs::exists(run_dir) || !fs::exists(summary_path)) {
        throw Error(Errc::MissingRun, "no completed run in " + run_dir.string());
    }
    const auto doc = read_json(summary_path);
    std::string out = "method,kind,scan_length,level,key,value\n";

    for (const auto& row : detail::read_table(run_dir / doc.at("omnibus").get<std::string>())) {
        if (row.size() != 4) throw Error(Errc::SchemaError, "malformed omnibus table");
        out += row[0] + ',' + row[1] + ',' + row[2] + ",omnibus,all," + row[3] + '\n';
    }
    for (const auto& cell : doc.at("cells")) {
        const std::string prefix = cell.at("method").get<std::string>() + ',' + cell.at("kind").get<std::string>() +
                                   ',' + std::to_string(cell.at("scan_length").get<std::size_t>()) + ',';
        for (const auto& row : detail::read_table(run_dir / cell.at("seed").get<std::string>())) {
            out += prefix + "seed," + row.at(0) + ',' + row.at(1) + '\n';
        }
        for (const auto& row : detail::read_table(run_dir / cell.at("edge").get<std::string>())) {
            out += prefix + "edge," + row.at(0) + ':' + row.at(1) + ',' + row.at(2) + '\n';
        }
    }
    for (const auto& s : doc.at("shrinkage")) {
        std::vector<double> lambdas;
        for (const auto& row : detail::read_table(run_dir / s.at("file").get<std::string>())) {
            auto v = csv::parse_double(row.at(6));
            if (!v) throw Error(Errc::ParseError, "bad lambda in " + s.at("file").get<std::string>());
            lambdas.push_back(*v);
        }
        out += s.at("method").get<std::string>() + ",none," +
               std::to_string(s.at("scan_length").get<std::size_t>()) + ",lambda,median," +
               csv::format_optional(median(lambdas)) + '\n';
    }
    return out;
}

inline void cmd_report(const fs::path& run_dir, const std::optional<fs::path>& output = std::nullopt) {
    const std::string table = report_csv(run_dir);
    csv::write_file(output.value_or(run_dir / "report.csv"), table);
}

}  // namespace fcshrink::cli
