#pragma once

// Scan-length sweep: per-subject estimates at every scan length, shrinkage
// per method, and reliability summaries per (method, kind, scan length).

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"
#include "fcshrink/parallel.hpp"
#include "fcshrink/reliability.hpp"
#include "fcshrink/shrinkage.hpp"
#include "fcshrink/simulator.hpp"
#include "fcshrink/timeseries.hpp"

namespace fcshrink {

inline std::vector<std::size_t> default_scan_lengths() {
    std::vector<std::size_t> out;
    for (std::size_t l = 300; l <= 2400; l += 300) out.push_back(l);
    return out;
}

/// Raw estimates for a cohort, indexed [visit][scan length][subject].
/// `reference[v][i]` is the raw estimate from all volumes of visit v + 1.
struct CohortEstimates {
    std::vector<std::string> subject_ids;
    std::vector<std::string> region_ids;
    std::vector<std::size_t> scan_lengths;
    bool has_visit2 = false;
    bool has_subsamples = false;
    std::array<std::vector<std::vector<SubsampleEstimates>>, 2> by_visit;
    std::array<std::vector<EdgeVector>, 2> reference;

    std::size_t n_subjects() const { return subject_ids.size(); }
    std::size_t q() const { return region_ids.size(); }
};

inline CohortEstimates estimates_from_cohort(const SyntheticCohort& cohort) {
    CohortEstimates est;
    const auto& p = cohort.params;
    const std::size_t n = cohort.subjects.size();
    est.region_ids = default_region_ids(p.q);
    est.scan_lengths = p.scan_lengths;
    est.has_visit2 = true;
    est.has_subsamples = true;
    for (const auto& s : cohort.subjects) est.subject_ids.push_back(s.subject_id);
    for (std::size_t v = 0; v < 2; ++v) {
        est.by_visit[v].assign(p.scan_lengths.size(), std::vector<SubsampleEstimates>(n));
        est.reference[v].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& lengths = cohort.subjects[i].by_length[v];
            for (std::size_t li = 0; li < lengths.size(); ++li) est.by_visit[v][li][i] = lengths[li];
            est.reference[v][i] = lengths.back().full;
        }
    }
    return est;
}

/// Connectivity estimates of one truncated series (subsamples optional).
inline SubsampleEstimates estimate_series(const TimeSeriesMatrix& ts, bool with_subsamples) {
    SubsampleEstimates out;
    out.full = vectorize(pearson_matrix(ts));
    if (with_subsamples) {
        auto [odd, even] = subsample(ts, SubsampleScheme::OddEven);
        auto [first, second] = subsample(ts, SubsampleScheme::FirstSecondHalf);
        out.odd = vectorize(pearson_matrix(odd));
        out.even = vectorize(pearson_matrix(even));
        out.first_half = vectorize(pearson_matrix(first));
        out.second_half = vectorize(pearson_matrix(second));
    }
    return out;
}

/// Loads (or generates) the series for subject i, visit v (0 or 1).
using SeriesSource = std::function<TimeSeriesMatrix(std::size_t subject, std::size_t visit)>;

inline CohortEstimates estimates_from_series(std::vector<std::string> subject_ids, bool has_visit2,
                                             const SeriesSource& source, std::vector<std::size_t> scan_lengths,
                                             bool with_subsamples, std::size_t threads) {
    CohortEstimates est;
    const std::size_t n = subject_ids.size();
    est.subject_ids = std::move(subject_ids);
    est.scan_lengths = std::move(scan_lengths);
    est.has_visit2 = has_visit2;
    est.has_subsamples = with_subsamples;
    const std::size_t visits = has_visit2 ? 2 : 1;
    for (std::size_t v = 0; v < visits; ++v) {
        est.by_visit[v].assign(est.scan_lengths.size(), std::vector<SubsampleEstimates>(n));
        est.reference[v].resize(n);
    }
    std::vector<std::vector<std::string>> ids(n * visits);

    parallel_for(n * visits, threads, [&](std::size_t item) {
        const std::size_t i = item / visits;
        const std::size_t v = item % visits;
        try {
            const TimeSeriesMatrix ts = source(i, v);
            ids[item] = ts.region_ids;
            for (std::size_t li = 0; li < est.scan_lengths.size(); ++li) {
                // Subsamples are only needed for visit 1.
                est.by_visit[v][li][i] = estimate_series(truncate(ts, est.scan_lengths[li]), with_subsamples && v == 0);
            }
            est.reference[v][i] = vectorize(pearson_matrix(ts));
        } catch (const Error& e) {
            throw Error(e.code(), "subject " + est.subject_ids[i] + ", visit " + std::to_string(v + 1) + ": " + e.detail());
        }
    });
    for (const auto& r : ids) {
        if (r != ids.front()) throw Error(Errc::ShapeMismatch, "subjects disagree on region ids");
    }
    est.region_ids = ids.front();
    return est;
}

struct SweepOptions {
    std::vector<EstimateMethod> methods{EstimateMethod::Raw, EstimateMethod::SingleSessionShrink,
                                        EstimateMethod::OracleShrink};
    std::vector<ReliabilityKind> kinds{ReliabilityKind::Intersession, ReliabilityKind::EndPoint};
    double guard = kDefaultGuard;
    bool fisher_z = false;
    std::size_t threads = 1;
};

struct ShrinkageCell {
    EstimateMethod method;
    std::size_t scan_length;
    VarianceComponents components;
    ShrinkageWeights weights;
};

struct SweepResult {
    std::vector<std::string> subject_ids;
    std::vector<std::string> region_ids;
    std::vector<std::size_t> scan_lengths;
    std::vector<EstimateMethod> methods;
    std::vector<ReliabilityKind> kinds;
    std::vector<ShrinkageCell> shrinkage;              // one per (shrink method, scan length)
    std::map<Cell, std::vector<ReliabilityRecord>> records;
    std::map<Cell, ReliabilitySummary> summaries;

    const ReliabilitySummary& summary(EstimateMethod m, ReliabilityKind k, std::size_t ell) const {
        return summaries.at(Cell{m, k, ell});
    }
    const ShrinkageCell* shrinkage_cell(EstimateMethod m, std::size_t ell) const {
        for (const auto& c : shrinkage)
            if (c.method == m && c.scan_length == ell) return &c;
        return nullptr;
    }
};

namespace detail {

inline std::vector<EdgeVector> full_estimates(const std::vector<SubsampleEstimates>& v) {
    std::vector<EdgeVector> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(e.full);
    return out;
}

inline std::vector<EdgeVector> maybe_z(std::vector<EdgeVector> v, bool on) {
    if (on)
        for (auto& e : v) e = fisher_z(e);
    return v;
}

}  // namespace detail

/// Shrinks visit-1 estimates at every scan length and scores them.
///
/// Intersession reliability always uses the visit-2 raw full-length estimate
/// as the reference, including for oracle shrinkage whose components were
/// themselves estimated from both visits.
inline SweepResult run_sweep(const CohortEstimates& est, const SweepOptions& opt) {
    const bool wants_visit2 =
        std::find(opt.methods.begin(), opt.methods.end(), EstimateMethod::OracleShrink) != opt.methods.end() ||
        std::find(opt.kinds.begin(), opt.kinds.end(), ReliabilityKind::Intersession) != opt.kinds.end();
    if (wants_visit2 && !est.has_visit2) {
        throw Error(Errc::MissingVisit, "oracle shrinkage and intersession reliability need a second visit");
    }
    if (std::find(opt.methods.begin(), opt.methods.end(), EstimateMethod::SingleSessionShrink) != opt.methods.end() &&
        !est.has_subsamples) {
        throw Error(Errc::MissingReference, "single-session shrinkage needs subsample estimates");
    }
    if (opt.methods.empty() || opt.kinds.empty()) {
        throw Error(Errc::InvalidParams, "at least one method and one reliability kind are required");
    }

    SweepResult res;
    res.subject_ids = est.subject_ids;
    res.region_ids = est.region_ids;
    res.scan_lengths = est.scan_lengths;
    res.methods = opt.methods;
    res.kinds = opt.kinds;
    std::sort(res.methods.begin(), res.methods.end());
    std::sort(res.kinds.begin(), res.kinds.end());

    const std::size_t n = est.n_subjects();
    ReferenceMap refs[2];
    for (std::size_t v = 0; v < (est.has_visit2 ? 2u : 1u); ++v)
        for (std::size_t i = 0; i < n; ++i) refs[v].emplace(est.subject_ids[i], est.reference[v][i]);

    struct LengthOutput {
        std::vector<ShrinkageCell> shrinkage;
        std::vector<std::pair<Cell, std::vector<ReliabilityRecord>>> records;
    };
    std::vector<LengthOutput> per_length(est.scan_lengths.size());

    parallel_for(est.scan_lengths.size(), opt.threads, [&](std::size_t li) {
        const std::size_t ell = est.scan_lengths[li];
        const auto& v1 = est.by_visit[0][li];
        const auto v1_full = detail::full_estimates(v1);
        auto& out = per_length[li];

        for (EstimateMethod method : res.methods) {
            std::vector<EdgeVector> shrunk;
            if (method == EstimateMethod::Raw) {
                shrunk = v1_full;
            } else {
                const auto work = detail::maybe_z(v1_full, opt.fisher_z);
                VarianceComponents vc;
                if (method == EstimateMethod::OracleShrink) {
                    const auto v2 = detail::maybe_z(detail::full_estimates(est.by_visit[1][li]), opt.fisher_z);
                    vc = estimate_oracle_components(work, v2);
                } else {
                    std::vector<EdgeVector> odd, even, first, second;
                    for (const auto& e : v1) {
                        odd.push_back(e.odd);
                        even.push_back(e.even);
                        first.push_back(e.first_half);
                        second.push_back(e.second_half);
                    }
                    vc = estimate_single_session_components(work, detail::maybe_z(odd, opt.fisher_z),
                                                            detail::maybe_z(even, opt.fisher_z),
                                                            detail::maybe_z(first, opt.fisher_z),
                                                            detail::maybe_z(second, opt.fisher_z));
                }
                ShrinkageWeights w = compute_lambda(vc);
                shrunk.reserve(n);
                for (const auto& e : work) {
                    auto s = apply_shrinkage(e, w);
                    shrunk.push_back(opt.fisher_z ? inverse_fisher_z(s) : s);
                }
                out.shrinkage.push_back({method, ell, std::move(vc), std::move(w)});
            }

            std::vector<SubjectEstimate> scored;
            scored.reserve(n);
            for (std::size_t i = 0; i < n; ++i) scored.push_back({est.subject_ids[i], method, ell, shrunk[i]});
            for (ReliabilityKind kind : res.kinds) {
                auto recs = kind == ReliabilityKind::Intersession ? intersession_records(scored, refs[1], opt.guard)
                                                                  : endpoint_records(scored, refs[0], opt.guard);
                out.records.emplace_back(Cell{method, kind, ell}, std::move(recs));
            }
        }
    });

    for (auto& lo : per_length) {
        for (auto& s : lo.shrinkage) res.shrinkage.push_back(std::move(s));
        for (auto& [cell, recs] : lo.records) {
            res.summaries.emplace(cell, summarize(recs, cell));
            res.records.emplace(cell, std::move(recs));
        }
    }
    std::sort(res.shrinkage.begin(), res.shrinkage.end(), [](const ShrinkageCell& a, const ShrinkageCell& b) {
        return std::tie(a.method, a.scan_length) < std::tie(b.method, b.scan_length);
    });
    return res;
}

// ---------------------------------------------------------------------------
// Output tree
//
//   run_summary.json
//   variance/<method>_l<ell>.csv
//   records/<method>_<kind>_l<ell>.csv
//   summary/omnibus.csv
//   summary/edge/<method>_<kind>_l<ell>.csv
//   summary/seed/<method>_<kind>_l<ell>.csv
//   summary/percent_change.csv

inline std::string cell_stem(const Cell& c) {
    return std::string(to_string(c.method)) + "_" + std::string(to_string(c.kind)) + "_l" +
           std::to_string(c.scan_length);
}

inline std::string variance_stem(EstimateMethod m, std::size_t ell) {
    return std::string(to_string(m)) + "_l" + std::to_string(ell);
}

inline std::string percent_change_csv(const SweepResult& res) {
    std::string out = "method,kind,scan_length,level,key,value\n";
    const auto& ids = res.region_ids;
    for (const auto& [cell, shrunk] : res.summaries) {
        if (cell.method == EstimateMethod::Raw) continue;
        auto raw_it = res.summaries.find(Cell{EstimateMethod::Raw, cell.kind, cell.scan_length});
        if (raw_it == res.summaries.end()) continue;
        const PercentChange pc = percent_change(shrunk, raw_it->second);
        const std::string prefix = std::string(to_string(cell.method)) + ',' + std::string(to_string(cell.kind)) +
                                   ',' + std::to_string(cell.scan_length) + ',';
        out += prefix + "omnibus,all," + csv::format_optional(pc.omnibus) + '\n';
        for (std::size_t a = 0; a < ids.size(); ++a)
            out += prefix + "seed," + ids[a] + ',' + csv::format_optional(pc.seed_level[a]) + '\n';
        std::size_t k = 0;
        for (std::size_t a = 0; a < ids.size(); ++a)
            for (std::size_t b = a + 1; b < ids.size(); ++b, ++k)
                out += prefix + "edge," + ids[a] + ':' + ids[b] + ',' + csv::format_optional(pc.edge_level[k]) + '\n';
    }
    return out;
}

/// Writes every table plus run_summary.json. `config_echo` is embedded
/// verbatim and must not contain run-specific values (paths of the output,
/// thread counts) if byte-identical reruns are expected.
inline void write_sweep_outputs(const SweepResult& res, const std::filesystem::path& dir,
                                const nlohmann::json& config_echo) {
    namespace fs = std::filesystem;
    const auto& ids = res.region_ids;
    nlohmann::json cells = nlohmann::json::array();
    nlohmann::json shrink = nlohmann::json::array();

    for (const auto& sc : res.shrinkage) {
        const std::string rel = "variance/" + variance_stem(sc.method, sc.scan_length) + ".csv";
        csv::write_file(dir / rel, components_to_csv(sc.components, sc.weights, ids));
        shrink.push_back({{"method", to_string(sc.method)},
                          {"scan_length", sc.scan_length},
                          {"file", rel},
                          {"median_lambda", median(sc.weights.lambda).value_or(0.0)},
                          {"clamped_state", sc.components.clamp_count(kClampState)},
                          {"clamped_between", sc.components.clamp_count(kClampBetween)}});
    }

    std::string omnibus(kOmnibusHeader);
    for (const auto& [cell, s] : res.summaries) {
        const std::string stem = cell_stem(cell);
        const std::string rec_rel = "records/" + stem + ".csv";
        const std::string edge_rel = "summary/edge/" + stem + ".csv";
        const std::string seed_rel = "summary/seed/" + stem + ".csv";
        csv::write_file(dir / rec_rel, records_csv(res.records.at(cell), ids));
        csv::write_file(dir / edge_rel, edge_summary_csv(s, ids));
        csv::write_file(dir / seed_rel, seed_summary_csv(s, ids));
        omnibus += omnibus_row(s);
        nlohmann::json omni = s.omnibus ? nlohmann::json(*s.omnibus) : nlohmann::json(nullptr);
        cells.push_back({{"method", to_string(cell.method)},
                         {"kind", to_string(cell.kind)},
                         {"scan_length", cell.scan_length},
                         {"omnibus", omni},
                         {"records", rec_rel},
                         {"edge", edge_rel},
                         {"seed", seed_rel},
                         {"excluded_entries", s.excluded_entries},
                         {"excluded_edges", s.excluded_edges},
                         {"excluded_seeds", s.excluded_seeds}});
    }
    csv::write_file(dir / "summary/omnibus.csv", omnibus);
    csv::write_file(dir / "summary/percent_change.csv", percent_change_csv(res));

    nlohmann::json methods = nlohmann::json::array(), kinds = nlohmann::json::array();
    for (auto m : res.methods) methods.push_back(to_string(m));
    for (auto k : res.kinds) kinds.push_back(to_string(k));
    nlohmann::json doc = {{"config", config_echo},
                          {"n_subjects", res.subject_ids.size()},
                          {"regions", res.region_ids},
                          {"scan_lengths", res.scan_lengths},
                          {"methods", methods},
                          {"kinds", kinds},
                          {"cells", cells},
                          {"shrinkage", shrink},
                          {"omnibus", "summary/omnibus.csv"},
                          {"percent_change", "summary/percent_change.csv"}};
    csv::write_file(dir / "run_summary.json", doc.dump(2) + "\n");
}

}  // namespace fcshrink
