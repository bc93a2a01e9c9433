#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"

namespace fcshrink {

enum class EstimateMethod { Raw, SingleSessionShrink, OracleShrink };
enum class ReliabilityKind { Intersession, EndPoint };

constexpr std::string_view to_string(EstimateMethod m) noexcept {
    switch (m) {
    case EstimateMethod::Raw: return "raw";
    case EstimateMethod::SingleSessionShrink: return "single_session";
    case EstimateMethod::OracleShrink: return "oracle";
    }
    return "?";
}

constexpr std::string_view to_string(ReliabilityKind k) noexcept {
    return k == ReliabilityKind::Intersession ? "intersession" : "endpoint";
}

inline std::optional<EstimateMethod> parse_method(std::string_view s) {
    if (s == "raw") return EstimateMethod::Raw;
    if (s == "single_session" || s == "single") return EstimateMethod::SingleSessionShrink;
    if (s == "oracle") return EstimateMethod::OracleShrink;
    return std::nullopt;
}

inline std::optional<ReliabilityKind> parse_kind(std::string_view s) {
    if (s == "intersession") return ReliabilityKind::Intersession;
    if (s == "endpoint" || s == "end_point") return ReliabilityKind::EndPoint;
    return std::nullopt;
}

inline constexpr double kDefaultGuard = 1e-12;

/// Per-edge absolute percent error as a fraction; nullopt marks an edge
/// whose reference magnitude fell below the guard.
using ApeVector = std::vector<std::optional<double>>;

inline ApeVector ape(const EdgeVector& estimate, const EdgeVector& reference, double guard = kDefaultGuard) {
    if (estimate.size() != reference.size()) {
        throw Error(Errc::ShapeMismatch, "estimate and reference differ in edge count");
    }
    if (!(guard > 0.0)) throw Error(Errc::OutOfRange, "APE guard must be positive");
    ApeVector out(estimate.size());
    for (std::size_t k = 0; k < estimate.size(); ++k) {
        const double denom = std::abs(reference.values[k]);
        if (denom >= guard) out[k] = std::abs(estimate.values[k] - reference.values[k]) / denom;
    }
    return out;
}

struct ReliabilityRecord {
    std::string subject_id;
    EstimateMethod method = EstimateMethod::Raw;
    ReliabilityKind kind = ReliabilityKind::Intersession;
    std::size_t scan_length = 0;
    ApeVector ape;
};

/// One subject's estimate for a (method, scan length) pair.
struct SubjectEstimate {
    std::string subject_id;
    EstimateMethod method = EstimateMethod::Raw;
    std::size_t scan_length = 0;
    EdgeVector estimate;
};

using ReferenceMap = std::map<std::string, EdgeVector, std::less<>>;

namespace detail {

inline std::vector<ReliabilityRecord> score(std::span<const SubjectEstimate> estimates,
                                            const ReferenceMap& references, ReliabilityKind kind,
                                            double guard) {
    std::vector<ReliabilityRecord> out;
    out.reserve(estimates.size());
    for (const auto& e : estimates) {
        auto it = references.find(e.subject_id);
        if (it == references.end()) {
            throw Error(Errc::MissingReference, "no " + std::string(to_string(kind)) +
                                                    " reference for subject " + e.subject_id);
        }
        out.push_back({e.subject_id, e.method, kind, e.scan_length, ape(e.estimate, it->second, guard)});
    }
    return out;
}

}  // namespace detail

/// Scores visit-1 estimates against each subject's full-length visit-2 raw
/// estimate, whatever the method that produced the visit-1 estimate.
inline std::vector<ReliabilityRecord> intersession_records(std::span<const SubjectEstimate> visit1_estimates,
                                                           const ReferenceMap& visit2_full_raw,
                                                           double guard = kDefaultGuard) {
    return detail::score(visit1_estimates, visit2_full_raw, ReliabilityKind::Intersession, guard);
}

/// Scores visit-1 estimates against the full-length raw estimate of the
/// same visit. Raw at full length therefore scores exactly zero.
inline std::vector<ReliabilityRecord> endpoint_records(std::span<const SubjectEstimate> visit1_estimates,
                                                       const ReferenceMap& visit1_full_raw,
                                                       double guard = kDefaultGuard) {
    return detail::score(visit1_estimates, visit1_full_raw, ReliabilityKind::EndPoint, guard);
}

/// Median by full sort; even counts take the midpoint of the central pair.
inline std::optional<double> median(std::vector<double> values) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

struct Cell {
    EstimateMethod method = EstimateMethod::Raw;
    ReliabilityKind kind = ReliabilityKind::Intersession;
    std::size_t scan_length = 0;

    friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct ReliabilitySummary {
    Cell cell;
    std::size_t q = 0;
    std::size_t n_subjects = 0;
    std::vector<std::optional<double>> edge_level;
    std::vector<std::optional<double>> seed_level;
    std::optional<double> omnibus;
    std::size_t excluded_entries = 0;  // undefined subject x edge APE values
    std::size_t excluded_edges = 0;    // edges with no defined value at all
    std::size_t excluded_seeds = 0;    // seeds with no defined incident edge
};

namespace detail {

inline std::vector<double> defined(std::span<const std::optional<double>> xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (const auto& x : xs)
        if (x) out.push_back(*x);
    return out;
}

}  // namespace detail

/// Seed-level medians over each region's incident edges.
inline std::vector<std::optional<double>> seed_medians(std::span<const std::optional<double>> edge_level,
                                                       std::size_t q) {
    std::vector<std::optional<double>> out(q);
    std::vector<std::optional<double>> incident;
    for (std::size_t s = 0; s < q; ++s) {
        incident.clear();
        for (std::size_t o = 0; o < q; ++o) {
            if (o == s) continue;
            incident.push_back(edge_level[edge_position(q, std::min(s, o), std::max(s, o))]);
        }
        out[s] = median(detail::defined(incident));
    }
    return out;
}

inline ReliabilitySummary summarize(std::span<const ReliabilityRecord> records, const Cell& cell) {
    std::vector<const ReliabilityRecord*> matching;
    for (const auto& r : records) {
        if (r.method == cell.method && r.kind == cell.kind && r.scan_length == cell.scan_length) {
            matching.push_back(&r);
        }
    }
    if (matching.empty()) {
        throw Error(Errc::EmptyCell, "no records for " + std::string(to_string(cell.method)) + "/" +
                                         std::string(to_string(cell.kind)) + "/" +
                                         std::to_string(cell.scan_length));
    }
    const std::size_t m = matching.front()->ape.size();
    const auto q = region_count_for(m);
    if (!q) throw Error(Errc::LengthError, "record length is not a valid edge count");

    ReliabilitySummary s;
    s.cell = cell;
    s.q = *q;
    s.n_subjects = matching.size();
    s.edge_level.resize(m);
    std::vector<double> column;
    column.reserve(matching.size());
    for (std::size_t k = 0; k < m; ++k) {
        column.clear();
        for (const auto* r : matching) {
            if (r->ape.size() != m) throw Error(Errc::ShapeMismatch, "records differ in edge count");
            if (r->ape[k]) {
                column.push_back(*r->ape[k]);
            } else {
                ++s.excluded_entries;
            }
        }
        s.edge_level[k] = median(column);
        if (!s.edge_level[k]) ++s.excluded_edges;
    }
    s.seed_level = seed_medians(s.edge_level, s.q);
    s.excluded_seeds = static_cast<std::size_t>(
        std::count_if(s.seed_level.begin(), s.seed_level.end(), [](const auto& v) { return !v; }));
    s.omnibus = median(detail::defined(s.edge_level));
    return s;
}

struct PercentChange {
    std::vector<std::optional<double>> edge_level;
    std::vector<std::optional<double>> seed_level;
    std::optional<double> omnibus;
};

/// 100 * (shrunk - raw) / raw at each level; negative values are improvements.
inline PercentChange percent_change(const ReliabilitySummary& shrunk, const ReliabilitySummary& raw) {
    if (shrunk.edge_level.size() != raw.edge_level.size() || shrunk.seed_level.size() != raw.seed_level.size()) {
        throw Error(Errc::ShapeMismatch, "summaries differ in shape");
    }
    auto change = [](const std::optional<double>& s, const std::optional<double>& r) -> std::optional<double> {
        if (!s || !r || *r == 0.0) return std::nullopt;
        return 100.0 * (*s - *r) / *r;
    };
    PercentChange pc;
    pc.edge_level.resize(raw.edge_level.size());
    for (std::size_t k = 0; k < raw.edge_level.size(); ++k)
        pc.edge_level[k] = change(shrunk.edge_level[k], raw.edge_level[k]);
    pc.seed_level.resize(raw.seed_level.size());
    for (std::size_t k = 0; k < raw.seed_level.size(); ++k)
        pc.seed_level[k] = change(shrunk.seed_level[k], raw.seed_level[k]);
    pc.omnibus = change(shrunk.omnibus, raw.omnibus);
    return pc;
}

// ---------------------------------------------------------------------------
// Output tables

inline std::string edge_summary_csv(const ReliabilitySummary& s, const std::vector<std::string>& ids) {
    std::string out = "region_a,region_b,median_ape\n";
    std::size_t k = 0;
    for (std::size_t a = 0; a < s.q; ++a)
        for (std::size_t b = a + 1; b < s.q; ++b, ++k)
            out += ids[a] + ',' + ids[b] + ',' + csv::format_optional(s.edge_level[k]) + '\n';
    return out;
}

inline std::string seed_summary_csv(const ReliabilitySummary& s, const std::vector<std::string>& ids) {
    std::string out = "region,median_ape\n";
    for (std::size_t a = 0; a < s.q; ++a) out += ids[a] + ',' + csv::format_optional(s.seed_level[a]) + '\n';
    return out;
}

inline std::string omnibus_row(const ReliabilitySummary& s) {
    return std::string(to_string(s.cell.method)) + ',' + std::string(to_string(s.cell.kind)) + ',' +
           std::to_string(s.cell.scan_length) + ',' + csv::format_optional(s.omnibus) + '\n';
}

inline constexpr std::string_view kOmnibusHeader = "method,kind,scan_length,median_ape\n";

/// Wide record table: one row per subject, one APE column per edge ("NA"
/// for undefined entries).
inline std::string records_csv(std::span<const ReliabilityRecord> records, const std::vector<std::string>& ids) {
    const std::size_t q = ids.size();
    std::string out = "subject_id";
    for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = a + 1; b < q; ++b) out += ',' + ids[a] + ':' + ids[b];
    out += '\n';
    for (const auto& r : records) {
        out += r.subject_id;
        for (const auto& v : r.ape) {
            out += ',';
            out += csv::format_optional(v);
        }
        out += '\n';
    }
    return out;
}

/// Inverse of `records_csv` for a single cell.
inline std::vector<ReliabilityRecord> load_records_csv(const std::filesystem::path& path, const Cell& cell) {
    const auto lines = csv::read_lines(path);
    if (lines.empty()) throw Error(Errc::SchemaError, path.string() + ": empty record table");
    const std::size_t width = csv::split(lines[0]).size();
    std::vector<ReliabilityRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = csv::split(lines[i]);
        if (cells.size() != width) throw Error(Errc::ShapeError, path.string() + ": ragged row " + std::to_string(i + 1));
        ReliabilityRecord r{std::string(csv::trim(cells[0])), cell.method, cell.kind, cell.scan_length, {}};
        r.ape.resize(width - 1);
        for (std::size_t k = 1; k < width; ++k) {
            if (csv::trim(cells[k]) == csv::kMissing) continue;
            auto v = csv::parse_double(cells[k]);
            if (!v) throw Error(Errc::ParseError, path.string() + ": bad APE on line " + std::to_string(i + 1));
            r.ape[k - 1] = *v;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace fcshrink
