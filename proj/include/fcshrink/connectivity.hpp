#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"
#include "fcshrink/timeseries.hpp"

namespace fcshrink {

constexpr std::size_t edge_count(std::size_t q) noexcept { return q * (q - 1) / 2; }

/// Position of edge (a, b), a < b, in the row-major upper-triangle order.
constexpr std::size_t edge_position(std::size_t q, std::size_t a, std::size_t b) noexcept {
    return a * q - a * (a + 1) / 2 + (b - a - 1);
}

/// Region count Q for a vector of `length` edges, if one exists.
inline std::optional<std::size_t> region_count_for(std::size_t length) {
    // Q(Q-1)/2 = length  =>  Q = (1 + sqrt(1 + 8 length)) / 2
    auto q = static_cast<std::size_t>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(length))) / 2.0));
    for (std::size_t cand : {q > 0 ? q - 1 : 0, q, q + 1}) {
        if (cand >= 2 && edge_count(cand) == length) return cand;
    }
    return std::nullopt;
}

struct EdgeIndex {
    std::size_t q = 0;
    std::size_t q_prime = 1;
};

/// Canonical list of edges for Q regions, in vector order.
inline std::vector<EdgeIndex> edge_list(std::size_t q) {
    std::vector<EdgeIndex> out;
    out.reserve(edge_count(q));
    for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = a + 1; b < q; ++b) out.push_back({a, b});
    return out;
}

/// Unique off-diagonal entries of a symmetric Q x Q matrix.
struct EdgeVector {
    std::vector<double> values;
    std::size_t q = 0;

    EdgeVector() = default;
    EdgeVector(std::vector<double> v, std::size_t regions) : values(std::move(v)), q(regions) {
        if (q < 2 || values.size() != edge_count(q)) {
            throw Error(Errc::LengthError, "edge vector of length " + std::to_string(values.size()) +
                                               " does not match Q = " + std::to_string(q));
        }
    }
    static EdgeVector filled(std::size_t regions, double value) {
        return EdgeVector(std::vector<double>(edge_count(regions), value), regions);
    }

    std::size_t size() const noexcept { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    friend bool operator==(const EdgeVector&, const EdgeVector&) = default;
};

struct ConnectivityMatrix {
    Matrix values;
    std::vector<std::string> region_ids;

    std::size_t n_regions() const { return static_cast<std::size_t>(values.rows()); }
};

/// Sample Pearson correlation between every pair of columns. Means are
/// removed per column; the (T-1) normalisations cancel.
inline ConnectivityMatrix pearson_matrix(const TimeSeriesMatrix& ts) {
    const auto t = static_cast<Eigen::Index>(ts.n_volumes());
    const auto q = static_cast<Eigen::Index>(ts.n_regions());
    if (t < 3) {
        throw Error(Errc::OutOfRange, "Pearson correlation needs T >= 3, got " + std::to_string(t));
    }

    Matrix centered(t, q);
    std::vector<double> norm(static_cast<std::size_t>(q));
    std::vector<std::string> degenerate;
    for (Eigen::Index c = 0; c < q; ++c) {
        double sum = 0.0;
        bool constant = true;
        const double first = ts.data(0, c);
        for (Eigen::Index r = 0; r < t; ++r) {
            sum += ts.data(r, c);
            constant = constant && ts.data(r, c) == first;
        }
        const double mean = sum / static_cast<double>(t);
        double ss = 0.0;
        for (Eigen::Index r = 0; r < t; ++r) {
            const double d = ts.data(r, c) - mean;
            centered(r, c) = d;
            ss += d * d;
        }
        if (constant || !(ss > 0.0)) {
            degenerate.push_back(ts.region_ids[static_cast<std::size_t>(c)]);
        }
        norm[static_cast<std::size_t>(c)] = std::sqrt(ss);
    }
    if (!degenerate.empty()) {
        std::string names;
        for (const auto& d : degenerate) names += (names.empty() ? "" : ", ") + d;
        throw Error(Errc::DegenerateColumn, "constant time course in region(s) " + names);
    }

    ConnectivityMatrix cm;
    cm.values = Matrix::Identity(q, q);
    cm.region_ids = ts.region_ids;
    for (Eigen::Index a = 0; a < q; ++a) {
        for (Eigen::Index b = a + 1; b < q; ++b) {
            double cross = 0.0;
            for (Eigen::Index r = 0; r < t; ++r) cross += centered(r, a) * centered(r, b);
            double rho = cross / (norm[static_cast<std::size_t>(a)] * norm[static_cast<std::size_t>(b)]);
            rho = std::clamp(rho, -1.0, 1.0);
            cm.values(a, b) = rho;
            cm.values(b, a) = rho;
        }
    }
    return cm;
}

inline EdgeVector vectorize(const ConnectivityMatrix& cm) {
    const std::size_t q = cm.n_regions();
    std::vector<double> v;
    v.reserve(edge_count(q));
    for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = a + 1; b < q; ++b)
            v.push_back(cm.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
    return EdgeVector(std::move(v), q);
}

inline ConnectivityMatrix devectorize(std::span<const double> values,
                                      std::vector<std::string> region_ids = {}) {
    const auto q = region_count_for(values.size());
    if (!q) {
        throw Error(Errc::LengthError, "length " + std::to_string(values.size()) +
                                           " is not Q(Q-1)/2 for any integer Q >= 2");
    }
    ConnectivityMatrix cm;
    cm.values = Matrix::Identity(static_cast<Eigen::Index>(*q), static_cast<Eigen::Index>(*q));
    std::size_t k = 0;
    for (std::size_t a = 0; a < *q; ++a) {
        for (std::size_t b = a + 1; b < *q; ++b, ++k) {
            cm.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = values[k];
            cm.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = values[k];
        }
    }
    cm.region_ids = region_ids.empty() ? default_region_ids(*q) : std::move(region_ids);
    return cm;
}

inline ConnectivityMatrix devectorize(const EdgeVector& ev, std::vector<std::string> region_ids = {}) {
    return devectorize(std::span<const double>(ev.values), std::move(region_ids));
}

/// Element-wise mean. Each edge is accumulated as deviations from its
/// smallest value, in ascending order, so the result is bit-identical under
/// any permutation of the subjects and exact when all subjects agree.
inline EdgeVector group_mean(std::span<const EdgeVector> estimates) {
    if (estimates.size() < 2) {
        throw Error(Errc::TooFewSubjects, "group mean needs n >= 2, got " + std::to_string(estimates.size()));
    }
    const std::size_t q = estimates.front().q;
    const std::size_t m = estimates.front().size();
    for (const auto& e : estimates) {
        if (e.q != q || e.size() != m) {
            throw Error(Errc::ShapeMismatch, "group mean over edge vectors of different size");
        }
    }
    const double n = static_cast<double>(estimates.size());
    std::vector<double> mean(m), column(estimates.size());
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < estimates.size(); ++i) column[i] = estimates[i].values[k];
        std::sort(column.begin(), column.end());
        const double anchor = column.front();
        double sum = 0.0;
        for (double v : column) sum += v - anchor;
        mean[k] = anchor + sum / n;
    }
    return EdgeVector(std::move(mean), q);
}

/// Fisher z-transform, atanh with the argument clamped just inside (-1, 1).
inline EdgeVector fisher_z(const EdgeVector& ev) {
    EdgeVector out = ev;
    constexpr double kLimit = 1.0 - 1e-15;
    for (auto& v : out.values) v = std::atanh(std::clamp(v, -kLimit, kLimit));
    return out;
}

inline EdgeVector inverse_fisher_z(const EdgeVector& ev) {
    EdgeVector out = ev;
    for (auto& v : out.values) v = std::tanh(v);
    return out;
}

// ---------------------------------------------------------------------------
// Edge CSV: "region_a,region_b,value" in canonical order.

inline std::string edges_to_csv(const EdgeVector& ev, const std::vector<std::string>& region_ids) {
    std::string out = "region_a,region_b,value\n";
    std::size_t k = 0;
    for (std::size_t a = 0; a < ev.q; ++a) {
        for (std::size_t b = a + 1; b < ev.q; ++b, ++k) {
            out += region_ids[a] + ',' + region_ids[b] + ',' + csv::format_double(ev.values[k]) + '\n';
        }
    }
    return out;
}

struct LabelledEdges {
    EdgeVector edges;
    std::vector<std::string> region_ids;
};

/// Reads an edge CSV written by `edges_to_csv`. Rows must be in canonical
/// order; region ids are recovered from the first Q-1 rows.
inline LabelledEdges load_edges_csv(const std::filesystem::path& path) {
    auto lines = csv::read_lines(path);
    if (!lines.empty() && csv::trim(lines.front()).starts_with("region_a")) lines.erase(lines.begin());
    const auto q = region_count_for(lines.size());
    if (!q) {
        throw Error(Errc::LengthError, path.string() + ": " + std::to_string(lines.size()) +
                                           " edges is not Q(Q-1)/2 for an integer Q");
    }
    std::vector<std::string> ids(*q);
    std::vector<double> values(lines.size());
    std::size_t k = 0;
    for (std::size_t a = 0; a < *q; ++a) {
        for (std::size_t b = a + 1; b < *q; ++b, ++k) {
            const auto cells = csv::split(lines[k]);
            if (cells.size() != 3) {
                throw Error(Errc::ShapeError, path.string() + ": line " + std::to_string(k + 2) +
                                                  " does not have 3 columns");
            }
            const std::string ra(csv::trim(cells[0])), rb(csv::trim(cells[1]));
            if (a == 0) {
                if (b == 1) ids[0] = ra;
                ids[b] = rb;
            }
            if (ra != ids[a] || rb != ids[b]) {
                throw Error(Errc::SchemaError, path.string() + ": edges are not in canonical order at line " +
                                                   std::to_string(k + 2));
            }
            auto v = csv::parse_double(cells[2]);
            if (!v) throw Error(Errc::ParseError, path.string() + ": bad value at line " + std::to_string(k + 2));
            if (!std::isfinite(*v)) throw Error(Errc::NonFinite, path.string() + ": line " + std::to_string(k + 2));
            values[k] = *v;
        }
    }
    return {EdgeVector(std::move(values), *q), std::move(ids)};
}

}  // namespace fcshrink
