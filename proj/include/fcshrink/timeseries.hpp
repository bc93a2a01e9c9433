#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"

namespace fcshrink {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::vector<std::string> default_region_ids(std::size_t q) {
    std::vector<std::string> ids;
    ids.reserve(q);
    for (std::size_t i = 0; i < q; ++i) ids.push_back("R" + std::to_string(i));
    return ids;
}

/// One subject-visit's regional time courses: T rows (volumes) by Q columns
/// (regions).
struct TimeSeriesMatrix {
    Matrix data;
    std::vector<std::string> region_ids;
    double tr_seconds = 1.0;

    TimeSeriesMatrix() = default;
    TimeSeriesMatrix(Matrix values, std::vector<std::string> ids, double tr)
        : data(std::move(values)), region_ids(std::move(ids)), tr_seconds(tr) {
        if (region_ids.empty()) region_ids = default_region_ids(static_cast<std::size_t>(data.cols()));
        validate();
    }

    std::size_t n_volumes() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t n_regions() const { return static_cast<std::size_t>(data.cols()); }

    void validate() const {
        if (data.rows() < 2 || data.cols() < 2) {
            throw Error(Errc::ShapeError, "time series needs T >= 2 and Q >= 2, got " +
                                              std::to_string(data.rows()) + "x" +
                                              std::to_string(data.cols()));
        }
        if (region_ids.size() != n_regions()) {
            throw Error(Errc::ShapeError, "region id count does not match column count");
        }
        if (!data.allFinite()) {
            throw Error(Errc::NonFinite, "time series contains non-finite entries");
        }
        if (!(tr_seconds > 0.0) || !std::isfinite(tr_seconds)) {
            throw Error(Errc::OutOfRange, "tr_seconds must be positive");
        }
    }

    friend bool operator==(const TimeSeriesMatrix& a, const TimeSeriesMatrix& b) {
        return a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
               a.data == b.data && a.region_ids == b.region_ids && a.tr_seconds == b.tr_seconds;
    }
};

/// Group spatial maps, V locations by Q components.
struct SpatialMaps {
    Matrix maps;
};

enum class SubsampleScheme { OddEven, FirstSecondHalf };

// ---------------------------------------------------------------------------
// Manifest

struct VisitRecord {
    int visit_id = 1;
    std::filesystem::path path;
    std::size_t n_volumes = 0;
    double tr_seconds = 1.0;
};

struct SubjectRecord {
    std::string subject_id;
    std::vector<VisitRecord> visits;

    const VisitRecord* visit(int id) const {
        for (const auto& v : visits)
            if (v.visit_id == id) return &v;
        return nullptr;
    }
};

/// Manifest document (JSON):
///
///   { "header": false,
///     "subjects": [ { "subject_id": "S001",
///                     "visits": [ { "visit_id": 1, "path": "S001_v1.csv",
///                                   "n_volumes": 2400, "tr_seconds": 0.72 } ] } ] }
///
/// Relative visit paths resolve against the manifest's directory. "header"
/// is optional and says whether every CSV starts with a region-id row.
struct ScanManifest {
    std::vector<SubjectRecord> subjects;
    bool has_header = false;
};

namespace detail {

inline std::size_t count_data_rows(const std::filesystem::path& path, bool has_header) {
    const auto lines = csv::read_lines(path);
    const std::size_t skip = has_header && !lines.empty() ? 1 : 0;
    return lines.size() - skip;
}

template <typename T>
T require_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw Error(Errc::SchemaError, where + ": missing field '" + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(Errc::SchemaError, where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const ScanManifest& manifest) {
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : manifest.subjects) {
        nlohmann::json visits = nlohmann::json::array();
        for (const auto& v : s.visits) {
            visits.push_back({{"visit_id", v.visit_id},
                              {"path", v.path.generic_string()},
                              {"n_volumes", v.n_volumes},
                              {"tr_seconds", v.tr_seconds}});
        }
        subjects.push_back({{"subject_id", s.subject_id}, {"visits", visits}});
    }
    return {{"header", manifest.has_header}, {"subjects", subjects}};
}

/// Parses and validates a manifest. When `check_files` is set, every
/// referenced CSV must exist and have exactly n_volumes data rows.
inline ScanManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(csv::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::SchemaError, path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array()) {
        throw Error(Errc::SchemaError, path.string() + ": expected an object with a 'subjects' array");
    }
    const auto base = path.parent_path();

    ScanManifest manifest;
    if (doc.contains("header")) {
        if (!doc["header"].is_boolean()) throw Error(Errc::SchemaError, "'header' must be a boolean");
        manifest.has_header = doc["header"].get<bool>();
    }

    std::set<std::string> seen_subjects;
    for (const auto& s : doc["subjects"]) {
        SubjectRecord rec;
        rec.subject_id = detail::require_field<std::string>(s, "subject_id", "subject");
        const std::string where = "subject " + rec.subject_id;
        if (!seen_subjects.insert(rec.subject_id).second) {
            throw Error(Errc::DuplicateId, "subject_id '" + rec.subject_id + "' listed twice");
        }
        if (!s.contains("visits") || !s["visits"].is_array() || s["visits"].empty()) {
            throw Error(Errc::SchemaError, where + ": 'visits' must be a non-empty array");
        }
        std::set<int> seen_visits;
        for (const auto& v : s["visits"]) {
            VisitRecord vr;
            vr.visit_id = detail::require_field<int>(v, "visit_id", where);
            if (vr.visit_id != 1 && vr.visit_id != 2) {
                throw Error(Errc::SchemaError, where + ": visit_id must be 1 or 2");
            }
            if (!seen_visits.insert(vr.visit_id).second) {
                throw Error(Errc::DuplicateId, where + ": visit " + std::to_string(vr.visit_id) +
                                                   " listed twice");
            }
            std::filesystem::path p = detail::require_field<std::string>(v, "path", where);
            vr.path = p.is_absolute() ? p : base / p;
            const auto n = detail::require_field<long long>(v, "n_volumes", where);
            if (n < 2) throw Error(Errc::SchemaError, where + ": n_volumes must be >= 2");
            vr.n_volumes = static_cast<std::size_t>(n);
            vr.tr_seconds = detail::require_field<double>(v, "tr_seconds", where);
            if (!(vr.tr_seconds > 0.0)) {
                throw Error(Errc::SchemaError, where + ": tr_seconds must be positive");
            }
            if (check_files) {
                if (!std::filesystem::exists(vr.path)) {
                    throw Error(Errc::MissingFile, where + ": " + vr.path.string() + " not found");
                }
                const auto rows = detail::count_data_rows(vr.path, manifest.has_header);
                if (rows != vr.n_volumes) {
                    throw Error(Errc::SchemaError, where + ": " + vr.path.string() + " has " +
                                                       std::to_string(rows) + " rows, manifest says " +
                                                       std::to_string(vr.n_volumes));
                }
            }
            rec.visits.push_back(std::move(vr));
        }
        std::sort(rec.visits.begin(), rec.visits.end(),
                  [](const VisitRecord& a, const VisitRecord& b) { return a.visit_id < b.visit_id; });
        manifest.subjects.push_back(std::move(rec));
    }
    if (manifest.subjects.empty()) {
        throw Error(Errc::SchemaError, path.string() + ": no subjects listed");
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// CSV matrices

/// Reads a numeric CSV into a matrix. With `has_header` the first line is
/// returned through `header` instead of being parsed as numbers.
inline Matrix load_matrix_csv(const std::filesystem::path& path, bool has_header = false,
                              std::vector<std::string>* header = nullptr) {
    const auto lines = csv::read_lines(path);
    std::size_t first = 0;
    if (has_header) {
        if (lines.empty()) throw Error(Errc::ShapeError, path.string() + ": missing header row");
        if (header) {
            header->clear();
            for (auto cell : csv::split(lines[0])) header->emplace_back(csv::trim(cell));
        }
        first = 1;
    }
    const std::size_t rows = lines.size() - first;
    if (rows == 0) throw Error(Errc::ShapeError, path.string() + ": no data rows");

    std::size_t cols = csv::split(lines[first]).size();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto cells = csv::split(lines[first + r]);
        if (cells.size() != cols) {
            throw Error(Errc::ShapeError, path.string() + ": row " + std::to_string(r + 1) + " has " +
                                              std::to_string(cells.size()) + " columns, expected " +
                                              std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            auto v = csv::parse_double(cells[c]);
            if (!v) {
                throw Error(Errc::ParseError, path.string() + ": row " + std::to_string(r + 1) +
                                                  ", column " + std::to_string(c + 1) + ": '" +
                                                  std::string(csv::trim(cells[c])) + "'");
            }
            if (!std::isfinite(*v)) {
                throw Error(Errc::NonFinite, path.string() + ": row " + std::to_string(r + 1) +
                                                 ", column " + std::to_string(c + 1));
            }
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return m;
}

inline std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>* header = nullptr) {
    std::string out;
    if (header) {
        for (std::size_t c = 0; c < header->size(); ++c) {
            if (c) out += ',';
            out += (*header)[c];
        }
        out += '\n';
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out += ',';
            out += csv::format_double(m(r, c));
        }
        out += '\n';
    }
    return out;
}

inline TimeSeriesMatrix load_timeseries(const std::filesystem::path& path,
                                        std::optional<std::size_t> expected_q = std::nullopt,
                                        bool has_header = false, double tr_seconds = 1.0) {
    std::vector<std::string> ids;
    Matrix m = load_matrix_csv(path, has_header, &ids);
    if (expected_q && static_cast<std::size_t>(m.cols()) != *expected_q) {
        throw Error(Errc::ShapeError, path.string() + ": expected " + std::to_string(*expected_q) +
                                          " regions, found " + std::to_string(m.cols()));
    }
    if (has_header && ids.size() != static_cast<std::size_t>(m.cols())) {
        throw Error(Errc::ShapeError, path.string() + ": header width does not match data");
    }
    return TimeSeriesMatrix(std::move(m), std::move(ids), tr_seconds);
}

inline void save_timeseries(const std::filesystem::path& path, const TimeSeriesMatrix& ts,
                            bool with_header = false) {
    csv::write_file(path, matrix_to_csv(ts.data, with_header ? &ts.region_ids : nullptr));
}

// ---------------------------------------------------------------------------
// Operations

/// First `ell` volumes.
inline TimeSeriesMatrix truncate(const TimeSeriesMatrix& ts, std::size_t ell) {
    if (ell < 2 || ell > ts.n_volumes()) {
        throw Error(Errc::OutOfRange, "scan length " + std::to_string(ell) + " outside [2, " +
                                          std::to_string(ts.n_volumes()) + "]");
    }
    TimeSeriesMatrix out;
    out.data = ts.data.topRows(static_cast<Eigen::Index>(ell));
    out.region_ids = ts.region_ids;
    out.tr_seconds = ts.tr_seconds;
    return out;
}

/// 0-based row indices of the two halves selected by `scheme` for a series
/// of `t` volumes. Odd `t` drops the final volume so both halves have
/// floor(t/2) rows.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
subsample_indices(std::size_t t, SubsampleScheme scheme) {
    const std::size_t half = t / 2;
    std::vector<std::size_t> a(half), b(half);
    for (std::size_t k = 0; k < half; ++k) {
        if (scheme == SubsampleScheme::OddEven) {
            a[k] = 2 * k;      // volumes 1, 3, 5, ...
            b[k] = 2 * k + 1;  // volumes 2, 4, 6, ...
        } else {
            a[k] = k;
            b[k] = half + k;
        }
    }
    return {std::move(a), std::move(b)};
}

inline std::pair<TimeSeriesMatrix, TimeSeriesMatrix> subsample(const TimeSeriesMatrix& ts,
                                                               SubsampleScheme scheme) {
    if (ts.n_volumes() < 4) {
        throw Error(Errc::OutOfRange, "subsampling needs T >= 4, got " + std::to_string(ts.n_volumes()));
    }
    auto [ia, ib] = subsample_indices(ts.n_volumes(), scheme);
    auto pick = [&](const std::vector<std::size_t>& idx) {
        TimeSeriesMatrix out;
        out.data.resize(static_cast<Eigen::Index>(idx.size()), ts.data.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.data.row(static_cast<Eigen::Index>(k)) = ts.data.row(static_cast<Eigen::Index>(idx[k]));
        }
        out.region_ids = ts.region_ids;
        out.tr_seconds = ts.tr_seconds;
        return out;
    };
    return {pick(ia), pick(ib)};
}

inline constexpr double kRankTolerance = 1e-10;

/// First stage of dual regression: per-volume least squares of the data on
/// the spatial maps (no intercept), i.e. data * maps * (maps' maps)^-1.
/// Returns the raw T x Q coefficient matrix.
inline Matrix dual_regression_coefficients(const Matrix& data, const SpatialMaps& maps) {
    const auto& m = maps.maps;
    if (data.cols() != m.rows()) {
        throw Error(Errc::ShapeMismatch, "data has " + std::to_string(data.cols()) +
                                             " locations, maps have " + std::to_string(m.rows()));
    }
    if (m.cols() < 1 || m.rows() < m.cols()) {
        throw Error(Errc::RankDeficient, "maps need V >= Q >= 1");
    }
    if (!data.allFinite() || !m.allFinite()) {
        throw Error(Errc::NonFinite, "dual regression inputs contain non-finite entries");
    }
    const Eigen::MatrixXd gram = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double largest = eig.eigenvalues().maxCoeff();
    const double smallest = eig.eigenvalues().minCoeff();
    if (!(largest > 0.0) || smallest < kRankTolerance * largest) {
        throw Error(Errc::RankDeficient, "maps' * maps is singular (eigenvalue ratio " +
                                             csv::format_double(largest > 0 ? smallest / largest : 0.0) +
                                             ")");
    }
    // gram * B' = maps' * data' for all volumes at once.
    const Eigen::MatrixXd rhs = m.transpose() * data.transpose();
    const Eigen::MatrixXd coef = gram.ldlt().solve(rhs);
    return coef.transpose();
}

inline TimeSeriesMatrix dual_regression_stage1(const Matrix& data, const SpatialMaps& maps,
                                               double tr_seconds = 1.0) {
    return TimeSeriesMatrix(dual_regression_coefficients(data, maps), {}, tr_seconds);
}

}  // namespace fcshrink
