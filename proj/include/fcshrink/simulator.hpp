#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/error.hpp"
#include "fcshrink/parallel.hpp"
#include "fcshrink/rng.hpp"
#include "fcshrink/timeseries.hpp"

namespace fcshrink {

/// Generative model for a synthetic cohort. Per edge:
///   long-term connectivity   Z_i ~ N(mu, between_var)
///   session deviation        W    ~ N(0, state_var)
///   sampling noise at ell    U    ~ N(0, sampling_coeff / ell)
struct GenerativeParams {
    std::size_t n_subjects = 0;
    std::size_t q = 0;
    EdgeVector mu;
    std::vector<double> between_var;
    std::vector<double> state_var;
    std::vector<double> sampling_coeff;
    std::vector<std::size_t> scan_lengths;
    std::uint64_t seed = 0;

    // Time-series level only.
    std::size_t t_total = 0;  // 0 means the largest scan length
    double tr_seconds = 0.72;
    std::size_t factor_rank = 0;           // 0 means Q
    std::optional<double> loading_sd;      // between-subject loading spread
    std::optional<double> state_loading_sd;

    std::size_t full_length() const { return t_total ? t_total : scan_lengths.back(); }
};

inline void validate(const GenerativeParams& p) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error(Errc::InvalidParams, field + ": " + why);
    };
    if (p.n_subjects < 1) fail("n_subjects", "must be >= 1");
    if (p.q < 2) fail("q", "must be >= 2");
    const std::size_t m = edge_count(p.q);
    if (p.mu.size() != m) fail("mu", "expected " + std::to_string(m) + " edges");
    for (double v : p.mu.values)
        if (!(v > -1.0 && v < 1.0)) fail("mu", "entries must lie in (-1, 1)");
    auto check_var = [&](const std::vector<double>& v, const char* name) {
        if (v.size() != m) fail(name, "expected " + std::to_string(m) + " edges");
        for (double x : v)
            if (!(x >= 0.0) || !std::isfinite(x)) fail(name, "must be finite and >= 0");
    };
    check_var(p.between_var, "between_var");
    check_var(p.state_var, "state_var");
    check_var(p.sampling_coeff, "sampling_coeff");
    if (p.scan_lengths.empty()) fail("scan_lengths", "must not be empty");
    for (std::size_t k = 0; k < p.scan_lengths.size(); ++k) {
        if (p.scan_lengths[k] < 2) fail("scan_lengths", "each length must be >= 2");
        if (k && p.scan_lengths[k] <= p.scan_lengths[k - 1]) fail("scan_lengths", "must be strictly increasing");
    }
    if (p.t_total && p.t_total < p.scan_lengths.back()) fail("t_total", "must be >= the largest scan length");
    if (!(p.tr_seconds > 0.0)) fail("tr_seconds", "must be positive");
    if (p.factor_rank > p.q) fail("factor_rank", "must be <= q");
    if (p.loading_sd && !(*p.loading_sd >= 0.0)) fail("loading_sd", "must be >= 0");
    if (p.state_loading_sd && !(*p.state_loading_sd >= 0.0)) fail("state_loading_sd", "must be >= 0");
}

/// Population shrinkage weight at scan length `ell`.
inline std::vector<double> ground_truth_lambda(const GenerativeParams& p, std::size_t ell) {
    validate(p);
    if (ell < 2) throw Error(Errc::InvalidParams, "ell: must be >= 2");
    std::vector<double> out(p.mu.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double within = p.state_var[k] + p.sampling_coeff[k] / static_cast<double>(ell);
        const double total = within + p.between_var[k];
        out[k] = total > 0.0 ? within / total : 0.0;
    }
    return out;
}

/// Estimates of one subject-visit at one scan length.
struct SubsampleEstimates {
    EdgeVector full, odd, even, first_half, second_half;
};

struct SyntheticSubject {
    std::string subject_id;
    EdgeVector long_term;                                  // Z_i
    std::array<EdgeVector, 2> session_deviation;           // W_{i,Omega} per visit
    std::array<std::vector<SubsampleEstimates>, 2> by_length;  // [visit][scan length index]
};

struct SyntheticCohort {
    GenerativeParams params;
    std::vector<SyntheticSubject> subjects;
};

inline std::string subject_label(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "S%04zu", i + 1);
    return buf;
}

namespace detail {

enum StreamComponent : std::uint64_t {
    kLongTerm = 1,
    kSessionState = 2,
    kNestedNoise = 3,
    kHalves = 4,
    kLoadings = 5,
    kStateLoadings = 6,
    kSamples = 7,
};

}  // namespace detail

/// Draws a cohort directly at the level of edge estimates.
///
/// Within a visit the odd and even noise sums are built from independent
/// increments over the scan-length grid, so the estimate at a shorter length
/// is nested inside the estimate at a longer one (both share their first
/// volumes). At length ell the odd and even noises each have variance
/// 2c/ell and the full-sample noise, their average, has variance c/ell.
/// Half-session estimates draw their own session deviations and noise.
inline SyntheticCohort simulate_parameter_level(const GenerativeParams& params, std::size_t threads = 1) {
    validate(params);
    const std::size_t m = params.mu.size();
    const auto& lengths = params.scan_lengths;

    SyntheticCohort cohort;
    cohort.params = params;
    cohort.subjects.resize(params.n_subjects);

    parallel_for(params.n_subjects, threads, [&](std::size_t i) {
        SyntheticSubject& s = cohort.subjects[i];
        s.subject_id = subject_label(i);

        RandomStream latent(params.seed, {i, 0, detail::kLongTerm});
        s.long_term = params.mu;
        for (std::size_t k = 0; k < m; ++k) s.long_term[k] += std::sqrt(params.between_var[k]) * latent.normal();

        for (std::size_t v = 0; v < 2; ++v) {
            RandomStream state(params.seed, {i, v + 1, detail::kSessionState});
            RandomStream noise(params.seed, {i, v + 1, detail::kNestedNoise});
            RandomStream halves(params.seed, {i, v + 1, detail::kHalves});

            EdgeVector dev = EdgeVector::filled(params.q, 0.0);
            for (std::size_t k = 0; k < m; ++k) dev[k] = std::sqrt(params.state_var[k]) * state.normal();
            s.session_deviation[v] = dev;

            std::vector<double> odd_sum(m, 0.0), even_sum(m, 0.0);
            std::size_t prev = 0;
            auto& out = s.by_length[v];
            out.resize(lengths.size());
            for (std::size_t li = 0; li < lengths.size(); ++li) {
                const double ell = static_cast<double>(lengths[li]);
                const double block = static_cast<double>(lengths[li] - prev);
                prev = lengths[li];

                SubsampleEstimates est{s.long_term, s.long_term, s.long_term, s.long_term, s.long_term};
                for (std::size_t k = 0; k < m; ++k) {
                    const double c = params.sampling_coeff[k];
                    const double inc_sd = std::sqrt(c * block / 2.0);
                    odd_sum[k] += inc_sd * noise.normal();
                    even_sum[k] += inc_sd * noise.normal();
                    const double u_odd = odd_sum[k] / (ell / 2.0);
                    const double u_even = even_sum[k] / (ell / 2.0);
                    const double signal = s.long_term[k] + dev[k];
                    est.odd[k] = signal + u_odd;
                    est.even[k] = signal + u_even;
                    est.full[k] = signal + (odd_sum[k] + even_sum[k]) / ell;

                    const double w_sd = std::sqrt(params.state_var[k]);
                    const double u_sd = std::sqrt(2.0 * c / ell);
                    const double w1 = w_sd * halves.normal();
                    const double w2 = w_sd * halves.normal();
                    est.first_half[k] = s.long_term[k] + w1 + u_sd * halves.normal();
                    est.second_half[k] = s.long_term[k] + w2 + u_sd * halves.normal();
                }
                out[li] = std::move(est);
            }
        }
    });
    return cohort;
}

// ---------------------------------------------------------------------------
// Time-series level

struct TimeseriesCohort {
    GenerativeParams params;
    std::vector<std::string> subject_ids;
    std::vector<std::array<TimeSeriesMatrix, 2>> series;  // [subject][visit]
    std::vector<EdgeVector> long_term;                     // population correlation of each subject
    std::vector<std::array<EdgeVector, 2>> session;        // correlation actually used per visit
    EdgeVector shared;                                     // correlation implied by the fixed loadings
};

namespace detail {

inline Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd d = cov.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd c = d.asDiagonal() * cov * d.asDiagonal();
    c.diagonal().setOnes();
    return c;
}

inline EdgeVector upper_triangle(const Eigen::MatrixXd& c) {
    const auto q = static_cast<std::size_t>(c.rows());
    std::vector<double> v;
    v.reserve(edge_count(q));
    for (Eigen::Index a = 0; a < c.rows(); ++a)
        for (Eigen::Index b = a + 1; b < c.cols(); ++b) v.push_back(c(a, b));
    return EdgeVector(std::move(v), q);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Group loadings G (Q x k) from the top-k eigenpairs of the correlation
/// matrix with off-diagonals mu. Rows are scaled so every communality is at
/// most 0.95, leaving room for a unique variance.
inline Eigen::MatrixXd factor_loadings(const GenerativeParams& p) {
    const std::size_t k = p.factor_rank ? p.factor_rank : p.q;
    const ConnectivityMatrix target = devectorize(p.mu);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(target.values));
    const auto q = static_cast<Eigen::Index>(p.q);
    Eigen::MatrixXd g(q, static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
        const Eigen::Index col = q - 1 - static_cast<Eigen::Index>(j);  // eigenvalues ascend
        const double lam = std::max(0.0, eig.eigenvalues()(col));
        g.col(static_cast<Eigen::Index>(j)) = eig.eigenvectors().col(col) * std::sqrt(lam);
    }
    constexpr double kMaxCommunality = 0.95;
    const double largest = g.rowwise().squaredNorm().maxCoeff();
    if (largest > kMaxCommunality) g *= std::sqrt(kMaxCommunality / largest);
    return g;
}

/// Draws regional time series whose covariance follows a latent factor
/// model: loadings A = G + E_i (+ F_iv per visit), covariance A A' plus the
/// diagonal that restores unit variance under G, normalised to a
/// correlation matrix. Sampling variability comes from the finite series;
/// sampling_coeff is not used here.
inline TimeseriesCohort simulate_timeseries_level(const GenerativeParams& params, std::size_t threads = 1) {
    validate(params);
    const std::size_t t_total = params.full_length();
    const Eigen::MatrixXd g = factor_loadings(params);
    const Eigen::Index q = g.rows();
    const Eigen::Index k = g.cols();
    const Eigen::VectorXd communality = g.rowwise().squaredNorm();
    const Eigen::VectorXd unique = (Eigen::VectorXd::Ones(q) - communality).cwiseMax(0.05);
    const double mean_h = communality.mean() > 0 ? communality.mean() : 1.0;

    // A loading perturbation of sd tau moves an off-diagonal covariance by
    // roughly tau^2 (h_a + h_b), which sets the default spreads.
    const double tau_z = params.loading_sd.value_or(std::sqrt(detail::mean_of(params.between_var) / (2.0 * mean_h)));
    const double tau_w =
        params.state_loading_sd.value_or(std::sqrt(detail::mean_of(params.state_var) / (2.0 * mean_h)));

    TimeseriesCohort cohort;
    cohort.params = params;
    cohort.subject_ids.resize(params.n_subjects);
    cohort.series.resize(params.n_subjects);
    cohort.long_term.resize(params.n_subjects);
    cohort.session.resize(params.n_subjects);
    {
        Eigen::MatrixXd cov = g * g.transpose();
        cov.diagonal() += unique;
        cohort.shared = detail::upper_triangle(detail::to_correlation(cov));
    }
    const auto ids = default_region_ids(params.q);

    parallel_for(params.n_subjects, threads, [&](std::size_t i) {
        cohort.subject_ids[i] = subject_label(i);
        RandomStream loadings(params.seed, {i, 0, detail::kLoadings});
        Eigen::MatrixXd a = g;
        for (Eigen::Index r = 0; r < q; ++r)
            for (Eigen::Index c = 0; c < k; ++c) a(r, c) += tau_z * loadings.normal();
        {
            Eigen::MatrixXd cov = a * a.transpose();
            cov.diagonal() += unique;
            cohort.long_term[i] = detail::upper_triangle(detail::to_correlation(cov));
        }
        for (std::size_t v = 0; v < 2; ++v) {
            RandomStream state(params.seed, {i, v + 1, detail::kStateLoadings});
            Eigen::MatrixXd av = a;
            for (Eigen::Index r = 0; r < q; ++r)
                for (Eigen::Index c = 0; c < k; ++c) av(r, c) += tau_w * state.normal();
            Eigen::MatrixXd cov = av * av.transpose();
            cov.diagonal() += unique;
            const Eigen::MatrixXd corr = detail::to_correlation(cov);
            cohort.session[i][v] = detail::upper_triangle(corr);

            const Eigen::MatrixXd chol = corr.llt().matrixL();
            RandomStream samples(params.seed, {i, v + 1, detail::kSamples});
            Matrix data(static_cast<Eigen::Index>(t_total), q);
            Eigen::VectorXd z(q);
            for (std::size_t t = 0; t < t_total; ++t) {
                for (Eigen::Index r = 0; r < q; ++r) z(r) = samples.normal();
                data.row(static_cast<Eigen::Index>(t)) = (chol * z).transpose();
            }
            cohort.series[i][v] = TimeSeriesMatrix(std::move(data), ids, params.tr_seconds);
        }
    });
    return cohort;
}

// ---------------------------------------------------------------------------
// Parameter documents

namespace detail {

inline std::vector<double> per_edge(const nlohmann::json& doc, const char* key, std::size_t m,
                                    std::optional<double> fallback = std::nullopt) {
    if (!doc.contains(key)) {
        if (fallback) return std::vector<double>(m, *fallback);
        throw Error(Errc::InvalidParams, std::string(key) + ": missing");
    }
    const auto& v = doc.at(key);
    try {
        if (v.is_number()) return std::vector<double>(m, v.get<double>());
        auto out = v.get<std::vector<double>>();
        if (out.size() != m) {
            throw Error(Errc::InvalidParams, std::string(key) + ": expected " + std::to_string(m) + " edges");
        }
        return out;
    } catch (const nlohmann::json::exception&) {
        throw Error(Errc::InvalidParams, std::string(key) + ": must be a number or an array of numbers");
    }
}

}  // namespace detail

/// Reads simulation parameters. Per-edge fields (mu, between_var,
/// state_var, sampling_coeff) accept either one number for every edge or an
/// array in canonical edge order.
inline GenerativeParams params_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw Error(Errc::InvalidParams, "parameter document must be an object");
    GenerativeParams p;
    try {
        if (!doc.contains("n_subjects")) throw Error(Errc::InvalidParams, "n_subjects: missing");
        if (!doc.contains("q")) throw Error(Errc::InvalidParams, "q: missing");
        const auto n = doc.at("n_subjects").get<long long>();
        const auto q = doc.at("q").get<long long>();
        if (n < 1) throw Error(Errc::InvalidParams, "n_subjects: must be >= 1");
        if (q < 2) throw Error(Errc::InvalidParams, "q: must be >= 2");
        p.n_subjects = static_cast<std::size_t>(n);
        p.q = static_cast<std::size_t>(q);
        const std::size_t m = edge_count(p.q);
        p.mu = EdgeVector(detail::per_edge(doc, "mu", m), p.q);
        p.between_var = detail::per_edge(doc, "between_var", m);
        p.state_var = detail::per_edge(doc, "state_var", m, 0.0);
        p.sampling_coeff = detail::per_edge(doc, "sampling_coeff", m);
        if (doc.contains("scan_lengths")) {
            for (const auto& x : doc.at("scan_lengths")) {
                const auto l = x.get<long long>();
                if (l < 2) throw Error(Errc::InvalidParams, "scan_lengths: each length must be >= 2");
                p.scan_lengths.push_back(static_cast<std::size_t>(l));
            }
        } else {
            for (std::size_t l = 300; l <= 2400; l += 300) p.scan_lengths.push_back(l);
        }
        p.seed = doc.value("seed", std::uint64_t{0});
        const auto t_total = doc.value("t_total", 0LL);
        if (t_total < 0) throw Error(Errc::InvalidParams, "t_total: must be >= 0");
        p.t_total = static_cast<std::size_t>(t_total);
        p.tr_seconds = doc.value("tr_seconds", 0.72);
        const auto rank = doc.value("factor_rank", 0LL);
        if (rank < 0) throw Error(Errc::InvalidParams, "factor_rank: must be >= 0");
        p.factor_rank = static_cast<std::size_t>(rank);
        if (doc.contains("loading_sd")) p.loading_sd = doc.at("loading_sd").get<double>();
        if (doc.contains("state_loading_sd")) p.state_loading_sd = doc.at("state_loading_sd").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidParams, std::string("malformed parameter document: ") + e.what());
    }
    validate(p);
    return p;
}

inline nlohmann::json params_to_json(const GenerativeParams& p) {
    nlohmann::json doc = {{"n_subjects", p.n_subjects},
                          {"q", p.q},
                          {"mu", p.mu.values},
                          {"between_var", p.between_var},
                          {"state_var", p.state_var},
                          {"sampling_coeff", p.sampling_coeff},
                          {"scan_lengths", p.scan_lengths},
                          {"seed", p.seed},
                          {"t_total", p.t_total},
                          {"tr_seconds", p.tr_seconds},
                          {"factor_rank", p.factor_rank}};
    if (p.loading_sd) doc["loading_sd"] = *p.loading_sd;
    if (p.state_loading_sd) doc["state_loading_sd"] = *p.state_loading_sd;
    return doc;
}

}  // namespace fcshrink
