#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/csv.hpp"
#include "fcshrink/error.hpp"

namespace fcshrink {

enum class ComponentMethod { Oracle, SingleSession };

constexpr std::string_view to_string(ComponentMethod m) noexcept {
    return m == ComponentMethod::Oracle ? "oracle" : "single_session";
}

/// Bits of VarianceComponents::clamped.
enum ClampFlag : std::uint8_t {
    kClampNone = 0,
    kClampState = 1,    // split-half state variance estimate was negative
    kClampBetween = 2,  // between-subject variance estimate was negative
};

/// Per-edge variance decomposition of observed connectivity estimates.
///
/// After clamping, between_var + sampling_var + state_var == total_var for
/// every edge. When the between-subject estimate would be negative it is set
/// to zero and the within-subject terms (state first, then sampling) are
/// reduced to absorb the shortfall.
struct VarianceComponents {
    std::vector<double> between_var;
    std::vector<double> sampling_var;
    std::vector<double> state_var;
    std::vector<double> total_var;
    std::vector<std::uint8_t> clamped;
    ComponentMethod method = ComponentMethod::Oracle;
    EdgeVector group_mean;

    std::size_t size() const noexcept { return total_var.size(); }

    std::size_t clamp_count(ClampFlag flag) const {
        return static_cast<std::size_t>(std::count_if(clamped.begin(), clamped.end(),
                                                      [flag](std::uint8_t c) { return (c & flag) != 0; }));
    }
};

struct ShrinkageWeights {
    std::vector<double> lambda;
    EdgeVector target;
};

namespace detail {

/// Unbiased (n-1) variance with a fixed left-to-right summation order.
inline double unbiased_variance(std::span<const double> x) {
    const std::size_t n = x.size();
    double sum = 0.0;
    for (double v : x) sum += v;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(n - 1);
}

inline void check_cohort(std::span<const EdgeVector> list, std::size_t n, std::size_t m,
                         std::string_view name) {
    if (list.size() != n) {
        throw Error(Errc::ShapeMismatch, std::string(name) + " lists " + std::to_string(list.size()) +
                                             " subjects, expected " + std::to_string(n));
    }
    for (const auto& e : list) {
        if (e.size() != m) {
            throw Error(Errc::ShapeMismatch, std::string(name) + " has an edge vector of length " +
                                                 std::to_string(e.size()) + ", expected " +
                                                 std::to_string(m));
        }
    }
}

/// Cross-subject unbiased variance of (a_i - b_i) at edge k.
inline double difference_variance(std::span<const EdgeVector> a, std::span<const EdgeVector> b,
                                  std::size_t k, std::vector<double>& scratch) {
    for (std::size_t i = 0; i < a.size(); ++i) scratch[i] = a[i].values[k] - b[i].values[k];
    return unbiased_variance(scratch);
}

inline double edge_variance(std::span<const EdgeVector> a, std::size_t k, std::vector<double>& scratch) {
    for (std::size_t i = 0; i < a.size(); ++i) scratch[i] = a[i].values[k];
    return unbiased_variance(scratch);
}

/// Sets between = total - sampling - state, clamping at zero and removing
/// any shortfall from state and then sampling.
inline void close_decomposition(VarianceComponents& vc, std::size_t k) {
    const double between = vc.total_var[k] - vc.sampling_var[k] - vc.state_var[k];
    if (between >= 0.0) {
        vc.between_var[k] = between;
        return;
    }
    vc.clamped[k] |= kClampBetween;
    vc.between_var[k] = 0.0;
    double excess = -between;
    const double from_state = std::min(excess, vc.state_var[k]);
    vc.state_var[k] -= from_state;
    excess -= from_state;
    vc.sampling_var[k] = std::max(0.0, vc.sampling_var[k] - excess);
}

inline VarianceComponents allocate(std::size_t m, ComponentMethod method) {
    VarianceComponents vc;
    vc.between_var.assign(m, 0.0);
    vc.sampling_var.assign(m, 0.0);
    vc.state_var.assign(m, 0.0);
    vc.total_var.assign(m, 0.0);
    vc.clamped.assign(m, kClampNone);
    vc.method = method;
    return vc;
}

}  // namespace detail

/// Per-edge unbiased cross-subject variance of (a_i - b_i); needs n >= 2.
inline std::vector<double> difference_variance(std::span<const EdgeVector> a,
                                               std::span<const EdgeVector> b) {
    if (a.size() < 2) {
        throw Error(Errc::TooFewSubjects, "difference variance needs n >= 2");
    }
    const std::size_t m = a.front().size();
    detail::check_cohort(a, a.size(), m, "first operand");
    detail::check_cohort(b, a.size(), m, "second operand");
    std::vector<double> out(m), scratch(a.size());
    for (std::size_t k = 0; k < m; ++k) out[k] = detail::difference_variance(a, b, k, scratch);
    return out;
}

/// Two-visit ("oracle") decomposition. The sampling term absorbs any
/// session-to-session signal change, so state_var is zero. The group mean
/// stored as the shrinkage target is the visit-1 mean.
inline VarianceComponents estimate_oracle_components(std::span<const EdgeVector> visit1,
                                                     std::span<const EdgeVector> visit2) {
    const std::size_t n = visit1.size();
    if (n < 3) {
        throw Error(Errc::TooFewSubjects, "oracle components need n >= 3, got " + std::to_string(n));
    }
    const std::size_t m = visit1.front().size();
    detail::check_cohort(visit1, n, m, "visit 1");
    detail::check_cohort(visit2, n, m, "visit 2");

    auto vc = detail::allocate(m, ComponentMethod::Oracle);
    std::vector<double> scratch(n);
    for (std::size_t k = 0; k < m; ++k) {
        const double v1 = detail::edge_variance(visit1, k, scratch);
        const double v2 = detail::edge_variance(visit2, k, scratch);
        vc.total_var[k] = 0.5 * (v1 + v2);
        vc.sampling_var[k] = 0.5 * detail::difference_variance(visit2, visit1, k, scratch);
        detail::close_decomposition(vc, k);
    }
    vc.group_mean = group_mean(visit1);
    return vc;
}

/// Single-session decomposition from odd/even and first/second-half
/// subsamples of the same session that produced `full`.
inline VarianceComponents estimate_single_session_components(std::span<const EdgeVector> full,
                                                             std::span<const EdgeVector> odd,
                                                             std::span<const EdgeVector> even,
                                                             std::span<const EdgeVector> first_half,
                                                             std::span<const EdgeVector> second_half) {
    const std::size_t n = full.size();
    if (n < 3) {
        throw Error(Errc::TooFewSubjects, "single-session components need n >= 3, got " + std::to_string(n));
    }
    const std::size_t m = full.front().size();
    detail::check_cohort(full, n, m, "full");
    detail::check_cohort(odd, n, m, "odd");
    detail::check_cohort(even, n, m, "even");
    detail::check_cohort(first_half, n, m, "first half");
    detail::check_cohort(second_half, n, m, "second half");

    auto vc = detail::allocate(m, ComponentMethod::SingleSession);
    std::vector<double> scratch(n);
    for (std::size_t k = 0; k < m; ++k) {
        const double sampling = 0.25 * detail::difference_variance(odd, even, k, scratch);
        const double state = 0.5 * detail::difference_variance(first_half, second_half, k, scratch) -
                             2.0 * sampling;
        vc.sampling_var[k] = sampling;
        if (state < 0.0) {
            vc.state_var[k] = 0.0;
            vc.clamped[k] |= kClampState;
        } else {
            vc.state_var[k] = state;
        }
        vc.total_var[k] = detail::edge_variance(full, k, scratch);
        detail::close_decomposition(vc, k);
    }
    vc.group_mean = group_mean(full);
    return vc;
}

/// Per-edge shrinkage weight: within-subject variance over total variance,
/// clipped to [0, 1], zero when the denominator vanishes.
inline ShrinkageWeights compute_lambda(const VarianceComponents& vc) {
    ShrinkageWeights w;
    w.lambda.resize(vc.size());
    for (std::size_t k = 0; k < vc.size(); ++k) {
        const double within = vc.sampling_var[k] + vc.state_var[k];
        const double denom = vc.method == ComponentMethod::SingleSession
                                 ? vc.total_var[k]
                                 : vc.sampling_var[k] + vc.between_var[k];
        w.lambda[k] = denom > 0.0 ? std::clamp(within / denom, 0.0, 1.0) : 0.0;
    }
    w.target = vc.group_mean;
    return w;
}

/// lambda * target + (1 - lambda) * subject, edge by edge.
inline EdgeVector apply_shrinkage(const EdgeVector& subject, const ShrinkageWeights& weights) {
    if (subject.size() != weights.lambda.size() || subject.size() != weights.target.size()) {
        throw Error(Errc::ShapeMismatch, "subject and shrinkage weights differ in edge count");
    }
    EdgeVector out = subject;
    for (std::size_t k = 0; k < subject.size(); ++k) {
        const double l = weights.lambda[k];
        out.values[k] = l * weights.target.values[k] + (1.0 - l) * subject.values[k];
    }
    return out;
}

inline std::string components_to_csv(const VarianceComponents& vc, const ShrinkageWeights& w,
                                      const std::vector<std::string>& region_ids) {
    std::string out = "region_a,region_b,between_var,sampling_var,state_var,total_var,lambda,clamped\n";
    const std::size_t q = vc.group_mean.q;
    std::size_t k = 0;
    for (std::size_t a = 0; a < q; ++a) {
        for (std::size_t b = a + 1; b < q; ++b, ++k) {
            out += region_ids[a];
            out += ',';
            out += region_ids[b];
            for (double v : {vc.between_var[k], vc.sampling_var[k], vc.state_var[k], vc.total_var[k],
                             w.lambda[k]}) {
                out += ',';
                out += csv::format_double(v);
            }
            out += ',';
            out += std::to_string(static_cast<int>(vc.clamped[k]));
            out += '\n';
        }
    }
    return out;
}

}  // namespace fcshrink
