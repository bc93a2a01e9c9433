#include <catch_amalgamated.hpp>

#include <random>

#include "fcshrink/shrinkage.hpp"
#include "fcshrink/simulator.hpp"
#include "test_support.hpp"

using namespace fcshrink;

namespace {

std::vector<EdgeVector> single_edge(std::initializer_list<double> xs) {
    std::vector<EdgeVector> out;
    for (double x : xs) out.emplace_back(std::vector<double>{x}, 2);
    return out;
}

VarianceComponents components(ComponentMethod method, double between, double sampling, double state = 0.0) {
    VarianceComponents vc;
    vc.method = method;
    vc.between_var = {between};
    vc.sampling_var = {sampling};
    vc.state_var = {state};
    vc.total_var = {between + sampling + state};
    vc.clamped = {0};
    vc.group_mean = EdgeVector({0.0}, 2);
    return vc;
}

GenerativeParams flat_params(std::size_t n, std::size_t q, double mu, double z, double w, double c,
                             std::vector<std::size_t> lengths, std::uint64_t seed) {
    GenerativeParams p;
    p.n_subjects = n;
    p.q = q;
    p.mu = EdgeVector::filled(q, mu);
    p.between_var.assign(edge_count(q), z);
    p.state_var.assign(edge_count(q), w);
    p.sampling_coeff.assign(edge_count(q), c);
    p.scan_lengths = std::move(lengths);
    p.seed = seed;
    return p;
}

struct Lists {
    std::vector<EdgeVector> full, odd, even, first, second, visit2;
};

Lists lists_at(const SyntheticCohort& cohort, std::size_t li) {
    Lists l;
    for (const auto& s : cohort.subjects) {
        const auto& e = s.by_length[0][li];
        l.full.push_back(e.full);
        l.odd.push_back(e.odd);
        l.even.push_back(e.even);
        l.first.push_back(e.first_half);
        l.second.push_back(e.second_half);
        l.visit2.push_back(s.by_length[1][li].full);
    }
    return l;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("oracle components small cases", "[shrinkage]") {
    std::mt19937_64 rng(31);
    std::vector<EdgeVector> v1;
    for (int i = 0; i < 10; ++i) v1.push_back(fcshrink::testing::random_edges(rng, 4));
    const auto same = estimate_oracle_components(v1, v1);
    for (std::size_t k = 0; k < same.size(); ++k) {
        CHECK(same.sampling_var[k] == 0.0);
        CHECK(same.between_var[k] == same.total_var[k]);
        CHECK(same.state_var[k] == 0.0);
    }

    const auto a = single_edge({0.0, 0.0, 0.0});
    const auto b = single_edge({-2.0, 0.0, 2.0});
    const auto vc = estimate_oracle_components(a, b);
    CHECK(vc.sampling_var[0] == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(difference_variance(b, a)[0] == Catch::Approx(4.0).epsilon(1e-15));

    const auto two = single_edge({0.1, 0.2});
    CHECK_THROWS_AS(estimate_oracle_components(two, two), Error);
}

TEST_CASE("single-session components small cases", "[shrinkage]") {
    std::mt19937_64 rng(32);
    std::vector<EdgeVector> full, odd, first, second;
    for (int i = 0; i < 8; ++i) {
        full.push_back(fcshrink::testing::random_edges(rng, 3));
        odd.push_back(fcshrink::testing::random_edges(rng, 3));
        first.push_back(fcshrink::testing::random_edges(rng, 3));
        second.push_back(fcshrink::testing::random_edges(rng, 3));
    }
    const auto vc = estimate_single_session_components(full, odd, odd, first, second);
    for (double s : vc.sampling_var) CHECK(s == 0.0);

    // n = 2 is below the estimator's minimum; the variance arithmetic itself
    // is checked on the difference helper.
    const auto o = single_edge({2.0, -2.0});
    const auto e = single_edge({0.0, 0.0});
    const double var = difference_variance(o, e)[0];
    CHECK(var == Catch::Approx(8.0).epsilon(1e-15));
    CHECK(0.25 * var == Catch::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS(estimate_single_session_components(o, o, e, o, e), Error);
}

TEST_CASE("clamping keeps the decomposition additive", "[shrinkage][property]") {
    std::mt19937_64 rng(33);
    std::size_t clamped = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 3 + rep % 6;
        std::vector<EdgeVector> full, odd, even, first, second, v2;
        for (std::size_t i = 0; i < n; ++i) {
            full.push_back(fcshrink::testing::random_edges(rng, 4, -0.05, 0.05));
            odd.push_back(fcshrink::testing::random_edges(rng, 4));
            even.push_back(fcshrink::testing::random_edges(rng, 4));
            first.push_back(fcshrink::testing::random_edges(rng, 4));
            second.push_back(fcshrink::testing::random_edges(rng, 4));
            v2.push_back(fcshrink::testing::random_edges(rng, 4));
        }
        for (const auto& vc : {estimate_single_session_components(full, odd, even, first, second),
                               estimate_oracle_components(full, v2)}) {
            clamped += vc.clamp_count(kClampBetween);
            for (std::size_t k = 0; k < vc.size(); ++k) {
                REQUIRE(vc.between_var[k] >= 0.0);
                REQUIRE(vc.sampling_var[k] >= 0.0);
                REQUIRE(vc.state_var[k] >= 0.0);
                REQUIRE(std::abs(vc.between_var[k] + vc.sampling_var[k] + vc.state_var[k] - vc.total_var[k]) <=
                        1e-12 * std::max(1.0, vc.total_var[k]));
            }
            for (double l : compute_lambda(vc).lambda) {
                REQUIRE(l >= 0.0);
                REQUIRE(l <= 1.0);
            }
        }
    }
    CHECK(clamped > 0);
}

TEST_CASE("compute_lambda", "[shrinkage]") {
    CHECK(compute_lambda(components(ComponentMethod::Oracle, 0.5, 0.0)).lambda[0] == 0.0);
    CHECK(compute_lambda(components(ComponentMethod::SingleSession, 0.5, 0.0, 0.0)).lambda[0] == 0.0);
    CHECK(compute_lambda(components(ComponentMethod::Oracle, 0.0, 0.0)).lambda[0] == 0.0);
    CHECK(compute_lambda(components(ComponentMethod::Oracle, 0.2, 0.2)).lambda[0] == 0.5);
    CHECK(compute_lambda(components(ComponentMethod::Oracle, 1.0, 3.0)).lambda[0] == 0.75);
    CHECK(compute_lambda(components(ComponentMethod::SingleSession, 0.04, 0.02, 0.01)).lambda[0] ==
          Catch::Approx(0.03 / 0.07).epsilon(1e-14));
}

TEST_CASE("apply_shrinkage", "[shrinkage]") {
    const EdgeVector subject({0.8, -0.1, 0.3}, 3);
    ShrinkageWeights w{{0.0, 0.0, 0.0}, EdgeVector({0.4, 0.2, 0.0}, 3)};
    CHECK(apply_shrinkage(subject, w) == subject);
    w.lambda = {1.0, 1.0, 1.0};
    CHECK(apply_shrinkage(subject, w) == w.target);
    w.lambda = {0.25, 0.0, 0.0};
    CHECK(apply_shrinkage(subject, w)[0] == Catch::Approx(0.7).epsilon(1e-15));

    w.lambda = {0.5};
    CHECK_THROWS_AS(apply_shrinkage(subject, w), Error);
}

TEST_CASE("shrinkage is a convex combination", "[shrinkage][property]") {
    std::mt19937_64 rng(34);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const auto subject = fcshrink::testing::random_edges(rng, 6);
        ShrinkageWeights w{{}, fcshrink::testing::random_edges(rng, 6)};
        for (std::size_t k = 0; k < subject.size(); ++k) w.lambda.push_back(rep == 0 ? double(k % 2) : unit(rng));
        const auto out = apply_shrinkage(subject, w);
        for (std::size_t k = 0; k < subject.size(); ++k) {
            const double lo = std::min(subject[k], w.target[k]), hi = std::max(subject[k], w.target[k]);
            REQUIRE(out[k] >= lo);
            REQUIRE(out[k] <= hi);
        }
    }
}

TEST_CASE("mean of shrunk estimates equals the cohort mean", "[shrinkage][property]") {
    std::mt19937_64 rng(35);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<EdgeVector> subjects;
        for (int i = 0; i < 30; ++i) subjects.push_back(fcshrink::testing::random_edges(rng, 5));
        ShrinkageWeights w{{}, group_mean(subjects)};
        for (std::size_t k = 0; k < w.target.size(); ++k) w.lambda.push_back(unit(rng));
        std::vector<EdgeVector> shrunk;
        for (const auto& s : subjects) shrunk.push_back(apply_shrinkage(s, w));
        const auto m = group_mean(shrunk);
        for (std::size_t k = 0; k < m.size(); ++k) REQUIRE(std::abs(m[k] - w.target[k]) <= 1e-12);
    }
}

TEST_CASE("sampling variance ignores per-subject offsets", "[shrinkage][property]") {
    // Subject signal dominates so no edge is clamped; clamping would trim
    // sampling_var by an offset-dependent amount.
    std::mt19937_64 rng(36);
    std::normal_distribution<double> offset(0.0, 0.3), noise(0.0, 0.05);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 5 + rep;
        std::vector<EdgeVector> full, odd, even, first, second, v2;
        for (std::size_t i = 0; i < n; ++i) {
            const auto subject = fcshrink::testing::random_edges(rng, 4);
            for (auto* list : {&full, &odd, &even, &first, &second, &v2}) {
                EdgeVector e = subject;
                for (auto& x : e.values) x += noise(rng);
                list->push_back(std::move(e));
            }
        }
        const auto oracle = estimate_oracle_components(full, v2);
        const auto single = estimate_single_session_components(full, odd, even, first, second);
        const auto raw_diff = difference_variance(odd, even);

        for (std::size_t i = 0; i < n; ++i) {
            const double c = offset(rng);
            for (auto* list : {&full, &odd, &even, &first, &second, &v2})
                for (auto& x : (*list)[i].values) x += c;
        }
        const auto oracle2 = estimate_oracle_components(full, v2);
        const auto single2 = estimate_single_session_components(full, odd, even, first, second);
        const auto raw_diff2 = difference_variance(odd, even);
        REQUIRE(oracle.clamp_count(kClampBetween) + oracle2.clamp_count(kClampBetween) == 0);
        REQUIRE(single.clamp_count(kClampBetween) + single2.clamp_count(kClampBetween) == 0);
        for (std::size_t k = 0; k < oracle.size(); ++k) {
            REQUIRE(std::abs(oracle2.sampling_var[k] - oracle.sampling_var[k]) <= 1e-12);
            REQUIRE(std::abs(single2.sampling_var[k] - single.sampling_var[k]) <= 1e-12);
            REQUIRE(std::abs(raw_diff2[k] - raw_diff[k]) <= 1e-12);
        }
    }
}

TEST_CASE("oracle components recover simulated truth", "[shrinkage]") {
    // c / 300 = 0.01 sampling variance, between 0.04.
    const auto p = flat_params(1000, 4, 0.3, 0.04, 0.0, 3.0, {300}, 101);
    const auto l = lists_at(simulate_parameter_level(p, 4), 0);
    const auto vc = estimate_oracle_components(l.full, l.visit2);
    CHECK(fcshrink::testing::relative_error(mean_of(vc.sampling_var), 0.01) < 0.10);
    CHECK(fcshrink::testing::relative_error(mean_of(vc.between_var), 0.04) < 0.10);
}

TEST_CASE("single-session components recover simulated truth", "[shrinkage]") {
    const auto p = flat_params(1000, 4, 0.3, 0.04, 0.01, 6.0, {300}, 102);
    const auto l = lists_at(simulate_parameter_level(p, 4), 0);
    const auto vc = estimate_single_session_components(l.full, l.odd, l.even, l.first, l.second);
    CHECK(fcshrink::testing::relative_error(mean_of(vc.sampling_var), 0.02) < 0.15);
    CHECK(fcshrink::testing::relative_error(mean_of(vc.state_var), 0.01) < 0.15);
    CHECK(fcshrink::testing::relative_error(mean_of(vc.between_var), 0.04) < 0.15);
}

TEST_CASE("oracle lambda decreases with scan length", "[shrinkage][property]") {
    const std::vector<std::size_t> grid{300, 600, 900, 1200, 1500, 1800, 2100, 2400};
    std::vector<double> mean_lambda(grid.size(), 0.0);
    const int reps = 50;
    for (int rep = 0; rep < reps; ++rep) {
        const auto p = flat_params(1000, 3, 0.4, 0.04, 0.0, 12.0, grid, 200 + rep);
        const auto cohort = simulate_parameter_level(p, 4);
        for (std::size_t li = 0; li < grid.size(); ++li) {
            const auto l = lists_at(cohort, li);
            mean_lambda[li] += mean_of(compute_lambda(estimate_oracle_components(l.full, l.visit2)).lambda) / reps;
        }
    }
    for (std::size_t li = 1; li < grid.size(); ++li) CHECK(mean_lambda[li] <= mean_lambda[li - 1]);
}

TEST_CASE("shrinkage reduces error against the long-term truth", "[shrinkage][property]") {
    // Lambda_true = c/l / (c/l + z) spans 0.3 to 0.7 across the settings.
    for (double lambda_true : {0.3, 0.5, 0.7}) {
        const double z = 0.04;
        const double c = 300.0 * z * lambda_true / (1.0 - lambda_true);
        const auto p = flat_params(1000, 4, 0.3, z, 0.0, c, {300}, 300 + static_cast<int>(lambda_true * 10));
        const auto cohort = simulate_parameter_level(p, 4);
        const auto l = lists_at(cohort, 0);
        const auto w = compute_lambda(estimate_oracle_components(l.full, l.visit2));
        double mse_raw = 0.0, mse_shrunk = 0.0;
        for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
            const auto shrunk = apply_shrinkage(l.full[i], w);
            for (std::size_t k = 0; k < shrunk.size(); ++k) {
                const double truth = cohort.subjects[i].long_term[k];
                mse_raw += (l.full[i][k] - truth) * (l.full[i][k] - truth);
                mse_shrunk += (shrunk[k] - truth) * (shrunk[k] - truth);
            }
        }
        INFO("lambda_true " << lambda_true);
        CHECK(mse_shrunk < 0.9 * mse_raw);
    }
}
