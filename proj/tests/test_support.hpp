#pragma once

// Test-only helpers: random inputs and brute-force oracles that do not go
// through the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <random>
#include <string>
#include <vector>

#include "fcshrink/connectivity.hpp"
#include "fcshrink/timeseries.hpp"

namespace fcshrink::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("fcshrink_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
    return m;
}

inline TimeSeriesMatrix random_series(std::mt19937_64& rng, std::size_t t, std::size_t q) {
    return TimeSeriesMatrix(random_matrix(rng, t, q), {}, 0.72);
}

inline EdgeVector random_edges(std::mt19937_64& rng, std::size_t q, double lo = -0.9, double hi = 0.9) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(edge_count(q));
    for (auto& x : v) x = dist(rng);
    return EdgeVector(std::move(v), q);
}

/// Pearson correlation straight from the textbook definition, with
/// long-double accumulation.
inline double pearson_oracle(const Matrix& x, Eigen::Index a, Eigen::Index b) {
    const auto t = x.rows();
    long double ma = 0, mb = 0;
    for (Eigen::Index r = 0; r < t; ++r) {
        ma += x(r, a);
        mb += x(r, b);
    }
    ma /= t;
    mb /= t;
    long double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index r = 0; r < t; ++r) {
        const long double da = x(r, a) - ma, db = x(r, b) - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    const long double cov = sab / (t - 1);
    return static_cast<double>(cov / std::sqrt((saa / (t - 1)) * (sbb / (t - 1))));
}

/// Least-squares coefficients by forming the normal equations and solving
/// them with Gauss-Jordan elimination and partial pivoting.
inline Matrix normal_equations_oracle(const Matrix& data, const Matrix& maps) {
    const auto v = maps.rows(), q = maps.cols(), t = data.rows();
    Matrix out(t, q);
    for (Eigen::Index row = 0; row < t; ++row) {
        std::vector<std::vector<long double>> aug(static_cast<std::size_t>(q),
                                                  std::vector<long double>(static_cast<std::size_t>(q + 1), 0));
        for (Eigen::Index i = 0; i < q; ++i) {
            for (Eigen::Index j = 0; j < q; ++j) {
                long double s = 0;
                for (Eigen::Index l = 0; l < v; ++l) s += static_cast<long double>(maps(l, i)) * maps(l, j);
                aug[i][j] = s;
            }
            long double s = 0;
            for (Eigen::Index l = 0; l < v; ++l) s += static_cast<long double>(maps(l, i)) * data(row, l);
            aug[i][q] = s;
        }
        for (Eigen::Index col = 0; col < q; ++col) {
            Eigen::Index pivot = col;
            for (Eigen::Index r = col + 1; r < q; ++r)
                if (std::fabs(aug[r][col]) > std::fabs(aug[pivot][col])) pivot = r;
            std::swap(aug[col], aug[pivot]);
            for (Eigen::Index r = 0; r < q; ++r) {
                if (r == col) continue;
                const long double f = aug[r][col] / aug[col][col];
                for (Eigen::Index c = col; c <= q; ++c) aug[r][c] -= f * aug[col][c];
            }
        }
        for (Eigen::Index i = 0; i < q; ++i) out(row, i) = static_cast<double>(aug[i][q] / aug[i][i]);
    }
    return out;
}

/// Median by insertion sort; even counts average the central pair.
inline double median_oracle(std::vector<double> v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        const double key = v[i];
        std::size_t j = i;
        while (j > 0 && v[j - 1] > key) {
            v[j] = v[j - 1];
            --j;
        }
        v[j] = key;
    }
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double sample_variance(const std::vector<double>& x) {
    long double m = 0;
    for (double v : x) m += v;
    m /= x.size();
    long double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return static_cast<double>(ss / (x.size() - 1));
}

/// Relative path -> file contents for every regular file below `root`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        out[std::filesystem::relative(entry.path(), root).generic_string()] = buf.str();
    }
    return out;
}

inline double relative_error(double estimate, double truth) { return std::abs(estimate - truth) / std::abs(truth); }

}  // namespace fcshrink::testing
