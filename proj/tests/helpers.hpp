#pragma once

#include "dcrt/common.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testing {

using namespace dcrt;

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> z;
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = z(rng);
    return m;
}

inline Vector gaussian_vector(Index n, Rng& rng) { return gaussian_matrix(n, 1, rng).col(0); }

inline Vector drop_entry(const Vector& v, Index j) {
    Vector out(v.size() - 1);
    for (Index k = 0; k < out.size(); ++k) out[k] = v[restore_index(k, j)];
    return out;
}

inline Matrix random_spd(Index p, Rng& rng) {
    const Matrix A = gaussian_matrix(p, p, rng);
    return A * A.transpose() / static_cast<double>(p) + Matrix::Identity(p, p);
}

inline Matrix ar1(Index p, double rho) {
    Matrix S(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) S(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    return S;
}

/// Rows drawn from N(0, S).
inline Matrix draw_gaussian(Index n, const Matrix& S, Rng& rng) {
    const Matrix L = S.llt().matrixL();
    return gaussian_matrix(n, S.rows(), rng) * L.transpose();
}

inline std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dcrt_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

inline std::filesystem::path write_file(const std::string& name, const std::string& text) {
    const auto path = temp_path(name);
    std::ofstream(path) << text;
    return path;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Kolmogorov-Smirnov distance of a sample from N(0, 1).
inline double ks_normal(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double F = normal_cdf(v[i]);
        d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
    }
    return d;
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

} // namespace testing
