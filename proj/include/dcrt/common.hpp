#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcrt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexSet = std::vector<Index>;

/// Raised when inputs violate a documented precondition. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine cannot produce a result. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Process-wide warning sink. Defaults to stderr; tests install a capturing handler.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

/// Restores the previous handler on destruction.
class ScopedWarningCapture {
public:
    ScopedWarningCapture();
    ~ScopedWarningCapture();
    ScopedWarningCapture(const ScopedWarningCapture&) = delete;
    ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }
    bool contains(const std::string& needle) const;

private:
    std::vector<std::string> messages_;
    WarningHandler previous_;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a base seed with a key into an independent substream seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key);

inline Rng make_rng(std::uint64_t base, std::uint64_t key) { return Rng(derive_seed(base, key)); }

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Each index is visited exactly once,
/// so callers that write results into slot i get output independent of scheduling.
void parallel_for(Index count, int jobs, const std::function<void(Index)>& body);

/// Worker count from DCRT_JOBS, or 1 when unset/invalid.
int default_jobs();

/// Standard normal helpers (Boost.Math backed).
double normal_cdf(double z);
double normal_upper_tail(double z);
double normal_quantile(double u);

/// Columns of `X` except `j`.
Matrix drop_column(const Matrix& X, Index j);
/// Maps an index into X_{-j} back to the index into X.
inline Index restore_index(Index k, Index j) { return k < j ? k : k + 1; }

} // namespace dcrt
