#pragma once

#include "dcrt/common.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dcrt {

enum class LossKind { squared, logistic };

const char* to_string(LossKind loss);

/// Strictly decreasing positive penalties, at least two of them.
class LambdaGrid {
public:
    LambdaGrid() = default;
    explicit LambdaGrid(std::vector<double> values);

    const std::vector<double>& values() const { return values_; }
    Index size() const { return static_cast<Index>(values_.size()); }
    double operator[](Index g) const { return values_[static_cast<std::size_t>(g)]; }

private:
    std::vector<double> values_;
};

struct SolverOptions {
    double tolerance = 1e-7;     ///< max standardized coordinate change per sweep
    int max_sweeps = 100000;
    double weight_floor = 1e-5;  ///< logistic working-weight floor
    bool check_descent = false;  ///< assert the objective never increases between sweeps (squared loss)
};

/// One penalized fit. Coefficients are on the original column scale.
struct LassoFit {
    Vector beta;
    double intercept = 0.0;
    double lambda = 0.0;
    IndexSet active;   ///< {j : beta_j != 0}, ascending
    int sweeps = 0;

    Vector predict(const Matrix& X) const { return (X * beta).array() + intercept; }
};

struct SequentialRule {
    int delta = 5;
};

/// Grid indices are 0-based: g_hat is the selected penalty, g_tilde the stopping time.
struct SequentialChoice {
    Index g_hat = 0;
    Index g_tilde = 0;
    bool fallback = false; ///< no local minimum existed; g_hat = G-1-delta by convention
};

struct LassoConfig {
    int folds = 10;
    int grid_size = 100;
    double ratio = 0.0;            ///< <= 0 selects 1e-3, or 1e-2 when n < p
    SequentialRule rule{};
    SolverOptions solver{};
    std::uint64_t fold_seed = 0x5EED;
};

/// Penalty grid plus fold partition; everything cross-validation needs besides the data.
struct CvPlan {
    LambdaGrid grid;
    std::vector<IndexSet> folds;
};

struct CvLassoFit {
    LossKind loss = LossKind::squared;
    LambdaGrid grid;
    std::vector<LassoFit> path;                   ///< full data, grid points 0..g_tilde
    std::vector<std::vector<LassoFit>> fold_paths; ///< [fold][g], g in 0..g_tilde
    std::vector<double> cv_errors;                ///< summed held-out loss, g in 0..g_tilde
    Index g_hat = 0;
    Index g_tilde = 0;
    bool fallback = false;
    IndexSet union_active;
    std::vector<IndexSet> folds;

    const LassoFit& selected() const { return path[static_cast<std::size_t>(g_hat)]; }
    CvPlan plan() const { return {grid, folds}; }
};

/// sign(w) * max(|w| - t, 0).
inline double soft_threshold(double w, double t) {
    if (w > t) return w - t;
    if (w < -t) return w + t;
    return 0.0;
}

/// Incremental pathwise coordinate descent on standardized columns with warm starts.
/// Squared loss minimizes (1/2n)||y - b0 - X b||^2 + lambda ||b||_1; logistic loss minimizes the
/// mean negative log-likelihood plus the same penalty, via reweighted quadratic approximations.
class PathSolver {
public:
    PathSolver(const Matrix& X, const Vector& y, LossKind loss, SolverOptions options = {});
    /// Restricts the problem to the given rows.
    PathSolver(const Matrix& X, const Vector& y, LossKind loss, const IndexSet& rows, SolverOptions options = {});

    /// Fit at `lambda`, warm-started from the previous call.
    LassoFit solve(double lambda);

    /// Smallest penalty whose solution is all zero.
    double lambda_max() const;

    /// Standardized design used internally; exposed for KKT checks.
    const Matrix& standardized() const { return xs_; }
    const Vector& centers() const { return center_; }
    const Vector& scales() const { return scale_; }

private:
    void init(const Matrix& X, const Vector& y);
    void solve_squared(double lambda, int& sweeps);
    void solve_logistic(double lambda, int& sweeps);
    double squared_objective(double lambda) const;
    LassoFit snapshot(double lambda, int sweeps) const;

    LossKind loss_;
    SolverOptions options_;
    Matrix xs_;
    Vector center_;
    Vector scale_;
    Vector norm_;            // ||x_k||^2 / n of the standardized columns
    std::vector<char> usable_;
    Vector y_;
    double y_mean_ = 0.0;
    Vector beta_;            // standardized scale
    double b0_ = 0.0;        // logistic intercept on the standardized scale
    Vector resid_;           // squared loss: centered y minus fit
    std::vector<char> in_active_;
    IndexSet active_order_;
    Matrix gram_;               // squared loss: xs' xs_k / n for the columns in active_order_, same order
};

/// Fits every grid point, warm-started along the path.
std::vector<LassoFit> fit_path(const Matrix& X, const Vector& y, LossKind loss, const LambdaGrid& grid,
                               const SolverOptions& options = {});

/// lambda(1) = max_j |x_j'(y - ybar)|/n on standardized columns, geometric decay to ratio * lambda(1).
LambdaGrid default_grid(const Matrix& X, const Vector& y, LossKind loss, int count, double ratio);
LambdaGrid default_grid(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config);

/// First g whose error is <= each of the next delta errors.
SequentialChoice sequential_select(std::span<const double> cv_errors, SequentialRule rule);

/// Seeded shuffle, then contiguous blocks. Each fold is sorted ascending.
std::vector<IndexSet> make_folds(Index n, int K, Rng& rng);

CvPlan make_cv_plan(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config);

/// K-fold cross-validation with the sequential rule. Grid points past the stopping time are never
/// fitted. union_active holds the full-data active set at g_hat and every fold active set up to g_tilde.
CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const CvPlan& plan,
                          SequentialRule rule, const SolverOptions& options = {});
CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const LambdaGrid& grid, int K,
                          SequentialRule rule, Rng& rng, const SolverOptions& options = {});
/// Default grid and folds from `config`.
CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config);

/// Held-out loss of a fit on the given rows: squared error sum, or negative log-likelihood sum.
double heldout_loss(const LassoFit& fit, const Matrix& X, const Vector& y, LossKind loss, const IndexSet& rows);

} // namespace dcrt
