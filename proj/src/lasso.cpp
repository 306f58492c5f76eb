#include "dcrt/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dcrt {

const char* to_string(LossKind loss) { return loss == LossKind::squared ? "squared" : "logistic"; }

LambdaGrid::LambdaGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw ValidationError("lambda grid needs at least two values");
    for (std::size_t g = 0; g < values_.size(); ++g) {
        if (!(values_[g] > 0.0) || !std::isfinite(values_[g]))
            throw ValidationError("lambda grid values must be positive and finite");
        if (g > 0 && !(values_[g] < values_[g - 1]))
            throw ValidationError("lambda grid must be strictly decreasing");
    }
}

namespace {

double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta) {
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

void check_shapes(const Matrix& X, const Vector& y, LossKind loss) {
    if (X.rows() != y.size()) throw ValidationError("design and response have different row counts");
    if (X.rows() < 2) throw ValidationError("need at least two observations");
    if (loss == LossKind::logistic) {
        for (Index i = 0; i < y.size(); ++i)
            if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("logistic loss requires a 0/1 response");
    }
}

} // namespace

PathSolver::PathSolver(const Matrix& X, const Vector& y, LossKind loss, SolverOptions options)
    : loss_(loss), options_(options) {
    check_shapes(X, y, loss);
    init(X, y);
}

PathSolver::PathSolver(const Matrix& X, const Vector& y, LossKind loss, const IndexSet& rows, SolverOptions options)
    : loss_(loss), options_(options) {
    check_shapes(X, y, loss);
    Matrix Xs(static_cast<Index>(rows.size()), X.cols());
    Vector ys(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Xs.row(static_cast<Index>(r)) = X.row(rows[r]);
        ys[static_cast<Index>(r)] = y[rows[r]];
    }
    init(Xs, ys);
}

void PathSolver::init(const Matrix& X, const Vector& y) {
    const Index n = X.rows();
    const Index p = X.cols();
    xs_.resize(n, p);
    center_.resize(p);
    scale_.resize(p);
    norm_ = Vector::Zero(p);
    usable_.assign(static_cast<std::size_t>(p), 0);
    for (Index k = 0; k < p; ++k) {
        const double c = X.col(k).mean();
        const double s = std::sqrt((X.col(k).array() - c).square().mean());
        center_[k] = c;
        if (s > 1e-12 * (1.0 + std::abs(c))) {
            scale_[k] = s;
            usable_[static_cast<std::size_t>(k)] = 1;
            xs_.col(k) = (X.col(k).array() - c) / s;
            norm_[k] = xs_.col(k).squaredNorm() / static_cast<double>(n);
        } else {
            scale_[k] = 0.0;
            xs_.col(k).setZero();
        }
    }
    y_ = y;
    y_mean_ = y.mean();
    beta_ = Vector::Zero(p);
    in_active_.assign(static_cast<std::size_t>(p), 0);
    active_order_.clear();
    gram_.resize(0, 0);
    if (loss_ == LossKind::squared) {
        resid_ = y.array() - y_mean_;
    } else {
        const double m = std::clamp(y_mean_, 1e-10, 1.0 - 1e-10);
        b0_ = std::log(m / (1.0 - m));
    }
}

double PathSolver::lambda_max() const {
    const Index n = xs_.rows();
    const Vector centered = y_.array() - y_mean_;
    double best = 0.0;
    for (Index k = 0; k < xs_.cols(); ++k) {
        if (!usable_[static_cast<std::size_t>(k)]) continue;
        best = std::max(best, std::abs(xs_.col(k).dot(centered)) / static_cast<double>(n));
    }
    return best;
}

double PathSolver::squared_objective(double lambda) const {
    const double n = static_cast<double>(xs_.rows());
    return resid_.squaredNorm() / (2.0 * n) + lambda * beta_.lpNorm<1>();
}

void PathSolver::solve_squared(double lambda, int& sweeps) {
    const double n = static_cast<double>(xs_.rows());
    const double tol = options_.tolerance;
    double last_objective = options_.check_descent ? squared_objective(lambda) : 0.0;

    auto update = [&](Index k) {
        const double old = beta_[k];
        const double norm = norm_[k];
        const double z = xs_.col(k).dot(resid_) / n + norm * old;
        const double fresh = soft_threshold(z, lambda) / norm;
        if (fresh == old) return 0.0;
        resid_.noalias() -= (fresh - old) * xs_.col(k);
        beta_[k] = fresh;
        if (fresh != 0.0 && !in_active_[static_cast<std::size_t>(k)]) {
            in_active_[static_cast<std::size_t>(k)] = 1;
            active_order_.push_back(k);
        }
        return std::abs(fresh - old);
    };
    auto after_sweep = [&] {
        if (++sweeps > options_.max_sweeps) throw NumericalError("coordinate descent did not converge");
        if (options_.check_descent) {
            const double obj = squared_objective(lambda);
            if (obj > last_objective + 1e-12 * (1.0 + std::abs(last_objective)))
                throw std::logic_error("lasso objective increased during a coordinate sweep");
            last_objective = obj;
        }
    };

    // Active-set passes use covariance updates: the gradient on the active set moves by a Gram
    // column per coordinate change and the residual is brought up to date once the pass converges.
    Vector grad, pending;
    auto inner_sweeps = [&] {
        const std::size_t m = active_order_.size();
        const Index known = gram_.cols();
        if (known < static_cast<Index>(m)) {
            Matrix grown(static_cast<Index>(m), static_cast<Index>(m));
            grown.topLeftCorner(known, known) = gram_;
            for (Index a = known; a < static_cast<Index>(m); ++a)
                for (Index b = 0; b <= a; ++b)
                    grown(a, b) = grown(b, a) =
                        xs_.col(active_order_[static_cast<std::size_t>(a)]).dot(xs_.col(active_order_[static_cast<std::size_t>(b)])) / n;
            gram_ = std::move(grown);
        }
        grad.resize(static_cast<Index>(m));
        pending = Vector::Zero(static_cast<Index>(m));
        for (std::size_t a = 0; a < m; ++a) grad[static_cast<Index>(a)] = xs_.col(active_order_[a]).dot(resid_) / n;
        auto flush = [&] {
            for (std::size_t a = 0; a < m; ++a)
                if (pending[static_cast<Index>(a)] != 0.0) {
                    resid_.noalias() -= pending[static_cast<Index>(a)] * xs_.col(active_order_[a]);
                    pending[static_cast<Index>(a)] = 0.0;
                }
        };
        for (;;) {
            double inner = 0.0;
            for (std::size_t a = 0; a < m; ++a) {
                const Index k = active_order_[a];
                const double old = beta_[k];
                const double norm = norm_[k];
                const double fresh = soft_threshold(grad[static_cast<Index>(a)] + norm * old, lambda) / norm;
                if (fresh == old) continue;
                const double delta = fresh - old;
                beta_[k] = fresh;
                pending[static_cast<Index>(a)] += delta;
                grad.noalias() -= delta * gram_.col(static_cast<Index>(a));
                inner = std::max(inner, std::abs(delta));
            }
            if (options_.check_descent) flush();
            after_sweep();
            if (inner < tol) break;
        }
        flush();
    };

    for (;;) {
        double change = 0.0;
        for (Index k = 0; k < xs_.cols(); ++k)
            if (usable_[static_cast<std::size_t>(k)]) change = std::max(change, update(k));
        after_sweep();
        if (change < tol) break;
        inner_sweeps();
    }
}

void PathSolver::solve_logistic(double lambda, int& sweeps) {
    const Index n = xs_.rows();
    const double nd = static_cast<double>(n);
    const double tol = options_.tolerance;
    Vector eta(n);
    Vector w(n);
    Vector r(n);
    Vector xwx(xs_.cols());

    for (;;) {
        eta.setConstant(b0_);
        for (Index k : active_order_)
            if (beta_[k] != 0.0) eta.noalias() += beta_[k] * xs_.col(k);
        for (Index i = 0; i < n; ++i) {
            const double prob = sigmoid(eta[i]);
            w[i] = std::max(prob * (1.0 - prob), options_.weight_floor);
            r[i] = y_[i] - prob;
        }
        const double wsum = w.sum();
        for (Index k = 0; k < xs_.cols(); ++k)
            xwx[k] = usable_[static_cast<std::size_t>(k)] ? xs_.col(k).cwiseAbs2().dot(w) / nd : 0.0;

        const Vector beta_start = beta_;
        const double b0_start = b0_;

        auto update = [&](Index k) {
            const double old = beta_[k];
            const double z = xs_.col(k).dot(r) / nd + xwx[k] * old;
            const double fresh = soft_threshold(z, lambda) / xwx[k];
            if (fresh == old) return 0.0;
            r.array() -= (fresh - old) * xs_.col(k).array() * w.array();
            beta_[k] = fresh;
            if (fresh != 0.0 && !in_active_[static_cast<std::size_t>(k)]) {
                in_active_[static_cast<std::size_t>(k)] = 1;
                active_order_.push_back(k);
            }
            return std::abs(fresh - old);
        };
        auto update_intercept = [&] {
            const double d = r.sum() / wsum;
            b0_ += d;
            r.noalias() -= d * w;
            return std::abs(d);
        };
        auto count_sweep = [&] {
            if (++sweeps > options_.max_sweeps) throw NumericalError("coordinate descent did not converge");
        };

        for (;;) {
            double change = update_intercept();
            for (Index k = 0; k < xs_.cols(); ++k)
                if (usable_[static_cast<std::size_t>(k)]) change = std::max(change, update(k));
            count_sweep();
            if (change < tol) break;
            for (;;) {
                double inner = update_intercept();
                for (std::size_t a = 0; a < active_order_.size(); ++a) inner = std::max(inner, update(active_order_[a]));
                count_sweep();
                if (inner < tol) break;
            }
        }

        const double outer = std::max((beta_ - beta_start).lpNorm<Eigen::Infinity>(), std::abs(b0_ - b0_start));
        if (outer < tol) break;
        if (!std::isfinite(b0_)) throw NumericalError("logistic fit diverged");
    }
}

LassoFit PathSolver::snapshot(double lambda, int sweeps) const {
    LassoFit fit;
    const Index p = xs_.cols();
    fit.beta = Vector::Zero(p);
    fit.lambda = lambda;
    fit.sweeps = sweeps;
    double shift = 0.0;
    for (Index k = 0; k < p; ++k) {
        if (beta_[k] == 0.0) continue;
        fit.beta[k] = beta_[k] / scale_[k];
        shift += fit.beta[k] * center_[k];
        fit.active.push_back(k);
    }
    fit.intercept = (loss_ == LossKind::squared ? y_mean_ : b0_) - shift;
    return fit;
}

LassoFit PathSolver::solve(double lambda) {
    if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
    int sweeps = 0;
    if (loss_ == LossKind::squared)
        solve_squared(lambda, sweeps);
    else
        solve_logistic(lambda, sweeps);
    return snapshot(lambda, sweeps);
}

std::vector<LassoFit> fit_path(const Matrix& X, const Vector& y, LossKind loss, const LambdaGrid& grid,
                               const SolverOptions& options) {
    PathSolver solver(X, y, loss, options);
    std::vector<LassoFit> path;
    path.reserve(static_cast<std::size_t>(grid.size()));
    for (Index g = 0; g < grid.size(); ++g) {
        try {
            path.push_back(solver.solve(grid[g]));
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at grid index " + std::to_string(g));
        }
    }
    return path;
}

LambdaGrid default_grid(const Matrix& X, const Vector& y, LossKind loss, int count, double ratio) {
    if (count < 2) throw ValidationError("grid needs at least two points");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("grid ratio must lie in (0, 1)");
    PathSolver probe(X, y, loss);
    const double top = probe.lambda_max();
    if (!(top > 0.0)) throw ValidationError("response is constant or uncorrelated with every column (lambda_max = 0)");
    std::vector<double> values(static_cast<std::size_t>(count));
    for (int g = 0; g < count; ++g)
        values[static_cast<std::size_t>(g)] = top * std::pow(ratio, static_cast<double>(g) / (count - 1));
    return LambdaGrid(std::move(values));
}

LambdaGrid default_grid(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config) {
    double ratio = config.ratio;
    if (ratio <= 0.0) ratio = X.rows() < X.cols() ? 1e-2 : 1e-3;
    return default_grid(X, y, loss, config.grid_size, ratio);
}

SequentialChoice sequential_select(std::span<const double> cv_errors, SequentialRule rule) {
    const Index G = static_cast<Index>(cv_errors.size());
    const Index delta = rule.delta;
    if (delta < 1) throw ValidationError("sequential rule needs delta >= 1");
    if (G < delta + 1) throw ValidationError("sequential rule needs at least delta + 1 errors");
    for (Index g = 0; g + delta < G; ++g) {
        bool local_min = true;
        for (Index h = g + 1; h <= g + delta; ++h) {
            if (!(cv_errors[static_cast<std::size_t>(g)] <= cv_errors[static_cast<std::size_t>(h)])) {
                local_min = false;
                break;
            }
        }
        if (local_min) return {g, g + delta, false};
    }
    return {G - 1 - delta, G - 1, true};
}

std::vector<IndexSet> make_folds(Index n, int K, Rng& rng) {
    if (K < 2) throw ValidationError("cross-validation needs at least two folds");
    if (n < K) throw ValidationError("cross-validation needs at least as many rows as folds");
    IndexSet order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    // Fisher-Yates with an explicit draw keeps the permutation identical across standard libraries.
    for (Index i = n - 1; i > 0; --i) {
        const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<IndexSet> folds(static_cast<std::size_t>(K));
    Index start = 0;
    for (int k = 0; k < K; ++k) {
        const Index size = n / K + (k < n % K ? 1 : 0);
        folds[static_cast<std::size_t>(k)].assign(order.begin() + start, order.begin() + start + size);
        std::sort(folds[static_cast<std::size_t>(k)].begin(), folds[static_cast<std::size_t>(k)].end());
        start += size;
    }
    return folds;
}

CvPlan make_cv_plan(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config) {
    Rng rng(config.fold_seed);
    CvPlan plan{default_grid(X, y, loss, config), {}};
    plan.folds = make_folds(X.rows(), config.folds, rng);
    return plan;
}

double heldout_loss(const LassoFit& fit, const Matrix& X, const Vector& y, LossKind loss, const IndexSet& rows) {
    double total = 0.0;
    for (Index i : rows) {
        double eta = fit.intercept;
        for (Index k : fit.active) eta += X(i, k) * fit.beta[k];
        if (loss == LossKind::squared) {
            const double e = y[i] - eta;
            total += e * e;
        } else {
            total += softplus(eta) - y[i] * eta;
        }
    }
    return total;
}

CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const CvPlan& plan, SequentialRule rule,
                          const SolverOptions& options) {
    check_shapes(X, y, loss);
    const Index n = X.rows();
    const int K = static_cast<int>(plan.folds.size());
    if (K < 2) throw ValidationError("cross-validation needs at least two folds");
    if (n < K) throw ValidationError("cross-validation needs at least as many rows as folds");
    if (rule.delta < 1) throw ValidationError("sequential rule needs delta >= 1");
    const Index G = plan.grid.size();
    if (G < rule.delta + 1) throw ValidationError("grid shorter than delta + 1");

    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (const auto& fold : plan.folds)
        for (Index i : fold) {
            if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)])
                throw ValidationError("folds must partition the rows");
            seen[static_cast<std::size_t>(i)] = 1;
        }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw ValidationError("folds must cover every row");

    CvLassoFit out;
    out.loss = loss;
    out.grid = plan.grid;
    out.folds = plan.folds;

    std::vector<PathSolver> solvers;
    solvers.reserve(static_cast<std::size_t>(K));
    for (const auto& fold : plan.folds) {
        IndexSet train;
        train.reserve(static_cast<std::size_t>(n) - fold.size());
        std::size_t f = 0;
        for (Index i = 0; i < n; ++i) {
            if (f < fold.size() && fold[f] == i) {
                ++f;
                continue;
            }
            train.push_back(i);
        }
        solvers.emplace_back(X, y, loss, train, options);
    }
    out.fold_paths.assign(static_cast<std::size_t>(K), {});

    bool found = false;
    for (Index g = 0; g < G && !found; ++g) {
        double error = 0.0;
        for (int k = 0; k < K; ++k) {
            LassoFit fit;
            try {
                fit = solvers[static_cast<std::size_t>(k)].solve(plan.grid[g]);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " at grid index " + std::to_string(g) + " in fold " +
                                     std::to_string(k));
            }
            error += heldout_loss(fit, X, y, loss, plan.folds[static_cast<std::size_t>(k)]);
            out.fold_paths[static_cast<std::size_t>(k)].push_back(std::move(fit));
        }
        out.cv_errors.push_back(error);
        const Index candidate = g - rule.delta;
        if (candidate < 0) continue;
        bool local_min = true;
        for (Index h = candidate + 1; h <= g; ++h)
            if (!(out.cv_errors[static_cast<std::size_t>(candidate)] <= out.cv_errors[static_cast<std::size_t>(h)])) {
                local_min = false;
                break;
            }
        if (local_min) {
            out.g_hat = candidate;
            out.g_tilde = g;
            found = true;
        }
    }
    if (!found) {
        out.g_hat = G - 1 - rule.delta;
        out.g_tilde = G - 1;
        out.fallback = true;
    }

    PathSolver full(X, y, loss, options);
    for (Index g = 0; g <= out.g_tilde; ++g) {
        try {
            out.path.push_back(full.solve(plan.grid[g]));
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at grid index " + std::to_string(g));
        }
    }

    std::vector<char> member(static_cast<std::size_t>(X.cols()), 0);
    for (Index j : out.selected().active) member[static_cast<std::size_t>(j)] = 1;
    for (const auto& fold_path : out.fold_paths)
        for (const auto& fit : fold_path)
            for (Index j : fit.active) member[static_cast<std::size_t>(j)] = 1;
    for (Index j = 0; j < X.cols(); ++j)
        if (member[static_cast<std::size_t>(j)]) out.union_active.push_back(j);
    return out;
}

CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const LambdaGrid& grid, int K,
                          SequentialRule rule, Rng& rng, const SolverOptions& options) {
    CvPlan plan{grid, make_folds(X.rows(), K, rng)};
    return cross_validate(X, y, loss, plan, rule, options);
}

CvLassoFit cross_validate(const Matrix& X, const Vector& y, LossKind loss, const LassoConfig& config) {
    return cross_validate(X, y, loss, make_cv_plan(X, y, loss, config), config.rule, config.solver);
}

} // namespace dcrt
