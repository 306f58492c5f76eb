#include "dcrt/io.hpp"
#include "dcrt/lasso.hpp"

#include "helpers.hpp"

#include <set>

using namespace dcrt;
using namespace testing;

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Gradient of the smooth loss on the standardized scale, divided by n.
Vector standardized_gradient(const PathSolver& solver, const LassoFit& fit, const Matrix& X, const Vector& y,
                             LossKind loss) {
    const Vector eta = fit.predict(X);
    Vector r(y.size());
    for (Index i = 0; i < y.size(); ++i) r[i] = loss == LossKind::squared ? y[i] - eta[i] : y[i] - sigmoid(eta[i]);
    return solver.standardized().transpose() * r / static_cast<double>(y.size());
}

void check_kkt(const Matrix& X, const Vector& y, LossKind loss, const std::vector<double>& lambdas) {
    SolverOptions tight;
    tight.tolerance = 1e-12;
    PathSolver solver(X, y, loss, tight);
    for (double lambda : lambdas) {
        const LassoFit fit = solver.solve(lambda);
        const Vector g = standardized_gradient(solver, fit, X, y, loss);
        for (Index j = 0; j < X.cols(); ++j) {
            if (fit.beta[j] == 0.0) {
                CHECK(std::abs(g[j]) <= lambda * (1.0 + 1e-6));
            } else {
                const double sign = fit.beta[j] > 0 ? 1.0 : -1.0;
                CHECK(std::abs(g[j] - lambda * sign) <= 1e-6 * lambda);
            }
        }
        // active = {j : beta_j != 0}
        IndexSet nz;
        for (Index j = 0; j < X.cols(); ++j)
            if (fit.beta[j] != 0.0) nz.push_back(j);
        CHECK(nz == fit.active);
    }
}

} // namespace

TEST_CASE("soft_threshold") {
    CHECK(soft_threshold(1.2, 0.5) == doctest::Approx(0.7));
    CHECK(soft_threshold(-0.3, 0.5) == 0.0);
    CHECK(soft_threshold(0.5, 0.5) == 0.0);
    CHECK(soft_threshold(-2.0, 0.5) == doctest::Approx(-1.5));
    CHECK(soft_threshold(3.0, 0.0) == 3.0);
}

TEST_CASE("property: soft-thresholding never increases magnitude") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(-5, 5), t(0, 3);
    for (int i = 0; i < 1000; ++i) {
        const double w = u(rng);
        CHECK(std::abs(soft_threshold(w, t(rng))) <= std::abs(w));
    }
}

TEST_CASE("LambdaGrid invariants") {
    CHECK_THROWS_AS(LambdaGrid({1.0}), ValidationError);
    CHECK_THROWS_AS(LambdaGrid({1.0, 1.0}), ValidationError);
    CHECK_THROWS_AS(LambdaGrid({1.0, -0.5}), ValidationError);
    CHECK_NOTHROW(LambdaGrid({1.0, 0.5}));
}

TEST_CASE("penalty above the null threshold gives the zero fit") {
    Rng rng(2);
    const Matrix X = gaussian_matrix(50, 8, rng);
    const Vector y = X.col(2) + gaussian_vector(50, rng);
    PathSolver solver(X, y, LossKind::squared);
    const double lmax = solver.lambda_max();
    const LassoFit fit = solver.solve(lmax * 1.0001);
    CHECK(fit.beta.isZero(0.0));
    CHECK(fit.active.empty());
    CHECK(fit.intercept == doctest::Approx(y.mean()));
    CHECK_FALSE(solver.solve(lmax * 0.99).active.empty());
}

TEST_CASE("vanishing penalty reproduces least squares") {
    Rng rng(3);
    const Matrix X = gaussian_matrix(20, 5, rng);
    const Vector y = X * Vector::LinSpaced(5, -1, 1) + 0.5 * gaussian_vector(20, rng);
    Matrix A(20, 6);
    A << Vector::Ones(20), X;
    const Vector ols = (A.transpose() * A).ldlt().solve(A.transpose() * y);
    SolverOptions tight;
    tight.tolerance = 1e-13;
    const LambdaGrid grid = default_grid(X, y, LossKind::squared, 60, 1e-11);
    const auto path = fit_path(X, y, LossKind::squared, grid, tight);
    const LassoFit& last = path.back();
    CHECK((last.beta - ols.tail(5)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(last.intercept - ols[0]) < 1e-6);
}

TEST_CASE("orthonormal design has the soft-threshold closed form") {
    Rng rng(4);
    const Index n = 40;
    Matrix A = gaussian_matrix(n, 4, rng);
    A.rowwise() -= A.colwise().mean();
    const Matrix Q = Eigen::HouseholderQR<Matrix>(A).householderQ() * Matrix::Identity(n, 4);
    const Matrix X = Q * std::sqrt(static_cast<double>(n)); // centered, X'X / n = I
    const Vector y = X * Vector::LinSpaced(4, -0.8, 0.9) + gaussian_vector(n, rng);
    SolverOptions tight;
    tight.tolerance = 1e-13;
    PathSolver solver(X, y, LossKind::squared, tight);
    for (double lambda : {0.05, 0.2, 0.5}) {
        const LassoFit fit = solver.solve(lambda);
        for (Index j = 0; j < 4; ++j)
            CHECK(fit.beta[j] == doctest::Approx(soft_threshold(X.col(j).dot(y) / n, lambda)).epsilon(1e-9));
    }
}

TEST_CASE("KKT conditions hold for squared and logistic loss") {
    Rng rng(5);
    const Matrix X = draw_gaussian(120, ar1(15, 0.4), rng);
    const Vector eta = X.col(0) - 0.7 * X.col(4) + 0.5 * X.col(9);
    const Vector y = eta + gaussian_vector(120, rng);
    Vector yb(120);
    std::uniform_real_distribution<double> u;
    for (Index i = 0; i < 120; ++i) yb[i] = u(rng) < sigmoid(eta[i]) ? 1.0 : 0.0;
    const double ls = PathSolver(X, y, LossKind::squared).lambda_max();
    const double lb = PathSolver(X, yb, LossKind::logistic).lambda_max();
    check_kkt(X, y, LossKind::squared, {0.8 * ls, 0.3 * ls, 0.1 * ls, 0.02 * ls});
    check_kkt(X, yb, LossKind::logistic, {0.8 * lb, 0.3 * lb, 0.1 * lb, 0.03 * lb});
}

TEST_CASE("objective never increases across sweeps") {
    Rng rng(6);
    const Matrix X = draw_gaussian(60, ar1(80, 0.8), rng);
    const Vector y = X.col(3) - X.col(40) + gaussian_vector(60, rng);
    SolverOptions opt;
    opt.check_descent = true;
    const LambdaGrid grid = default_grid(X, y, LossKind::squared, 50, 1e-2);
    CHECK_NOTHROW(fit_path(X, y, LossKind::squared, grid, opt));
}

TEST_CASE("default_grid is geometric from the null threshold") {
    Rng rng(7);
    const Matrix X = gaussian_matrix(30, 4, rng);
    const Vector y = X.col(1) + gaussian_vector(30, rng);
    const LambdaGrid grid = default_grid(X, y, LossKind::squared, 3, 0.01);
    REQUIRE(grid.size() == 3);
    CHECK(grid[0] == doctest::Approx(PathSolver(X, y, LossKind::squared).lambda_max()));
    CHECK(grid[1] == doctest::Approx(grid[0] * 0.1));
    CHECK(grid[2] == doctest::Approx(grid[0] * 0.01));
    CHECK_THROWS_AS(default_grid(X, Vector::Constant(30, 2.0), LossKind::squared, 10, 0.01), ValidationError);
    CHECK_THROWS_AS(default_grid(X, y, LossKind::squared, 1, 0.01), ValidationError);
    CHECK_THROWS_AS(default_grid(X, y, LossKind::squared, 10, 1.0), ValidationError);
}

TEST_CASE("default_grid: standardized column with y = x starts at 1") {
    Rng rng(8);
    Vector x = gaussian_vector(50, rng);
    x = (x.array() - x.mean()) / std::sqrt((x.array() - x.mean()).square().mean());
    const LambdaGrid grid = default_grid(x, x, LossKind::squared, 10, 0.1);
    CHECK(grid[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("default ratio depends on n < p") {
    Rng rng(9);
    LassoConfig cfg;
    cfg.grid_size = 5;
    const Matrix wide = gaussian_matrix(20, 30, rng);
    const Vector y = gaussian_vector(20, rng);
    const LambdaGrid gw = default_grid(wide, y, LossKind::squared, cfg);
    CHECK(gw[4] / gw[0] == doctest::Approx(1e-2));
    const Matrix tall = gaussian_matrix(20, 5, rng);
    const LambdaGrid gt = default_grid(tall, y, LossKind::squared, cfg);
    CHECK(gt[4] / gt[0] == doctest::Approx(1e-3));
}

TEST_CASE("sequential_select examples (0-based indices)") {
    const std::vector<double> e1 = {5, 4, 3, 3.5, 4};
    const SequentialChoice a = sequential_select(e1, SequentialRule{1});
    CHECK(a.g_hat == 2);
    CHECK(a.g_tilde == 3);
    CHECK_FALSE(a.fallback);

    const std::vector<double> dec = {5, 4, 3, 2, 1};
    const SequentialChoice b = sequential_select(dec, SequentialRule{1});
    CHECK(b.g_hat == 3);
    CHECK(b.g_tilde == 4);
    CHECK(b.fallback);

    const std::vector<double> flat = {2, 2, 2};
    const SequentialChoice c = sequential_select(flat, SequentialRule{1});
    CHECK(c.g_hat == 0);
    CHECK(c.g_tilde == 1);

    CHECK_THROWS_AS(sequential_select(flat, SequentialRule{3}), ValidationError);
    CHECK_THROWS_AS(sequential_select(flat, SequentialRule{0}), ValidationError);
}

TEST_CASE("make_folds partitions rows deterministically") {
    Rng a(3), b(3);
    const auto f1 = make_folds(23, 5, a);
    const auto f2 = make_folds(23, 5, b);
    CHECK(f1 == f2);
    std::set<Index> all;
    for (const auto& f : f1) {
        CHECK(std::is_sorted(f.begin(), f.end()));
        CHECK((f.size() == 4 || f.size() == 5));
        all.insert(f.begin(), f.end());
    }
    CHECK(all.size() == 23);
}

TEST_CASE("cross_validate invariants") {
    Rng rng(10);
    const Matrix X = draw_gaussian(100, ar1(20, 0.5), rng);
    const Vector y = X.col(0) - X.col(5) + gaussian_vector(100, rng);
    const CvLassoFit cv = cross_validate(X, y, LossKind::squared, LassoConfig{});
    CHECK(cv.g_hat <= cv.g_tilde);
    CHECK(cv.g_tilde < cv.grid.size());
    CHECK(static_cast<Index>(cv.path.size()) == cv.g_tilde + 1);
    CHECK(static_cast<Index>(cv.cv_errors.size()) == cv.g_tilde + 1);
    CHECK(cv.folds.size() == 10);
    for (const auto& fp : cv.fold_paths) CHECK(static_cast<Index>(fp.size()) == cv.g_tilde + 1);
    for (Index j : cv.selected().active)
        CHECK(std::binary_search(cv.union_active.begin(), cv.union_active.end(), j));
    // union_active is exactly the full active set at g_hat plus every fold active set up to g_tilde.
    std::set<Index> expect(cv.selected().active.begin(), cv.selected().active.end());
    for (const auto& fp : cv.fold_paths)
        for (const auto& fit : fp) expect.insert(fit.active.begin(), fit.active.end());
    CHECK(IndexSet(expect.begin(), expect.end()) == cv.union_active);
    // cv_errors are summed held-out losses.
    double e0 = 0.0;
    for (std::size_t k = 0; k < cv.folds.size(); ++k)
        e0 += heldout_loss(cv.fold_paths[k][0], X, y, LossKind::squared, cv.folds[k]);
    CHECK(cv.cv_errors[0] == doctest::Approx(e0));
}

TEST_CASE("cross_validate rejects bad fold counts") {
    Rng rng(11);
    const Matrix X = gaussian_matrix(5, 3, rng);
    const Vector y = gaussian_vector(5, rng);
    const LambdaGrid grid = default_grid(X, y, LossKind::squared, 10, 0.1);
    Rng r2(1);
    CHECK_THROWS_AS(cross_validate(X, y, LossKind::squared, grid, 1, SequentialRule{}, r2), ValidationError);
    CHECK_THROWS_AS(cross_validate(X, y, LossKind::squared, grid, 6, SequentialRule{}, r2), ValidationError);
}

TEST_CASE("pure noise with a strong penalty grid leaves the union active set mostly empty") {
    Rng rng(12);
    int empty = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix X = gaussian_matrix(80, 10, rng);
        const Vector y = gaussian_vector(80, rng);
        const double lmax = PathSolver(X, y, LossKind::squared).lambda_max();
        const LambdaGrid grid({5.0 * lmax, 4.0 * lmax, 3.0 * lmax, 2.5 * lmax, 2.0 * lmax, 1.8 * lmax, 1.6 * lmax});
        Rng fold_rng(rep);
        const CvLassoFit cv = cross_validate(X, y, LossKind::squared, grid, 5, SequentialRule{}, fold_rng);
        if (cv.union_active.empty()) ++empty;
    }
    CHECK(empty >= 15);
}

TEST_CASE("planted sparse signal is covered by the union active set") {
    Rng rng(13);
    int covered = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const Matrix X = gaussian_matrix(200, 50, rng);
        const Vector y = 0.5 * X.col(3) - 0.5 * X.col(17) + 0.5 * X.col(41) + gaussian_vector(200, rng);
        LassoConfig cfg;
        cfg.fold_seed = static_cast<std::uint64_t>(rep);
        const CvLassoFit cv = cross_validate(X, y, LossKind::squared, cfg);
        const auto& A = cv.union_active;
        if (std::binary_search(A.begin(), A.end(), 3) && std::binary_search(A.begin(), A.end(), 17) &&
            std::binary_search(A.begin(), A.end(), 41))
            ++covered;
    }
    CHECK(covered >= 45);
}

TEST_CASE("cross_validate is byte-identical after serialization") {
    Rng rng(14);
    const Matrix X = gaussian_matrix(60, 12, rng);
    const Vector y = X.col(1) + gaussian_vector(60, rng);
    const std::string a = to_json(cross_validate(X, y, LossKind::squared, LassoConfig{})).dump();
    const std::string b = to_json(cross_validate(X, y, LossKind::squared, LassoConfig{})).dump();
    CHECK(a == b);
    // And the round trip is lossless.
    CHECK(to_json(cv_lasso_fit_from_json(Json::parse(a))).dump() == a);
}

TEST_CASE("removing an inactive column leaves the fit unchanged") {
    Rng rng(15);
    SolverOptions tight;
    tight.tolerance = 1e-13;
    int checked = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix X = draw_gaussian(50, ar1(12, 0.3), rng);
        const Vector y = X.col(0) - 0.8 * X.col(6) + gaussian_vector(50, rng);
        const double lmax = PathSolver(X, y, LossKind::squared).lambda_max();
        for (double frac : {0.5, 0.2, 0.08}) {
            const LassoFit full = PathSolver(X, y, LossKind::squared, tight).solve(frac * lmax);
            for (Index j = 0; j < 12; ++j) {
                if (full.beta[j] != 0.0) continue;
                const LassoFit drop = PathSolver(drop_column(X, j), y, LossKind::squared, tight).solve(frac * lmax);
                const Vector expect = drop_entry(full.beta, j);
                CHECK((drop.beta - expect).cwiseAbs().maxCoeff() < 1e-8);
                CHECK(std::abs(drop.intercept - full.intercept) < 1e-8);
                ++checked;
            }
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("columns outside the union active set do not change cross-validation") {
    Rng rng(16);
    const Matrix X = draw_gaussian(60, ar1(25, 0.5), rng);
    const Vector y = X.col(2) - X.col(11) + gaussian_vector(60, rng);
    const CvLassoFit full = cross_validate(X, y, LossKind::squared, LassoConfig{});
    int checked = 0;
    for (Index j = 0; j < 25; ++j) {
        if (std::binary_search(full.union_active.begin(), full.union_active.end(), j)) continue;
        const CvLassoFit loco = cross_validate(drop_column(X, j), y, LossKind::squared, full.plan(), SequentialRule{});
        CHECK(loco.g_hat == full.g_hat);
        const Vector expect = drop_entry(full.selected().beta, j);
        CHECK((loco.selected().beta - expect).cwiseAbs().maxCoeff() < 1e-8);
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("logistic loss requires a binary response") {
    Rng rng(17);
    const Matrix X = gaussian_matrix(20, 3, rng);
    CHECK_THROWS_AS(PathSolver(X, gaussian_vector(20, rng), LossKind::logistic), ValidationError);
}
