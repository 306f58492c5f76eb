#include "dcrt/crt.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dcrt {

const char* to_string(StatisticKind kind) {
    switch (kind) {
    case StatisticKind::d0: return "d0";
    case StatisticKind::dI: return "dI";
    case StatisticKind::ocrt_lasso: return "ocrt_lasso";
    case StatisticKind::ocrt_lasso_no_soft: return "ocrt_lasso_no_soft";
    case StatisticKind::ocrt_lasso_centered: return "ocrt_lasso_centered";
    case StatisticKind::gcm: return "gcm";
    case StatisticKind::hrt: return "hrt";
    case StatisticKind::custom: return "custom";
    }
    return "?";
}

StatisticKind statistic_kind_from_string(const std::string& name) {
    if (name == "d0") return StatisticKind::d0;
    if (name == "dI") return StatisticKind::dI;
    if (name == "ocrt" || name == "ocrt_lasso") return StatisticKind::ocrt_lasso;
    if (name == "ocrt_lasso_no_soft") return StatisticKind::ocrt_lasso_no_soft;
    if (name == "ocrt_lasso_centered") return StatisticKind::ocrt_lasso_centered;
    if (name == "gcm") return StatisticKind::gcm;
    if (name == "hrt") return StatisticKind::hrt;
    throw ValidationError("unknown method '" + name + "' (valid: d0, dI, ocrt, ocrt_lasso_no_soft, ocrt_lasso_centered, gcm, hrt)");
}

const char* to_string(OcrtVariant v) {
    switch (v) {
    case OcrtVariant::original: return "ocrt_lasso";
    case OcrtVariant::no_soft: return "ocrt_lasso_no_soft";
    case OcrtVariant::centered: return "ocrt_lasso_centered";
    }
    return "?";
}

// ---------------------------------------------------------------------------------------------
// Resampling engine

double rank_p_value(double observed, const std::vector<double>& resampled) {
    long count = 0;
    for (double t : resampled)
        if (t >= observed) ++count;
    return (1.0 + static_cast<double>(count)) / (static_cast<double>(resampled.size()) + 1.0);
}

TestOutcome crt_p_value(const StatisticFn& statistic, const Vector& y, const Vector& x, const Matrix& Z,
                        const ConditionalLaw& law, long M, Rng& rng, std::string method) {
    if (M < 1) throw ValidationError("resample count M must be at least 1");
    if (x.size() != y.size() || Z.rows() != y.size()) throw ValidationError("y, x and Z have inconsistent lengths");
    const Vector mean = conditional_mean(law, Z);
    const double observed = statistic(y, x);
    std::vector<double> draws(static_cast<std::size_t>(M));
    for (long m = 0; m < M; ++m) {
        const Vector xm = resample_from_mean(law, mean, rng);
        try {
            draws[static_cast<std::size_t>(m)] = statistic(y, xm);
        } catch (const std::exception& e) {
            throw NumericalError("statistic failed on resample " + std::to_string(m) + ": " + e.what());
        }
    }
    TestOutcome out;
    out.p_value = rank_p_value(observed, draws);
    out.statistic = observed;
    out.method = std::move(method);
    out.M_used = M;
    return out;
}

// ---------------------------------------------------------------------------------------------
// d0

double d0_statistic(const Vector& y, const Vector& x, const Distillation& dist) {
    if (x.size() != dist.d_x.size()) throw ValidationError("x length does not match the distillation");
    const Vector e = x - dist.d_x;
    const double denom = e.squaredNorm();
    if (!(denom > 0)) throw NumericalError("x coincides with its conditional mean; statistic undefined");
    return std::abs(response_residual(y, dist).dot(e)) / denom;
}

TestOutcome d0_rf_from_residual(const Vector& r, const Vector& e, const Distillation& dist) {
    TestOutcome out;
    out.method = "d0_rf";
    const double t = std::abs(r.dot(e));
    out.statistic = t;
    double scale;
    if (dist.heteroscedastic())
        scale = std::sqrt((dist.sigma_rows.array().square() * r.array().square()).sum());
    else
        scale = dist.sigma_x * r.norm();
    if (!(scale > 0)) {
        warn("response residual is zero; the statistic carries no information (p = 1)");
        out.p_value = 1.0;
        return out;
    }
    out.p_value = std::min(1.0, 2.0 * normal_upper_tail(t / scale));
    return out;
}

TestOutcome d0_rf_p_value(const Vector& y, const Vector& x, const Distillation& dist) {
    if (x.size() != dist.d_x.size()) throw ValidationError("x length does not match the distillation");
    return d0_rf_from_residual(response_residual(y, dist), x - dist.d_x, dist);
}

// ---------------------------------------------------------------------------------------------
// dI

double dI_statistic(const Vector& y, const Vector& x, const Distillation& dist) {
    if (dist.k < 1) throw ValidationError("dI statistic needs k >= 1 top columns");
    const Index n = y.size();
    const Index k = dist.k;
    const Vector e = x - dist.d_x;
    Matrix D(n, k + 1);
    D.col(0) = e;
    for (Index c = 0; c < k; ++c) D.col(c + 1) = e.cwiseProduct(dist.top_cols.col(c));
    const Vector r = response_residual(y, dist);

    Eigen::ColPivHouseholderQR<Matrix> qr(D);
    Vector beta;
    if (qr.rank() == k + 1) {
        beta = qr.solve(r);
    } else {
        warn("interaction design is rank deficient; using the pseudoinverse solution");
        beta = Eigen::CompleteOrthogonalDecomposition<Matrix>(D).solve(r);
    }
    return beta[0] * beta[0] + beta.tail(k).squaredNorm() / static_cast<double>(k);
}

TestOutcome dI_rf_from_residual(const Vector& r, const Vector& e, const Distillation& dist) {
    const Index n = r.size();
    const Index k = dist.k;
    TestOutcome out;
    out.method = "dI_rf";

    Matrix C(n, k + 1);
    C.col(0).setOnes();
    if (k > 0) C.rightCols(k) = dist.top_cols;
    Matrix B = C;
    if (k > 0) B.rightCols(k) /= std::sqrt(static_cast<double>(k));

    Matrix H;
    if (dist.heteroscedastic())
        H = C.transpose() * dist.sigma_rows.array().square().matrix().asDiagonal() * C;
    else
        H = dist.sigma_x * dist.sigma_x * (C.transpose() * C);
    Eigen::FullPivLU<Matrix> lu(H);
    if (!lu.isInvertible()) {
        std::ostringstream msg;
        msg << "quadratic-form matrix H is singular (rank " << lu.rank() << " of " << H.rows() << ")";
        throw NumericalError(msg.str());
    }
    const Matrix Zt = B.transpose() * r.asDiagonal();    // (k+1) x n
    const Matrix A = lu.solve(Zt);                        // H^{-1} Z~
    const Vector v = A * e;
    const double t = v.squaredNorm();
    out.statistic = t;

    Matrix cov;
    if (dist.heteroscedastic())
        cov = A * dist.sigma_rows.array().square().matrix().asDiagonal() * A.transpose();
    else
        cov = dist.sigma_x * dist.sigma_x * (A * A.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
    std::vector<double> w;
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    for (Index i = es.eigenvalues().size() - 1; i >= 0; --i) {
        const double lam = es.eigenvalues()[i];
        if (lam > 1e-12 * top && lam > 0) w.push_back(lam);
    }
    if (w.empty() || !(top > 0)) {
        out.p_value = 1.0;
        return out;
    }
    out.p_value = imhof_tail(w, t);
    return out;
}

TestOutcome dI_rf_p_value(const Vector& y, const Vector& x, const Distillation& dist) {
    if (x.size() != dist.d_x.size()) throw ValidationError("x length does not match the distillation");
    return dI_rf_from_residual(response_residual(y, dist), x - dist.d_x, dist);
}

// ---------------------------------------------------------------------------------------------
// Imhof

void QuadFormSpec::validate() const {
    if (weights.empty()) throw ValidationError("quadratic form needs at least one weight");
    double top = 0.0;
    for (double w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("quadratic-form weights must be finite and nonnegative");
        top = std::max(top, w);
    }
    if (!(top > 0)) throw ValidationError("quadratic form needs a positive weight");
    if (!(observed >= 0) || !std::isfinite(observed)) throw ValidationError("observed value must be finite and nonnegative");
}

namespace {

// Wynn's epsilon algorithm on a sequence of partial sums; returns the latest accelerated estimate.
double wynn_epsilon(const std::vector<double>& s) {
    const std::size_t n = s.size();
    if (n < 3) return s.back();
    double best = s.back();
    // e_{-1} = 0, e_0 = s. Even columns hold estimates.
    std::vector<double> em1(n + 1, 0.0);
    std::vector<double> e0 = s;
    for (std::size_t col = 1; col < n; ++col) {
        std::vector<double> next(n - col);
        bool ok = true;
        for (std::size_t i = 0; i + col < n; ++i) {
            const double diff = e0[i + 1] - e0[i];
            if (diff == 0.0) { ok = false; break; }
            next[i] = em1[i + 1] + 1.0 / diff;
        }
        if (!ok) break;
        em1 = e0;
        e0 = next;
        if (col % 2 == 0) best = e0.back();
    }
    return best;
}

// Bisecting Gauss-Kronrod to an absolute error target.
template <class F>
double integrate_abs(const F& f, double a, double b, double tol, int depth) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    double err = 0.0;
    const double v = GK::integrate(f, a, b, 0, 0.0, &err);
    if (err <= tol || depth == 0) return v;
    const double m = 0.5 * (a + b);
    return integrate_abs(f, a, m, 0.5 * tol, depth - 1) + integrate_abs(f, m, b, 0.5 * tol, depth - 1);
}

} // namespace

double imhof_tail(const QuadFormSpec& spec) {
    spec.validate();
    const double t = spec.observed;
    if (t == 0.0) return 1.0;
    std::vector<double> w;
    for (double x : spec.weights)
        if (x > 0) w.push_back(x);

    const auto integrand = [&](double u) {
        if (u == 0.0) {
            double s = 0.0;
            for (double l : w) s += l;
            return 0.5 * (s - t);
        }
        double theta = -0.5 * t * u;
        double logrho = 0.0;
        for (double l : w) {
            theta += 0.5 * std::atan(l * u);
            logrho += 0.25 * std::log1p(l * l * u * u);
        }
        return std::sin(theta) / (u * std::exp(logrho));
    };

    // Truncation bound for the tail beyond U (Imhof 1961).
    const double d = static_cast<double>(w.size());
    double log_prod = 0.0;
    for (double l : w) log_prod += 0.5 * std::log(l);
    const auto tail_bound = [&](double U) {
        return 1.0 / (std::numbers::pi * 0.5 * d * std::exp(0.5 * d * std::log(U) + log_prod));
    };

    const double h = 2.0 * std::numbers::pi / t;
    std::vector<double> partial;
    double sum = 0.0, a = 0.0, last_est = 0.0;
    int stable = 0;
    const int max_chunks = 4000;
    const double wmax = *std::max_element(w.begin(), w.end());
    for (int c = 0; c < max_chunks; ++c) {
        const double b = a + h;
        if (c == 0) {
            // The integrand varies on the scale 1/wmax, which can be far below the half-period.
            double lo = 0.0;
            for (double mid = 0.01 / wmax; mid < b; mid *= 4.0) {
                sum += integrate_abs(integrand, lo, mid, 1e-12, 20);
                lo = mid;
            }
            sum += integrate_abs(integrand, lo, b, 1e-12, 20);
        } else {
            sum += integrate_abs(integrand, a, b, 1e-12, 20);
        }
        partial.push_back(sum);
        a = b;
        if (tail_bound(a) < 1e-9) {
            last_est = sum;
            stable = 3;
            break;
        }
        const double est = wynn_epsilon(std::vector<double>(partial.end() - std::min<std::size_t>(partial.size(), 30), partial.end()));
        if (c >= 8 && std::abs(est - last_est) < 1e-10) {
            if (++stable >= 3) {
                last_est = est;
                break;
            }
        } else {
            stable = 0;
        }
        last_est = est;
    }
    if (stable < 3) {
        std::ostringstream msg;
        msg << "Imhof integral did not converge; residual bound " << tail_bound(a);
        throw NumericalError(msg.str());
    }
    const double p = 0.5 + last_est / std::numbers::pi;
    return std::clamp(p, 1e-12, 1.0);
}

double imhof_tail(std::vector<double> weights, double t) {
    std::sort(weights.begin(), weights.end(), std::greater<>());
    return imhof_tail(QuadFormSpec{std::move(weights), t});
}

// ---------------------------------------------------------------------------------------------
// Gaussian transformation

GaussTransform gauss_transform(const Vector& x, const ConditionalLaw& law, const Matrix& Z, Rng& rng) {
    law.validate();
    if (Z.rows() != x.size() || Z.cols() != law.gamma.size()) throw ValidationError("law dimensions do not match Z");
    const Index n = x.size();
    GaussTransform out;
    out.u.resize(n);
    out.sigmas.resize(n);
    const Vector base = (Z * law.gamma).array() + law.intercept;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    bool clipped = false;
    const auto clip = [&](double v) {
        if (v < 1e-12 || v > 1.0 - 1e-12) {
            clipped = true;
            return std::clamp(v, 1e-12, 1.0 - 1e-12);
        }
        return v;
    };
    for (Index i = 0; i < n; ++i) {
        const double s = row_sigma(law, i);
        out.sigmas[i] = s;
        const double e = x[i] - base[i];
        if (law.is_gaussian()) {
            out.u[i] = e;  // the map is the identity for a matching Gaussian law
            continue;
        }
        double v;
        if (const auto* f = std::get_if<DiscreteNoise>(&law.family)) {
            Index hit = -1;
            for (std::size_t k = 0; k < f->support.size(); ++k)
                if (std::abs(f->support[k] - e) <= 1e-9 * (1.0 + std::abs(e))) hit = static_cast<Index>(k);
            if (hit < 0) {
                std::ostringstream msg;
                msg << "row " << i << ": value " << x[i] << " is outside the discrete support";
                throw ValidationError(msg.str());
            }
            const double a = f->support[static_cast<std::size_t>(hit)];
            const double lo = residual_cdf(law, i, a, true);
            const double hi = residual_cdf(law, i, a, false);
            v = clip(lo + (hi - lo) * unif(rng));
        } else {
            v = clip(residual_cdf(law, i, e, false));
        }
        out.u[i] = s * normal_quantile(v);
    }
    if (clipped) warn("conditional CDF saturated at 0 or 1; clipped to [1e-12, 1 - 1e-12]");
    return out;
}

// ---------------------------------------------------------------------------------------------
// oCRT

OcrtContext make_ocrt_context(const Matrix& Z, const Vector& y, ResponseKind kind, const LassoConfig& config) {
    OcrtContext ctx;
    ctx.Z = Z;
    ctx.loss = kind == ResponseKind::binary ? LossKind::logistic : LossKind::squared;
    ctx.plan = make_cv_plan(Z, y, ctx.loss, config);
    ctx.config = config;
    return ctx;
}

double ocrt_statistic(const Vector& y, const Vector& x, const OcrtContext& ctx, OcrtVariant variant) {
    const Index n = y.size();
    Matrix XZ(n, ctx.Z.cols() + 1);
    XZ.col(0) = x;
    XZ.rightCols(ctx.Z.cols()) = ctx.Z;
    const CvLassoFit cv = cross_validate(XZ, y, ctx.loss, ctx.plan, ctx.config.rule, ctx.config.solver);
    const LassoFit& fit = cv.selected();
    if (variant == OcrtVariant::original) return std::abs(fit.beta[0]);

    const Vector xc = x.array() - x.mean();
    const double xx = xc.squaredNorm();
    if (!(xx > 0)) return 0.0;
    // Fitted predictor with x held at its mean: the profile that the x-coordinate update sees.
    const Vector eta = (ctx.Z * fit.beta.tail(ctx.Z.cols())).array() + fit.intercept + fit.beta[0] * x.mean();
    Vector resid(n);
    if (ctx.loss == LossKind::squared)
        resid = y - eta;
    else
        for (Index i = 0; i < n; ++i) resid[i] = y[i] - 1.0 / (1.0 + std::exp(-eta[i]));
    const double w = xc.dot(resid) / xx;
    return variant == OcrtVariant::centered ? w : std::abs(w);
}

double ocrt_statistic(const Vector& y, const Vector& x, const Matrix& Z, ResponseKind kind, OcrtVariant variant,
                      const LassoConfig& config) {
    return ocrt_statistic(y, x, make_ocrt_context(Z, y, kind, config), variant);
}

double two_tailed_p_value(double observed, const std::vector<double>& resampled) {
    long above = 0, below = 0;
    for (double t : resampled) {
        if (t >= observed) ++above;
        if (t <= observed) ++below;
    }
    const double denom = static_cast<double>(resampled.size()) + 1.0;
    const double right = (1.0 + static_cast<double>(above)) / denom;
    const double left = (1.0 + static_cast<double>(below)) / denom;
    return std::min(1.0, 2.0 * std::min(right, left));
}

TestOutcome ocrt_p_value(const Vector& y, const Vector& x, const Matrix& Z, ResponseKind kind,
                         const ConditionalLaw& law, OcrtVariant variant, long M, Rng& rng,
                         const LassoConfig& config, int jobs) {
    if (M < 1) throw ValidationError("resample count M must be at least 1");
    const OcrtContext ctx = make_ocrt_context(Z, y, kind, config);
    const Vector mean = conditional_mean(law, Z);
    std::vector<Vector> xs(static_cast<std::size_t>(M));
    for (auto& xm : xs) xm = resample_from_mean(law, mean, rng);

    const double observed = ocrt_statistic(y, x, ctx, variant);
    std::vector<double> draws(static_cast<std::size_t>(M));
    parallel_for(M, jobs, [&](Index m) {
        draws[static_cast<std::size_t>(m)] = ocrt_statistic(y, xs[static_cast<std::size_t>(m)], ctx, variant);
    });
    TestOutcome out;
    out.statistic = observed;
    out.method = to_string(variant);
    out.M_used = M;
    out.p_value = variant == OcrtVariant::centered ? two_tailed_p_value(observed, draws) : rank_p_value(observed, draws);
    return out;
}

// ---------------------------------------------------------------------------------------------
// GCM

TestOutcome gcm_from_products(const Vector& R) {
    const Index n = R.size();
    if (n < 3) throw ValidationError("GCM needs at least 3 observations");
    const double mean = R.mean();
    const double sd = std::sqrt((R.array() - mean).square().mean());
    if (!(sd > 0)) throw NumericalError("GCM residual products have zero spread");
    TestOutcome out;
    out.method = "gcm";
    out.statistic = std::sqrt(static_cast<double>(n)) * mean / sd;
    out.p_value = std::min(1.0, 2.0 * normal_upper_tail(std::abs(out.statistic)));
    return out;
}

TestOutcome gcm_p_value(const Vector& y, const Vector& x, const Distillation& dist) {
    return gcm_from_products((x - dist.d_x).cwiseProduct(response_residual(y, dist)));
}

// ---------------------------------------------------------------------------------------------
// HRT

HrtFit hrt_fit(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config, Rng& rng,
               double train_fraction) {
    const Index n = y.size();
    if (n < 4) throw ValidationError("HRT needs at least 4 observations");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ValidationError("split fraction must lie in (0, 1)");
    IndexSet perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Index i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng() % static_cast<std::uint64_t>(i + 1)]);
    const Index ntrain = std::clamp<Index>(static_cast<Index>(std::lround(train_fraction * static_cast<double>(n))), 2, n - 2);

    HrtFit out;
    out.train.assign(perm.begin(), perm.begin() + ntrain);
    out.test.assign(perm.begin() + ntrain, perm.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    out.loss = kind == ResponseKind::binary ? LossKind::logistic : LossKind::squared;

    const Matrix Xtr = X(out.train, Eigen::all);
    const Vector ytr = y(out.train);
    LassoConfig cfg = config;
    cfg.folds = std::min<int>(cfg.folds, static_cast<int>(ntrain));
    const CvLassoFit cv = cross_validate(Xtr, ytr, out.loss, cfg);
    out.fit = cv.selected();
    return out;
}

namespace {

double risk(const Vector& y, const Vector& eta, LossKind loss) {
    double s = 0.0;
    if (loss == LossKind::squared) {
        s = (y - eta).squaredNorm();
    } else {
        for (Index i = 0; i < y.size(); ++i) {
            const double e = eta[i];
            const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
            s += softplus - y[i] * e;
        }
    }
    return s / static_cast<double>(y.size());
}

} // namespace

TestOutcome hrt_test(const HrtFit& hrt, Index j, const Matrix& X, const Vector& y, const ConditionalLaw& law,
                     long M, Rng& rng) {
    if (M < 1) throw ValidationError("resample count M must be at least 1");
    if (j < 0 || j >= X.cols()) throw ValidationError("column index out of range");
    const Matrix Xte = X(hrt.test, Eigen::all);
    const Vector yte = y(hrt.test);
    const Vector eta = hrt.fit.predict(Xte);
    const double bj = hrt.fit.beta[j];
    const double observed = risk(yte, eta, hrt.loss);

    // A column the fit ignores leaves every resampled risk equal to the observed one: p = 1.
    long count = M;
    double mean_risk = observed;
    if (bj != 0.0) {
        const Matrix Zte = drop_column(Xte, j);
        const Vector mean = conditional_mean(law, Zte);
        count = 0;
        mean_risk = 0.0;
        for (long m = 0; m < M; ++m) {
            const Vector xm = resample_from_mean(law, mean, rng);
            const double r = risk(yte, eta + bj * (xm - Xte.col(j)), hrt.loss);
            mean_risk += r;
            if (r <= observed) ++count;
        }
        mean_risk /= static_cast<double>(M);
    }

    TestOutcome out;
    out.method = "hrt";
    out.statistic = mean_risk - observed;
    out.M_used = M;
    out.p_value = (1.0 + static_cast<double>(count)) / (static_cast<double>(M) + 1.0);
    return out;
}

TestOutcome hrt_p_value(const Vector& y, Index j, const Matrix& X, ResponseKind kind, const ConditionalLaw& law,
                        long M, Rng& rng, double train_fraction, const LassoConfig& config) {
    const HrtFit fit = hrt_fit(X, y, kind, config, rng, train_fraction);
    return hrt_test(fit, j, X, y, law, M, rng);
}

} // namespace dcrt
