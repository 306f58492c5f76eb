#pragma once

#include "dcrt/common.hpp"
#include "dcrt/data.hpp"
#include "dcrt/distill.hpp"
#include "dcrt/lasso.hpp"

#include <functional>
#include <string>

namespace dcrt {

/// One p-value with its statistic. M_used is 0 for resampling-free engines.
struct TestOutcome {
    std::string variable;
    double p_value = 1.0;
    double statistic = 0.0;
    std::string method;
    long M_used = 0;
};

enum class StatisticKind { d0, dI, ocrt_lasso, ocrt_lasso_no_soft, ocrt_lasso_centered, gcm, hrt, custom };

const char* to_string(StatisticKind kind);
StatisticKind statistic_kind_from_string(const std::string& name);

/// T(y, x). Whatever context it needs must be built from (y, Z) and the law alone.
using StatisticFn = std::function<double(const Vector& y, const Vector& x)>;

/// Algorithm-1 p-value: (1 + #{m : T(y, x_m) >= T(y, x)}) / (M + 1), draws made sequentially from `rng`.
TestOutcome crt_p_value(const StatisticFn& statistic, const Vector& y, const Vector& x, const Matrix& Z,
                        const ConditionalLaw& law, long M, Rng& rng, std::string method = "crt");

/// (1 + count) / (M + 1) for counts of resampled statistics >= the observed one.
double rank_p_value(double observed, const std::vector<double>& resampled);

/// |(y - d_y)'(x - d_x)| / ||x - d_x||^2.
double d0_statistic(const Vector& y, const Vector& x, const Distillation& dist);

/// Normal calibration of |(y - d_y)'(x - d_x)|: p = 2(1 - Phi(T / (sigma ||y - d_y||))). `e` replaces
/// x - d_x (the Gaussian transform output); per-row sigmas enter through sqrt(sum sigma_i^2 r_i^2).
TestOutcome d0_rf_from_residual(const Vector& r, const Vector& e, const Distillation& dist);
TestOutcome d0_rf_p_value(const Vector& y, const Vector& x, const Distillation& dist);

/// Main-effect square plus mean interaction square from least squares of y - d_y on
/// [(x - d_x), (x - d_x) * Z_top]. Rank-deficient designs use the minimum-norm solution.
double dI_statistic(const Vector& y, const Vector& x, const Distillation& dist);

/// Quadratic-form calibration of the interaction statistic.
TestOutcome dI_rf_from_residual(const Vector& r, const Vector& e, const Distillation& dist);
TestOutcome dI_rf_p_value(const Vector& y, const Vector& x, const Distillation& dist);

struct QuadFormSpec {
    std::vector<double> weights;
    double observed = 0.0;

    void validate() const;
};

/// P(sum_j w_j chi2_1 >= t) by Imhof's inversion integral.
double imhof_tail(const QuadFormSpec& spec);
double imhof_tail(std::vector<double> weights, double t);

struct GaussTransform {
    Vector u;       ///< replaces x - d_x
    Vector sigmas;  ///< per-row conditional sd
};

/// Monotone row-wise map of x to N(0, sigma_i^2) under the law; discrete laws use a uniform draw
/// between the left and right CDF limits at the observed value.
GaussTransform gauss_transform(const Vector& x, const ConditionalLaw& law, const Matrix& Z, Rng& rng);

enum class OcrtVariant { original, no_soft, centered };

const char* to_string(OcrtVariant v);

/// Shared pieces for the lasso-based oCRT statistics. The grid and folds come from (Z, y) only.
struct OcrtContext {
    Matrix Z;
    LossKind loss = LossKind::squared;
    CvPlan plan;
    LassoConfig config;
};

OcrtContext make_ocrt_context(const Matrix& Z, const Vector& y, ResponseKind kind, const LassoConfig& config);

/// Cross-validated joint lasso on [x, Z]. original: |beta_x|; no_soft: |x_c'(y - fit without x)| / ||x_c||^2;
/// centered: the signed no_soft value.
double ocrt_statistic(const Vector& y, const Vector& x, const OcrtContext& ctx, OcrtVariant variant);
double ocrt_statistic(const Vector& y, const Vector& x, const Matrix& Z, ResponseKind kind, OcrtVariant variant,
                      const LassoConfig& config);

/// Two-tailed: min(1, 2 min((1 + #{T_m >= T}) / (M + 1), (1 + #{T_m <= T}) / (M + 1))).
double two_tailed_p_value(double observed, const std::vector<double>& resampled);

TestOutcome ocrt_p_value(const Vector& y, const Vector& x, const Matrix& Z, ResponseKind kind,
                         const ConditionalLaw& law, OcrtVariant variant, long M, Rng& rng,
                         const LassoConfig& config, int jobs = 1);

/// Generalized covariance measure from the product of residuals.
TestOutcome gcm_from_products(const Vector& R);
TestOutcome gcm_p_value(const Vector& y, const Vector& x, const Distillation& dist);

/// Lasso fitted on one half, evaluated on the other.
struct HrtFit {
    IndexSet train;
    IndexSet test;
    LassoFit fit;
    LossKind loss = LossKind::squared;
};

HrtFit hrt_fit(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config, Rng& rng,
               double train_fraction = 0.5);

/// Held-out risk increase from resampling column j on the test half; p = (1 + #{risk_m <= risk}) / (M + 1).
TestOutcome hrt_test(const HrtFit& hrt, Index j, const Matrix& X, const Vector& y, const ConditionalLaw& law,
                     long M, Rng& rng);

TestOutcome hrt_p_value(const Vector& y, Index j, const Matrix& X, ResponseKind kind, const ConditionalLaw& law,
                        long M, Rng& rng, double train_fraction = 0.5, const LassoConfig& config = {});

} // namespace dcrt
