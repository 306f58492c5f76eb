#pragma once

#include "dcrt/common.hpp"
#include "dcrt/data.hpp"
#include "dcrt/lasso.hpp"

namespace dcrt {

/// What the y-distillation extracts from (y, Z).
struct YDistillation {
    Vector d_y;                 ///< Z beta_z + intercept (the linear predictor for binary y)
    Vector beta_z;
    double intercept = 0.0;
    IndexSet top_idx;           ///< k columns of Z, by descending |beta_z|
    Matrix top_cols;            ///< n x k
    ResponseKind kind = ResponseKind::continuous;
};

/// Low-dimensional summaries consumed by every distilled statistic.
struct Distillation {
    Vector d_y;
    Matrix top_cols;
    IndexSet top_idx;
    Vector d_x;
    double sigma_x = 1.0;
    Vector sigma_rows;          ///< per-row conditional sd; empty when homoscedastic
    Index k = 0;
    ResponseKind kind = ResponseKind::continuous;

    bool heteroscedastic() const { return sigma_rows.size() > 0; }
    double sigma(Index row) const { return heteroscedastic() ? sigma_rows[row] : sigma_x; }
};

/// ceil(2 log p) for p covariates, at least 1.
Index default_top_k(Index p);

/// Cross-validated lasso of y on Z (squared loss, or L1-penalized logistic for binary y).
YDistillation distill_y_d0(const Matrix& Z, const Vector& y, ResponseKind kind, const LassoConfig& config);
YDistillation distill_y_d0(const Matrix& Z, const Vector& y, ResponseKind kind, const CvPlan& plan,
                           const LassoConfig& config);

/// d0 plus the k columns of Z with the largest |beta_z|. Ties go to the lower column index; when fewer
/// than k coefficients are nonzero the rest are the largest |corr(Z_col, y)| among unused columns.
YDistillation distill_y_dI(const Matrix& Z, const Vector& y, ResponseKind kind, Index k, const LassoConfig& config);

/// Turns a fitted y-distillation into one with the top-k columns attached.
YDistillation attach_top_columns(YDistillation base, const Matrix& Z, const Vector& y, Index k);

/// Builds the distillation from a lasso fit on (y, Z).
YDistillation y_distillation_from_fit(const LassoFit& fit, const Matrix& Z, ResponseKind kind);

struct XDistillation {
    Vector d_x;
    double sigma_x = 1.0;
    Vector sigma_rows;
};

/// d_x = E[x | Z] from the law; never sees the observed x.
XDistillation distill_x(const ConditionalLaw& law, const Matrix& Z);

Distillation combine(const YDistillation& ydist, const XDistillation& xdist);

/// y - d_y for continuous responses; y - expit(d_y) for binary responses.
Vector response_residual(const Vector& y, const Distillation& dist);

} // namespace dcrt
