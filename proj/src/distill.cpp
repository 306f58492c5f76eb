#include "dcrt/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcrt {

Index default_top_k(Index p) {
    if (p < 2) return 1;
    return std::max<Index>(1, static_cast<Index>(std::ceil(2.0 * std::log(static_cast<double>(p)))));
}

namespace {

LossKind loss_for(ResponseKind kind) { return kind == ResponseKind::binary ? LossKind::logistic : LossKind::squared; }

} // namespace

YDistillation y_distillation_from_fit(const LassoFit& fit, const Matrix& Z, ResponseKind kind) {
    YDistillation out;
    out.beta_z = fit.beta;
    out.intercept = fit.intercept;
    out.d_y = fit.predict(Z);
    out.kind = kind;
    out.top_cols.resize(Z.rows(), 0);
    return out;
}

YDistillation distill_y_d0(const Matrix& Z, const Vector& y, ResponseKind kind, const CvPlan& plan,
                           const LassoConfig& config) {
    if (Z.rows() != y.size()) throw ValidationError("Z and y have different row counts");
    if (Z.cols() == 0) {
        LassoFit fit;
        fit.beta = Vector(0);
        const double m = y.mean();
        fit.intercept = kind == ResponseKind::binary ? std::log(std::clamp(m, 1e-10, 1 - 1e-10) / (1 - std::clamp(m, 1e-10, 1 - 1e-10))) : m;
        return y_distillation_from_fit(fit, Z, kind);
    }
    const CvLassoFit cv = cross_validate(Z, y, loss_for(kind), plan, config.rule, config.solver);
    return y_distillation_from_fit(cv.selected(), Z, kind);
}

YDistillation distill_y_d0(const Matrix& Z, const Vector& y, ResponseKind kind, const LassoConfig& config) {
    if (Z.cols() == 0) return distill_y_d0(Z, y, kind, CvPlan{}, config);
    return distill_y_d0(Z, y, kind, make_cv_plan(Z, y, loss_for(kind), config), config);
}

YDistillation attach_top_columns(YDistillation base, const Matrix& Z, const Vector& y, Index k) {
    const Index q = Z.cols();
    if (k < 1 || k > q) throw ValidationError("top-k size must lie in [1, number of Z columns]");
    IndexSet nonzero;
    for (Index j = 0; j < q; ++j)
        if (base.beta_z[j] != 0.0) nonzero.push_back(j);
    std::stable_sort(nonzero.begin(), nonzero.end(),
                     [&](Index a, Index b) { return std::abs(base.beta_z[a]) > std::abs(base.beta_z[b]); });
    IndexSet chosen(nonzero.begin(), nonzero.begin() + std::min<Index>(k, static_cast<Index>(nonzero.size())));

    if (static_cast<Index>(chosen.size()) < k) {
        const Vector yc = y.array() - y.mean();
        std::vector<double> corr(static_cast<std::size_t>(q), 0.0);
        for (Index j = 0; j < q; ++j) {
            const Vector zc = Z.col(j).array() - Z.col(j).mean();
            const double denom = zc.norm() * yc.norm();
            corr[static_cast<std::size_t>(j)] = denom > 0 ? std::abs(zc.dot(yc)) / denom : 0.0;
        }
        IndexSet rest;
        for (Index j = 0; j < q; ++j)
            if (std::find(chosen.begin(), chosen.end(), j) == chosen.end()) rest.push_back(j);
        std::stable_sort(rest.begin(), rest.end(), [&](Index a, Index b) {
            return corr[static_cast<std::size_t>(a)] > corr[static_cast<std::size_t>(b)];
        });
        for (Index j : rest) {
            if (static_cast<Index>(chosen.size()) == k) break;
            chosen.push_back(j);
        }
    }
    base.top_idx = chosen;
    base.top_cols = Z(Eigen::all, chosen);
    return base;
}

YDistillation distill_y_dI(const Matrix& Z, const Vector& y, ResponseKind kind, Index k, const LassoConfig& config) {
    if (k < 1 || k > Z.cols()) throw ValidationError("top-k size must lie in [1, number of Z columns]");
    return attach_top_columns(distill_y_d0(Z, y, kind, config), Z, y, k);
}

XDistillation distill_x(const ConditionalLaw& law, const Matrix& Z) {
    XDistillation out;
    out.d_x = conditional_mean(law, Z);
    out.sigma_x = law.sigma;
    if (std::holds_alternative<DiscreteNoise>(law.family) && std::get<DiscreteNoise>(law.family).pmf.rows() > 1) {
        out.sigma_rows.resize(Z.rows());
        for (Index i = 0; i < Z.rows(); ++i) out.sigma_rows[i] = row_sigma(law, i);
    }
    return out;
}

Distillation combine(const YDistillation& ydist, const XDistillation& xdist) {
    if (ydist.d_y.size() != xdist.d_x.size()) throw ValidationError("y and x distillations have different lengths");
    Distillation d;
    d.d_y = ydist.d_y;
    d.top_cols = ydist.top_cols;
    d.top_idx = ydist.top_idx;
    d.k = static_cast<Index>(ydist.top_idx.size());
    d.kind = ydist.kind;
    d.d_x = xdist.d_x;
    d.sigma_x = xdist.sigma_x;
    d.sigma_rows = xdist.sigma_rows;
    return d;
}

Vector response_residual(const Vector& y, const Distillation& dist) {
    if (y.size() != dist.d_y.size()) throw ValidationError("response length does not match the distillation");
    if (dist.kind == ResponseKind::continuous) return y - dist.d_y;
    Vector r(y.size());
    for (Index i = 0; i < y.size(); ++i) r[i] = y[i] - 1.0 / (1.0 + std::exp(-dist.d_y[i]));
    return r;
}

} // namespace dcrt
