#pragma once

#include "dcrt/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dcrt {

struct LassoConfig;

enum class ResponseKind { continuous, binary };

const char* to_string(ResponseKind kind);

/// Response column plus covariate matrix with column labels.
struct DataSet {
    Vector y;
    Matrix X;
    std::vector<std::string> names;
    ResponseKind response_kind = ResponseKind::continuous;
    std::string response_name = "y";

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    /// Throws ValidationError when any invariant is violated.
    void validate() const;

    /// Index of the column labelled `name`; throws ValidationError naming the label otherwise.
    Index column(const std::string& name) const;
};

/// Binary iff every value is exactly 0 or 1.
ResponseKind infer_response_kind(const Vector& y);

/// Reads a comma-separated file with one header row. Covariates keep header order.
DataSet load_csv(const std::filesystem::path& path, const std::string& response_column);

enum class ModelSource { exact, ledoit_wolf, nodewise };

const char* to_string(ModelSource source);
ModelSource model_source_from_string(const std::string& name);

/// Joint Gaussian model for the covariate rows.
struct CovariateModel {
    Vector mean;
    Matrix covariance;
    ModelSource source = ModelSource::exact;

    Index p() const { return mean.size(); }

    /// Symmetry within 1e-10, positive diagonal, and a Cholesky whose smallest pivot is at
    /// least 1e-12 times the largest.
    void validate() const;
};

// Residual families for X_j = intercept + Z gamma + e. Every family is centered except
// DiscreteNoise, whose row mean is folded into the conditional mean.
struct GaussianNoise {};
struct LaplaceNoise {
    double scale = 1.0;
};
struct GammaNoise {
    double shape = 1.0;
    double rate = 1.0;
};
struct DiscreteNoise {
    std::vector<double> support; ///< ascending offsets from intercept + Z gamma
    Matrix pmf;                  ///< one shared row, or one row per observation
};
using NoiseFamily = std::variant<GaussianNoise, LaplaceNoise, GammaNoise, DiscreteNoise>;

/// Law of one covariate given all the others.
struct ConditionalLaw {
    Vector gamma;          ///< coefficients on X_{-j}, in column order
    double intercept = 0.0;
    double sigma = 1.0;    ///< conditional standard deviation (root-mean over rows when heteroscedastic)
    NoiseFamily family = GaussianNoise{};

    bool is_gaussian() const { return std::holds_alternative<GaussianNoise>(family); }
    void validate() const;
};

/// Gaussian law with the given linear part.
ConditionalLaw gaussian_law(Vector gamma, double intercept, double sigma);

/// Centered Laplace with variance 2 * scale^2, independent of Z.
ConditionalLaw laplace_law(Index dim_z, double mean, double scale);

/// Gamma(shape, rate) covariate independent of Z.
ConditionalLaw gamma_law(Index dim_z, double shape, double rate);

/// Discrete covariate independent of Z with values `support` and probabilities `probs`.
ConditionalLaw discrete_law(Index dim_z, const std::vector<double>& support, const std::vector<double>& probs);

/// E[x | Z] row-wise.
Vector conditional_mean(const ConditionalLaw& law, const Matrix& Z);

/// Conditional standard deviation of row i.
double row_sigma(const ConditionalLaw& law, Index row);

/// P(e <= t) for row i (left limit when `strict`).
double residual_cdf(const ConditionalLaw& law, Index row, double t, bool strict = false);

/// gamma = S_{-j,-j}^{-1} S_{-j,j}; sigma^2 = S_jj - S_{j,-j} gamma; intercept = mu_j - gamma' mu_{-j}.
ConditionalLaw conditional_law(const CovariateModel& model, Index j);

/// All p conditional laws through one inverse of the covariance.
std::vector<ConditionalLaw> all_conditional_laws(const CovariateModel& model);

struct LedoitWolfEstimate {
    CovariateModel model;
    double intensity = 0.0;   ///< shrinkage weight on the scaled identity, in [0, 1]
    Vector rescaling;         ///< the diagonal D applied as D S D
};

/// Shrinkage toward a scaled identity with the closed-form intensity, then diagonal rescaling so
/// each implied conditional variance matches the mean squared residual of the implied regression.
LedoitWolfEstimate ledoit_wolf(const Matrix& X);
CovariateModel estimate_ledoit_wolf(const Matrix& X);

/// Cross-validated lasso of each column on the rest; sigma^2 is the mean squared residual.
std::vector<ConditionalLaw> estimate_nodewise_lasso(const Matrix& X, const LassoConfig& config);

/// One draw of x | Z, row-wise independent.
Vector resample_column(const ConditionalLaw& law, const Matrix& Z, Rng& rng);
/// Same as resample_column when the conditional mean is already known.
Vector resample_from_mean(const ConditionalLaw& law, const Vector& mean, Rng& rng);

} // namespace dcrt
