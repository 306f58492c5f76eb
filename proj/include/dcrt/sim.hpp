#pragma once

#include "dcrt/common.hpp"
#include "dcrt/data.hpp"
#include "dcrt/select.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dcrt {

enum class SupportKind { adjacent, equally_spaced };
enum class CovarianceKind { independent, ar1, equicorrelated };
enum class ResponseModel { linear, logistic, poisson, polynomial, interaction, rf_nonlinear };
enum class CovariateFamily { gaussian, laplace, gamma, bernoulli, poisson_residual };
enum class NoiseKind { gaussian, laplace };

struct SimDesign {
    Index n = 200;
    Index p = 200;
    Index s = 20;
    SupportKind support = SupportKind::adjacent;
    CovarianceKind covariance = CovarianceKind::ar1;
    double rho = 0.5;                 ///< AR(1) coefficient, or the equicorrelation
    ResponseModel response = ResponseModel::linear;
    double nu = 0.2;
    double cubic_weight = 0.3;
    Index n_interactions = 5;
    CovariateFamily family = CovariateFamily::gaussian;
    double family_a = 1.0;            ///< laplace: variance; gamma: shape; bernoulli: mean; poisson_residual: r
    double family_b = 1.0;            ///< gamma: rate
    NoiseKind noise = NoiseKind::gaussian;
    double noise_variance = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    /// Designs that test X = column 0 given the rest.
    bool single_test() const;
};

const char* to_string(SupportKind v);
const char* to_string(CovarianceKind v);
const char* to_string(ResponseModel v);
const char* to_string(CovariateFamily v);
const char* to_string(NoiseKind v);
SupportKind support_kind_from_string(const std::string& s);
CovarianceKind covariance_kind_from_string(const std::string& s);
ResponseModel response_model_from_string(const std::string& s);
CovariateFamily covariate_family_from_string(const std::string& s);
NoiseKind noise_kind_from_string(const std::string& s);

/// Covariance matrix of the Gaussian part of the design.
Matrix design_covariance(const SimDesign& design, Index dim);

struct CovariateDraw {
    Matrix X;
    CovariateModel model;                 ///< Gaussian, matching the first two moments
    std::vector<ConditionalLaw> laws;     ///< exact conditional laws where known, else from `model`
};

CovariateDraw gen_covariates(const SimDesign& design, Rng& rng);

struct ResponseDraw {
    Vector y;
    IndexSet support;     ///< non-null covariates
    Vector beta;
    ResponseKind kind = ResponseKind::continuous;
};

/// Support indices under the adjacent or equally spaced rule.
IndexSet support_indices(SupportKind kind, Index p, Index s);

ResponseDraw gen_response(const SimDesign& design, const Matrix& X, Rng& rng);

struct SimData {
    DataSet data;
    CovariateModel model;
    std::vector<ConditionalLaw> laws;
    IndexSet support;
    IndexSet tested;      ///< {0} for single-test designs, every column otherwise
};

SimData simulate(const SimDesign& design, std::uint64_t seed);

/// A method maps (data, seed) to its rejection set.
struct MethodSpec {
    std::string name;
    std::function<IndexSet(const SimData&, std::uint64_t)> run;
};

struct MethodOptions {
    double alpha = 0.1;
    ErrorRate error_rate = ErrorRate::fdr_bh;
    long M = 0;
    Index k = 0;
    LassoConfig lasso{};
};

/// d0, dI, d0_resample, dI_resample, d0_screen, dI_screen, hrt, gcm, ocrt.
const std::vector<std::string>& method_names();
MethodSpec make_method(const std::string& name, const MethodOptions& options, bool single_test);

struct RepMetrics {
    double power = 0.0;
    double fdp = 0.0;
    double any_false = 0.0;
    double type_I = 0.0;
};

/// Metrics of one rejection set relative to the tested columns.
RepMetrics rep_metrics(const IndexSet& rejected, const IndexSet& support, const IndexSet& tested);

struct Summary {
    double mean = 0.0;
    double se = 0.0;
};

/// Sample mean and sd / sqrt(count).
Summary summarize(const std::vector<double>& values);

struct MethodReport {
    std::string name;
    Summary power, fdr, fwer, type_I;
    double mean_time_ms = 0.0;
    int reps_ok = 0;
    int failures = 0;
};

struct ExperimentReport {
    SimDesign design;
    int reps = 0;
    std::uint64_t base_seed = 0;
    std::vector<MethodReport> methods;
};

ExperimentReport run_experiment(const SimDesign& design, const std::vector<MethodSpec>& methods, int reps,
                                std::uint64_t base_seed, int jobs = 1);

/// method,metric,mean,se,reps,failures — deterministic given the seed (no timings).
std::string to_csv(const ExperimentReport& report);

} // namespace dcrt
