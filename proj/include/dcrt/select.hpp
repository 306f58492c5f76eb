#pragma once

#include "dcrt/common.hpp"
#include "dcrt/crt.hpp"
#include "dcrt/data.hpp"
#include "dcrt/distill.hpp"
#include "dcrt/lasso.hpp"

#include <exception>
#include <functional>
#include <map>
#include <string>

namespace dcrt {

enum class Engine { resampling, resampling_free };
enum class ErrorRate { fdr_bh, fwer_bonferroni };

const char* to_string(Engine e);
const char* to_string(ErrorRate e);
Engine engine_from_string(const std::string& name);
ErrorRate error_rate_from_string(const std::string& name);

struct SelectionConfig {
    StatisticKind method = StatisticKind::d0;
    Engine engine = Engine::resampling_free;
    Index k = 0;                 ///< dI top columns; 0 selects ceil(2 log p)
    double alpha = 0.1;          ///< 0 is allowed and rejects nothing
    ErrorRate error_rate = ErrorRate::fwer_bonferroni;
    bool screening = false;
    bool recycling = true;
    long M = 0;                  ///< 0 selects ceil(5p / alpha)
    std::uint64_t seed = 0;
    int jobs = 1;
    double hrt_fraction = 0.5;
    IndexSet targets;            ///< restrict testing to these columns; empty means all
    bool strict = false;         ///< rethrow per-variable failures instead of warning and setting p = 1
    LassoConfig lasso{};

    void validate() const;
    /// Resample count for `tested` hypotheses.
    long resample_count(Index tested) const;
};

/// M for a single test when unset.
inline constexpr long default_single_test_M = 2000;

struct SelectionResult {
    std::vector<std::string> names;
    Vector p_values;                      ///< 1 for screened-out variables
    std::vector<TestOutcome> outcomes;    ///< one per variable, in column order
    IndexSet screened;
    IndexSet rejected;
    IndexSet active_set;                  ///< union active set used for recycling (empty when unused)
    int cv_fits = 0;                      ///< cross-validated lasso fits performed, the full fit included
    double alpha = 0.1;
    ErrorRate error_rate = ErrorRate::fwer_bonferroni;
    std::string source = "exact";
    std::map<std::string, double> timings_ms;
};

/// Active set of the full cross-validated lasso at the selected penalty.
IndexSet screen(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config);

/// p'_j = p_j on S and 1 elsewhere.
Vector screened_p_values(const Vector& p_raw, const IndexSet& S, Index p);

/// y-distillations for each target column.
struct DistillationSet {
    std::vector<YDistillation> per_variable;   ///< indexed by column; only targets are filled
    std::vector<char> refitted;                ///< 1 when a leave-one-out fit was run
    int refits = 0;
    Vector full_prediction;                     ///< cached prediction of the full fit
    std::vector<std::exception_ptr> errors;     ///< per column; set when that leave-one-out fit failed
};

/// Leave-one-covariate-out distillations that reuse the full fit's grid and folds. With `recycling`,
/// columns outside the union active set read their fit off the full path instead of refitting.
DistillationSet distill_targets(const Matrix& X, const Vector& y, ResponseKind kind, const CvLassoFit& full,
                                const IndexSet& targets, bool recycling, const LassoConfig& config, int jobs = 1);

struct RecycleResult {
    CvLassoFit full;
    DistillationSet distillations;
};

/// One full cross-validation, then refits only for the union active set.
RecycleResult recycle_distillations(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config,
                                    int jobs = 1);

/// Step-up rule: reject the khat smallest with khat = max{k : p_(k) <= k alpha / p}. alpha <= 0 rejects nothing.
IndexSet bh(const Vector& p_values, double alpha);
/// {j : p_j <= alpha / p}; empty when alpha <= 0.
IndexSet bonferroni(const Vector& p_values, double alpha);

SelectionResult select(const DataSet& data, const std::vector<ConditionalLaw>& laws, const SelectionConfig& config);
SelectionResult select(const DataSet& data, const CovariateModel& model, const SelectionConfig& config);

/// |A n B| / |A u B|, with two empty sets counting as 1.
double jaccard(IndexSet a, IndexSet b);
/// Mean pairwise Jaccard index.
double jaccard_stability(const std::vector<IndexSet>& sets);
/// Runs `run` R times with seeds derived from `base_seed`, then averages pairwise Jaccard indices.
double jaccard_stability(const std::function<IndexSet(std::uint64_t)>& run, int R, std::uint64_t base_seed);

} // namespace dcrt
