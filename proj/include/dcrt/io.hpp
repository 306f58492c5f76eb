#pragma once

#include "dcrt/crt.hpp"
#include "dcrt/data.hpp"
#include "dcrt/distill.hpp"
#include "dcrt/lasso.hpp"
#include "dcrt/select.hpp"
#include "dcrt/sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace dcrt {

using Json = nlohmann::json;

Json to_json(const TestOutcome& o);
Json to_json(const SelectionResult& r);
Json to_json(const CovariateModel& m);
Json to_json(const ConditionalLaw& law);
Json to_json(const LassoFit& f);
Json to_json(const CvLassoFit& f);
Json to_json(const Distillation& d);
Json to_json(const SimDesign& d);
Json to_json(const ExperimentReport& r);

CovariateModel covariate_model_from_json(const Json& j);
ConditionalLaw conditional_law_from_json(const Json& j);
LassoFit lasso_fit_from_json(const Json& j);
CvLassoFit cv_lasso_fit_from_json(const Json& j);
/// Missing keys keep their defaults; unknown keys are rejected.
SimDesign sim_design_from_json(const Json& j);

/// A model file holds either a joint Gaussian ("mean", "covariance") or per-column "laws".
struct ModelFile {
    std::optional<CovariateModel> joint;
    std::vector<ConditionalLaw> laws;
    std::string source = "exact";

    /// Conditional laws for every column, conditioning the joint model when needed.
    std::vector<ConditionalLaw> all_laws() const;
    Index p() const;
};

Json to_json(const ModelFile& m);
ModelFile model_file_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace dcrt
