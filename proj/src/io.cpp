#include "dcrt/io.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dcrt {

namespace {

Json vec(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Json mat(const Matrix& m) {
    Json a = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(row);
    }
    return a;
}

Json idx(const IndexSet& s) {
    Json a = Json::array();
    for (Index j : s) a.push_back(j);
    return a;
}

Json labels(const IndexSet& s, const std::vector<std::string>& names) {
    Json a = Json::array();
    for (Index j : s) a.push_back(names[static_cast<std::size_t>(j)]);
    return a;
}

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("JSON is missing field '") + key + "'");
    return j.at(key);
}

Vector read_vec(const Json& a, const char* what) {
    if (!a.is_array()) throw ValidationError(std::string(what) + " must be an array");
    Vector v(static_cast<Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw ValidationError(std::string(what) + " must contain numbers");
        v[static_cast<Index>(i)] = a[i].get<double>();
    }
    return v;
}

Matrix read_mat(const Json& a, const char* what) {
    if (!a.is_array()) throw ValidationError(std::string(what) + " must be an array of arrays");
    const Index rows = static_cast<Index>(a.size());
    const Index cols = rows > 0 ? static_cast<Index>(a[0].size()) : 0;
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const Vector r = read_vec(a[static_cast<std::size_t>(i)], what);
        if (r.size() != cols) throw ValidationError(std::string(what) + " rows have different lengths");
        m.row(i) = r.transpose();
    }
    return m;
}

IndexSet read_idx(const Json& a) {
    IndexSet s;
    for (const auto& v : a) s.push_back(v.get<Index>());
    return s;
}

} // namespace

Json to_json(const TestOutcome& o) {
    return Json{{"variable", o.variable}, {"p_value", o.p_value}, {"statistic", o.statistic},
                {"method", o.method}, {"M", o.M_used}};
}

Json to_json(const SelectionResult& r) {
    Json results = Json::array();
    for (const auto& o : r.outcomes) results.push_back(to_json(o));
    Json timings = Json::object();
    for (const auto& [k, v] : r.timings_ms) timings[k] = v;
    return Json{{"alpha", r.alpha},
                {"error_rate", to_string(r.error_rate)},
                {"results", results},
                {"screened", labels(r.screened, r.names)},
                {"rejected", labels(r.rejected, r.names)},
                {"timings_ms", timings},
                {"source", r.source},
                {"cv_fits", r.cv_fits}};
}

Json to_json(const CovariateModel& m) {
    return Json{{"mean", vec(m.mean)}, {"covariance", mat(m.covariance)}, {"source", to_string(m.source)}};
}

CovariateModel covariate_model_from_json(const Json& j) {
    CovariateModel m;
    m.mean = read_vec(field(j, "mean"), "mean");
    m.covariance = read_mat(field(j, "covariance"), "covariance");
    m.source = j.contains("source") ? model_source_from_string(j.at("source").get<std::string>()) : ModelSource::exact;
    m.validate();
    return m;
}

Json to_json(const ConditionalLaw& law) {
    Json out{{"gamma", vec(law.gamma)}, {"intercept", law.intercept}, {"sigma", law.sigma}};
    struct Visitor {
        Json& out;
        void operator()(const GaussianNoise&) const { out["family"] = "gaussian"; }
        void operator()(const LaplaceNoise& f) const {
            out["family"] = "laplace";
            out["scale"] = f.scale;
        }
        void operator()(const GammaNoise& f) const {
            out["family"] = "gamma";
            out["shape"] = f.shape;
            out["rate"] = f.rate;
        }
        void operator()(const DiscreteNoise& f) const {
            out["family"] = "empirical_discrete";
            out["support"] = f.support;
            out["pmf"] = mat(f.pmf);
        }
    };
    std::visit(Visitor{out}, law.family);
    return out;
}

ConditionalLaw conditional_law_from_json(const Json& j) {
    ConditionalLaw law;
    law.gamma = read_vec(field(j, "gamma"), "gamma");
    law.intercept = field(j, "intercept").get<double>();
    law.sigma = field(j, "sigma").get<double>();
    const std::string family = j.value("family", "gaussian");
    if (family == "gaussian") {
        law.family = GaussianNoise{};
    } else if (family == "laplace") {
        law.family = LaplaceNoise{field(j, "scale").get<double>()};
    } else if (family == "gamma") {
        law.family = GammaNoise{field(j, "shape").get<double>(), field(j, "rate").get<double>()};
    } else if (family == "empirical_discrete") {
        DiscreteNoise f;
        f.support = field(j, "support").get<std::vector<double>>();
        f.pmf = read_mat(field(j, "pmf"), "pmf");
        law.family = f;
    } else {
        throw ValidationError("unknown law family '" + family + "'");
    }
    law.validate();
    return law;
}

Json to_json(const LassoFit& f) {
    return Json{{"beta", vec(f.beta)}, {"intercept", f.intercept}, {"lambda", f.lambda}, {"active", idx(f.active)},
                {"sweeps", f.sweeps}};
}

LassoFit lasso_fit_from_json(const Json& j) {
    LassoFit f;
    f.beta = read_vec(field(j, "beta"), "beta");
    f.intercept = field(j, "intercept").get<double>();
    f.lambda = field(j, "lambda").get<double>();
    f.active = read_idx(field(j, "active"));
    f.sweeps = j.value("sweeps", 0);
    return f;
}

Json to_json(const CvLassoFit& f) {
    Json path = Json::array(), folds = Json::array(), fold_paths = Json::array();
    for (const auto& fit : f.path) path.push_back(to_json(fit));
    for (const auto& fold : f.folds) folds.push_back(idx(fold));
    for (const auto& fp : f.fold_paths) {
        Json a = Json::array();
        for (const auto& fit : fp) a.push_back(to_json(fit));
        fold_paths.push_back(a);
    }
    return Json{{"loss", to_string(f.loss)},
                {"grid", f.grid.values()},
                {"path", path},
                {"fold_paths", fold_paths},
                {"cv_errors", f.cv_errors},
                {"g_hat", f.g_hat},
                {"g_tilde", f.g_tilde},
                {"fallback", f.fallback},
                {"union_active", idx(f.union_active)},
                {"folds", folds}};
}

CvLassoFit cv_lasso_fit_from_json(const Json& j) {
    CvLassoFit f;
    const std::string loss = field(j, "loss").get<std::string>();
    if (loss == "squared") f.loss = LossKind::squared;
    else if (loss == "logistic") f.loss = LossKind::logistic;
    else throw ValidationError("unknown loss '" + loss + "'");
    f.grid = LambdaGrid(field(j, "grid").get<std::vector<double>>());
    for (const auto& fit : field(j, "path")) f.path.push_back(lasso_fit_from_json(fit));
    for (const auto& fp : field(j, "fold_paths")) {
        std::vector<LassoFit> a;
        for (const auto& fit : fp) a.push_back(lasso_fit_from_json(fit));
        f.fold_paths.push_back(std::move(a));
    }
    f.cv_errors = field(j, "cv_errors").get<std::vector<double>>();
    f.g_hat = field(j, "g_hat").get<Index>();
    f.g_tilde = field(j, "g_tilde").get<Index>();
    f.fallback = field(j, "fallback").get<bool>();
    f.union_active = read_idx(field(j, "union_active"));
    for (const auto& fold : field(j, "folds")) f.folds.push_back(read_idx(fold));
    return f;
}

Json to_json(const Distillation& d) {
    Json out{{"d_y", vec(d.d_y)}, {"top_cols", mat(d.top_cols)}, {"top_idx", idx(d.top_idx)},
             {"d_x", vec(d.d_x)}, {"sigma_x", d.sigma_x}, {"k", d.k}, {"response_kind", to_string(d.kind)}};
    if (d.heteroscedastic()) out["sigma_rows"] = vec(d.sigma_rows);
    return out;
}

Json to_json(const SimDesign& d) {
    return Json{{"n", d.n},
                {"p", d.p},
                {"s", d.s},
                {"support", to_string(d.support)},
                {"covariance", to_string(d.covariance)},
                {"rho", d.rho},
                {"response", to_string(d.response)},
                {"nu", d.nu},
                {"cubic_weight", d.cubic_weight},
                {"n_interactions", d.n_interactions},
                {"covariate_family", to_string(d.family)},
                {"family_a", d.family_a},
                {"family_b", d.family_b},
                {"noise", to_string(d.noise)},
                {"noise_variance", d.noise_variance},
                {"seed", d.seed}};
}

SimDesign sim_design_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("design must be a JSON object");
    static const std::set<std::string> known = {"n", "p", "s", "support", "covariance", "rho", "response", "nu",
                                                "cubic_weight", "n_interactions", "covariate_family", "family_a",
                                                "family_b", "noise", "noise_variance", "seed"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ValidationError("unknown design field '" + key + "'");
    SimDesign d;
    try {
        d.n = j.value("n", d.n);
        d.p = j.value("p", d.p);
        d.s = j.value("s", d.s);
        if (j.contains("support")) d.support = support_kind_from_string(j.at("support").get<std::string>());
        if (j.contains("covariance")) d.covariance = covariance_kind_from_string(j.at("covariance").get<std::string>());
        d.rho = j.value("rho", d.rho);
        if (j.contains("response")) d.response = response_model_from_string(j.at("response").get<std::string>());
        d.nu = j.value("nu", d.nu);
        d.cubic_weight = j.value("cubic_weight", d.cubic_weight);
        d.n_interactions = j.value("n_interactions", d.n_interactions);
        if (j.contains("covariate_family")) d.family = covariate_family_from_string(j.at("covariate_family").get<std::string>());
        d.family_a = j.value("family_a", d.family_a);
        d.family_b = j.value("family_b", d.family_b);
        if (j.contains("noise")) d.noise = noise_kind_from_string(j.at("noise").get<std::string>());
        d.noise_variance = j.value("noise_variance", d.noise_variance);
        d.seed = j.value("seed", d.seed);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed design: ") + e.what());
    }
    d.validate();
    return d;
}

Json to_json(const ExperimentReport& r) {
    Json methods = Json::array();
    const auto sum = [](const Summary& s) { return Json{{"mean", s.mean}, {"se", s.se}}; };
    for (const auto& m : r.methods)
        methods.push_back(Json{{"name", m.name},
                               {"power", sum(m.power)},
                               {"fdr", sum(m.fdr)},
                               {"fwer", sum(m.fwer)},
                               {"type_I", sum(m.type_I)},
                               {"reps_ok", m.reps_ok},
                               {"failures", m.failures},
                               {"mean_time_ms", m.mean_time_ms}});
    return Json{{"design", to_json(r.design)}, {"reps", r.reps}, {"base_seed", r.base_seed}, {"methods", methods}};
}

std::vector<ConditionalLaw> ModelFile::all_laws() const {
    if (joint) return all_conditional_laws(*joint);
    return laws;
}

Index ModelFile::p() const { return joint ? joint->p() : static_cast<Index>(laws.size()); }

Json to_json(const ModelFile& m) {
    if (m.joint) return to_json(*m.joint);
    Json laws = Json::array();
    for (const auto& law : m.laws) laws.push_back(to_json(law));
    return Json{{"source", m.source}, {"laws", laws}};
}

ModelFile model_file_from_json(const Json& j) {
    ModelFile m;
    try {
        if (j.contains("covariance")) {
            m.joint = covariate_model_from_json(j);
            m.source = to_string(m.joint->source);
        } else if (j.contains("laws")) {
            for (const auto& law : j.at("laws")) m.laws.push_back(conditional_law_from_json(law));
            m.source = j.value("source", "exact");
            const Index p = static_cast<Index>(m.laws.size());
            for (const auto& law : m.laws)
                if (law.gamma.size() != p - 1) throw ValidationError("each law needs p - 1 coefficients");
        } else {
            throw ValidationError("model JSON needs either \"covariance\" or \"laws\"");
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed model JSON: ") + e.what());
    }
    return m;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ValidationError("cannot parse " + path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

} // namespace dcrt
