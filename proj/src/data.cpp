#include "dcrt/data.hpp"

#include "dcrt/lasso.hpp"

#include <boost/math/distributions/gamma.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dcrt {

const char* to_string(ResponseKind kind) { return kind == ResponseKind::binary ? "binary" : "continuous"; }

const char* to_string(ModelSource source) {
    switch (source) {
    case ModelSource::exact: return "exact";
    case ModelSource::ledoit_wolf: return "ledoit_wolf";
    case ModelSource::nodewise: return "nodewise";
    }
    return "exact";
}

ModelSource model_source_from_string(const std::string& name) {
    if (name == "exact") return ModelSource::exact;
    if (name == "ledoit_wolf") return ModelSource::ledoit_wolf;
    if (name == "nodewise") return ModelSource::nodewise;
    throw ValidationError("unknown covariate model source '" + name + "'");
}

ResponseKind infer_response_kind(const Vector& y) {
    for (Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0) return ResponseKind::continuous;
    return ResponseKind::binary;
}

void DataSet::validate() const {
    if (X.rows() < 2) throw ValidationError("data set needs at least two rows");
    if (X.cols() < 1) throw ValidationError("data set needs at least one covariate");
    if (y.size() != X.rows()) throw ValidationError("response length does not match the covariate rows");
    if (static_cast<Index>(names.size()) != X.cols()) throw ValidationError("one name per covariate column required");
    if (!y.allFinite() || !X.allFinite()) throw ValidationError("data set contains non-finite values");
    if (response_kind == ResponseKind::binary && infer_response_kind(y) != ResponseKind::binary)
        throw ValidationError("binary response must contain only 0 and 1");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw ValidationError("covariate names must be unique");
}

Index DataSet::column(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("unknown variable '" + name + "'");
    return static_cast<Index>(it - names.begin());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace

DataSet load_csv(const std::filesystem::path& path, const std::string& response_column) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("'" + path.string() + "' has no header row");
    std::vector<std::string> header = split_line(line);
    for (auto& h : header) h = trim(h);
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0] = header[0].substr(3);

    std::set<std::string> seen;
    for (const auto& h : header) {
        if (h.empty()) throw ValidationError("empty column name in header");
        if (!seen.insert(h).second) throw ValidationError("duplicate column '" + h + "' in header");
    }
    const auto response_it = std::find(header.begin(), header.end(), response_column);
    if (response_it == header.end()) throw ValidationError("response column '" + response_column + "' not found");
    const std::size_t response_pos = static_cast<std::size_t>(response_it - header.begin());

    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw ValidationError("row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                  " cells, expected " + std::to_string(header.size()));
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string text = trim(cells[c]);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
                throw ValidationError("cannot parse '" + text + "' at row " + std::to_string(line_no) + ", column '" +
                                      header[c] + "'");
            values[c] = v;
        }
        rows.push_back(std::move(values));
    }

    DataSet data;
    const Index n = static_cast<Index>(rows.size());
    const Index p = static_cast<Index>(header.size()) - 1;
    data.y.resize(n);
    data.X.resize(n, p);
    data.response_name = response_column;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != response_pos) data.names.push_back(header[c]);
    for (Index i = 0; i < n; ++i) {
        Index col = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const double v = rows[static_cast<std::size_t>(i)][c];
            if (c == response_pos)
                data.y[i] = v;
            else
                data.X(i, col++) = v;
        }
    }
    data.response_kind = infer_response_kind(data.y);
    data.validate();
    return data;
}

namespace {

// Cholesky with the pivot-ratio guard; returns the factor or throws naming the estimate.
Eigen::LLT<Matrix> guarded_cholesky(const Matrix& S, const std::string& what) {
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError(what + " is not positive definite (Cholesky failed)");
    const Vector pivots = Matrix(llt.matrixL()).diagonal().array().square();
    const double lo = pivots.minCoeff();
    const double hi = pivots.maxCoeff();
    if (!(lo >= 1e-12 * hi))
        throw NumericalError(what + " is numerically singular (pivot ratio " + std::to_string(hi / lo) + ")");
    return llt;
}

} // namespace

void CovariateModel::validate() const {
    const Index p = mean.size();
    if (p < 1) throw ValidationError("covariate model needs at least one column");
    if (covariance.rows() != p || covariance.cols() != p) throw ValidationError("covariance must be p x p");
    if (!mean.allFinite() || !covariance.allFinite()) throw ValidationError("covariate model has non-finite entries");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw ValidationError("covariance is not symmetric");
    if ((covariance.diagonal().array() <= 0.0).any()) throw ValidationError("covariance diagonal must be positive");
    try {
        guarded_cholesky(covariance, "covariance");
    } catch (const NumericalError& e) {
        throw ValidationError(e.what());
    }
}

namespace {

struct FamilyCheck {
    void operator()(const GaussianNoise&) const {}
    void operator()(const LaplaceNoise& f) const {
        if (!(f.scale > 0.0)) throw ValidationError("Laplace scale must be positive");
    }
    void operator()(const GammaNoise& f) const {
        if (!(f.shape > 0.0) || !(f.rate > 0.0)) throw ValidationError("Gamma shape and rate must be positive");
    }
    void operator()(const DiscreteNoise& f) const {
        const Index K = static_cast<Index>(f.support.size());
        if (K < 1 || f.pmf.cols() != K || f.pmf.rows() < 1) throw ValidationError("discrete law needs a pmf per support point");
        for (Index k = 1; k < K; ++k)
            if (!(f.support[static_cast<std::size_t>(k)] > f.support[static_cast<std::size_t>(k - 1)]))
                throw ValidationError("discrete support must be strictly increasing");
        if ((f.pmf.array() < 0.0).any()) throw ValidationError("discrete pmf must be nonnegative");
        for (Index r = 0; r < f.pmf.rows(); ++r)
            if (std::abs(f.pmf.row(r).sum() - 1.0) > 1e-9) throw ValidationError("discrete pmf rows must sum to 1");
    }
};

const Eigen::RowVectorXd& pmf_row_ref(const DiscreteNoise& f, Index row, Eigen::RowVectorXd& scratch) {
    scratch = f.pmf.row(f.pmf.rows() == 1 ? 0 : row);
    return scratch;
}

double discrete_mean(const DiscreteNoise& f, Index row) {
    Eigen::RowVectorXd scratch;
    const auto& w = pmf_row_ref(f, row, scratch);
    double m = 0.0;
    for (std::size_t k = 0; k < f.support.size(); ++k) m += w[static_cast<Index>(k)] * f.support[k];
    return m;
}

double discrete_sd(const DiscreteNoise& f, Index row) {
    Eigen::RowVectorXd scratch;
    const auto& w = pmf_row_ref(f, row, scratch);
    const double m = discrete_mean(f, row);
    double v = 0.0;
    for (std::size_t k = 0; k < f.support.size(); ++k) v += w[static_cast<Index>(k)] * (f.support[k] - m) * (f.support[k] - m);
    return std::sqrt(v);
}

} // namespace

void ConditionalLaw::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("conditional sigma must be positive");
    if (!gamma.allFinite() || !std::isfinite(intercept)) throw ValidationError("conditional law has non-finite entries");
    std::visit(FamilyCheck{}, family);
}

ConditionalLaw gaussian_law(Vector gamma, double intercept, double sigma) {
    ConditionalLaw law;
    law.gamma = std::move(gamma);
    law.intercept = intercept;
    law.sigma = sigma;
    law.validate();
    return law;
}

ConditionalLaw laplace_law(Index dim_z, double mean, double scale) {
    ConditionalLaw law;
    law.gamma = Vector::Zero(dim_z);
    law.intercept = mean;
    law.sigma = std::sqrt(2.0) * scale;
    law.family = LaplaceNoise{scale};
    law.validate();
    return law;
}

ConditionalLaw gamma_law(Index dim_z, double shape, double rate) {
    ConditionalLaw law;
    law.gamma = Vector::Zero(dim_z);
    law.intercept = shape / rate;
    law.sigma = std::sqrt(shape) / rate;
    law.family = GammaNoise{shape, rate};
    law.validate();
    return law;
}

ConditionalLaw discrete_law(Index dim_z, const std::vector<double>& support, const std::vector<double>& probs) {
    if (support.size() != probs.size()) throw ValidationError("discrete law needs one probability per support point");
    DiscreteNoise f;
    f.support = support;
    f.pmf.resize(1, static_cast<Index>(probs.size()));
    for (std::size_t k = 0; k < probs.size(); ++k) f.pmf(0, static_cast<Index>(k)) = probs[k];
    ConditionalLaw law;
    law.gamma = Vector::Zero(dim_z);
    law.intercept = 0.0;
    law.family = f;
    std::visit(FamilyCheck{}, law.family);
    law.sigma = discrete_sd(f, 0);
    law.validate();
    return law;
}

Vector conditional_mean(const ConditionalLaw& law, const Matrix& Z) {
    if (Z.cols() != law.gamma.size()) throw ValidationError("conditional law does not match the conditioning columns");
    Vector mean = (Z * law.gamma).array() + law.intercept;
    if (const auto* f = std::get_if<DiscreteNoise>(&law.family)) {
        if (f->pmf.rows() != 1 && f->pmf.rows() != Z.rows())
            throw ValidationError("discrete pmf rows do not match the observations");
        for (Index i = 0; i < mean.size(); ++i) mean[i] += discrete_mean(*f, i);
    }
    return mean;
}

double row_sigma(const ConditionalLaw& law, Index row) {
    if (const auto* f = std::get_if<DiscreteNoise>(&law.family)) return discrete_sd(*f, row);
    return law.sigma;
}

double residual_cdf(const ConditionalLaw& law, Index row, double t, bool strict) {
    struct Visitor {
        double sigma;
        Index row;
        double t;
        bool strict;
        double operator()(const GaussianNoise&) const { return normal_cdf(t / sigma); }
        double operator()(const LaplaceNoise& f) const {
            return t < 0 ? 0.5 * std::exp(t / f.scale) : 1.0 - 0.5 * std::exp(-t / f.scale);
        }
        double operator()(const GammaNoise& f) const {
            const double x = t + f.shape / f.rate;
            if (x <= 0.0) return 0.0;
            return boost::math::cdf(boost::math::gamma_distribution<double>(f.shape, 1.0 / f.rate), x);
        }
        double operator()(const DiscreteNoise& f) const {
            Eigen::RowVectorXd scratch;
            const auto& w = pmf_row_ref(f, row, scratch);
            double c = 0.0;
            for (std::size_t k = 0; k < f.support.size(); ++k) {
                const double a = f.support[k];
                if (a < t || (!strict && a == t)) c += w[static_cast<Index>(k)];
            }
            return std::min(c, 1.0);
        }
    };
    return std::visit(Visitor{law.sigma, row, t, strict}, law.family);
}

ConditionalLaw conditional_law(const CovariateModel& model, Index j) {
    const Index p = model.p();
    if (j < 0 || j >= p) throw ValidationError("column index out of range");
    if (p == 1) return gaussian_law(Vector(0), model.mean[0], std::sqrt(model.covariance(0, 0)));

    IndexSet rest;
    for (Index k = 0; k < p; ++k)
        if (k != j) rest.push_back(k);
    const Matrix S_rest = model.covariance(rest, rest);
    const Vector s_cross = model.covariance(rest, j);
    const auto llt = guarded_cholesky(S_rest, "covariance of the conditioning columns");
    const Vector gamma = llt.solve(s_cross);
    const double var = model.covariance(j, j) - s_cross.dot(gamma);
    if (!(var > 0.0)) throw NumericalError("conditional variance is not positive");
    const Vector mu_rest = model.mean(rest);
    return gaussian_law(gamma, model.mean[j] - gamma.dot(mu_rest), std::sqrt(var));
}

std::vector<ConditionalLaw> all_conditional_laws(const CovariateModel& model) {
    const Index p = model.p();
    std::vector<ConditionalLaw> laws;
    laws.reserve(static_cast<std::size_t>(p));
    const auto llt = guarded_cholesky(model.covariance, "covariance");
    const Matrix precision = llt.solve(Matrix::Identity(p, p));
    for (Index j = 0; j < p; ++j) {
        const double theta = precision(j, j);
        Vector gamma(p - 1);
        double shift = 0.0;
        for (Index k = 0, c = 0; k < p; ++k) {
            if (k == j) continue;
            gamma[c] = -precision(k, j) / theta;
            shift += gamma[c] * model.mean[k];
            ++c;
        }
        laws.push_back(gaussian_law(std::move(gamma), model.mean[j] - shift, std::sqrt(1.0 / theta)));
    }
    return laws;
}

LedoitWolfEstimate ledoit_wolf(const Matrix& X) {
    const Index n = X.rows();
    const Index p = X.cols();
    if (n < 2) throw ValidationError("Ledoit-Wolf estimation needs at least two rows");
    const Vector mean = X.colwise().mean();
    const Matrix Xc = X.rowwise() - mean.transpose();
    const double nd = static_cast<double>(n);
    for (Index j = 0; j < p; ++j)
        if (Xc.col(j).squaredNorm() <= 1e-24 * (1.0 + mean[j] * mean[j]) * nd)
            throw ValidationError("column " + std::to_string(j) + " has zero variance");

    const Matrix S = Xc.transpose() * Xc / nd;
    const double mu = S.trace() / static_cast<double>(p);
    const double d2 = (S - mu * Matrix::Identity(p, p)).squaredNorm() / static_cast<double>(p);
    // sum_i ||x_i x_i' - S||_F^2 = sum_i ||x_i||^4 - n ||S||_F^2
    const double fourth = Xc.rowwise().squaredNorm().array().square().sum();
    const double b2_bar = std::max(0.0, (fourth - nd * S.squaredNorm()) / (nd * nd * static_cast<double>(p)));
    const double b2 = std::min(b2_bar, d2);
    const double intensity = d2 > 0.0 ? std::clamp(b2 / d2, 0.0, 1.0) : 1.0;
    const Matrix shrunk = intensity * mu * Matrix::Identity(p, p) + (1.0 - intensity) * S;

    const auto llt = guarded_cholesky(shrunk, "shrunk covariance");
    const Matrix precision = llt.solve(Matrix::Identity(p, p));
    // Column j of Xc * precision / precision_jj is the residual of the implied regression of x_j on the rest.
    const Matrix implied = Xc * precision;
    Vector rescale(p);
    for (Index j = 0; j < p; ++j) rescale[j] = std::sqrt(implied.col(j).squaredNorm() / (nd * precision(j, j)));

    LedoitWolfEstimate out;
    out.intensity = intensity;
    out.rescaling = rescale;
    out.model.mean = mean;
    out.model.covariance = rescale.asDiagonal() * shrunk * rescale.asDiagonal();
    out.model.covariance = 0.5 * (out.model.covariance + out.model.covariance.transpose());
    out.model.source = ModelSource::ledoit_wolf;
    out.model.validate();
    return out;
}

CovariateModel estimate_ledoit_wolf(const Matrix& X) { return ledoit_wolf(X).model; }

std::vector<ConditionalLaw> estimate_nodewise_lasso(const Matrix& X, const LassoConfig& config) {
    const Index n = X.rows();
    const Index p = X.cols();
    if (n < 2) throw ValidationError("nodewise estimation needs at least two rows");
    std::vector<ConditionalLaw> laws(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) {
        const Vector x = X.col(j);
        const double m = x.mean();
        const double sd = std::sqrt((x.array() - m).square().mean());
        if (!(sd > 1e-12 * (1.0 + std::abs(m)))) throw ValidationError("column " + std::to_string(j) + " has zero variance");
        if (p == 1) {
            laws[0] = gaussian_law(Vector(0), m, sd);
            continue;
        }
        const Matrix Z = drop_column(X, j);
        ConditionalLaw law;
        PathSolver probe(Z, x, LossKind::squared, config.solver);
        if (probe.lambda_max() <= 1e-14 * sd) {
            law = gaussian_law(Vector::Zero(p - 1), m, sd);
        } else {
            const CvLassoFit cv = cross_validate(Z, x, LossKind::squared, config);
            const LassoFit& fit = cv.selected();
            const Vector resid = x - fit.predict(Z);
            double sigma = std::sqrt(resid.squaredNorm() / static_cast<double>(n));
            if (sigma < 1e-2 * sd) {
                warn("column " + std::to_string(j) + " is nearly collinear with the others (conditional sd " +
                     std::to_string(sigma) + ")");
                sigma = std::max(sigma, 1e-8 * sd);
            }
            law = gaussian_law(fit.beta, fit.intercept, sigma);
        }
        laws[static_cast<std::size_t>(j)] = std::move(law);
    }
    return laws;
}

Vector resample_from_mean(const ConditionalLaw& law, const Vector& mean, Rng& rng) {
    const Index n = mean.size();
    Vector out(n);
    struct Visitor {
        const ConditionalLaw& law;
        const Vector& mean;
        Vector& out;
        Rng& rng;
        void operator()(const GaussianNoise&) const {
            std::normal_distribution<double> normal(0.0, 1.0);
            for (Index i = 0; i < mean.size(); ++i) out[i] = mean[i] + law.sigma * normal(rng);
        }
        void operator()(const LaplaceNoise& f) const {
            std::exponential_distribution<double> expo(1.0);
            for (Index i = 0; i < mean.size(); ++i) {
                const double a = expo(rng);
                const double b = expo(rng);
                out[i] = mean[i] + f.scale * (a - b);
            }
        }
        void operator()(const GammaNoise& f) const {
            std::gamma_distribution<double> gamma(f.shape, 1.0 / f.rate);
            for (Index i = 0; i < mean.size(); ++i) out[i] = mean[i] + gamma(rng) - f.shape / f.rate;
        }
        void operator()(const DiscreteNoise& f) const {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            const Index K = static_cast<Index>(f.support.size());
            for (Index i = 0; i < mean.size(); ++i) {
                const Index r = f.pmf.rows() == 1 ? 0 : i;
                const double base = mean[i] - discrete_mean(f, i);
                const double u = unif(rng);
                double c = 0.0;
                Index pick = K - 1;
                for (Index k = 0; k < K; ++k) {
                    c += f.pmf(r, k);
                    if (u < c) {
                        pick = k;
                        break;
                    }
                }
                out[i] = base + f.support[static_cast<std::size_t>(pick)];
            }
        }
    };
    std::visit(Visitor{law, mean, out, rng}, law.family);
    return out;
}

Vector resample_column(const ConditionalLaw& law, const Matrix& Z, Rng& rng) {
    return resample_from_mean(law, conditional_mean(law, Z), rng);
}

} // namespace dcrt
