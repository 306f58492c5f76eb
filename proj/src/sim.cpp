#include "dcrt/sim.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dcrt {

namespace {

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    std::string valid;
    for (const auto& [name, value] : table) {
        if (s == name) return value;
        valid += valid.empty() ? name : std::string(", ") + name;
    }
    throw ValidationError(std::string("unknown ") + what + " '" + s + "' (valid: " + valid + ")");
}

} // namespace

const char* to_string(SupportKind v) { return v == SupportKind::adjacent ? "adjacent" : "equally_spaced"; }
const char* to_string(CovarianceKind v) {
    switch (v) {
    case CovarianceKind::independent: return "independent";
    case CovarianceKind::ar1: return "ar1";
    case CovarianceKind::equicorrelated: return "equicorrelated";
    }
    return "?";
}
const char* to_string(ResponseModel v) {
    switch (v) {
    case ResponseModel::linear: return "linear";
    case ResponseModel::logistic: return "logistic";
    case ResponseModel::poisson: return "poisson";
    case ResponseModel::polynomial: return "polynomial";
    case ResponseModel::interaction: return "interaction";
    case ResponseModel::rf_nonlinear: return "rf_nonlinear";
    }
    return "?";
}
const char* to_string(CovariateFamily v) {
    switch (v) {
    case CovariateFamily::gaussian: return "gaussian";
    case CovariateFamily::laplace: return "laplace";
    case CovariateFamily::gamma: return "gamma";
    case CovariateFamily::bernoulli: return "bernoulli";
    case CovariateFamily::poisson_residual: return "poisson_residual";
    }
    return "?";
}
const char* to_string(NoiseKind v) { return v == NoiseKind::gaussian ? "gaussian" : "laplace"; }

SupportKind support_kind_from_string(const std::string& s) {
    return parse_enum<SupportKind>(s, {{"adjacent", SupportKind::adjacent}, {"equally_spaced", SupportKind::equally_spaced}}, "support");
}
CovarianceKind covariance_kind_from_string(const std::string& s) {
    return parse_enum<CovarianceKind>(s, {{"independent", CovarianceKind::independent}, {"ar1", CovarianceKind::ar1},
                                          {"equicorrelated", CovarianceKind::equicorrelated}}, "covariance");
}
ResponseModel response_model_from_string(const std::string& s) {
    return parse_enum<ResponseModel>(s, {{"linear", ResponseModel::linear}, {"logistic", ResponseModel::logistic},
                                         {"poisson", ResponseModel::poisson}, {"polynomial", ResponseModel::polynomial},
                                         {"interaction", ResponseModel::interaction},
                                         {"rf_nonlinear", ResponseModel::rf_nonlinear}}, "response");
}
CovariateFamily covariate_family_from_string(const std::string& s) {
    return parse_enum<CovariateFamily>(s, {{"gaussian", CovariateFamily::gaussian}, {"laplace", CovariateFamily::laplace},
                                           {"gamma", CovariateFamily::gamma}, {"bernoulli", CovariateFamily::bernoulli},
                                           {"poisson_residual", CovariateFamily::poisson_residual}}, "covariate family");
}
NoiseKind noise_kind_from_string(const std::string& s) {
    return parse_enum<NoiseKind>(s, {{"gaussian", NoiseKind::gaussian}, {"laplace", NoiseKind::laplace}}, "noise");
}

void SimDesign::validate() const {
    if (n < 2) throw ValidationError("design needs n >= 2");
    if (p < 1) throw ValidationError("design needs p >= 1");
    if (s < 0 || s > p) throw ValidationError("design needs 0 <= s <= p");
    if (!(nu >= 0)) throw ValidationError("signal magnitude nu must be nonnegative");
    if (covariance == CovarianceKind::ar1 && !(rho > -1 && rho < 1)) throw ValidationError("AR(1) coefficient must lie in (-1, 1)");
    if (covariance == CovarianceKind::equicorrelated && p > 1 &&
        !(rho > -1.0 / static_cast<double>(p - 1) && rho < 1))
        throw ValidationError("equicorrelation must lie in (-1/(p-1), 1) for a positive-definite matrix");
    if (!(noise_variance > 0)) throw ValidationError("noise variance must be positive");
    if ((response == ResponseModel::interaction || response == ResponseModel::rf_nonlinear) && n_interactions > p - 1)
        throw ValidationError("more interacting columns than available");
    switch (family) {
    case CovariateFamily::gaussian: break;
    case CovariateFamily::laplace:
        if (!(family_a > 0)) throw ValidationError("laplace variance must be positive");
        break;
    case CovariateFamily::gamma:
        if (!(family_a > 0 && family_b > 0)) throw ValidationError("gamma shape and rate must be positive");
        break;
    case CovariateFamily::bernoulli:
        if (!(family_a > 0 && family_a < 1)) throw ValidationError("bernoulli mean must lie in (0, 1)");
        break;
    case CovariateFamily::poisson_residual:
        if (!(family_a > 0)) throw ValidationError("poisson rate must be positive");
        if (p < 2) throw ValidationError("poisson_residual design needs p >= 2");
        break;
    }
    const bool iid = family == CovariateFamily::laplace || family == CovariateFamily::gamma || family == CovariateFamily::bernoulli;
    if (iid && covariance != CovarianceKind::independent && !(covariance == CovarianceKind::equicorrelated && rho == 0))
        throw ValidationError(std::string(to_string(family)) + " covariates are generated independently; use covariance independent");
}

bool SimDesign::single_test() const {
    return response == ResponseModel::interaction || response == ResponseModel::rf_nonlinear ||
           family == CovariateFamily::poisson_residual;
}

Matrix design_covariance(const SimDesign& design, Index dim) {
    Matrix S = Matrix::Identity(dim, dim);
    if (design.covariance == CovarianceKind::ar1) {
        for (Index a = 0; a < dim; ++a)
            for (Index b = 0; b < dim; ++b) S(a, b) = std::pow(design.rho, static_cast<double>(std::abs(a - b)));
    } else if (design.covariance == CovarianceKind::equicorrelated) {
        S.setConstant(design.rho);
        S.diagonal().setOnes();
    }
    return S;
}

namespace {

Matrix gaussian_rows(Index n, const Matrix& S, Rng& rng) {
    const Index d = S.rows();
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix G(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) G(i, j) = normal(rng);
    if (S.isIdentity()) return G;
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw ValidationError("design covariance is not positive definite");
    return G * llt.matrixL().transpose();
}

// Offsets (k - r)/sqrt(r) with Poisson(r) probabilities, truncated where the tail mass is negligible.
ConditionalLaw poisson_residual_law(Index dim_z, double r) {
    std::vector<double> support, probs;
    const int K = static_cast<int>(std::ceil(r + 12.0 * std::sqrt(r) + 30.0));
    double total = 0.0;
    for (int k = 0; k <= K; ++k) {
        const double logp = -r + k * std::log(r) - std::lgamma(k + 1.0);
        const double q = std::exp(logp);
        if (q < 1e-300) continue;
        support.push_back((k - r) / std::sqrt(r));
        probs.push_back(q);
        total += q;
    }
    for (double& q : probs) q /= total;
    return discrete_law(dim_z, support, probs);
}

} // namespace

CovariateDraw gen_covariates(const SimDesign& design, Rng& rng) {
    design.validate();
    const Index n = design.n, p = design.p;
    CovariateDraw out;
    out.model.source = ModelSource::exact;
    switch (design.family) {
    case CovariateFamily::gaussian: {
        const Matrix S = design_covariance(design, p);
        out.X = gaussian_rows(n, S, rng);
        out.model.mean = Vector::Zero(p);
        out.model.covariance = S;
        out.laws = all_conditional_laws(out.model);
        break;
    }
    case CovariateFamily::laplace: {
        const double scale = std::sqrt(design.family_a / 2.0);
        std::exponential_distribution<double> expo(1.0);
        out.X.resize(n, p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) {
                const double a = expo(rng);
                const double b = expo(rng);
                out.X(i, j) = scale * (a - b);
            }
        out.model.mean = Vector::Zero(p);
        out.model.covariance = design.family_a * Matrix::Identity(p, p);
        out.laws.assign(static_cast<std::size_t>(p), laplace_law(p - 1, 0.0, scale));
        break;
    }
    case CovariateFamily::gamma: {
        std::gamma_distribution<double> gamma(design.family_a, 1.0 / design.family_b);
        out.X.resize(n, p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) out.X(i, j) = gamma(rng);
        out.model.mean = Vector::Constant(p, design.family_a / design.family_b);
        out.model.covariance = design.family_a / (design.family_b * design.family_b) * Matrix::Identity(p, p);
        out.laws.assign(static_cast<std::size_t>(p), gamma_law(p - 1, design.family_a, design.family_b));
        break;
    }
    case CovariateFamily::bernoulli: {
        const double q = design.family_a;
        std::bernoulli_distribution bern(q);
        out.X.resize(n, p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) out.X(i, j) = bern(rng) ? 1.0 : 0.0;
        out.model.mean = Vector::Constant(p, q);
        out.model.covariance = q * (1 - q) * Matrix::Identity(p, p);
        out.laws.assign(static_cast<std::size_t>(p), discrete_law(p - 1, {0.0, 1.0}, {1 - q, q}));
        break;
    }
    case CovariateFamily::poisson_residual: {
        // X = 0.15 sum_{j<=50} phi_j Z_j + (O - r)/sqrt(r), Z Gaussian with the design covariance.
        const double r = design.family_a;
        const Index q = p - 1;
        const Matrix Sz = design_covariance(design, q);
        const Matrix Z = gaussian_rows(n, Sz, rng);
        Vector c = Vector::Zero(q);
        for (Index j = 0; j < std::min<Index>(50, q); ++j) c[j] = (rng() & 1ULL) ? 0.15 : -0.15;
        std::poisson_distribution<long> pois(r);
        out.X.resize(n, p);
        out.X.rightCols(q) = Z;
        const Vector signal = Z * c;
        for (Index i = 0; i < n; ++i) out.X(i, 0) = signal[i] + (static_cast<double>(pois(rng)) - r) / std::sqrt(r);

        out.model.mean = Vector::Zero(p);
        out.model.covariance.resize(p, p);
        out.model.covariance.bottomRightCorner(q, q) = Sz;
        const Vector cross = Sz * c;
        out.model.covariance.block(1, 0, q, 1) = cross;
        out.model.covariance.block(0, 1, 1, q) = cross.transpose();
        out.model.covariance(0, 0) = c.dot(cross) + 1.0;
        out.laws = all_conditional_laws(out.model);
        ConditionalLaw exact = poisson_residual_law(q, r);
        exact.gamma = c;
        out.laws[0] = exact;
        break;
    }
    }
    return out;
}

IndexSet support_indices(SupportKind kind, Index p, Index s) {
    IndexSet out;
    if (s <= 0) return out;
    if (kind == SupportKind::adjacent) {
        for (Index j = 0; j < s; ++j) out.push_back(j);
    } else {
        const Index step = std::max<Index>(1, p / s);
        for (Index k = 0; k < s; ++k) out.push_back(std::min(p - 1, k * step));
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }
    return out;
}

ResponseDraw gen_response(const SimDesign& design, const Matrix& X, Rng& rng) {
    design.validate();
    const Index n = X.rows(), p = X.cols();
    if (p != design.p || n != design.n) throw ValidationError("covariate matrix does not match the design");
    ResponseDraw out;
    out.beta = Vector::Zero(p);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const auto noise = [&]() {
        if (design.noise == NoiseKind::gaussian) return std::sqrt(design.noise_variance) * normal(rng);
        const double a = expo(rng);
        const double b = expo(rng);
        return std::sqrt(design.noise_variance / 2.0) * (a - b);
    };
    const auto sign = [&]() { return (rng() & 1ULL) ? 1.0 : -1.0; };

    Vector mu(n);
    ResponseModel link = design.response;
    if (design.family == CovariateFamily::poisson_residual) {
        // nu X + 0.15 sum_{j<=50} psi_j Z_j through the identity or logit link.
        out.beta[0] = design.nu;
        for (Index j = 1; j <= std::min<Index>(50, p - 1); ++j) out.beta[j] = 0.15 * sign();
        mu = X * out.beta;
        if (link != ResponseModel::logistic) link = ResponseModel::linear;
    } else if (design.response == ResponseModel::interaction || design.response == ResponseModel::rf_nonlinear) {
        IndexSet pool(static_cast<std::size_t>(p - 1));
        std::iota(pool.begin(), pool.end(), Index{1});
        for (Index k = 0; k < design.n_interactions; ++k) {
            const Index pick = k + static_cast<Index>(rng() % static_cast<std::uint64_t>(p - 1 - k));
            std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
        }
        const IndexSet inter(pool.begin(), pool.begin() + design.n_interactions);
        Vector zsum = Vector::Zero(n);
        for (Index j : inter) zsum += X.col(j);
        const Vector x = X.col(0);
        if (design.response == ResponseModel::interaction) {
            mu = design.nu * (x + zsum + 1.5 * x.cwiseProduct(zsum));
            out.beta[0] = design.nu;
            for (Index j : inter) out.beta[j] = design.nu;
        } else {
            const Vector g = 0.5 * x.array().square() + (0.5 * std::numbers::pi * x.array()).sin();
            mu = design.nu * g.cwiseProduct((zsum.array() + 0.3).matrix());
            out.beta[0] = design.nu;
        }
        if (design.nu > 0) {
            out.support.push_back(0);
            if (design.response == ResponseModel::interaction) out.support.insert(out.support.end(), inter.begin(), inter.end());
        }
        link = ResponseModel::linear;
    } else {
        for (Index j : support_indices(design.support, p, design.s)) out.beta[j] = design.nu * sign();
        mu = X * out.beta;
        if (design.response == ResponseModel::polynomial)
            for (Index j = 0; j < p; ++j)
                if (out.beta[j] != 0.0) mu += design.cubic_weight * out.beta[j] * X.col(j).array().cube().matrix();
    }
    if (out.support.empty())
        for (Index j = 0; j < p; ++j)
            if (out.beta[j] != 0.0) out.support.push_back(j);
    std::sort(out.support.begin(), out.support.end());

    out.y.resize(n);
    switch (link) {
    case ResponseModel::logistic: {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (Index i = 0; i < n; ++i) out.y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-mu[i])) ? 1.0 : 0.0;
        out.kind = ResponseKind::binary;
        break;
    }
    case ResponseModel::poisson:
        for (Index i = 0; i < n; ++i) {
            std::poisson_distribution<long> pois(std::exp(std::min(mu[i], 20.0)));
            out.y[i] = static_cast<double>(pois(rng));
        }
        out.kind = ResponseKind::continuous;
        break;
    default:
        for (Index i = 0; i < n; ++i) out.y[i] = mu[i] + noise();
        out.kind = ResponseKind::continuous;
        break;
    }
    return out;
}

SimData simulate(const SimDesign& design, std::uint64_t seed) {
    Rng xrng = make_rng(seed, 1);
    Rng yrng = make_rng(seed, 2);
    CovariateDraw cov = gen_covariates(design, xrng);
    ResponseDraw resp = gen_response(design, cov.X, yrng);
    SimData out;
    out.data.X = std::move(cov.X);
    out.data.y = std::move(resp.y);
    out.data.response_kind = resp.kind;
    for (Index j = 0; j < design.p; ++j) out.data.names.push_back("X" + std::to_string(j + 1));
    out.model = std::move(cov.model);
    out.laws = std::move(cov.laws);
    out.support = std::move(resp.support);
    if (design.single_test()) {
        out.tested = {0};
    } else {
        out.tested.resize(static_cast<std::size_t>(design.p));
        std::iota(out.tested.begin(), out.tested.end(), Index{0});
    }
    return out;
}

const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {"d0", "dI", "d0_resample", "dI_resample", "d0_screen",
                                                   "dI_screen", "hrt", "gcm", "ocrt"};
    return names;
}

MethodSpec make_method(const std::string& name, const MethodOptions& options, bool single_test) {
    SelectionConfig cfg;
    cfg.alpha = options.alpha;
    cfg.error_rate = options.error_rate;
    cfg.M = options.M;
    cfg.k = options.k;
    cfg.lasso = options.lasso;
    if (name == "d0" || name == "d0_resample" || name == "d0_screen") cfg.method = StatisticKind::d0;
    else if (name == "dI" || name == "dI_resample" || name == "dI_screen") cfg.method = StatisticKind::dI;
    else if (name == "hrt") cfg.method = StatisticKind::hrt;
    else if (name == "gcm") cfg.method = StatisticKind::gcm;
    else if (name == "ocrt") cfg.method = StatisticKind::ocrt_lasso;
    else {
        std::string valid;
        for (const auto& n : method_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ValidationError("unknown method '" + name + "' (valid: " + valid + ")");
    }
    const bool resample = name.ends_with("_resample") || name == "hrt" || name == "ocrt";
    cfg.engine = resample ? Engine::resampling : Engine::resampling_free;
    cfg.screening = name.ends_with("_screen");
    if (single_test) cfg.targets = {0};
    cfg.validate();

    MethodSpec spec;
    spec.name = name;
    spec.run = [cfg, single_test](const SimData& sim, std::uint64_t seed) {
        SelectionConfig c = cfg;
        c.seed = seed;
        const SelectionResult r = select(sim.data, sim.laws, c);
        if (!single_test) return r.rejected;
        return r.p_values[0] <= c.alpha ? IndexSet{0} : IndexSet{};
    };
    return spec;
}

RepMetrics rep_metrics(const IndexSet& rejected, const IndexSet& support, const IndexSet& tested) {
    const auto contains = [](const IndexSet& s, Index j) { return std::find(s.begin(), s.end(), j) != s.end(); };
    Index true_tested = 0, null_tested = 0, true_rej = 0, false_rej = 0, rej = 0;
    for (Index j : tested) {
        const bool signal = contains(support, j);
        const bool r = contains(rejected, j);
        (signal ? true_tested : null_tested) += 1;
        if (r) {
            ++rej;
            (signal ? true_rej : false_rej) += 1;
        }
    }
    RepMetrics m;
    m.power = true_tested > 0 ? static_cast<double>(true_rej) / static_cast<double>(true_tested) : 0.0;
    m.fdp = static_cast<double>(false_rej) / static_cast<double>(std::max<Index>(1, rej));
    m.any_false = false_rej > 0 ? 1.0 : 0.0;
    m.type_I = null_tested > 0 ? static_cast<double>(false_rej) / static_cast<double>(null_tested) : 0.0;
    return m;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    const std::size_t n = values.size();
    if (n == 0) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(n);
    if (n < 2) return s;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
    return s;
}

ExperimentReport run_experiment(const SimDesign& design, const std::vector<MethodSpec>& methods, int reps,
                                std::uint64_t base_seed, int jobs) {
    design.validate();
    if (reps < 2) throw ValidationError("an experiment needs at least 2 repetitions");
    const std::size_t K = methods.size();
    struct Cell {
        bool ok = false;
        RepMetrics m;
        double ms = 0.0;
    };
    std::vector<std::vector<Cell>> cells(static_cast<std::size_t>(reps), std::vector<Cell>(K));
    std::vector<std::string> errors(static_cast<std::size_t>(reps));

    parallel_for(reps, jobs, [&](Index r) {
        const std::uint64_t data_seed = derive_seed(base_seed, static_cast<std::uint64_t>(r));
        SimData sim;
        try {
            sim = simulate(design, data_seed);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(r)] = e.what();
            return;
        }
        for (std::size_t k = 0; k < K; ++k) {
            auto& cell = cells[static_cast<std::size_t>(r)][k];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const IndexSet rej = methods[k].run(sim, derive_seed(data_seed, 0x100 + k));
                cell.m = rep_metrics(rej, sim.support, sim.tested);
                cell.ok = true;
            } catch (const std::exception& e) {
                warn("rep " + std::to_string(r) + ", method " + methods[k].name + " failed: " + e.what());
            }
            cell.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
    });
    for (int r = 0; r < reps; ++r)
        if (!errors[static_cast<std::size_t>(r)].empty())
            warn("rep " + std::to_string(r) + " data generation failed: " + errors[static_cast<std::size_t>(r)]);

    ExperimentReport report;
    report.design = design;
    report.reps = reps;
    report.base_seed = base_seed;
    for (std::size_t k = 0; k < K; ++k) {
        MethodReport mr;
        mr.name = methods[k].name;
        std::vector<double> power, fdp, fw, t1;
        double ms = 0.0;
        for (int r = 0; r < reps; ++r) {
            const Cell& c = cells[static_cast<std::size_t>(r)][k];
            if (!c.ok) {
                ++mr.failures;
                continue;
            }
            power.push_back(c.m.power);
            fdp.push_back(c.m.fdp);
            fw.push_back(c.m.any_false);
            t1.push_back(c.m.type_I);
            ms += c.ms;
        }
        mr.reps_ok = static_cast<int>(power.size());
        mr.power = summarize(power);
        mr.fdr = summarize(fdp);
        mr.fwer = summarize(fw);
        mr.type_I = summarize(t1);
        mr.mean_time_ms = mr.reps_ok > 0 ? ms / mr.reps_ok : 0.0;
        report.methods.push_back(mr);
    }
    return report;
}

std::string to_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out.precision(10);
    out << "method,metric,mean,se,reps,failures\n";
    for (const auto& m : report.methods) {
        const std::pair<const char*, const Summary*> rows[] = {
            {"power", &m.power}, {"fdr", &m.fdr}, {"fwer", &m.fwer}, {"type_I", &m.type_I}};
        for (const auto& [metric, s] : rows)
            out << m.name << ',' << metric << ',' << s->mean << ',' << s->se << ',' << m.reps_ok << ',' << m.failures << '\n';
    }
    return out.str();
}

} // namespace dcrt
