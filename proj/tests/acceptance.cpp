// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion; pass criterion numbers as
// arguments to run a subset. Exit status is nonzero when any selected criterion fails.

#include "dcrt/crt.hpp"
#include "dcrt/distill.hpp"
#include "dcrt/select.hpp"
#include "dcrt/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace dcrt;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double binomial_bound(double alpha, int reps) { return alpha + 3.0 * std::sqrt(alpha * (1.0 - alpha) / reps); }

Matrix ar1(Index p, double rho) {
    Matrix S(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) S(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    return S;
}

Matrix draw_rows(Index n, const Matrix& S, Rng& rng) {
    std::normal_distribution<double> z;
    Matrix G(n, S.rows());
    for (Index j = 0; j < G.cols(); ++j)
        for (Index i = 0; i < n; ++i) G(i, j) = z(rng);
    const Matrix L = S.llt().matrixL();
    return G * L.transpose();
}

const MethodReport& method(const ExperimentReport& r, const std::string& name) {
    for (const auto& m : r.methods)
        if (m.name == name) return m;
    throw std::runtime_error("method missing from report: " + name);
}

SimDesign baseline() {
    SimDesign d;
    d.n = 200;
    d.p = 200;
    d.s = 20;
    d.covariance = CovarianceKind::ar1;
    d.rho = 0.5;
    d.nu = 0.32;   // d0 BH power near 0.5 at alpha = 0.1
    return d;
}

// ---------------------------------------------------------------------------------------------

Verdict validity() {
    SimDesign d;
    d.n = 100;
    d.p = 100;
    d.s = 10;
    d.nu = 0.0;
    const int reps = 500;
    struct Variant {
        std::string name;
        SelectionConfig cfg;
        long hits05 = 0, hits10 = 0, fw05 = 0, fw10 = 0, tests = 0;
    };
    std::vector<Variant> variants;
    auto add = [&](std::string name, StatisticKind m, Engine e, bool screening) {
        Variant v;
        v.name = std::move(name);
        v.cfg.method = m;
        v.cfg.engine = e;
        v.cfg.screening = screening;
        v.cfg.M = 199;
        variants.push_back(v);
    };
    add("d0_rf", StatisticKind::d0, Engine::resampling_free, false);
    add("d0_resample", StatisticKind::d0, Engine::resampling, false);
    add("dI_rf", StatisticKind::dI, Engine::resampling_free, false);
    add("dI_resample", StatisticKind::dI, Engine::resampling, false);
    add("d0_screen", StatisticKind::d0, Engine::resampling_free, true);

    for (int r = 0; r < reps; ++r) {
        const SimData sim = simulate(d, derive_seed(101, static_cast<std::uint64_t>(r)));
        for (auto& v : variants) {
            v.cfg.seed = derive_seed(202, static_cast<std::uint64_t>(r));
            const SelectionResult res = select(sim.data, sim.laws, v.cfg);
            for (Index j = 0; j < d.p; ++j) {
                v.hits05 += res.p_values[j] <= 0.05;
                v.hits10 += res.p_values[j] <= 0.10;
            }
            v.tests += d.p;
            v.fw05 += !bonferroni(res.p_values, 0.05).empty();
            v.fw10 += !bonferroni(res.p_values, 0.10).empty();
        }
    }
    bool pass = true;
    std::ostringstream os;
    for (const auto& v : variants) {
        const double r05 = static_cast<double>(v.hits05) / static_cast<double>(v.tests);
        const double r10 = static_cast<double>(v.hits10) / static_cast<double>(v.tests);
        const double f05 = static_cast<double>(v.fw05) / reps, f10 = static_cast<double>(v.fw10) / reps;
        pass = pass && r05 <= binomial_bound(0.05, reps) && r10 <= binomial_bound(0.10, reps) &&
               f05 <= binomial_bound(0.05, reps) && f10 <= binomial_bound(0.10, reps);
        os << fmt("%s rate@.05=%.4f rate@.10=%.4f fwer@.05=%.3f fwer@.10=%.3f; ", v.name.c_str(), r05, r10, f05, f10);
    }
    os << fmt("bounds %.4f/%.4f", binomial_bound(0.05, reps), binomial_bound(0.10, reps));
    return {pass, os.str()};
}

Verdict rf_agreement() {
    const long M = 10000;
    int agree = 0;
    std::uniform_real_distribution<double> u;
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(derive_seed(303, static_cast<std::uint64_t>(inst)));
        const Index n = 100, p = 20;
        const double rho = 0.8 * u(rng);
        const Matrix S = ar1(p, rho);
        const Matrix X = draw_rows(n, S, rng);
        Vector beta = Vector::Zero(p);
        beta[0] = 0.25 * u(rng);
        beta[3] = 0.5;
        beta[9] = -0.5;
        beta[15] = 0.5;
        std::normal_distribution<double> z;
        Vector y = X * beta;
        for (Index i = 0; i < n; ++i) y[i] += z(rng);

        const Matrix Z = drop_column(X, 0);
        const Vector x = X.col(0);
        const CovariateModel model{Vector::Zero(p), S, ModelSource::exact};
        const ConditionalLaw law = conditional_law(model, 0);
        const Distillation dist = combine(distill_y_d0(Z, y, ResponseKind::continuous, LassoConfig{}), distill_x(law, Z));
        const double p_rf = d0_rf_p_value(y, x, dist).p_value;
        const StatisticFn stat = [&dist](const Vector& yy, const Vector& xx) {
            return std::abs((yy - dist.d_y).dot(xx - dist.d_x));
        };
        const double p_m = crt_p_value(stat, y, x, Z, law, M, rng).p_value;
        if (std::abs(p_m - p_rf) <= 3.0 * std::sqrt(p_rf * (1.0 - p_rf) / static_cast<double>(M))) ++agree;
    }
    return {agree >= 95, fmt("%d/100 instances within 3 binomial SE (need 95)", agree)};
}

Verdict recycling_exactness() {
    int bad_coef = 0, bad_ghat = 0, bad_count = 0, checked = 0;
    double worst = 0.0;
    std::uniform_real_distribution<double> u;
    for (int inst = 0; inst < 50; ++inst) {
        Rng rng(derive_seed(404, static_cast<std::uint64_t>(inst)));
        const Index n = 60, p = 40;
        const Matrix S = ar1(p, 0.7 * u(rng));
        const Matrix X = draw_rows(n, S, rng);
        Vector beta = Vector::Zero(p);
        for (int k = 0; k < 4; ++k) beta[static_cast<Index>(u(rng) * p)] = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.3 + u(rng));
        std::normal_distribution<double> z;
        Vector y = X * beta;
        for (Index i = 0; i < n; ++i) y[i] += z(rng);

        const LassoConfig cfg;
        const RecycleResult rr = recycle_distillations(X, y, ResponseKind::continuous, cfg);
        const IndexSet& A = rr.full.union_active;
        const CvPlan plan = rr.full.plan();
        for (Index j = 0; j < p; ++j) {
            if (std::binary_search(A.begin(), A.end(), j)) continue;
            const Matrix Zj = drop_column(X, j);
            const CvLassoFit loo = cross_validate(Zj, y, LossKind::squared, plan, cfg.rule, cfg.solver);
            const YDistillation& rec = rr.distillations.per_variable[static_cast<std::size_t>(j)];
            const double diff = std::max((rec.beta_z - loo.selected().beta).cwiseAbs().maxCoeff(),
                                         std::abs(rec.intercept - loo.selected().intercept));
            worst = std::max(worst, diff);
            bad_coef += diff > 1e-8;
            bad_ghat += loo.g_hat != rr.full.g_hat;
            ++checked;
        }
        DataSet data;
        data.X = X;
        data.y = y;
        for (Index j = 0; j < p; ++j) data.names.push_back("X" + std::to_string(j + 1));
        const SelectionResult res = select(data, CovariateModel{Vector::Zero(p), S, ModelSource::exact}, SelectionConfig{});
        bad_count += res.cv_fits != static_cast<int>(res.active_set.size()) + 1 ||
                     rr.distillations.refits != static_cast<int>(A.size());
    }
    return {bad_coef == 0 && bad_ghat == 0 && bad_count == 0,
            fmt("%d recycled columns: max |diff| %.2e, coefficient mismatches %d, g_hat mismatches %d, refit-count "
                "mismatches %d",
                checked, worst, bad_coef, bad_ghat, bad_count)};
}

Verdict screening() {
    SimDesign d;
    d.n = 300;
    d.p = 100;
    d.s = 5;
    d.nu = 1.0;
    d.support = SupportKind::equally_spaced;
    int identical = 0, monotone_violations = 0;
    for (int inst = 0; inst < 50; ++inst) {
        const SimData sim = simulate(d, derive_seed(505, static_cast<std::uint64_t>(inst)));
        SelectionConfig cfg;
        cfg.error_rate = ErrorRate::fdr_bh;
        const SelectionResult off = select(sim.data, sim.laws, cfg);
        cfg.screening = true;
        const SelectionResult on = select(sim.data, sim.laws, cfg);
        for (Index j = 0; j < d.p; ++j) monotone_violations += on.p_values[j] < off.p_values[j];
        identical += on.rejected == off.rejected;
    }
    return {monotone_violations == 0 && identical >= 48,
            fmt("screened p < unscreened p in %d cases; identical BH sets in %d/50 (need 48)", monotone_violations,
                identical)};
}

Verdict speedup() {
    const SimData sim = simulate(baseline(), 606);
    const Index p = sim.data.p();
    SelectionConfig cfg;
    cfg.M = 200;
    cfg.engine = Engine::resampling;
    cfg.method = StatisticKind::d0;
    cfg.seed = 1;
    auto t0 = Clock::now();
    const SelectionResult d0 = select(sim.data, sim.laws, cfg);
    const double d0_s = seconds_since(t0);

    // oCRT-lasso on a few columns, extrapolated linearly to all p.
    cfg.method = StatisticKind::ocrt_lasso;
    cfg.targets = {0, 100, 199};
    t0 = Clock::now();
    const SelectionResult oc = select(sim.data, sim.laws, cfg);
    const double measured = seconds_since(t0);
    const double shared = oc.timings_ms.at("screen") / 1000.0;
    const double ocrt_s = shared + (measured - shared) * static_cast<double>(p) / static_cast<double>(cfg.targets.size());
    const double ratio = ocrt_s / d0_s;
    (void)d0;
    return {ratio >= 20.0, fmt("d0CRT %.2f s for %ld columns; oCRT-lasso %.1f s for 3 columns -> %.0f s extrapolated; "
                               "ratio %.0fx (need 20x)",
                               d0_s, static_cast<long>(p), measured, ocrt_s, ratio)};
}

ExperimentReport baseline_report() {
    static std::optional<ExperimentReport> cached;
    if (!cached) {
        MethodOptions opt;
        opt.alpha = 0.1;
        opt.error_rate = ErrorRate::fdr_bh;
        const std::vector<MethodSpec> methods{make_method("d0", opt, false), make_method("dI", opt, false),
                                              make_method("hrt", opt, false)};
        cached = run_experiment(baseline(), methods, 200, 707);
    }
    return *cached;
}

Verdict power_vs_hrt() {
    const ExperimentReport r = baseline_report();
    const MethodReport& d0 = method(r, "d0");
    const MethodReport& hrt = method(r, "hrt");
    const double gap = d0.power.mean - hrt.power.mean;
    return {gap >= 0.10 && d0.failures == 0 && hrt.failures == 0,
            fmt("nu=%.2f: d0 power %.3f (se %.3f), HRT power %.3f (se %.3f), gap %.1f pp (need 10)", baseline().nu,
                d0.power.mean, d0.power.se, hrt.power.mean, hrt.power.se, 100.0 * gap)};
}

Verdict interaction_gain() {
    SimDesign d = baseline();
    d.response = ResponseModel::interaction;
    d.nu = 0.2;
    MethodOptions opt;
    opt.alpha = 0.05;
    const std::vector<MethodSpec> methods{make_method("d0", opt, true), make_method("dI", opt, true)};
    const ExperimentReport r = run_experiment(d, methods, 200, 808);
    const MethodReport& d0 = method(r, "d0");
    const MethodReport& dI = method(r, "dI");
    const double gap = dI.power.mean - d0.power.mean;
    return {d0.power.mean >= 0.2 && d0.power.mean <= 0.6 && gap >= 0.10,
            fmt("nu=%.2f alpha=0.05: d0 power %.3f, dI power %.3f, gain %.1f pp (need d0 in [0.2, 0.6] and 10 pp)", d.nu,
                d0.power.mean, dI.power.mean, 100.0 * gap)};
}

Verdict fdr_control() {
    const ExperimentReport r = baseline_report();
    const MethodReport& d0 = method(r, "d0");
    const MethodReport& dI = method(r, "dI");
    return {d0.fdr.mean <= 0.12 && dI.fdr.mean <= 0.12 && d0.failures == 0 && dI.failures == 0,
            fmt("alpha=0.1, 200 reps: d0 FDR %.3f (se %.3f), dI FDR %.3f (se %.3f); bound 0.12", d0.fdr.mean,
                d0.fdr.se, dI.fdr.mean, dI.fdr.se)};
}

Verdict gcm_miscalibration() {
    SimDesign d;
    d.n = 30;
    d.p = 100;
    d.s = 10;
    d.nu = 1.0;
    d.covariance = CovarianceKind::independent;
    d.family = CovariateFamily::laplace;
    d.family_a = 2.0 / 9.0;
    d.noise = NoiseKind::laplace;
    d.noise_variance = 0.5;
    MethodOptions opt;
    opt.alpha = 0.1;
    opt.error_rate = ErrorRate::fdr_bh;
    const std::vector<MethodSpec> methods{make_method("gcm", opt, false), make_method("d0", opt, false)};
    ScopedWarningCapture quiet;
    const ExperimentReport r = run_experiment(d, methods, 300, 909);
    const MethodReport& g = method(r, "gcm");
    const MethodReport& d0 = method(r, "d0");
    return {g.fdr.mean > 0.1 && d0.fdr.mean <= 0.12,
            fmt("GCM FDR %.3f (se %.3f, need > 0.1), d0 FDR %.3f (se %.3f, need <= 0.12); failed reps %d/%d",
                g.fdr.mean, g.fdr.se, d0.fdr.mean, d0.fdr.se, g.failures, d0.failures)};
}

Verdict imhof_accuracy() {
    Rng rng(1010);
    std::uniform_real_distribution<double> u;
    std::uniform_int_distribution<int> dim(1, 10);
    std::normal_distribution<double> z;
    const int draws = 1000000;
    double worst = 0.0;
    for (int set = 0; set < 20; ++set) {
        std::vector<double> w(static_cast<std::size_t>(dim(rng)));
        for (auto& v : w) v = 0.05 + 2.0 * u(rng);
        std::vector<double> sample(draws);
        for (auto& s : sample) {
            s = 0.0;
            for (double v : w) {
                const double g = z(rng);
                s += v * g * g;
            }
        }
        // Threshold at a log-uniform tail probability in [1e-4, 0.5].
        const double target = std::exp(std::log(1e-4) + u(rng) * (std::log(0.5) - std::log(1e-4)));
        std::vector<double> sorted = sample;
        const auto k = static_cast<std::size_t>((1.0 - target) * draws);
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(k), sorted.end());
        const double t = sorted[k];
        const double mc = static_cast<double>(std::count_if(sample.begin(), sample.end(), [t](double s) { return s >= t; })) / draws;
        worst = std::max(worst, std::abs(imhof_tail(w, t) - mc));
    }
    const double chi = imhof_tail({1.0}, 3.841459);
    return {worst <= 2e-3 && std::abs(chi - 0.05) <= 1e-4,
            fmt("max |Imhof - MC| over 20 sets %.2e (need 2e-3); chi2_1 tail at 3.841459 = %.7f", worst, chi)};
}

double ks_normal(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double F = normal_cdf(v[i]);
        d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
    }
    return d;
}

Verdict gaussian_transform() {
    const Index n = 10000;
    Rng rng(1111);
    const Matrix Z = Matrix::Zero(n, 2);
    const double crit = 1.628 / std::sqrt(static_cast<double>(n));
    std::ostringstream os;
    bool pass = true;

    // Gamma(shape 3, rate 0.5), centered.
    const ConditionalLaw gam = gamma_law(2, 3.0, 0.5);
    Vector x = resample_column(gam, Z, rng);
    GaussTransform g = gauss_transform(x, gam, Z, rng);
    std::vector<double> std_u(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) std_u[static_cast<std::size_t>(i)] = g.u[i] / g.sigmas[i];
    const double ks_gamma = ks_normal(std_u);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return x[a] < x[b]; });
    int mono = 0;
    for (std::size_t k = 1; k < order.size(); ++k) mono += g.u[order[k]] < g.u[order[k - 1]];
    pass = pass && ks_gamma <= crit && mono == 0;
    os << fmt("Gamma KS %.4f, order violations %d; ", ks_gamma, mono);

    // Bernoulli(0.5).
    const ConditionalLaw ber = discrete_law(2, {0.0, 1.0}, {0.5, 0.5});
    x = resample_column(ber, Z, rng);
    g = gauss_transform(x, ber, Z, rng);
    for (Index i = 0; i < n; ++i) std_u[static_cast<std::size_t>(i)] = g.u[i] / g.sigmas[i];
    const double ks_ber = ks_normal(std_u);
    double max0 = -INFINITY, min1 = INFINITY;
    for (Index i = 0; i < n; ++i) (x[i] == 0.0 ? max0 : min1) = x[i] == 0.0 ? std::max(max0, g.u[i]) : std::min(min1, g.u[i]);
    pass = pass && ks_ber <= crit && max0 <= min1;
    os << fmt("Bernoulli KS %.4f, atoms ordered %s; 1%% critical value %.4f", ks_ber, max0 <= min1 ? "yes" : "no", crit);
    return {pass, os.str()};
}

Verdict stability() {
    const SimData sim = simulate(baseline(), 1212);
    auto run = [&](Engine e, long M) {
        return [&sim, e, M](std::uint64_t seed) {
            SelectionConfig cfg;
            cfg.engine = e;
            cfg.M = M;
            cfg.error_rate = ErrorRate::fdr_bh;
            cfg.seed = seed;
            return select(sim.data, sim.laws, cfg).rejected;
        };
    };
    const double rf = jaccard_stability(run(Engine::resampling_free, 0), 3, 13);
    const auto resample = run(Engine::resampling, 2000);
    double sum = 0.0;
    for (int pair = 0; pair < 20; ++pair)
        sum += jaccard(resample(derive_seed(14, 2 * static_cast<std::uint64_t>(pair))),
                       resample(derive_seed(14, 2 * static_cast<std::uint64_t>(pair) + 1)));
    const double rs = sum / 20.0;
    return {rf == 1.0 && rs >= 0.9, fmt("resampling-free stability %.3f (need 1.0); resampling M=2000 stability %.3f "
                                        "over 20 seed pairs (need 0.9)",
                                        rf, rs)};
}

} // namespace

int main(int argc, char** argv) {
    const std::map<int, std::pair<const char*, std::function<Verdict()>>> criteria{
        {1, {"validity under the global null", validity}},
        {2, {"resampling-free agreement", rf_agreement}},
        {3, {"recycling exactness", recycling_exactness}},
        {4, {"screening monotonicity and neutrality", screening}},
        {5, {"speedup over oCRT-lasso", speedup}},
        {6, {"power over HRT", power_vs_hrt}},
        {7, {"dICRT interaction gain", interaction_gain}},
        {8, {"FDR control under BH", fdr_control}},
        {9, {"GCM miscalibration", gcm_miscalibration}},
        {10, {"Imhof accuracy", imhof_accuracy}},
        {11, {"Gaussian transformation", gaussian_transform}},
        {12, {"Jaccard stability", stability}},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& [id, entry] : criteria) {
        if (!wanted.empty() && !wanted.count(id)) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = entry.second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("criterion %2d %s  %s: %s [%.0f s]\n", id, v.pass ? "PASS" : "FAIL", entry.first, v.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
