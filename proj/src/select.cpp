#include "dcrt/select.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

namespace dcrt {

const char* to_string(Engine e) { return e == Engine::resampling ? "resample" : "rf"; }
const char* to_string(ErrorRate e) { return e == ErrorRate::fdr_bh ? "fdr" : "fwer"; }

Engine engine_from_string(const std::string& name) {
    if (name == "rf" || name == "resampling_free") return Engine::resampling_free;
    if (name == "resample" || name == "resampling") return Engine::resampling;
    throw ValidationError("unknown engine '" + name + "' (valid: rf, resample)");
}

ErrorRate error_rate_from_string(const std::string& name) {
    if (name == "fdr" || name == "fdr_bh") return ErrorRate::fdr_bh;
    if (name == "fwer" || name == "fwer_bonferroni") return ErrorRate::fwer_bonferroni;
    throw ValidationError("unknown error rate '" + name + "' (valid: fdr, fwer)");
}

void SelectionConfig::validate() const {
    if (!(alpha >= 0 && alpha < 1)) throw ValidationError("alpha must lie in [0, 1)");
    if (M < 0) throw ValidationError("M must be positive");
    if (method == StatisticKind::custom) throw ValidationError("custom statistics are not available in the pipeline");
    const bool ocrt = method == StatisticKind::ocrt_lasso || method == StatisticKind::ocrt_lasso_no_soft ||
                      method == StatisticKind::ocrt_lasso_centered;
    if (ocrt && engine == Engine::resampling_free)
        throw ValidationError("oCRT statistics have no resampling-free engine; use --engine resample");
    if (k < 0) throw ValidationError("k must be nonnegative");
    if (!(hrt_fraction > 0 && hrt_fraction < 1)) throw ValidationError("HRT split fraction must lie in (0, 1)");
}

long SelectionConfig::resample_count(Index tested) const {
    if (M > 0) return M;
    if (tested <= 1 || alpha <= 0) return default_single_test_M;
    return static_cast<long>(std::ceil(5.0 * static_cast<double>(tested) / alpha));
}

namespace {

LossKind loss_for(ResponseKind kind) { return kind == ResponseKind::binary ? LossKind::logistic : LossKind::squared; }

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

} // namespace

IndexSet screen(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config) {
    return cross_validate(X, y, loss_for(kind), config).selected().active;
}

Vector screened_p_values(const Vector& p_raw, const IndexSet& S, Index p) {
    Vector out = Vector::Ones(p);
    if (p_raw.size() == p) {
        for (Index j : S) out[j] = p_raw[j];
    } else if (p_raw.size() == static_cast<Index>(S.size())) {
        for (std::size_t i = 0; i < S.size(); ++i) out[S[i]] = p_raw[static_cast<Index>(i)];
    } else {
        throw ValidationError("raw p-values must cover either every variable or exactly the screened set");
    }
    return out;
}

DistillationSet distill_targets(const Matrix& X, const Vector& y, ResponseKind kind, const CvLassoFit& full,
                                const IndexSet& targets, bool recycling, const LassoConfig& config, int jobs) {
    const Index p = X.cols();
    DistillationSet out;
    out.per_variable.resize(static_cast<std::size_t>(p));
    out.refitted.assign(static_cast<std::size_t>(p), 0);
    out.errors.assign(static_cast<std::size_t>(p), nullptr);
    out.full_prediction = full.selected().predict(X);

    std::vector<char> in_active(static_cast<std::size_t>(p), 0);
    for (Index j : full.union_active) in_active[static_cast<std::size_t>(j)] = 1;
    const CvPlan plan = full.plan();
    const LossKind loss = loss_for(kind);

    parallel_for(static_cast<Index>(targets.size()), jobs, [&](Index t) {
        const Index j = targets[static_cast<std::size_t>(t)];
        auto& slot = out.per_variable[static_cast<std::size_t>(j)];
        if (recycling && !in_active[static_cast<std::size_t>(j)]) {
            // beta_j = 0 at every fit that matters, so the leave-one-out fit is the full fit.
            const LassoFit& f = full.selected();
            slot.beta_z = drop_column(f.beta.transpose(), j).transpose();
            slot.intercept = f.intercept;
            slot.d_y = out.full_prediction;
            slot.kind = kind;
            slot.top_cols.resize(X.rows(), 0);
        } else {
            out.refitted[static_cast<std::size_t>(j)] = 1;
            try {
                const Matrix Z = drop_column(X, j);
                const CvLassoFit cv = cross_validate(Z, y, loss, plan, config.rule, config.solver);
                slot = y_distillation_from_fit(cv.selected(), Z, kind);
            } catch (const NumericalError&) {
                out.errors[static_cast<std::size_t>(j)] = std::current_exception();
            }
        }
    });
    out.refits = static_cast<int>(std::count(out.refitted.begin(), out.refitted.end(), 1));
    return out;
}

RecycleResult recycle_distillations(const Matrix& X, const Vector& y, ResponseKind kind, const LassoConfig& config,
                                    int jobs) {
    RecycleResult out;
    out.full = cross_validate(X, y, loss_for(kind), config);
    IndexSet all(static_cast<std::size_t>(X.cols()));
    std::iota(all.begin(), all.end(), Index{0});
    out.distillations = distill_targets(X, y, kind, out.full, all, true, config, jobs);
    return out;
}

IndexSet bh(const Vector& p_values, double alpha) {
    const Index p = p_values.size();
    if (alpha <= 0.0) return {};
    IndexSet order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return p_values[a] < p_values[b]; });
    Index khat = 0;
    for (Index r = 1; r <= p; ++r)
        if (p_values[order[static_cast<std::size_t>(r - 1)]] <= static_cast<double>(r) * alpha / static_cast<double>(p)) khat = r;
    IndexSet out(order.begin(), order.begin() + khat);
    std::sort(out.begin(), out.end());
    return out;
}

IndexSet bonferroni(const Vector& p_values, double alpha) {
    IndexSet out;
    if (alpha <= 0.0) return out;
    const double cut = alpha / static_cast<double>(p_values.size());
    for (Index j = 0; j < p_values.size(); ++j)
        if (p_values[j] <= cut) out.push_back(j);
    return out;
}

SelectionResult select(const DataSet& data, const std::vector<ConditionalLaw>& laws, const SelectionConfig& config) {
    const auto t_start = std::chrono::steady_clock::now();
    data.validate();
    config.validate();
    const Index p = data.X.cols();
    const Index n = data.X.rows();
    if (static_cast<Index>(laws.size()) != p) throw ValidationError("the covariate model must cover every column");
    for (Index j = 0; j < p; ++j) {
        laws[static_cast<std::size_t>(j)].validate();
        if (laws[static_cast<std::size_t>(j)].gamma.size() != p - 1)
            throw ValidationError("conditional law for column " + data.names[static_cast<std::size_t>(j)] + " has the wrong dimension");
    }
    const Matrix& X = data.X;
    const Vector& y = data.y;
    const ResponseKind kind = data.response_kind;
    const LossKind loss = loss_for(kind);
    IndexSet targets = config.targets;
    if (targets.empty()) {
        targets.resize(static_cast<std::size_t>(p));
        std::iota(targets.begin(), targets.end(), Index{0});
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    for (Index j : targets)
        if (j < 0 || j >= p) throw ValidationError("target column index out of range");
    const long M = config.resample_count(static_cast<Index>(targets.size()));

    SelectionResult res;
    res.names = data.names;
    res.alpha = config.alpha;
    res.error_rate = config.error_rate;
    res.outcomes.resize(static_cast<std::size_t>(p));

    Vector p_raw = Vector::Ones(p);
    std::vector<std::string> failures(static_cast<std::size_t>(p));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(p));

    if (config.method == StatisticKind::hrt) {
        auto t0 = std::chrono::steady_clock::now();
        Rng split_rng = make_rng(config.seed, 0x4852540000000000ULL);
        LassoConfig lc = config.lasso;
        const HrtFit hrt = hrt_fit(X, y, kind, lc, split_rng, config.hrt_fraction);
        res.cv_fits = 1;
        res.timings_ms["fit"] = elapsed_ms(t0);
        res.screened = targets;
        t0 = std::chrono::steady_clock::now();
        parallel_for(static_cast<Index>(targets.size()), config.jobs, [&](Index t) {
            const Index j = targets[static_cast<std::size_t>(t)];
            auto& o = res.outcomes[static_cast<std::size_t>(j)];
            try {
                Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(j));
                o = hrt_test(hrt, j, X, y, laws[static_cast<std::size_t>(j)], M, rng);
            } catch (const std::exception& e) {
                failures[static_cast<std::size_t>(j)] = e.what();
                errors[static_cast<std::size_t>(j)] = std::current_exception();
                o = TestOutcome{};
                o.method = "hrt";
            }
            p_raw[j] = o.p_value;
        });
        res.timings_ms["test"] = elapsed_ms(t0);
    } else {
        // Full fit: screening, the recycling active set, and the shared grid and folds.
        auto t0 = std::chrono::steady_clock::now();
        const CvLassoFit full = cross_validate(X, y, loss, config.lasso);
        res.cv_fits = 1;
        if (config.screening) {
            const IndexSet& S = full.selected().active;
            std::set_intersection(S.begin(), S.end(), targets.begin(), targets.end(), std::back_inserter(res.screened));
        } else {
            res.screened = targets;
        }
        if (config.recycling) res.active_set = full.union_active;
        res.timings_ms["screen"] = elapsed_ms(t0);

        const bool is_ocrt = config.method == StatisticKind::ocrt_lasso ||
                             config.method == StatisticKind::ocrt_lasso_no_soft ||
                             config.method == StatisticKind::ocrt_lasso_centered;
        t0 = std::chrono::steady_clock::now();
        // oCRT refits the joint lasso per resample and never reads the distillations.
        const DistillationSet ds = distill_targets(X, y, kind, full, is_ocrt ? IndexSet{} : res.screened,
                                                   config.recycling, config.lasso, config.jobs);
        res.cv_fits += ds.refits;
        res.timings_ms["distill"] = elapsed_ms(t0);

        t0 = std::chrono::steady_clock::now();
        const Index k_req = config.k > 0 ? config.k : default_top_k(p);
        const Index k = std::min<Index>(k_req, p - 1);
        parallel_for(static_cast<Index>(res.screened.size()), config.jobs, [&](Index t) {
            const Index j = res.screened[static_cast<std::size_t>(t)];
            auto& o = res.outcomes[static_cast<std::size_t>(j)];
            try {
                Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(j));
                const Matrix Z = drop_column(X, j);
                const Vector x = X.col(j);
                const ConditionalLaw& law = laws[static_cast<std::size_t>(j)];
                if (is_ocrt) {
                    const OcrtVariant v = config.method == StatisticKind::ocrt_lasso ? OcrtVariant::original
                                          : config.method == StatisticKind::ocrt_lasso_no_soft ? OcrtVariant::no_soft
                                                                                               : OcrtVariant::centered;
                    o = ocrt_p_value(y, x, Z, kind, law, v, M, rng, config.lasso);
                } else {
                    if (const auto& err = ds.errors[static_cast<std::size_t>(j)]) std::rethrow_exception(err);
                    YDistillation yd = ds.per_variable[static_cast<std::size_t>(j)];
                    if (config.method == StatisticKind::dI) {
                        if (k < 1) throw ValidationError("dI needs at least two covariates");
                        yd = attach_top_columns(std::move(yd), Z, y, k);
                    }
                    Distillation dist = combine(yd, distill_x(law, Z));
                    if (config.method == StatisticKind::gcm) {
                        o = gcm_p_value(y, x, dist);
                    } else if (config.engine == Engine::resampling_free) {
                        const Vector r = response_residual(y, dist);
                        Vector e;
                        if (law.is_gaussian() && !dist.heteroscedastic()) {
                            e = x - dist.d_x;
                        } else {
                            const GaussTransform g = gauss_transform(x, law, Z, rng);
                            e = g.u;
                            dist.sigma_rows = g.sigmas;
                        }
                        o = config.method == StatisticKind::dI ? dI_rf_from_residual(r, e, dist)
                                                               : d0_rf_from_residual(r, e, dist);
                    } else {
                        StatisticFn stat;
                        if (config.method == StatisticKind::dI)
                            stat = [&dist](const Vector& yy, const Vector& xx) { return dI_statistic(yy, xx, dist); };
                        else
                            stat = [&dist](const Vector& yy, const Vector& xx) { return d0_statistic(yy, xx, dist); };
                        o = crt_p_value(stat, y, x, Z, law, M,
                                        rng, config.method == StatisticKind::dI ? "dI_resample" : "d0_resample");
                    }
                }
            } catch (const std::exception& e) {
                failures[static_cast<std::size_t>(j)] = e.what();
                errors[static_cast<std::size_t>(j)] = std::current_exception();
                o = TestOutcome{};
                o.method = to_string(config.method);
            }
            p_raw[j] = o.p_value;
        });
        res.timings_ms["test"] = elapsed_ms(t0);
    }

    if (config.strict)
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    for (Index j = 0; j < p; ++j) {
        auto& o = res.outcomes[static_cast<std::size_t>(j)];
        o.variable = data.names[static_cast<std::size_t>(j)];
        if (!failures[static_cast<std::size_t>(j)].empty())
            warn("variable " + o.variable + " (index " + std::to_string(j) + ") failed, p set to 1: " +
                 failures[static_cast<std::size_t>(j)]);
        if (o.method.empty()) o.method = "screened_out";
    }

    auto t0 = std::chrono::steady_clock::now();
    res.p_values = screened_p_values(p_raw, res.screened, p);
    res.rejected = config.error_rate == ErrorRate::fdr_bh ? bh(res.p_values, config.alpha)
                                                          : bonferroni(res.p_values, config.alpha);
    res.timings_ms["correct"] = elapsed_ms(t0);
    res.timings_ms["total"] = elapsed_ms(t_start);
    (void)n;
    return res;
}

SelectionResult select(const DataSet& data, const CovariateModel& model, const SelectionConfig& config) {
    model.validate();
    if (model.p() != data.X.cols()) throw ValidationError("covariate model dimension does not match the data");
    SelectionResult r = select(data, all_conditional_laws(model), config);
    r.source = to_string(model.source);
    return r;
}

double jaccard(IndexSet a, IndexSet b) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    if (a.empty() && b.empty()) return 1.0;
    IndexSet inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double jaccard_stability(const std::vector<IndexSet>& sets) {
    if (sets.size() < 2) throw ValidationError("stability needs at least two runs");
    double total = 0.0;
    long pairs = 0;
    for (std::size_t a = 0; a < sets.size(); ++a)
        for (std::size_t b = a + 1; b < sets.size(); ++b) {
            total += jaccard(sets[a], sets[b]);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

double jaccard_stability(const std::function<IndexSet(std::uint64_t)>& run, int R, std::uint64_t base_seed) {
    if (R < 2) throw ValidationError("stability needs at least two runs");
    std::vector<IndexSet> sets;
    for (int r = 0; r < R; ++r) sets.push_back(run(derive_seed(base_seed, static_cast<std::uint64_t>(r))));
    return jaccard_stability(sets);
}

} // namespace dcrt
