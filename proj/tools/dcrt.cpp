// dcrt: single tests, batch selection, covariate-model estimation and simulation benchmarks.
#include "dcrt/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace dcrt;

namespace {

// Flat key=value config: every key `k` not already on the command line becomes `--k=value`.
// Booleans for the paired flags turn into `--k` / `--no-k`. Lines starting with '#' are ignored.
std::vector<std::string> apply_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");

    const auto given = [&](const std::string& key) {
        for (const auto& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0 || a == "--no-" + key) return true;
        return false;
    };
    static const std::set<std::string> paired = {"screen", "recycle"};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) + " is not key=value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        if (given(key)) continue;
        if (paired.count(key)) {
            if (value == "true" || value == "1") args.push_back("--" + key);
            else if (value == "false" || value == "0") args.push_back("--no-" + key);
            else throw ValidationError("config key '" + key + "' needs true or false");
        } else {
            args.push_back("--" + key + "=" + value);
        }
    }
    return args;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct Common {
    std::string data, response = "y", model;
    std::string method = "d0", engine = "rf";
    long M = 0;
    Index k = 0;
    std::uint64_t seed = 0;
    int jobs = 0;
};

int resolve_jobs(int flag) { return flag > 0 ? flag : default_jobs(); }

ModelFile load_model(const std::string& path) { return model_file_from_json(read_json_file(path)); }

SelectionConfig base_config(const Common& c) {
    SelectionConfig cfg;
    cfg.method = statistic_kind_from_string(c.method);
    cfg.engine = engine_from_string(c.engine);
    cfg.M = c.M;
    cfg.k = c.k;
    cfg.seed = c.seed;
    cfg.jobs = resolve_jobs(c.jobs);
    return cfg;
}

void check_dims(const ModelFile& m, const DataSet& d) {
    if (m.p() != d.p())
        throw ValidationError("model has " + std::to_string(m.p()) + " covariates but the data has " +
                              std::to_string(d.p()));
}

/// Estimators need every column to vary; name the offending label.
void check_variation(const DataSet& d) {
    for (Index j = 0; j < d.p(); ++j) {
        const double m = d.X.col(j).mean();
        const double sd = std::sqrt((d.X.col(j).array() - m).square().mean());
        if (!(sd > 1e-12 * (1.0 + std::abs(m))))
            throw ValidationError("column '" + d.names[static_cast<std::size_t>(j)] + "' is constant");
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config(std::move(args));

    CLI::App app{"distilled conditional randomization tests"};
    app.require_subcommand(1);
    Common c;

    const std::vector<std::string> methods = {"d0", "dI", "ocrt", "hrt", "gcm"};
    const std::vector<std::string> engines = {"rf", "resample"};

    auto* test = app.add_subcommand("test", "test one variable; JSON on stdout");
    std::string variable;
    test->add_option("data", c.data, "CSV with a header row")->required()->check(CLI::ExistingFile);
    test->add_option("model", c.model, "covariate model JSON")->required()->check(CLI::ExistingFile);
    test->add_option("--variable", variable, "column label to test")->required();
    test->add_option("--response", c.response, "response column")->capture_default_str();
    test->add_option("--method", c.method)->check(CLI::IsMember(methods))->capture_default_str();
    test->add_option("--engine", c.engine)->check(CLI::IsMember(engines))->capture_default_str();
    test->add_option("--M", c.M, "resamples (0: default)");
    test->add_option("--k", c.k, "dI top columns (0: default)");
    test->add_option("--seed", c.seed)->required();

    auto* sel = app.add_subcommand("select", "test every variable and correct for multiplicity");
    std::string estimate, error_rate = "fwer", out;
    double alpha = 0.1;
    bool screen = false, recycle = true;
    sel->add_option("data", c.data)->required()->check(CLI::ExistingFile);
    sel->add_option("model", c.model, "covariate model JSON (or --estimate)")->check(CLI::ExistingFile);
    sel->add_option("--estimate", estimate)->check(CLI::IsMember({"ledoit", "nodewise"}));
    sel->add_option("--response", c.response)->capture_default_str();
    sel->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sel->add_option("--error-rate", error_rate)->check(CLI::IsMember({"fdr", "fwer"}))->capture_default_str();
    sel->add_flag("--screen,!--no-screen", screen, "screen with the full lasso fit (default: off)");
    sel->add_flag("--recycle,!--no-recycle", recycle, "recycle the full fit outside the union active set (default: on)");
    sel->add_option("--method", c.method)->check(CLI::IsMember(methods))->capture_default_str();
    sel->add_option("--engine", c.engine)->check(CLI::IsMember(engines))->capture_default_str();
    sel->add_option("--M", c.M);
    sel->add_option("--k", c.k);
    sel->add_option("--seed", c.seed)->required();
    sel->add_option("--jobs", c.jobs, "worker threads (default: DCRT_JOBS or 1)");
    sel->add_option("--out", out, "results JSON")->required();

    auto* sim = app.add_subcommand("simulate", "benchmark methods on a simulated design");
    std::string design_file, method_list = "d0";
    int reps = 10;
    sim->add_option("--design-file", design_file)->required()->check(CLI::ExistingFile);
    sim->add_option("--methods", method_list, "comma-separated method names")->capture_default_str();
    sim->add_option("--reps", reps)->check(CLI::PositiveNumber)->capture_default_str();
    sim->add_option("--seed", c.seed)->required();
    sim->add_option("--jobs", c.jobs);
    sim->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sim->add_option("--error-rate", error_rate)->check(CLI::IsMember({"fdr", "fwer"}));
    sim->add_option("--M", c.M);
    sim->add_option("--k", c.k);
    sim->add_option("--out", out, "report CSV; the JSON report goes next to it")->required();

    auto* est = app.add_subcommand("estimate-model", "estimate the covariate model from data");
    std::string estimator = "ledoit";
    est->add_option("data", c.data)->required()->check(CLI::ExistingFile);
    est->add_option("--response", c.response)->capture_default_str();
    est->add_option("--estimator", estimator)->check(CLI::IsMember({"ledoit", "nodewise"}))->capture_default_str();
    est->add_option("--out", out)->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*test) {
        const DataSet data = load_csv(c.data, c.response);
        const ModelFile model = load_model(c.model);
        check_dims(model, data);
        SelectionConfig cfg = base_config(c);
        cfg.targets = {data.column(variable)};
        cfg.strict = true;
        cfg.jobs = 1;
        cfg.error_rate = ErrorRate::fwer_bonferroni;
        if (cfg.M == 0) cfg.M = default_single_test_M;
        cfg.validate();
        const SelectionResult r = select(data, model.all_laws(), cfg);
        std::cout << to_json(r.outcomes[static_cast<std::size_t>(cfg.targets[0])]).dump() << "\n";
        return 0;
    }

    if (*sel) {
        const auto t0 = std::chrono::steady_clock::now();
        const DataSet data = load_csv(c.data, c.response);
        if (c.model.empty() == estimate.empty())
            throw ValidationError("select needs exactly one of a model file or --estimate");
        SelectionConfig cfg = base_config(c);
        cfg.alpha = alpha;
        cfg.error_rate = error_rate_from_string(error_rate);
        cfg.screening = screen;
        cfg.recycling = recycle;
        cfg.validate();
        SelectionResult r;
        if (!estimate.empty()) check_variation(data);
        if (estimate == "ledoit") {
            r = select(data, estimate_ledoit_wolf(data.X), cfg);
        } else if (estimate == "nodewise") {
            r = select(data, estimate_nodewise_lasso(data.X, cfg.lasso), cfg);
            r.source = "nodewise";
        } else {
            const ModelFile model = load_model(c.model);
            check_dims(model, data);
            r = select(data, model.all_laws(), cfg);
            r.source = model.source;
        }
        write_text_file(out, to_json(r).dump(2) + "\n");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%zu of %zu tested variables rejected (%s, alpha=%g) in %.2f s -> %s\n", r.rejected.size(),
                    r.screened.size(), to_string(cfg.error_rate), alpha, secs, out.c_str());
        return 0;
    }

    if (*sim) {
        const SimDesign design = sim_design_from_json(read_json_file(design_file));
        MethodOptions opts;
        opts.alpha = alpha;
        if (!error_rate.empty()) opts.error_rate = error_rate_from_string(error_rate);
        if (sim->count("--error-rate") == 0) opts.error_rate = ErrorRate::fdr_bh;
        opts.M = c.M;
        opts.k = c.k;
        std::vector<MethodSpec> specs;
        for (const auto& name : split_list(method_list)) specs.push_back(make_method(name, opts, design.single_test()));
        if (specs.empty()) throw ValidationError("--methods is empty");
        const ExperimentReport report = run_experiment(design, specs, reps, c.seed, resolve_jobs(c.jobs));
        std::filesystem::path json_path = out;
        json_path.replace_extension(".json");
        write_text_file(out, to_csv(report));
        write_text_file(json_path, to_json(report).dump(2) + "\n");
        for (const auto& m : report.methods)
            std::printf("%-12s power %.3f  fdr %.3f  fwer %.3f  (%d ok, %d failed, %.1f ms/rep)\n", m.name.c_str(),
                        m.power.mean, m.fdr.mean, m.fwer.mean, m.reps_ok, m.failures, m.mean_time_ms);
        std::printf("wrote %s and %s\n", out.c_str(), json_path.string().c_str());
        return 0;
    }

    if (*est) {
        const DataSet data = load_csv(c.data, c.response);
        check_variation(data);
        ModelFile m;
        if (estimator == "ledoit") {
            m.joint = estimate_ledoit_wolf(data.X);
            m.source = "ledoit_wolf";
        } else {
            m.laws = estimate_nodewise_lasso(data.X, LassoConfig{});
            m.source = "nodewise";
        }
        write_text_file(out, to_json(m).dump(2) + "\n");
        std::printf("%s model for %lld covariates -> %s\n", m.source.c_str(), static_cast<long long>(data.p()),
                    out.c_str());
        return 0;
    }
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    set_warning_handler([](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; });
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
