#include "dcrt/io.hpp"
#include "dcrt/sim.hpp"

#include "helpers.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

using namespace dcrt;
using namespace testing;

namespace {

struct RunResult {
    int code = -1;
    std::string out, err;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    const std::string tag = std::to_string(counter++);
    const auto out = temp_path("cli_out_" + tag), err = temp_path("cli_err_" + tag);
    const std::string cmd = std::string("\"") + DCRT_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

std::string csv_text(const DataSet& d) {
    std::ostringstream os;
    os.precision(17);
    os << "y";
    for (const auto& name : d.names) os << "," << name;
    os << "\n";
    for (Index i = 0; i < d.n(); ++i) {
        os << d.y[i];
        for (Index j = 0; j < d.p(); ++j) os << "," << d.X(i, j);
        os << "\n";
    }
    return os.str();
}

struct Fixture {
    std::filesystem::path data, model;
    SimData sim;

    Fixture() {
        SimDesign d;
        d.n = 80;
        d.p = 10;
        d.s = 3;
        d.nu = 0.6;
        sim = simulate(d, 42);
        data = write_file("cli_data.csv", csv_text(sim.data));
        ModelFile m;
        m.joint = sim.model;
        model = write_file("cli_model.json", to_json(m).dump());
    }
};

} // namespace

TEST_CASE("cli test prints one JSON outcome, deterministically") {
    const Fixture f;
    const std::string args = "test " + q(f.data) + " " + q(f.model) + " --variable X1 --seed 7";
    const RunResult a = run(args);
    REQUIRE(a.code == 0);
    const Json j = Json::parse(a.out);
    CHECK(j.at("variable") == "X1");
    const double p = j.at("p_value").get<double>();
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    const RunResult b = run(args);
    CHECK(a.out == b.out);

    const RunResult r = run("test " + q(f.data) + " " + q(f.model) + " --variable X2 --engine resample --M 99 --seed 3");
    REQUIRE(r.code == 0);
    CHECK(Json::parse(r.out).at("p_value").get<double>() >= 0.01);
    CHECK(run("test " + q(f.data) + " " + q(f.model) + " --variable X2 --engine resample --M 99 --seed 3").out == r.out);
}

TEST_CASE("cli test rejects unknown labels and mismatched models") {
    const Fixture f;
    const RunResult r = run("test " + q(f.data) + " " + q(f.model) + " --variable NOPE --seed 1");
    CHECK(r.code == 2);
    CHECK(r.err.find("NOPE") != std::string::npos);
    CHECK(r.out.empty());

    ModelFile small;
    small.joint = CovariateModel{Vector::Zero(3), Matrix::Identity(3, 3), ModelSource::exact};
    const auto bad = write_file("cli_small_model.json", to_json(small).dump());
    CHECK(run("test " + q(f.data) + " " + q(bad) + " --variable X1 --seed 1").code == 2);
    CHECK(run("test " + q(f.data) + " " + q(f.model) + " --variable X1").code == 2);
}

TEST_CASE("cli select matches the naive library pipeline") {
    const Fixture f;
    const auto out = temp_path("cli_select.json");
    const RunResult r = run("select " + q(f.data) + " " + q(f.model) + " --no-screen --no-recycle --seed 5 --out " + q(out));
    REQUIRE(r.code == 0);
    CHECK_FALSE(r.out.empty());
    const Json j = read_json_file(out);

    SelectionConfig cfg;
    cfg.recycling = false;
    cfg.seed = 5;
    const SelectionResult lib = select(f.sim.data, f.sim.model, cfg);
    const Json ref = to_json(lib);
    CHECK(j.at("rejected") == ref.at("rejected"));
    for (Index k = 0; k < 10; ++k)
        CHECK(j.at("results")[static_cast<std::size_t>(k)].at("p_value") ==
              ref.at("results")[static_cast<std::size_t>(k)].at("p_value"));
}

TEST_CASE("cli select: alpha 0, estimated models, and jobs") {
    const Fixture f;
    const auto out = temp_path("cli_select_a0.json");
    REQUIRE(run("select " + q(f.data) + " " + q(f.model) + " --alpha 0 --seed 1 --out " + q(out)).code == 0);
    CHECK(read_json_file(out).at("rejected").empty());

    const auto lw = temp_path("cli_select_lw.json");
    REQUIRE(run("select " + q(f.data) + " --estimate ledoit --seed 1 --out " + q(lw)).code == 0);
    CHECK(read_json_file(lw).at("source") == "ledoit_wolf");

    const auto j1 = temp_path("cli_j1.json"), j3 = temp_path("cli_j3.json");
    REQUIRE(run("select " + q(f.data) + " " + q(f.model) + " --error-rate fdr --seed 2 --jobs 1 --out " + q(j1)).code == 0);
    REQUIRE(run("select " + q(f.data) + " " + q(f.model) + " --error-rate fdr --seed 2 --jobs 3 --out " + q(j3)).code == 0);
    CHECK(read_json_file(j1).at("results") == read_json_file(j3).at("results"));

    CHECK(run("select " + q(f.data) + " --seed 1 --out " + q(out)).code == 2);
    CHECK(run("select " + q(f.data) + " " + q(f.model) + " --method ocrt --engine rf --seed 1 --out " + q(out)).code == 2);
}

TEST_CASE("cli config file pre-populates flags") {
    const Fixture f;
    const auto out = temp_path("cli_cfg.json");
    const auto cfg = write_file("cli.cfg", "# defaults\nalpha = 0\nseed = 4\nerror_rate = fdr\nrecycle = false\n");
    const RunResult r = run("select " + q(f.data) + " " + q(f.model) + " --config " + q(cfg) + " --out " + q(out));
    REQUIRE(r.code == 0);
    const Json j = read_json_file(out);
    CHECK(j.at("alpha") == 0.0);
    CHECK(j.at("error_rate") == "fdr");
    CHECK(j.at("rejected").empty());
    // Command-line flags win.
    REQUIRE(run("select " + q(f.data) + " " + q(f.model) + " --config " + q(cfg) + " --alpha 0.2 --out " + q(out)).code == 0);
    CHECK(read_json_file(out).at("alpha") == 0.2);
}

TEST_CASE("cli simulate writes reproducible reports") {
    SimDesign d;
    d.n = 60;
    d.p = 15;
    d.s = 3;
    d.nu = 0.6;
    const auto design = write_file("cli_design.json", to_json(d).dump());
    const auto a = temp_path("cli_sim_a.csv"), b = temp_path("cli_sim_b.csv");
    REQUIRE(run("simulate --design-file " + q(design) + " --methods d0,gcm --reps 2 --seed 9 --out " + q(a)).code == 0);
    REQUIRE(run("simulate --design-file " + q(design) + " --methods d0,gcm --reps 2 --seed 9 --jobs 2 --out " + q(b)).code == 0);
    CHECK(std::filesystem::exists(a));
    CHECK(std::filesystem::exists(std::filesystem::path(a).replace_extension(".json")));
    CHECK(read_file(a) == read_file(b));

    const RunResult bad = run("simulate --design-file " + q(design) + " --methods d0,magic --reps 2 --seed 9 --out " + q(a));
    CHECK(bad.code == 2);
    CHECK(bad.err.find("magic") != std::string::npos);
    CHECK(bad.err.find("dI_resample") != std::string::npos);

    const auto broken = write_file("cli_design_bad.json", R"({"n": 60, "p": 15, "colour": "red"})");
    CHECK(run("simulate --design-file " + q(broken) + " --reps 2 --seed 9 --out " + q(a)).code == 2);
}

TEST_CASE("cli estimate-model") {
    const Fixture f;
    const auto lw = temp_path("cli_lw_model.json"), nw = temp_path("cli_nw_model.json");
    REQUIRE(run("estimate-model " + q(f.data) + " --estimator ledoit --out " + q(lw)).code == 0);
    REQUIRE(run("estimate-model " + q(f.data) + " --estimator nodewise --out " + q(nw)).code == 0);
    CHECK(read_json_file(lw).contains("covariance"));
    CHECK(read_json_file(nw).at("laws").size() == 10);

    const auto out = temp_path("cli_nw_select.json");
    const RunResult r = run("select " + q(f.data) + " " + q(nw) + " --seed 1 --out " + q(out));
    REQUIRE(r.code == 0);
    CHECK(r.err.find("warning") == std::string::npos);
    const RunResult r2 = run("select " + q(f.data) + " " + q(lw) + " --seed 1 --out " + q(out));
    REQUIRE(r2.code == 0);
    CHECK(r2.err.find("warning") == std::string::npos);
    CHECK(read_json_file(out).at("source") == "ledoit_wolf");

    DataSet constant = f.sim.data;
    constant.X.col(4).setConstant(2.0);
    const auto cdata = write_file("cli_constant.csv", csv_text(constant));
    const RunResult c = run("estimate-model " + q(cdata) + " --out " + q(temp_path("cli_const_model.json")));
    CHECK(c.code == 2);
    CHECK(c.err.find("X5") != std::string::npos);
}
