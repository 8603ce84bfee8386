#include "doctest.h"
#include "oracles.hpp"

#include "isps/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

using namespace isps;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Case study with coarse grids, few samples and a short horizon.
ExperimentConfig small_config(const fs::path& out) {
    ExperimentConfig c = case_study_config();
    c.sample_count = 60;
    c.state_points_per_axis = 5;
    c.input_points_per_axis = 3;
    c.horizon = 0.5;
    c.sandwich_samples = 500;
    c.output_dir = out;
    return c;
}

// Double integrator with no drift; oracle drift and no filter give the plain error system.
ExperimentConfig delta_iss_config(const fs::path& out, double horizon) {
    ExperimentConfig c = case_study_config();
    c.plant = PlantKind::linear;
    c.linear_a_pos = Mat::Zero(2, 2);
    c.linear_a_vel = Mat::Zero(2, 2);
    c.mode = ControllerMode::parse("oracle-drift+filter-off");
    c.substeps = 1;
    c.horizon = horizon;
    c.state_points_per_axis = 5;
    c.input_points_per_axis = 3;
    c.sandwich_samples = 500;
    Scenario s = c.scenarios.front();
    s.name = "pair";
    s.x0 << 0.3, -0.2, 0.05, 0.0;
    s.y0 << -0.3, 0.4, 0.0, -0.05;
    s.v = InputSignal::zero(2);
    s.v_prime = InputSignal::zero(2);
    c.scenarios = {s};
    c.output_dir = out;
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + ISPS_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: dump and parse round-trip") {
    const ExperimentConfig c = case_study_config();
    const std::string text = dump_config(c);
    CHECK(dump_config(parse_config(text)) == text);
    CHECK(config_hash(parse_config(text)) == config_hash(c));
}

TEST_CASE("config: shipped case-study file matches the built-in case study") {
    const ExperimentConfig file = load_config(fs::path(ISPS_SOURCE_DIR) / "configs" / "case_study.json");
    CHECK(config_hash(file) == config_hash(case_study_config()));
    CHECK(file.output_dir.is_absolute());
}

TEST_CASE("config: missing keys take the case-study defaults") {
    const ExperimentConfig c = parse_config(R"({"seed": 7, "simulation": {"mode": "filter-off"}})");
    CHECK(c.seed == 7);
    CHECK(c.mode == ControllerMode::parse("filter-off"));
    CHECK(c.sample_count == 800);
    CHECK(c.gains.lambda2 == 503.0);
}

TEST_CASE("config: malformed inputs are rejected") {
    CHECK_THROWS(parse_config(R"({"schema": "other"})"));
    CHECK_THROWS(parse_config(R"({"version": 99})"));
    CHECK_THROWS(parse_config(R"({"simulation": {"substeps": 0}})"));
    CHECK_THROWS(parse_config(R"({"simulation": {"mode": "fast"}})"));
    CHECK_THROWS(parse_config(R"({"plant": {"type": "pendulum"}})"));
    CHECK_THROWS(parse_config(R"({"data": {"count": 0}})"));
    CHECK_THROWS(parse_config("{"));
}

TEST_CASE("pipeline: collect, train, simulate, verify and report on a small case study") {
    const fs::path out = oracle::scratch_dir("pipeline");
    const ExperimentConfig cfg = small_config(out);

    const CollectResult col = cmd_collect(cfg);
    CHECK(col.rows == 60);
    CHECK(read_training_set(col.dataset).size() == 60);

    const TrainResult tr = cmd_train(cfg);
    CHECK(fs::exists(tr.model));
    CHECK(tr.bound.bound() == doctest::Approx(0.19).epsilon(1e-12));
    CHECK(tr.bound.confidence() == doctest::Approx(0.9801).epsilon(1e-12));
    CHECK(tr.rho_bar.norm > 0.0);
    CHECK(load_model(tr.model).error_bound()->bound() == doctest::Approx(0.19).epsilon(1e-12));

    const SimulateResult sim = cmd_simulate(cfg);
    REQUIRE(sim.scenarios.size() == 1);
    CHECK_FALSE(sim.scenarios[0].error.has_value());
    CHECK(sim.scenarios[0].rows == 501);
    const Trajectory x = read_trajectory(out / "scenarios" / "case_study" / "x.csv");
    CHECK(x.size() == 501);
    CHECK(x.states.front() == cfg.scenarios[0].x0);

    const VerifyResult ver = cmd_verify(cfg);
    CHECK(ver.certificate.kappa == doctest::Approx(2.0));
    CHECK(ver.sandwich.upper_violations == 0);
    REQUIRE(ver.scenarios.size() == 1);
    CHECK(ver.scenarios[0].pass);
    CHECK(ver.pass);
    CHECK(fs::exists(out / "certificate.json"));
    CHECK(fs::exists(out / "certificate_inputs.json"));

    const ReportResult rep = cmd_report(cfg);
    CHECK(rep.summary.find("overall: PASS") != std::string::npos);
    REQUIRE(rep.curves.size() == 1);
    CHECK(fs::exists(rep.curves[0]));
    CHECK(fs::exists(out / "resolved_config.json"));
}

TEST_CASE("pipeline: identical config and seed give byte-identical artifacts") {
    const fs::path a = oracle::scratch_dir("det_a");
    const fs::path b = oracle::scratch_dir("det_b");
    for (const auto& dir : {a, b}) {
        ExperimentConfig cfg = small_config(dir);
        cfg.horizon = 0.1;
        cmd_collect(cfg);
        cmd_train(cfg);
        cmd_simulate(cfg);
        cmd_verify(cfg);
    }
    for (const char* f : {"dataset.csv", "model.json", "train_report.json", "certificate.json",
                          "scenarios/case_study/x.csv", "scenarios/case_study/y.csv"}) {
        INFO(f);
        CHECK(slurp(a / f) == slurp(b / f));
    }

    const fs::path c = oracle::scratch_dir("det_c");
    ExperimentConfig other = small_config(c);
    other.seed = 43;
    cmd_collect(other);
    CHECK(slurp(a / "dataset.csv") != slurp(c / "dataset.csv"));
}

TEST_CASE("train: zero drift with noiseless data gives a vanishing posterior mean") {
    const fs::path out = oracle::scratch_dir("zero_drift");
    ExperimentConfig cfg = delta_iss_config(out, 1.0);
    cfg.mode = ControllerMode::parse("learned");
    cfg.noise_std = 0.0;
    cfg.sample_count = 40;
    cmd_collect(cfg);
    const TrainResult tr = cmd_train(cfg);
    CHECK(tr.max_abs_mean <= 1e-6);
}

TEST_CASE("simulate: ten-second horizon at dt = 1e-3 logs 10001 rows") {
    const fs::path out = oracle::scratch_dir("rows");
    const ExperimentConfig cfg = delta_iss_config(out, 10.0);
    const SimulateResult sim = cmd_simulate(cfg);
    CHECK(sim.scenarios.at(0).rows == 10001);
    CHECK(read_trajectory(out / "scenarios" / "pair" / "y.csv").size() == 10001);
}

TEST_CASE("verify: oracle drift without the filter gives c = 0 and passes") {
    const fs::path out = oracle::scratch_dir("delta_iss");
    const ExperimentConfig cfg = delta_iss_config(out, 3.0);
    cmd_simulate(cfg);
    const VerifyResult ver = cmd_verify(cfg);
    CHECK(ver.certificate.c == 0.0);
    CHECK(ver.inputs.sup_relu == 0.0);
    CHECK(ver.pass);
}

TEST_CASE("verify: a trajectory with inflated distance fails and names the step") {
    const fs::path out = oracle::scratch_dir("tamper");
    const ExperimentConfig cfg = delta_iss_config(out, 3.0);
    cmd_simulate(cfg);
    REQUIRE(cmd_verify(cfg).pass);

    const fs::path xp = out / "scenarios" / "pair" / "x.csv";
    const Trajectory y = read_trajectory(out / "scenarios" / "pair" / "y.csv");
    Trajectory x = read_trajectory(xp);
    for (std::size_t k = 1; k < x.size(); ++k) x.states[k] = y.states[k] + 10.0 * (x.states[k] - y.states[k]);
    write_trajectory(xp, x);

    const VerifyResult ver = cmd_verify(cfg);
    CHECK_FALSE(ver.pass);
    REQUIRE(ver.scenarios.at(0).pair.has_value());
    CHECK_FALSE(ver.scenarios[0].pair->pass);
    CHECK(ver.scenarios[0].pair->first_violation.has_value());
}

TEST_CASE("verify: missing trajectories fail the scenario without throwing") {
    const fs::path out = oracle::scratch_dir("missing");
    const ExperimentConfig cfg = delta_iss_config(out, 1.0);
    const VerifyResult ver = cmd_verify(cfg);
    CHECK_FALSE(ver.pass);
    CHECK(ver.scenarios.at(0).error.has_value());
}

TEST_CASE("oracle drift, no filter, matched inputs: two-link trajectories converge") {
    const fs::path out = oracle::scratch_dir("matched");
    ExperimentConfig cfg = case_study_config();
    cfg.mode = ControllerMode::parse("oracle-drift+filter-off");
    cfg.substeps = 1;
    cfg.output_dir = out;
    Scenario& s = cfg.scenarios.front();
    s.v_prime = s.v;
    cmd_simulate(cfg);
    const Trajectory x = read_trajectory(out / "scenarios" / "case_study" / "x.csv");
    const Trajectory y = read_trajectory(out / "scenarios" / "case_study" / "y.csv");
    CHECK((x.states.back() - y.states.back()).norm() <= 1e-3);
}

TEST_CASE("oracle drift, no filter, mismatched inputs: tail distance within gamma(gap) + c") {
    const fs::path out = oracle::scratch_dir("mismatched");
    ExperimentConfig cfg = case_study_config();
    cfg.mode = ControllerMode::parse("oracle-drift+filter-off");
    cfg.substeps = 1;
    cfg.state_points_per_axis = 5;
    cfg.input_points_per_axis = 3;
    cfg.sandwich_samples = 500;
    cfg.output_dir = out;
    cmd_simulate(cfg);
    const VerifyResult ver = cmd_verify(cfg);
    REQUIRE(ver.scenarios.at(0).pair.has_value());
    const PairReport& p = *ver.scenarios[0].pair;
    double tail = 0.0;
    for (std::size_t k = p.distance.size() * 4 / 5; k < p.distance.size(); ++k) tail = std::max(tail, p.distance[k]);
    CHECK(tail <= ver.certificate.gamma(p.input_gap) + ver.certificate.c);
    CHECK(ver.pass);
}

TEST_CASE("cli: exit codes") {
    const fs::path dir = oracle::scratch_dir("cli");
    ExperimentConfig cfg = delta_iss_config(dir / "out", 1.0);
    const fs::path config = dir / "config.json";
    std::ofstream(config) << dump_config(cfg);
    const std::string c = " --config \"" + config.string() + "\"";

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("simulate") != 0);
    CHECK(run_cli("simulate --config /nonexistent.json") != 0);
    CHECK(run_cli("simulate" + c + " --mode warp") != 0);
    CHECK(run_cli("verify" + c) == 1);
    CHECK(run_cli("simulate" + c) == 0);
    CHECK(run_cli("verify" + c) == 0);
    CHECK(run_cli("report" + c) == 0);
    CHECK(fs::exists(dir / "out" / "summary.txt"));

    const fs::path other = dir / "elsewhere";
    CHECK(run_cli("simulate" + c + " --out \"" + other.string() + "\" --seed 5") == 0);
    CHECK(fs::exists(other / "scenarios" / "pair" / "x.csv"));
    CHECK(parse_config(slurp(other / "resolved_config.json")).seed == 5);

    CHECK(run_cli("train" + c + " --mode learned --out \"" + (dir / "empty").string() + "\"") == 2);
}
