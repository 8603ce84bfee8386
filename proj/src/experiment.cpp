#include "isps/experiment.hpp"

#include "json.hpp"

#include <cmath>
#include <future>
#include <numbers>
#include <random>
#include <sstream>

#include "isps/csv_io.hpp"
#include "isps/grid.hpp"

namespace isps {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigSchemaVersion = 1;
constexpr int kReportSchemaVersion = 1;

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
    return rows;
}

Mat json_mat(const json& j) {
    if (j.empty()) return {};
    Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
    for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = json_vec(j[r]).transpose();
    return m;
}

json signal_json(const InputSignal& s) {
    switch (s.kind) {
        case InputSignal::Kind::zero:
            return {{"type", "zero"}, {"dim", s.dim}};
        case InputSignal::Kind::constant:
            return {{"type", "constant"}, {"value", vec_json(s.value)}};
        case InputSignal::Kind::sinusoid:
            return {{"type", "sinusoid"},
                    {"amplitude", vec_json(s.amplitude)},
                    {"frequency", vec_json(s.frequency)},
                    {"phase", vec_json(s.phase)}};
    }
    return {};
}

InputSignal json_signal(const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "zero") return InputSignal::zero(j.at("dim").get<int>());
    if (type == "constant") return InputSignal::constant(json_vec(j.at("value")));
    if (type == "sinusoid") {
        return InputSignal::sinusoid(json_vec(j.at("amplitude")), json_vec(j.at("frequency")),
                                     json_vec(j.at("phase")));
    }
    throw std::invalid_argument("unknown input signal type '" + type + "'");
}

const char* sampling_set_name(SamplingSet s) {
    switch (s) {
        case SamplingSet::box: return "box";
        case SamplingSet::safe_set: return "safe_set";
        case SamplingSet::relaxed_safe_set: return "relaxed_safe_set";
    }
    return "box";
}

SamplingSet parse_sampling_set(const std::string& s) {
    if (s == "box") return SamplingSet::box;
    if (s == "safe_set") return SamplingSet::safe_set;
    if (s == "relaxed_safe_set") return SamplingSet::relaxed_safe_set;
    throw std::invalid_argument("unknown sampling set '" + s + "'");
}

json config_json(const ExperimentConfig& c) {
    json j;
    j["schema"] = "isps.experiment";
    j["version"] = kConfigSchemaVersion;
    j["seed"] = c.seed;
    if (c.plant == PlantKind::two_link) {
        j["plant"] = {{"type", "two_link"},
                      {"m1", c.two_link.m1},
                      {"m2", c.two_link.m2},
                      {"l1", c.two_link.l1},
                      {"l2", c.two_link.l2},
                      {"gravity", c.two_link.gravity}};
    } else {
        j["plant"] = {{"type", "linear"}, {"a_pos", mat_json(c.linear_a_pos)}, {"a_vel", mat_json(c.linear_a_vel)}};
    }
    j["data"] = {{"count", c.sample_count},
                 {"sample_dt", c.sample_dt},
                 {"noise_std", c.noise_std},
                 {"box_lo", vec_json(c.box_lo)},
                 {"box_hi", vec_json(c.box_hi)},
                 {"sampling_set", sampling_set_name(c.sampling_set)}};
    json kernels = json::array();
    for (const auto& k : c.kernels) {
        kernels.push_back({{"signal_std", k.signal_std}, {"lengthscales", vec_json(k.lengthscales)}});
    }
    j["kernels"] = kernels;
    if (c.bound_source == ErrorBoundSource::direct) {
        j["error_bound"] = {{"source", "direct"}, {"value", c.direct_bound}, {"epsilon", c.epsilon}};
    } else {
        j["error_bound"] = {{"source", "rkhs"},
                            {"rkhs_norms", vec_json(c.rkhs_norms)},
                            {"info_gains", vec_json(c.info_gains)},
                            {"epsilon", c.epsilon}};
    }
    j["gains"] = {{"lambda1", c.gains.lambda1}, {"lambda2", c.gains.lambda2}, {"theta", c.gains.theta}};
    j["alpha_coeff"] = c.alpha_coeff;
    j["barrier"] = {{"p", c.barrier.p}, {"half_widths", vec_json(c.barrier.half_widths)}};
    j["grids"] = {{"state_points_per_axis", c.state_points_per_axis},
                  {"input_points_per_axis", c.input_points_per_axis},
                  {"input_lo", vec_json(c.input_lo)},
                  {"input_hi", vec_json(c.input_hi)},
                  {"rho_bar_grid_in_safe_set", c.rho_bar_grid_in_safe_set},
                  {"suprema_grid_in_safe_set", c.suprema_grid_in_safe_set}};
    j["simulation"] = {{"dt", c.dt}, {"substeps", c.substeps}, {"horizon", c.horizon}, {"guard_margin", c.guard_margin},
                       {"mode", c.mode.name()}};
    j["verification"] = {{"safety_tolerance", c.safety_tolerance},
                         {"pair_allowance", c.pair_allowance},
                         {"sandwich_samples", c.sandwich_samples}};
    json scenarios = json::array();
    for (const auto& s : c.scenarios) {
        scenarios.push_back({{"name", s.name},
                             {"x0", vec_json(s.x0)},
                             {"y0", vec_json(s.y0)},
                             {"v", signal_json(s.v)},
                             {"v_prime", signal_json(s.v_prime)}});
    }
    j["scenarios"] = scenarios;
    j["output_dir"] = c.output_dir.generic_string();
    return j;
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

void take_vec(const json& j, const char* key, Vec& dst) {
    if (j.contains(key)) dst = json_vec(j.at(key));
}

std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex;
    ss.width(16);
    ss.fill('0');
    ss << v;
    return ss.str();
}

json resolved_header(const ExperimentConfig& cfg, const char* schema) {
    return {{"schema", schema}, {"version", kReportSchemaVersion}, {"config_hash", hex64(config_hash(cfg))}};
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void echo_config(const ExperimentConfig& cfg) {
    write_file_atomic(cfg.output_dir / "resolved_config.json", dump_config(cfg));
}

fs::path scenario_dir(const ExperimentConfig& cfg, const std::string& name) {
    return cfg.output_dir / "scenarios" / name;
}

std::string provenance_line(const ExperimentConfig& cfg) {
    std::ostringstream ss;
    ss << "mode=" << cfg.mode.name() << " lambda1=" << format_double(cfg.gains.lambda1)
       << " lambda2=" << format_double(cfg.gains.lambda2) << " theta=" << format_double(cfg.gains.theta)
       << " alpha_coeff=" << format_double(cfg.alpha_coeff) << " dt=" << format_double(cfg.dt)
       << " substeps=" << cfg.substeps
       << " config_hash=" << hex64(config_hash(cfg));
    return ss.str();
}

std::shared_ptr<const GpPosterior> load_model_if_needed(const ExperimentConfig& cfg) {
    if (cfg.mode.drift == DriftSource::oracle) return nullptr;
    const fs::path path = cfg.output_dir / "model.json";
    if (!fs::exists(path)) throw std::runtime_error("missing trained model " + path.string() + " (run train first)");
    return std::make_shared<const GpPosterior>(load_model(path));
}

double resolved_error_bound(const ExperimentConfig& cfg, const std::shared_ptr<const GpPosterior>& gp) {
    if (cfg.mode.drift == DriftSource::oracle) return 0.0;
    if (!gp->error_bound()) throw std::runtime_error("model file carries no error bound (rerun train)");
    return gp->error_bound()->bound();
}

IspsController make_controller(const ExperimentConfig& cfg, std::shared_ptr<const GpPosterior> gp) {
    ControllerConfig cc;
    cc.gains = cfg.gains;
    cc.gp = std::move(gp);
    cc.plant = make_plant(cfg);
    cc.barrier = cfg.barrier;
    cc.alpha_coeff = cfg.alpha_coeff;
    cc.mode = cfg.mode;
    return IspsController(std::move(cc));
}

}  // namespace

InputSignal InputSignal::zero(int dim) {
    InputSignal s;
    s.kind = Kind::zero;
    s.dim = dim;
    return s;
}

InputSignal InputSignal::constant(Vec value) {
    InputSignal s;
    s.kind = Kind::constant;
    s.dim = static_cast<int>(value.size());
    s.value = std::move(value);
    return s;
}

InputSignal InputSignal::sinusoid(Vec amplitude, Vec frequency, Vec phase) {
    InputSignal s;
    s.kind = Kind::sinusoid;
    s.dim = static_cast<int>(amplitude.size());
    s.amplitude = std::move(amplitude);
    s.frequency = std::move(frequency);
    s.phase = std::move(phase);
    s.validate();
    return s;
}

Vec InputSignal::operator()(double t) const {
    switch (kind) {
        case Kind::zero: return Vec::Zero(dim);
        case Kind::constant: return value;
        case Kind::sinusoid: {
            Vec v(dim);
            for (int i = 0; i < dim; ++i) v[i] = amplitude[i] * std::sin(frequency[i] * t + phase[i]);
            return v;
        }
    }
    return Vec::Zero(dim);
}

void InputSignal::validate() const {
    if (dim < 1) throw std::invalid_argument("input signal needs a positive dimension");
    if (kind == Kind::constant && (value.size() != dim || !value.allFinite())) {
        throw std::invalid_argument("constant input signal is malformed");
    }
    if (kind == Kind::sinusoid &&
        (amplitude.size() != dim || frequency.size() != dim || phase.size() != dim ||
         !amplitude.allFinite() || !frequency.allFinite() || !phase.allFinite())) {
        throw std::invalid_argument("sinusoid input signal needs amplitude, frequency and phase per channel");
    }
}

void ExperimentConfig::validate() const {
    if (box_lo.size() == 0 || box_lo.size() != box_hi.size() || box_lo.size() % 2 != 0) {
        throw std::invalid_argument("config: state box must have even, matching dimensions");
    }
    const int d = static_cast<int>(box_lo.size());
    if (plant == PlantKind::two_link && d != 4) throw std::invalid_argument("config: two_link plant has a 4-dimensional state");
    if (plant == PlantKind::linear && (linear_a_pos.rows() != n() || linear_a_vel.rows() != n())) {
        throw std::invalid_argument("config: linear plant matrices do not match the state box");
    }
    if (sample_count < 1) throw std::invalid_argument("config: data.count must be >= 1");
    if (static_cast<int>(kernels.size()) != n()) throw std::invalid_argument("config: need one kernel per output dimension");
    for (const auto& k : kernels) {
        k.validate();
        if (k.lengthscales.size() != d) throw std::invalid_argument("config: kernel lengthscales must match state dimension");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("config: epsilon must lie in (0,1)");
    if (bound_source == ErrorBoundSource::direct && direct_bound < 0.0) {
        throw std::invalid_argument("config: direct error bound must be nonnegative");
    }
    if (bound_source == ErrorBoundSource::rkhs &&
        (rkhs_norms.size() != n() || info_gains.size() != n())) {
        throw std::invalid_argument("config: rkhs_norms and info_gains need one entry per output");
    }
    barrier.validate();
    if (barrier.half_widths.size() != d) throw std::invalid_argument("config: barrier dimension mismatch");
    if (state_points_per_axis < 1 || input_points_per_axis < 1) throw std::invalid_argument("config: grid resolutions must be >= 1");
    if (input_lo.size() != n() || input_hi.size() != n()) throw std::invalid_argument("config: input box must have n entries");
    if (!(dt > 0.0) || !(horizon > 0.0)) throw std::invalid_argument("config: dt and horizon must be positive");
    if (substeps < 1) throw std::invalid_argument("config: simulation.substeps must be >= 1");
    for (const auto& s : scenarios) {
        if (s.name.empty()) throw std::invalid_argument("config: scenario without a name");
        if (s.x0.size() != d || s.y0.size() != d) throw std::invalid_argument("config: scenario " + s.name + " initial state dimension");
        s.v.validate();
        s.v_prime.validate();
        if (s.v.dim != n() || s.v_prime.dim != n()) throw std::invalid_argument("config: scenario " + s.name + " input dimension");
    }
}

ExperimentConfig case_study_config() {
    constexpr double half_pi = std::numbers::pi / 2.0;
    ExperimentConfig c;
    c.box_lo = Vec(4);
    c.box_lo << -half_pi, -half_pi, -0.2, -0.2;
    c.box_hi = -c.box_lo;

    KernelParams k1;
    k1.signal_std = 115.0;
    k1.lengthscales = Vec(4);
    k1.lengthscales << 1.54, 0.541, 136.0, 120.0;
    KernelParams k2;
    k2.signal_std = 186.0;
    k2.lengthscales = Vec(4);
    k2.lengthscales << 1.77, 0.489, 122.0, 131.0;
    c.kernels = {k1, k2};

    c.barrier.p = 20;
    c.barrier.half_widths = c.box_hi;
    c.substeps = 20;
    c.input_lo = Vec::Constant(2, -1.0);
    c.input_hi = Vec::Constant(2, 1.0);

    Scenario s;
    s.name = "case_study";
    s.x0 = Vec(4);
    s.x0 << -1.5, 0.5, 0.01, 0.01;
    s.y0 = -s.x0;
    s.v = InputSignal::sinusoid(Vec::Ones(2), Vec::Ones(2), Eigen::Vector2d(0.0, half_pi));
    s.v_prime = InputSignal::sinusoid(Vec::Ones(2), Vec::Ones(2), Eigen::Vector2d(half_pi, 0.0));
    c.scenarios = {s};
    return c;
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
    const json j = json::parse(text);
    if (j.contains("schema") && j.at("schema") != "isps.experiment") {
        throw std::invalid_argument("not an experiment config");
    }
    if (j.contains("version") && j.at("version").get<int>() != kConfigSchemaVersion) {
        throw std::invalid_argument("unsupported experiment config version");
    }
    ExperimentConfig c = case_study_config();
    take(j, "seed", c.seed);
    if (j.contains("plant")) {
        const auto& p = j.at("plant");
        const auto type = p.value("type", std::string("two_link"));
        if (type == "two_link") {
            c.plant = PlantKind::two_link;
            take(p, "m1", c.two_link.m1);
            take(p, "m2", c.two_link.m2);
            take(p, "l1", c.two_link.l1);
            take(p, "l2", c.two_link.l2);
            take(p, "gravity", c.two_link.gravity);
        } else if (type == "linear") {
            c.plant = PlantKind::linear;
            c.linear_a_pos = json_mat(p.at("a_pos"));
            c.linear_a_vel = json_mat(p.at("a_vel"));
        } else {
            throw std::invalid_argument("unknown plant type '" + type + "'");
        }
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        take(d, "count", c.sample_count);
        take(d, "sample_dt", c.sample_dt);
        take(d, "noise_std", c.noise_std);
        take_vec(d, "box_lo", c.box_lo);
        take_vec(d, "box_hi", c.box_hi);
        if (d.contains("sampling_set")) c.sampling_set = parse_sampling_set(d.at("sampling_set").get<std::string>());
    }
    if (j.contains("kernels")) {
        c.kernels.clear();
        for (const auto& k : j.at("kernels")) {
            KernelParams kp;
            kp.signal_std = k.at("signal_std").get<double>();
            kp.lengthscales = json_vec(k.at("lengthscales"));
            c.kernels.push_back(kp);
        }
    }
    if (j.contains("error_bound")) {
        const auto& e = j.at("error_bound");
        const auto src = e.value("source", std::string("direct"));
        take(e, "epsilon", c.epsilon);
        if (src == "direct") {
            c.bound_source = ErrorBoundSource::direct;
            take(e, "value", c.direct_bound);
        } else if (src == "rkhs") {
            c.bound_source = ErrorBoundSource::rkhs;
            c.rkhs_norms = json_vec(e.at("rkhs_norms"));
            c.info_gains = json_vec(e.at("info_gains"));
        } else {
            throw std::invalid_argument("unknown error_bound source '" + src + "'");
        }
    }
    if (j.contains("gains")) {
        const auto& g = j.at("gains");
        take(g, "lambda1", c.gains.lambda1);
        take(g, "lambda2", c.gains.lambda2);
        take(g, "theta", c.gains.theta);
    }
    take(j, "alpha_coeff", c.alpha_coeff);
    if (j.contains("barrier")) {
        take(j.at("barrier"), "p", c.barrier.p);
        take_vec(j.at("barrier"), "half_widths", c.barrier.half_widths);
    }
    if (j.contains("grids")) {
        const auto& g = j.at("grids");
        take(g, "state_points_per_axis", c.state_points_per_axis);
        take(g, "input_points_per_axis", c.input_points_per_axis);
        take_vec(g, "input_lo", c.input_lo);
        take_vec(g, "input_hi", c.input_hi);
        take(g, "rho_bar_grid_in_safe_set", c.rho_bar_grid_in_safe_set);
        take(g, "suprema_grid_in_safe_set", c.suprema_grid_in_safe_set);
    }
    if (j.contains("simulation")) {
        const auto& s = j.at("simulation");
        take(s, "dt", c.dt);
        take(s, "substeps", c.substeps);
        take(s, "horizon", c.horizon);
        take(s, "guard_margin", c.guard_margin);
        if (s.contains("mode")) c.mode = ControllerMode::parse(s.at("mode").get<std::string>());
    }
    if (j.contains("verification")) {
        const auto& v = j.at("verification");
        take(v, "safety_tolerance", c.safety_tolerance);
        take(v, "pair_allowance", c.pair_allowance);
        take(v, "sandwich_samples", c.sandwich_samples);
    }
    if (j.contains("scenarios")) {
        c.scenarios.clear();
        for (const auto& s : j.at("scenarios")) {
            Scenario sc;
            sc.name = s.at("name").get<std::string>();
            sc.x0 = json_vec(s.at("x0"));
            sc.y0 = json_vec(s.at("y0"));
            sc.v = json_signal(s.at("v"));
            sc.v_prime = json_signal(s.at("v_prime"));
            c.scenarios.push_back(sc);
        }
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    return parse_config(read_file(path), path.parent_path());
}

std::string dump_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// FNV-1a over the canonical JSON of everything except the output location.
std::uint64_t config_hash(const ExperimentConfig& cfg) {
    json j = config_json(cfg);
    j.erase("output_dir");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::shared_ptr<const PlantModel> make_plant(const ExperimentConfig& cfg) {
    if (cfg.plant == PlantKind::two_link) return std::make_shared<TwoLinkManipulator>(cfg.two_link);
    return std::make_shared<LinearDriftPlant>(cfg.linear_a_pos, cfg.linear_a_vel);
}

SamplingDomain sampling_domain(const ExperimentConfig& cfg) {
    SamplingDomain d{cfg.box_lo, cfg.box_hi, {}};
    const PNormBarrier barrier = cfg.barrier;
    switch (cfg.sampling_set) {
        case SamplingSet::box:
            break;
        case SamplingSet::safe_set:
            d.accept = [barrier](const Vec& x) { return barrier_value(x, barrier) >= 0.0; };
            break;
        case SamplingSet::relaxed_safe_set: {
            if (cfg.bound_source != ErrorBoundSource::direct) {
                throw std::invalid_argument("relaxed_safe_set sampling needs a direct error bound");
            }
            const double d_inf = d_inf_norm(cfg.direct_bound, cfg.barrier, suprema_state_grid(cfg));
            // C_d = {h >= -d_inf} lies inside the box scaled by 1 + d_inf
            d.lo = (1.0 + d_inf) * cfg.box_lo;
            d.hi = (1.0 + d_inf) * cfg.box_hi;
            d.accept = [barrier, d_inf](const Vec& x) { return barrier_value(x, barrier) >= -d_inf; };
            break;
        }
    }
    return d;
}

Mat rho_bar_grid(const ExperimentConfig& cfg) {
    Mat g = uniform_grid(cfg.box_lo, cfg.box_hi, cfg.state_points_per_axis);
    if (!cfg.rho_bar_grid_in_safe_set) return g;
    const PNormBarrier b = cfg.barrier;
    return filter_rows(g, [&b](const Vec& x) { return barrier_value(x, b) >= 0.0; });
}

Mat suprema_state_grid(const ExperimentConfig& cfg) {
    Mat g = uniform_grid(cfg.box_lo, cfg.box_hi, cfg.state_points_per_axis);
    if (!cfg.suprema_grid_in_safe_set) return g;
    const PNormBarrier b = cfg.barrier;
    return filter_rows(g, [&b](const Vec& x) { return barrier_value(x, b) >= 0.0; });
}

Mat input_grid(const ExperimentConfig& cfg) {
    return uniform_grid(cfg.input_lo, cfg.input_hi, cfg.input_points_per_axis);
}

void write_training_set(const fs::path& path, const TrainingSet& data,
                        const std::vector<std::string>& comments) {
    std::ostringstream out;
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "# noise_std=" << format_double(data.noise_std) << "\n";
    const Eigen::Index d = data.inputs.cols();
    const Eigen::Index n = data.targets.cols();
    for (Eigen::Index j = 0; j < d; ++j) out << "x_" << j + 1 << ",";
    for (Eigen::Index i = 0; i < n; ++i) out << "y_" << i + 1 << ",";
    out << "noise_added\n";
    for (Eigen::Index r = 0; r < data.size(); ++r) {
        for (Eigen::Index j = 0; j < d; ++j) out << format_double(data.inputs(r, j)) << ",";
        for (Eigen::Index i = 0; i < n; ++i) out << format_double(data.targets(r, i)) << ",";
        out << (data.noise_added[static_cast<std::size_t>(r)] ? 1 : 0) << "\n";
    }
    write_file_atomic(path, out.str());
}

TrainingSet read_training_set(const fs::path& path) {
    const CsvTable t = read_csv(path);
    Eigen::Index d = 0;
    Eigen::Index n = 0;
    for (const auto& h : t.header) {
        if (h.rfind("x_", 0) == 0) ++d;
        if (h.rfind("y_", 0) == 0) ++n;
    }
    if (d == 0 || n == 0 || t.header.back() != "noise_added") {
        throw std::runtime_error(path.string() + " is not a training-set file");
    }
    TrainingSet data;
    data.inputs = t.rows.leftCols(d);
    data.targets = t.rows.middleCols(d, n);
    for (Eigen::Index r = 0; r < t.rows.rows(); ++r) data.noise_added.push_back(t.rows(r, d + n) != 0.0);
    for (const auto& c : t.comments) {
        if (c.rfind("noise_std=", 0) == 0) data.noise_std = std::stod(c.substr(10));
    }
    return data;
}

void write_trajectory(const fs::path& path, const Trajectory& traj, const std::vector<std::string>& comments) {
    std::ostringstream out;
    for (const auto& c : comments) out << "# " << c << "\n";
    if (traj.abort_reason) out << "# aborted: " << *traj.abort_reason << "\n";
    const Eigen::Index n = traj.states.empty() ? 0 : traj.states.front().size() / 2;
    const Eigen::Index m = traj.applied_inputs.empty() ? 0 : traj.applied_inputs.front().size();
    out << "t";
    for (Eigen::Index i = 0; i < n; ++i) out << ",x1_" << i + 1;
    for (Eigen::Index i = 0; i < n; ++i) out << ",x2_" << i + 1;
    for (Eigen::Index i = 0; i < m; ++i) out << ",u_" << i + 1;
    for (Eigen::Index i = 0; i < m; ++i) out << ",v_" << i + 1;
    out << "\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        out << format_double(traj.times[k]);
        for (Eigen::Index i = 0; i < 2 * n; ++i) out << "," << format_double(traj.states[k][i]);
        for (Eigen::Index i = 0; i < m; ++i) out << "," << format_double(traj.applied_inputs[k][i]);
        for (Eigen::Index i = 0; i < m; ++i) out << "," << format_double(traj.external_inputs[k][i]);
        out << "\n";
    }
    write_file_atomic(path, out.str());
}

Trajectory read_trajectory(const fs::path& path) {
    const CsvTable t = read_csv(path);
    Eigen::Index n = 0;
    Eigen::Index m = 0;
    for (const auto& h : t.header) {
        if (h.rfind("x1_", 0) == 0) ++n;
        if (h.rfind("u_", 0) == 0) ++m;
    }
    if (t.header.empty() || t.header.front() != "t" || n == 0 ||
        static_cast<Eigen::Index>(t.header.size()) != 1 + 2 * n + 2 * m) {
        throw std::runtime_error(path.string() + " is not a trajectory file");
    }
    Trajectory traj;
    for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
        traj.times.push_back(t.rows(r, 0));
        traj.states.push_back(t.rows.row(r).segment(1, 2 * n).transpose());
        traj.applied_inputs.push_back(t.rows.row(r).segment(1 + 2 * n, m).transpose());
        traj.external_inputs.push_back(t.rows.row(r).segment(1 + 2 * n + m, m).transpose());
    }
    for (const auto& c : t.comments) {
        if (c.rfind("aborted: ", 0) == 0) traj.abort_reason = c.substr(9);
    }
    return traj;
}

CertificateInputs compute_certificate_inputs(const ExperimentConfig& cfg,
                                             const std::optional<ErrorBoundParams>& learned_bound) {
    CertificateInputs in;
    if (cfg.mode.drift == DriftSource::learned) {
        if (!learned_bound) throw std::invalid_argument("learned mode needs the trained error bound");
        in.error_bound = learned_bound->bound();
    }
    const Mat states = suprema_state_grid(cfg);
    const Mat inputs = input_grid(cfg);
    in.d_inf = d_inf_norm(in.error_bound, cfg.barrier, states);
    in.sup_relu = cfg.mode.filter ? sup_relu_term(cfg.barrier, cfg.gains, cfg.alpha_coeff, states, inputs) : 0.0;
    in.state_points_per_axis = cfg.state_points_per_axis;
    in.input_points_per_axis = cfg.input_points_per_axis;
    in.state_grid_size = static_cast<std::size_t>(states.rows());
    in.input_grid_size = static_cast<std::size_t>(inputs.rows());
    in.alpha_coeff = cfg.alpha_coeff;
    return in;
}

std::vector<ScenarioRun> run_scenarios(const ExperimentConfig& cfg, const IspsController& controller,
                                       double d_inf) {
    const auto plant = controller.config().plant;
    SimulateOptions opts;
    opts.substeps = cfg.substeps;
    if (cfg.mode.filter) {
        const PNormBarrier b = cfg.barrier;
        opts.guard = [b](const Vec& x) { return barrier_value(x, b); };
        opts.guard_floor = -d_inf - cfg.guard_margin;
    }
    const FeedbackLaw law = [&controller](const Vec& x, const Vec& v) { return controller(x, v); };

    std::vector<std::future<ScenarioRun>> jobs;
    for (const auto& sc : cfg.scenarios) {
        jobs.push_back(std::async(std::launch::async, [&, sc] {
            ScenarioRun run;
            run.name = sc.name;
            try {
                run.x = simulate(*plant, law, sc.v, sc.x0, cfg.horizon, cfg.dt, opts);
                run.y = simulate(*plant, law, sc.v_prime, sc.y0, cfg.horizon, cfg.dt, opts);
            } catch (const std::exception& e) {
                run.error = e.what();
            }
            return run;
        }));
    }
    std::vector<ScenarioRun> runs;
    for (auto& j : jobs) runs.push_back(j.get());
    return runs;
}

CollectResult cmd_collect(const ExperimentConfig& cfg) {
    cfg.validate();
    echo_config(cfg);
    const auto plant = make_plant(cfg);
    const TrainingSet data =
        collect_data(*plant, cfg.sample_count, cfg.sample_dt, cfg.noise_std, cfg.seed, sampling_domain(cfg));
    CollectResult r;
    r.dataset = cfg.output_dir / "dataset.csv";
    r.rows = data.size();
    write_training_set(r.dataset, data,
                       {"seed=" + std::to_string(cfg.seed), "sample_dt=" + format_double(cfg.sample_dt),
                        std::string("sampling_set=") + sampling_set_name(cfg.sampling_set),
                        "config_hash=" + hex64(config_hash(cfg))});
    return r;
}

TrainResult cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    echo_config(cfg);
    const fs::path dataset = cfg.output_dir / "dataset.csv";
    if (!fs::exists(dataset)) throw std::runtime_error("missing dataset " + dataset.string() + " (run collect first)");
    const TrainingSet data = read_training_set(dataset);

    GpPosterior gp;
    try {
        gp = fit(data, cfg.kernels);
    } catch (const IllConditionedError& e) {
        std::ostringstream msg;
        msg << e.what() << "; N=" << data.size() << ", noise_std=" << data.noise_std
            << ", max jitter=" << e.max_jitter() << ". Consider a larger noise_std or fewer duplicate states.";
        throw IllConditionedError(msg.str(), e.max_jitter());
    }

    const GridSweep sweep = sweep_posterior(gp, rho_bar_grid(cfg));
    ErrorBoundParams bound;
    Eta eta;
    if (cfg.bound_source == ErrorBoundSource::direct) {
        bound = ErrorBoundParams::from_direct(cfg.direct_bound, sweep.bound.norm, cfg.epsilon, cfg.n());
    } else {
        eta = compute_eta(cfg.rkhs_norms, cfg.info_gains, cfg.epsilon, data.size());
        bound.eta_norm = eta.norm;
        bound.rho_bar_norm = sweep.bound.norm;
        bound.epsilon = cfg.epsilon;
        bound.output_dim = cfg.n();
        bound.validate();
    }
    gp.set_error_bound(bound);

    TrainResult r;
    r.model = cfg.output_dir / "model.json";
    r.rho_bar = sweep.bound;
    r.bound = bound;
    r.max_abs_mean = sweep.max_abs_mean;
    save_model(r.model, gp);

    json rep = resolved_header(cfg, "isps.train_report");
    rep["samples"] = data.size();
    rep["grid_points"] = rho_bar_grid(cfg).rows();
    rep["grid_points_per_axis"] = cfg.state_points_per_axis;
    rep["rho_bar"] = vec_json(sweep.bound.rho_bar);
    rep["rho_bar_norm"] = sweep.bound.norm;
    rep["eta_norm"] = bound.eta_norm;
    if (cfg.bound_source == ErrorBoundSource::rkhs) rep["eta"] = vec_json(eta.eta);
    rep["error_bound"] = bound.bound();
    rep["error_bound_source"] = cfg.bound_source == ErrorBoundSource::direct ? "direct" : "rkhs";
    rep["epsilon"] = bound.epsilon;
    rep["confidence"] = bound.confidence();
    rep["max_abs_mean_on_grid"] = sweep.max_abs_mean;
    json jit = json::array();
    for (const auto& o : gp.outputs()) jit.push_back(o.jitter);
    rep["jitter"] = jit;
    write_json(cfg.output_dir / "train_report.json", rep);
    return r;
}

SimulateResult cmd_simulate(const ExperimentConfig& cfg) {
    cfg.validate();
    echo_config(cfg);
    const auto gp = load_model_if_needed(cfg);
    const IspsController controller = make_controller(cfg, gp);
    SimulateResult result;
    result.d_inf = d_inf_norm(resolved_error_bound(cfg, gp), cfg.barrier, suprema_state_grid(cfg));

    const auto runs = run_scenarios(cfg, controller, result.d_inf);
    json rep = resolved_header(cfg, "isps.simulate_report");
    rep["mode"] = cfg.mode.name();
    rep["d_inf"] = result.d_inf;
    json entries = json::array();
    for (const auto& run : runs) {
        SimulateResult::Entry e;
        e.name = run.name;
        json je = {{"name", run.name}};
        if (run.error) {
            e.error = run.error;
            je["error"] = *run.error;
        } else {
            const fs::path dir = scenario_dir(cfg, run.name);
            const std::string prov = provenance_line(cfg);
            write_trajectory(dir / "x.csv", run.x, {"scenario=" + run.name + " trajectory=x", prov});
            write_trajectory(dir / "y.csv", run.y, {"scenario=" + run.name + " trajectory=y", prov});
            auto min_h = [&](const Trajectory& t) {
                double m = INFINITY;
                for (const auto& s : t.states) m = std::min(m, barrier_value(s, cfg.barrier));
                return m;
            };
            e.min_h_x = min_h(run.x);
            e.min_h_y = min_h(run.y);
            e.rows = run.x.size();
            je["rows"] = e.rows;
            je["min_h_x"] = e.min_h_x;
            je["min_h_y"] = e.min_h_y;
            je["initial_h_x"] = barrier_value(run.x.states.front(), cfg.barrier);
            je["initial_h_y"] = barrier_value(run.y.states.front(), cfg.barrier);
            if (run.x.abort_reason) je["aborted_x"] = *run.x.abort_reason;
            if (run.y.abort_reason) je["aborted_y"] = *run.y.abort_reason;
        }
        entries.push_back(je);
        result.scenarios.push_back(e);
    }
    rep["scenarios"] = entries;
    write_json(cfg.output_dir / "simulate_report.json", rep);
    return result;
}

namespace {

json pair_json(const PairReport& p) {
    json j = {{"initial_distance", p.initial_distance},
              {"input_gap", p.input_gap},
              {"max_violation", p.max_violation},
              {"worst_step", p.worst_step},
              {"tolerance", p.tolerance},
              {"pass", p.pass}};
    if (p.first_violation) j["first_violation_step"] = *p.first_violation;
    return j;
}

json lyapunov_json(const LyapunovReport& l) {
    return {{"max_residual", l.max_residual},
            {"worst_step", l.worst_step},
            {"peak_second_derivative", l.peak_second_derivative},
            {"tolerance", l.tolerance},
            {"pass", l.pass}};
}

json safety_json(const SafetyReport& s) {
    return {{"min_h", s.min_h}, {"argmin_step", s.argmin_step}, {"floor", s.floor}, {"pass", s.pass}};
}

}  // namespace

VerifyResult cmd_verify(const ExperimentConfig& cfg) {
    cfg.validate();
    echo_config(cfg);
    const auto gp = load_model_if_needed(cfg);
    std::optional<ErrorBoundParams> learned;
    if (gp) {
        if (!gp->error_bound()) throw std::runtime_error("model file carries no error bound (rerun train)");
        learned = gp->error_bound();
    }

    VerifyResult result;
    result.inputs = compute_certificate_inputs(cfg, learned);
    result.certificate = make_certificate(cfg.gains, result.inputs.error_bound, result.inputs.sup_relu,
                                          cfg.epsilon, cfg.n());
    const IspsCertificate& cert = result.certificate;

    json inputs = resolved_header(cfg, "isps.certificate_inputs");
    inputs["error_bound"] = result.inputs.error_bound;
    inputs["d_inf"] = result.inputs.d_inf;
    inputs["sup_relu_term"] = result.inputs.sup_relu;
    inputs["state_points_per_axis"] = result.inputs.state_points_per_axis;
    inputs["input_points_per_axis"] = result.inputs.input_points_per_axis;
    inputs["state_grid_size"] = result.inputs.state_grid_size;
    inputs["input_grid_size"] = result.inputs.input_grid_size;
    inputs["suprema_grid_in_safe_set"] = cfg.suprema_grid_in_safe_set;
    inputs["alpha_coeff"] = result.inputs.alpha_coeff;
    inputs["mode"] = cfg.mode.name();
    write_json(cfg.output_dir / "certificate_inputs.json", inputs);

    {
        std::mt19937_64 rng(cfg.seed ^ 0x5a4d5749434855ULL);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const Eigen::Index d = cfg.box_lo.size();
        Mat xs(cfg.sandwich_samples, d);
        Mat ys(cfg.sandwich_samples, d);
        for (int k = 0; k < cfg.sandwich_samples; ++k) {
            for (Eigen::Index j = 0; j < d; ++j) {
                xs(k, j) = cfg.box_lo[j] + (cfg.box_hi[j] - cfg.box_lo[j]) * unit(rng);
                ys(k, j) = cfg.box_lo[j] + (cfg.box_hi[j] - cfg.box_lo[j]) * unit(rng);
            }
        }
        result.sandwich = check_sandwich(xs, ys, cfg.gains.lambda1);
    }

    result.pass = result.sandwich.pass;
    json scen = json::array();
    for (const auto& sc : cfg.scenarios) {
        VerifyResult::Entry e;
        e.name = sc.name;
        json je = {{"name", sc.name}};
        const fs::path dir = scenario_dir(cfg, sc.name);
        try {
            for (const char* f : {"x.csv", "y.csv"}) {
                if (!fs::exists(dir / f)) throw std::runtime_error("missing trajectory " + (dir / f).string());
            }
            const Trajectory x = read_trajectory(dir / "x.csv");
            const Trajectory y = read_trajectory(dir / "y.csv");
            if (!x.completed() || !y.completed()) {
                throw std::runtime_error("trajectory rollout was aborted: " +
                                         (x.abort_reason ? *x.abort_reason : *y.abort_reason));
            }
            e.pair = check_pair_bound(x, y, cert, cfg.pair_allowance);
            e.lyapunov = check_lyapunov_decrease(x, y, cert);
            e.pass = e.pair->pass && e.lyapunov->pass;
            je["pair_bound"] = pair_json(*e.pair);
            je["lyapunov_decrease"] = lyapunov_json(*e.lyapunov);
            if (cfg.mode.filter) {
                e.safety_x = check_safety_margin(x, cfg.barrier, result.inputs.d_inf, cfg.safety_tolerance);
                e.safety_y = check_safety_margin(y, cfg.barrier, result.inputs.d_inf, cfg.safety_tolerance);
                e.pass = e.pass && e.safety_x->pass && e.safety_y->pass;
                je["safety_x"] = safety_json(*e.safety_x);
                je["safety_y"] = safety_json(*e.safety_y);
            } else {
                je["safety"] = "skipped: filter off";
            }

            std::ostringstream steps;
            steps << "t,dist,bound,V,Vdot,residual\n";
            for (std::size_t k = 0; k < x.size(); ++k) {
                steps << format_double(e.pair->times[k]) << "," << format_double(e.pair->distance[k]) << ","
                      << format_double(e.pair->bound[k]) << "," << format_double(e.lyapunov->V[k]) << ","
                      << format_double(e.lyapunov->Vdot[k]) << "," << format_double(e.lyapunov->residual[k])
                      << "\n";
            }
            write_file_atomic(dir / "certificate_steps.csv", steps.str());
        } catch (const std::exception& ex) {
            e.error = ex.what();
            e.pass = false;
            je["error"] = ex.what();
        }
        je["pass"] = e.pass;
        result.pass = result.pass && e.pass;
        scen.push_back(je);
        result.scenarios.push_back(std::move(e));
    }

    json rep = resolved_header(cfg, "isps.certificate");
    rep["mode"] = cfg.mode.name();
    rep["constants"] = {{"lambda1", cert.lambda1},
                        {"lambda2", cert.lambda2},
                        {"theta", cert.theta},
                        {"kappa1", cert.kappa1},
                        {"kappa2", cert.kappa2},
                        {"kappa", cert.kappa},
                        {"sigma_coeff", cert.sigma_coeff},
                        {"error_bound", cert.error_bound},
                        {"sup_relu_term", cert.sup_relu},
                        {"c_tilde", cert.c_tilde},
                        {"c", cert.c},
                        {"beta_coeff", cert.beta_coeff},
                        {"gamma_coeff", cert.gamma_coeff},
                        {"confidence", cert.confidence},
                        {"epsilon", cfg.epsilon},
                        {"d_inf", result.inputs.d_inf}};
    rep["grids"] = {{"state_points_per_axis", cfg.state_points_per_axis},
                    {"input_points_per_axis", cfg.input_points_per_axis},
                    {"state_grid_size", result.inputs.state_grid_size},
                    {"input_grid_size", result.inputs.input_grid_size}};
    rep["tolerances"] = {{"safety_tolerance", cfg.safety_tolerance}, {"pair_allowance", cfg.pair_allowance}};
    json sw = {{"samples", result.sandwich.samples},
               {"upper_violations", result.sandwich.upper_violations},
               {"lower_violations", result.sandwich.lower_violations},
               {"min_ratio", result.sandwich.min_ratio},
               {"max_ratio", result.sandwich.max_ratio},
               {"upper_coeff", result.sandwich.upper_coeff},
               {"exact_lower_coeff", result.sandwich.exact_lower_coeff},
               {"pass", result.sandwich.pass}};
    if (result.sandwich.lower_counterexample) {
        sw["lower_counterexample"] = {{"x", vec_json(result.sandwich.lower_counterexample->first)},
                                      {"y", vec_json(result.sandwich.lower_counterexample->second)}};
    }
    rep["sandwich"] = sw;
    rep["scenarios"] = scen;
    rep["pass"] = result.pass;
    write_json(cfg.output_dir / "certificate.json", rep);
    return result;
}

ReportResult cmd_report(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path cert_path = cfg.output_dir / "certificate.json";
    if (!fs::exists(cert_path)) throw std::runtime_error("missing " + cert_path.string() + " (run verify first)");
    const json cert = json::parse(read_file(cert_path));

    ReportResult r;
    std::ostringstream s;
    s << "incremental practical-stability certificate report\n";
    s << "config_hash: " << hex64(config_hash(cfg)) << "\n";
    s << "mode: " << cert.value("mode", std::string()) << "\n\n";
    s << "constants:\n";
    for (const auto& [k, v] : cert.at("constants").items()) s << "  " << k << " = " << v.dump() << "\n";
    s << "\ngrids: " << cert.at("grids").dump() << "\n";
    const auto& sw = cert.at("sandwich");
    s << "\nsandwich check (" << sw.at("samples").get<std::size_t>() << " samples): upper violations "
      << sw.at("upper_violations").get<std::size_t>() << ", lower violations "
      << sw.at("lower_violations").get<std::size_t>() << " (exact lower coefficient "
      << sw.at("exact_lower_coeff").dump() << " vs 0.5)\n";

    for (const auto& sc : cert.at("scenarios")) {
        const std::string name = sc.at("name").get<std::string>();
        s << "\nscenario " << name << ": " << (sc.at("pass").get<bool>() ? "PASS" : "FAIL") << "\n";
        if (sc.contains("error")) {
            s << "  error: " << sc.at("error").get<std::string>() << "\n";
            continue;
        }
        s << "  pair bound: " << sc.at("pair_bound").dump() << "\n";
        s << "  lyapunov decrease: " << sc.at("lyapunov_decrease").dump() << "\n";
        if (sc.contains("safety_x")) {
            s << "  safety x: " << sc.at("safety_x").dump() << "\n";
            s << "  safety y: " << sc.at("safety_y").dump() << "\n";
        }
        const fs::path dir = scenario_dir(cfg, name);
        const CsvTable steps = read_csv(dir / "certificate_steps.csv");
        std::ostringstream curve;
        curve << "t,distance,bound\n";
        const auto ct = steps.column("t");
        const auto cd = steps.column("dist");
        const auto cb = steps.column("bound");
        for (Eigen::Index k = 0; k < steps.rows.rows(); ++k) {
            curve << format_double(steps.rows(k, ct)) << "," << format_double(steps.rows(k, cd)) << ","
                  << format_double(steps.rows(k, cb)) << "\n";
        }
        const fs::path out = dir / "distance_vs_bound.csv";
        write_file_atomic(out, curve.str());
        r.curves.push_back(out);
    }
    s << "\noverall: " << (cert.at("pass").get<bool>() ? "PASS" : "FAIL") << "\n";
    r.summary = s.str();
    write_file_atomic(cfg.output_dir / "summary.txt", r.summary);
    return r;
}

}  // namespace isps
