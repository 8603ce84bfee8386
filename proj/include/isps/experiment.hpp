#pragma once

#include "isps/certificates.hpp"
#include "isps/controller.hpp"
#include "isps/gp_model.hpp"
#include "isps/plant.hpp"
#include "isps/safety_filter.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace isps {

/// Closed catalog of external input signals.
struct InputSignal {
    enum class Kind { zero, constant, sinusoid };

    Kind kind = Kind::zero;
    int dim = 2;
    Vec value;      // constant
    Vec amplitude;  // sinusoid: amplitude_i * sin(frequency_i * t + phase_i)
    Vec frequency;
    Vec phase;

    static InputSignal zero(int dim);
    static InputSignal constant(Vec value);
    static InputSignal sinusoid(Vec amplitude, Vec frequency, Vec phase);

    Vec operator()(double t) const;
    void validate() const;
};

struct Scenario {
    std::string name;
    Vec x0;
    Vec y0;
    InputSignal v;
    InputSignal v_prime;
};

enum class PlantKind { two_link, linear };
enum class ErrorBoundSource { direct, rkhs };
enum class SamplingSet { box, safe_set, relaxed_safe_set };

struct ExperimentConfig {
    std::uint64_t seed = 42;

    PlantKind plant = PlantKind::two_link;
    TwoLinkParams two_link;
    Mat linear_a_pos;  // linear plant only
    Mat linear_a_vel;

    int sample_count = 800;
    double sample_dt = 1e-3;
    double noise_std = 0.01;
    Vec box_lo;  // state box; sampling domain and grid extent
    Vec box_hi;
    SamplingSet sampling_set = SamplingSet::box;

    std::vector<KernelParams> kernels;

    ErrorBoundSource bound_source = ErrorBoundSource::direct;
    double direct_bound = 0.19;
    Vec rkhs_norms;
    Vec info_gains;
    double epsilon = 0.01;

    Gains gains;
    double alpha_coeff = 1.0;
    PNormBarrier barrier;

    int state_points_per_axis = 25;
    int input_points_per_axis = 9;
    Vec input_lo;  // box W containing every catalog signal
    Vec input_hi;
    bool rho_bar_grid_in_safe_set = false;
    bool suprema_grid_in_safe_set = true;

    double dt = 1e-3;  // logging interval
    int substeps = 1;  // RK4 steps per logging interval
    double horizon = 10.0;
    double guard_margin = 0.05;  // rollout aborts once h < -d_inf - guard_margin
    ControllerMode mode;

    double safety_tolerance = 0.01;
    double pair_allowance = 1e-6;
    int sandwich_samples = 10000;

    std::vector<Scenario> scenarios;
    std::filesystem::path output_dir = "out";

    int n() const { return static_cast<int>(box_lo.size() / 2); }
    void validate() const;
};

/// Two-link manipulator case study: 800 samples, rho_f = 0.01, p = 20 barrier,
/// lambda1 = 1.5, lambda2 = 503, theta = 0.001, |eta||rho_bar| = 0.19.
ExperimentConfig case_study_config();

// JSON config I/O. Relative output paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

std::shared_ptr<const PlantModel> make_plant(const ExperimentConfig& cfg);
SamplingDomain sampling_domain(const ExperimentConfig& cfg);
Mat rho_bar_grid(const ExperimentConfig& cfg);
Mat suprema_state_grid(const ExperimentConfig& cfg);
Mat input_grid(const ExperimentConfig& cfg);

// Training-set CSV: x_1..x_d, y_1..y_n, noise_added.
void write_training_set(const std::filesystem::path& path, const TrainingSet& data,
                        const std::vector<std::string>& comments = {});
TrainingSet read_training_set(const std::filesystem::path& path);

// Trajectory CSV: t, x1_*, x2_*, u_*, v_*; comment lines carry provenance.
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj,
                      const std::vector<std::string>& comments = {});
Trajectory read_trajectory(const std::filesystem::path& path);

/// Error bound, d_inf and ReLU supremum feeding the certificate.
struct CertificateInputs {
    double error_bound = 0.0;
    double d_inf = 0.0;
    double sup_relu = 0.0;
    int state_points_per_axis = 0;
    int input_points_per_axis = 0;
    std::size_t state_grid_size = 0;
    std::size_t input_grid_size = 0;
    double alpha_coeff = 1.0;
};

CertificateInputs compute_certificate_inputs(const ExperimentConfig& cfg,
                                             const std::optional<ErrorBoundParams>& learned_bound);

struct ScenarioRun {
    std::string name;
    Trajectory x;
    Trajectory y;
    std::optional<std::string> error;
};

/// Simulates both trajectories of every scenario with one shared controller.
std::vector<ScenarioRun> run_scenarios(const ExperimentConfig& cfg, const IspsController& controller,
                                       double d_inf);

// Pipeline stages. Each reads only the config and files under cfg.output_dir.
struct CollectResult {
    std::filesystem::path dataset;
    Eigen::Index rows = 0;
};
CollectResult cmd_collect(const ExperimentConfig& cfg);

struct TrainResult {
    std::filesystem::path model;
    StdBound rho_bar;
    ErrorBoundParams bound;
    double max_abs_mean = 0.0;
};
TrainResult cmd_train(const ExperimentConfig& cfg);

struct SimulateResult {
    struct Entry {
        std::string name;
        double min_h_x = 0.0;
        double min_h_y = 0.0;
        std::size_t rows = 0;
        std::optional<std::string> error;
    };
    std::vector<Entry> scenarios;
    double d_inf = 0.0;
};
SimulateResult cmd_simulate(const ExperimentConfig& cfg);

struct VerifyResult {
    IspsCertificate certificate;
    CertificateInputs inputs;
    SandwichReport sandwich;
    struct Entry {
        std::string name;
        std::optional<PairReport> pair;
        std::optional<LyapunovReport> lyapunov;
        std::optional<SafetyReport> safety_x;
        std::optional<SafetyReport> safety_y;
        std::optional<std::string> error;
        bool pass = false;
    };
    std::vector<Entry> scenarios;
    bool pass = false;
};
VerifyResult cmd_verify(const ExperimentConfig& cfg);

struct ReportResult {
    std::string summary;
    std::vector<std::filesystem::path> curves;
};
ReportResult cmd_report(const ExperimentConfig& cfg);

}  // namespace isps
