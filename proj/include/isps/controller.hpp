#pragma once

#include "isps/gains.hpp"
#include "isps/gp_model.hpp"
#include "isps/plant.hpp"
#include "isps/safety_filter.hpp"

#include <complex>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace isps {

class GainValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Returns `gains` unchanged when lambda1 > 1/2, lambda2 > 2 + 1/(2 theta) and
/// theta > 0; otherwise throws naming the failed inequality.
Gains validate_gains(const Gains& gains);

enum class DriftSource { learned, oracle };

// Ablation switches. Oracle drift substitutes the true f for the GP mean.
struct ControllerMode {
    DriftSource drift = DriftSource::learned;
    bool filter = true;

    // "learned", "oracle-drift", "filter-off" or "oracle-drift+filter-off".
    static ControllerMode parse(const std::string& name);
    std::string name() const;
    bool operator==(const ControllerMode&) const = default;
};

struct ControllerConfig {
    Gains gains;
    std::shared_ptr<const GpPosterior> gp;       // required in learned mode
    std::shared_ptr<const PlantModel> plant;     // known g, g^-1; true f in oracle mode
    PNormBarrier barrier;
    double alpha_coeff = 1.0;
    ControllerMode mode;
};

struct ControlBreakdown {
    Vec drift_estimate;  // mu(x), or f(x) in oracle mode
    Vec nominal;         // -(l1 + l2) x2 - l1 l2 x1
    Vec correction;      // ReLU safety term
    double phi0 = 0.0;
    Vec phi1;
    Vec u;
};

/// u = g(x)^-1 [-mu(x) - (l1 + l2) x2 - l1 l2 x1 + v + correction].
class IspsController {
public:
    explicit IspsController(ControllerConfig cfg);

    Vec operator()(const Vec& x, const Vec& v) const { return evaluate(x, v).u; }
    ControlBreakdown evaluate(const Vec& x, const Vec& v) const;

    const ControllerConfig& config() const { return cfg_; }

private:
    ControllerConfig cfg_;
};

Vec control_law(const Vec& x, const Vec& v, const ControllerConfig& cfg);

/// Spectrum of the transformed error system e1' = e2 - l1 e1, e2' = -l2 e2
/// (per axis, n axes) reached with oracle drift, no filter and matched inputs.
struct SpectralReport {
    std::vector<std::complex<double>> eigenvalues;
    double spectral_abscissa = 0.0;
    bool hurwitz = false;
};

SpectralReport closed_loop_error_dynamics_check(const Gains& gains, int n = 2);

}  // namespace isps
