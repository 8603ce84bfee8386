#pragma once

#include "isps/gp_model.hpp"
#include "isps/types.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace isps {

/// Strict-feedback plant x1' = x2, x2' = f(x) + g(x) u. The drift f is only
/// visible to the simulator, the data collector and oracle-mode controllers.
class PlantModel {
public:
    virtual ~PlantModel() = default;

    virtual int n() const = 0;
    int state_dim() const { return 2 * n(); }
    int input_dim() const { return n(); }

    virtual Vec drift(const Vec& x) const = 0;
    virtual Mat input_gain(const Vec& x) const = 0;
    virtual Mat input_gain_inverse(const Vec& x) const = 0;

    /// Full state derivative [x2; f(x) + g(x) u].
    Vec state_derivative(const Vec& x, const Vec& u) const;
};

struct TwoLinkParams {
    double m1 = 1.0;
    double m2 = 1.0;
    double l1 = 1.0;
    double l2 = 1.0;
    double gravity = 9.81;

    void validate() const;
};

// Planar two-link arm, point masses at the link tips.
Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q, const TwoLinkParams& params);

struct CoriolisGravity {
    Eigen::Vector2d h;  // velocity-product terms
    Eigen::Vector2d c;  // gravity
};
CoriolisGravity coriolis_gravity(const Eigen::Vector2d& q, const Eigen::Vector2d& qdot,
                                 const TwoLinkParams& params);

class TwoLinkManipulator final : public PlantModel {
public:
    explicit TwoLinkManipulator(TwoLinkParams params = {});

    int n() const override { return 2; }
    Vec drift(const Vec& x) const override;        // M(q)^-1 (-H - c)
    Mat input_gain(const Vec& x) const override;   // M(q)^-1
    Mat input_gain_inverse(const Vec& x) const override;  // M(q)

    const TwoLinkParams& params() const { return params_; }

private:
    TwoLinkParams params_;
};

/// f(x) = A1 x1 + A2 x2 with g = I; zero matrices give a pure double integrator.
class LinearDriftPlant final : public PlantModel {
public:
    LinearDriftPlant(Mat a_pos, Mat a_vel);
    static LinearDriftPlant double_integrator(int n);

    int n() const override { return static_cast<int>(a_pos_.rows()); }
    Vec drift(const Vec& x) const override;
    Mat input_gain(const Vec& x) const override;
    Mat input_gain_inverse(const Vec& x) const override;

private:
    Mat a_pos_;
    Mat a_vel_;
};

/// One classical RK4 step of x' = f(t, x).
template <typename F>
Vec rk4_step(const F& f, double t, const Vec& x, double dt) {
    const Vec k1 = f(t, x);
    const Vec k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1);
    const Vec k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2);
    const Vec k4 = f(t + dt, x + dt * k3);
    Vec next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw SimulationError("rk4_step produced a non-finite state", 0);
    return next;
}

/// RK4 step of x' = dynamics(x, u) with u held over the step.
Vec rk4_step(const std::function<Vec(const Vec&, const Vec&)>& dynamics, const Vec& x,
             const Vec& u, double dt);

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> applied_inputs;
    std::vector<Vec> external_inputs;

    // Set when the rollout stopped before the horizon.
    std::optional<std::string> abort_reason;

    std::size_t size() const { return times.size(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
    bool completed() const { return !abort_reason.has_value(); }
};

using ExternalSignal = std::function<Vec(double)>;
using FeedbackLaw = std::function<Vec(const Vec& x, const Vec& v)>;

struct SimulateOptions {
    // Rollout stops (recorded in abort_reason) once guard(x) < guard_floor.
    std::function<double(const Vec&)> guard;
    double guard_floor = -INFINITY;
    // RK4 steps of length dt / substeps between consecutive logged samples.
    int substeps = 1;
};

/// Closed-loop rollout x' = [x2; f(x) + g(x) p(x, v(t))]. The feedback law is
/// evaluated at every RK stage; u and v are logged at the sample instants,
/// spaced dt apart.
Trajectory simulate(const PlantModel& plant, const FeedbackLaw& controller,
                    const ExternalSignal& external, const Vec& x0, double horizon, double dt,
                    const SimulateOptions& options = {});

/// Axis-aligned box, optionally intersected with {x : accept(x)}.
struct SamplingDomain {
    Vec lo;
    Vec hi;
    std::function<bool(const Vec&)> accept;

    void validate() const;
};

/// Uniform states from `domain`; targets are forward differences of x2 over one
/// u = 0 RK4 step of length sample_dt, plus N(0, noise_std^2) noise per component.
TrainingSet collect_data(const PlantModel& plant, int count, double sample_dt, double noise_std,
                         std::uint64_t seed, const SamplingDomain& domain);

}  // namespace isps
