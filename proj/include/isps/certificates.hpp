#pragma once

#include "isps/gains.hpp"
#include "isps/plant.hpp"
#include "isps/safety_filter.hpp"
#include "isps/types.hpp"

#include <optional>
#include <vector>

namespace isps {

/// e1 = x1 - y1, e2 = x2 + l1 x1 - y2 - l1 y1.
struct ErrorCoords {
    Vec e1;
    Vec e2;
};

ErrorCoords error_coords(const Vec& x, const Vec& y, double lambda1);
/// Inverse map: recovers x - y from (e1, e2).
Vec state_difference(const ErrorCoords& e, double lambda1);

/// V(x, y) = 1/2 |e1|^2 + 1/2 |e2|^2.
double lyapunov_V(const Vec& x, const Vec& y, double lambda1);

/// Constants and comparison functions of the incremental practical-stability
/// certificate:
///   kappa = 2 min{l1 - 1/2, l2 - 2 - 1/(2 theta)},  sigma(r) = r^2 / 2,
///   c_tilde = bound^2 + 2 theta sup_relu,           c = sqrt(6 c_tilde / kappa),
///   beta(r, s) = sqrt(6 max{1/2 + l1^2, 1}) r e^{-kappa s / 2},
///   gamma(r) = r sqrt(3 / kappa).
struct IspsCertificate {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double theta = 0.0;
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double kappa = 0.0;
    double sigma_coeff = 0.5;
    double error_bound = 0.0;
    double sup_relu = 0.0;
    double c_tilde = 0.0;
    double c = 0.0;
    double beta_coeff = 0.0;
    double gamma_coeff = 0.0;
    double confidence = 1.0;

    double upper_coeff() const;  // max{1/2 + l1^2, 1}
    double beta(double r, double s) const;
    double gamma(double r) const;
    double sigma(double r) const { return sigma_coeff * r * r; }
    double bound(double initial_distance, double t, double input_gap) const {
        return beta(initial_distance, t) + gamma(input_gap) + c;
    }
};

IspsCertificate make_certificate(const Gains& gains, double error_bound, double sup_relu,
                                 double epsilon, int n);

inline double beta_fn(const IspsCertificate& cert, double r, double s) { return cert.beta(r, s); }
inline double gamma_fn(const IspsCertificate& cert, double r) { return cert.gamma(r); }

/// sup_t |v(t) - v'(t)| over the logged samples.
double input_gap(const Trajectory& a, const Trajectory& b);

struct PairReport {
    std::vector<double> times;
    std::vector<double> distance;
    std::vector<double> bound;
    double initial_distance = 0.0;
    double input_gap = 0.0;
    double max_violation = 0.0;  // max_t (distance - bound)
    std::size_t worst_step = 0;
    std::optional<std::size_t> first_violation;
    double tolerance = 0.0;
    bool pass = false;
};

/// Checks |x(t) - y(t)| <= beta(|a - a'|, t) + gamma(|v - v'|_inf) + c at every
/// logged step. Throws std::invalid_argument for misaligned trajectories.
PairReport check_pair_bound(const Trajectory& x, const Trajectory& y, const IspsCertificate& cert,
                            double allowance = 1e-6);

struct LyapunovReport {
    std::vector<double> V;
    std::vector<double> Vdot;
    std::vector<double> residual;  // Vdot + kappa V - sigma(gap) - c_tilde
    double max_residual = 0.0;
    std::size_t worst_step = 0;
    double peak_second_derivative = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Finite-difference check of V' <= -kappa V + sigma(|v - v'|_inf) + c_tilde.
LyapunovReport check_lyapunov_decrease(const Trajectory& x, const Trajectory& y,
                                       const IspsCertificate& cert);

struct SandwichReport {
    std::size_t samples = 0;
    std::size_t upper_violations = 0;
    std::size_t lower_violations = 0;
    double min_ratio = 0.0;  // min V / |x - y|^2 over samples with x != y
    double max_ratio = 0.0;
    double upper_coeff = 0.0;
    double exact_lower_coeff = 0.0;  // smallest eigenvalue of the quadratic form of V
    std::optional<std::pair<Vec, Vec>> lower_counterexample;
    bool pass = false;  // upper bound holds on every sample
};

/// Samples are the rows of xs and ys. Verifies 1/2 |x-y|^2 <= V <= max{1/2 + l1^2, 1} |x-y|^2;
/// lower-bound failures are recorded, only upper-bound failures fail the check.
SandwichReport check_sandwich(const Mat& xs, const Mat& ys, double lambda1);

struct SafetyReport {
    double min_h = 0.0;
    std::size_t argmin_step = 0;
    double floor = 0.0;  // -d_inf - tolerance
    bool pass = false;
};

SafetyReport check_safety_margin(const Trajectory& traj, const PNormBarrier& barrier,
                                 double d_inf, double tolerance);

}  // namespace isps
