#include "isps/certificates.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace isps {

ErrorCoords error_coords(const Vec& x, const Vec& y, double lambda1) {
    if (x.size() != y.size() || x.size() % 2 != 0) {
        throw std::invalid_argument("error_coords: states must have equal even dimension");
    }
    const Eigen::Index n = x.size() / 2;
    const Vec d = x - y;
    return {d.head(n), d.tail(n) + lambda1 * d.head(n)};
}

Vec state_difference(const ErrorCoords& e, double lambda1) {
    Vec d(2 * e.e1.size());
    d << e.e1, e.e2 - lambda1 * e.e1;
    return d;
}

double lyapunov_V(const Vec& x, const Vec& y, double lambda1) {
    const ErrorCoords e = error_coords(x, y, lambda1);
    return 0.5 * e.e1.squaredNorm() + 0.5 * e.e2.squaredNorm();
}

double IspsCertificate::upper_coeff() const { return std::max(0.5 + lambda1 * lambda1, 1.0); }

double IspsCertificate::beta(double r, double s) const {
    return std::sqrt(6.0 * upper_coeff() * r * r * std::exp(-kappa * s));
}

double IspsCertificate::gamma(double r) const {
    return std::sqrt((6.0 / kappa) * sigma(r));
}

IspsCertificate make_certificate(const Gains& gains, double error_bound, double sup_relu,
                                 double epsilon, int n) {
    if (error_bound < 0.0 || sup_relu < 0.0) {
        throw std::invalid_argument("make_certificate: error bound and sup_relu must be nonnegative");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
    IspsCertificate c;
    c.lambda1 = gains.lambda1;
    c.lambda2 = gains.lambda2;
    c.theta = gains.theta;
    c.kappa1 = gains.lambda1 - 0.5;
    c.kappa2 = gains.lambda2 - 2.0 - 1.0 / (2.0 * gains.theta);
    c.kappa = 2.0 * std::min(c.kappa1, c.kappa2);
    if (!(c.kappa > 0.0)) throw std::logic_error("certificate decay rate kappa is not positive");
    c.error_bound = error_bound;
    c.sup_relu = sup_relu;
    c.c_tilde = error_bound * error_bound + 2.0 * gains.theta * sup_relu;
    c.c = std::sqrt(6.0 * c.c_tilde / c.kappa);
    c.beta_coeff = std::sqrt(6.0 * c.upper_coeff());
    c.gamma_coeff = std::sqrt(3.0 / c.kappa);
    c.confidence = std::pow(1.0 - epsilon, n);
    return c;
}

namespace {

void check_aligned(const Trajectory& x, const Trajectory& y) {
    if (x.size() != y.size() || x.size() == 0) {
        throw std::invalid_argument("trajectories are misaligned: " + std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()) + " samples");
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (std::abs(x.times[k] - y.times[k]) > 1e-9 * std::max(1.0, std::abs(x.times[k]))) {
            throw std::invalid_argument("trajectories are misaligned at sample " + std::to_string(k));
        }
    }
    if (x.external_inputs.size() != x.size() || y.external_inputs.size() != y.size()) {
        throw std::invalid_argument("trajectories lack logged external inputs");
    }
}

}  // namespace

double input_gap(const Trajectory& a, const Trajectory& b) {
    check_aligned(a, b);
    double gap = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        gap = std::max(gap, (a.external_inputs[k] - b.external_inputs[k]).norm());
    }
    return gap;
}

PairReport check_pair_bound(const Trajectory& x, const Trajectory& y, const IspsCertificate& cert,
                            double allowance) {
    check_aligned(x, y);
    PairReport r;
    r.input_gap = input_gap(x, y);
    r.initial_distance = (x.states.front() - y.states.front()).norm();
    r.tolerance = 1e-6 + allowance;
    r.max_violation = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double dist = (x.states[k] - y.states[k]).norm();
        const double bound = cert.bound(r.initial_distance, x.times[k], r.input_gap);
        r.times.push_back(x.times[k]);
        r.distance.push_back(dist);
        r.bound.push_back(bound);
        const double v = dist - bound;
        if (v > r.max_violation) {
            r.max_violation = v;
            r.worst_step = k;
        }
        if (v > r.tolerance && !r.first_violation) r.first_violation = k;
    }
    r.pass = r.max_violation <= r.tolerance;
    return r;
}

LyapunovReport check_lyapunov_decrease(const Trajectory& x, const Trajectory& y,
                                       const IspsCertificate& cert) {
    check_aligned(x, y);
    const std::size_t m = x.size();
    if (m < 3) throw std::invalid_argument("check_lyapunov_decrease needs at least 3 samples");
    const double dt = x.dt();
    const double gap = input_gap(x, y);

    LyapunovReport r;
    r.V.resize(m);
    for (std::size_t k = 0; k < m; ++k) r.V[k] = lyapunov_V(x.states[k], y.states[k], cert.lambda1);

    // second-order stencils throughout: central inside, one-sided at the ends
    r.Vdot.resize(m);
    r.Vdot[0] = (-3.0 * r.V[0] + 4.0 * r.V[1] - r.V[2]) / (2.0 * dt);
    r.Vdot[m - 1] = (3.0 * r.V[m - 1] - 4.0 * r.V[m - 2] + r.V[m - 3]) / (2.0 * dt);
    for (std::size_t k = 1; k + 1 < m; ++k) r.Vdot[k] = (r.V[k + 1] - r.V[k - 1]) / (2.0 * dt);

    double peak_v = 0.0;
    for (std::size_t k = 1; k + 1 < m; ++k) {
        const double vdd = (r.V[k + 1] - 2.0 * r.V[k] + r.V[k - 1]) / (dt * dt);
        r.peak_second_derivative = std::max(r.peak_second_derivative, std::abs(vdd));
        peak_v = std::max(peak_v, std::abs(r.V[k]));
    }
    // V' is only piecewise smooth when the safety term switches; a difference
    // quotient straddling a kink is off by at most dt * sup|V''|.
    r.tolerance = dt * r.peak_second_derivative + 1e-9 * std::max(1.0, cert.kappa * peak_v);

    r.residual.resize(m);
    r.max_residual = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
        r.residual[k] = r.Vdot[k] + cert.kappa * r.V[k] - cert.sigma(gap) - cert.c_tilde;
        if (r.residual[k] > r.max_residual) {
            r.max_residual = r.residual[k];
            r.worst_step = k;
        }
    }
    r.pass = r.max_residual <= r.tolerance;
    return r;
}

SandwichReport check_sandwich(const Mat& xs, const Mat& ys, double lambda1) {
    if (xs.rows() != ys.rows() || xs.cols() != ys.cols()) {
        throw std::invalid_argument("check_sandwich: sample sets differ in shape");
    }
    SandwichReport r;
    r.samples = static_cast<std::size_t>(xs.rows());
    r.upper_coeff = std::max(0.5 + lambda1 * lambda1, 1.0);
    Eigen::Matrix2d q;
    q << 0.5 * (1.0 + lambda1 * lambda1), 0.5 * lambda1, 0.5 * lambda1, 0.5;
    r.exact_lower_coeff = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(q).eigenvalues().minCoeff();
    r.min_ratio = std::numeric_limits<double>::infinity();
    r.max_ratio = 0.0;

    constexpr double kRel = 1e-12;
    for (Eigen::Index k = 0; k < xs.rows(); ++k) {
        const Vec x = xs.row(k).transpose();
        const Vec y = ys.row(k).transpose();
        const double d2 = (x - y).squaredNorm();
        const double v = lyapunov_V(x, y, lambda1);
        if (v > r.upper_coeff * d2 * (1.0 + kRel)) ++r.upper_violations;
        if (v < 0.5 * d2 * (1.0 - kRel)) {
            ++r.lower_violations;
            if (!r.lower_counterexample) r.lower_counterexample = std::make_pair(x, y);
        }
        if (d2 > 0.0) {
            r.min_ratio = std::min(r.min_ratio, v / d2);
            r.max_ratio = std::max(r.max_ratio, v / d2);
        }
    }
    if (r.samples == 0) r.min_ratio = 0.0;
    r.pass = r.upper_violations == 0;
    return r;
}

SafetyReport check_safety_margin(const Trajectory& traj, const PNormBarrier& barrier, double d_inf,
                                 double tolerance) {
    if (traj.size() == 0) throw std::invalid_argument("check_safety_margin: empty trajectory");
    SafetyReport r;
    r.min_h = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double h = barrier_value(traj.states[k], barrier);
        if (h < r.min_h) {
            r.min_h = h;
            r.argmin_step = k;
        }
    }
    r.floor = -SafetyMargins::chi(d_inf) - tolerance;
    r.pass = r.min_h >= r.floor && traj.completed();
    return r;
}

}  // namespace isps
