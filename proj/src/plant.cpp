#include "isps/plant.hpp"

#include <cmath>
#include <random>

namespace isps {

StrictFeedbackState::StrictFeedbackState(Vec positions, Vec velocities)
    : x1(std::move(positions)), x2(std::move(velocities)) {
    if (x1.size() != x2.size()) {
        throw std::invalid_argument("x1 and x2 must have equal dimension");
    }
}

StrictFeedbackState StrictFeedbackState::split(const Vec& x) {
    if (x.size() % 2 != 0) throw std::invalid_argument("strict-feedback state must have even dimension");
    const Eigen::Index n = x.size() / 2;
    return {x.head(n), x.tail(n)};
}

Vec StrictFeedbackState::stacked() const {
    Vec x(2 * n());
    x << x1, x2;
    return x;
}

Vec PlantModel::state_derivative(const Vec& x, const Vec& u) const {
    const Eigen::Index k = n();
    Vec dx(2 * k);
    dx.head(k) = x.tail(k);
    dx.tail(k) = drift(x) + input_gain(x) * u;
    return dx;
}

void TwoLinkParams::validate() const {
    if (!(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0 && gravity >= 0)) {
        throw std::invalid_argument("two-link masses and lengths must be positive, gravity nonnegative");
    }
}

Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q, const TwoLinkParams& p) {
    const double c2 = std::cos(q[1]);
    const double m12 = p.m2 * p.l2 * p.l2 + p.m2 * p.l1 * p.l2 * c2;
    Eigen::Matrix2d m;
    m << (p.m1 + p.m2) * p.l1 * p.l1 + p.m2 * p.l2 * p.l2 + 2.0 * p.m2 * p.l1 * p.l2 * c2, m12,
        m12, p.m2 * p.l2 * p.l2;
    return m;
}

CoriolisGravity coriolis_gravity(const Eigen::Vector2d& q, const Eigen::Vector2d& qdot,
                                 const TwoLinkParams& p) {
    const double s2 = std::sin(q[1]);
    const double k = p.m2 * p.l1 * p.l2 * s2;
    CoriolisGravity out;
    out.h << -k * (2.0 * qdot[0] * qdot[1] + qdot[1] * qdot[1]), k * qdot[0] * qdot[0];
    const double c12 = std::cos(q[0] + q[1]);
    out.c << (p.m1 + p.m2) * p.gravity * p.l1 * std::cos(q[0]) + p.m2 * p.gravity * p.l2 * c12,
        p.m2 * p.gravity * p.l2 * c12;
    return out;
}

TwoLinkManipulator::TwoLinkManipulator(TwoLinkParams params) : params_(params) {
    params_.validate();
}

namespace {

Eigen::Matrix2d checked_inverse(const Eigen::Matrix2d& m) {
    const double det = m.determinant();
    if (!(std::abs(det) > 1e-12 * m.squaredNorm())) {
        throw std::runtime_error("manipulator mass matrix is numerically singular");
    }
    return m.inverse();
}

}  // namespace

Vec TwoLinkManipulator::drift(const Vec& x) const {
    const Eigen::Vector2d q = x.head<2>();
    const Eigen::Vector2d qdot = x.segment<2>(2);
    const auto hc = coriolis_gravity(q, qdot, params_);
    const Eigen::Matrix2d m = mass_matrix(q, params_);
    checked_inverse(m);
    return m.ldlt().solve(-hc.h - hc.c);
}

Mat TwoLinkManipulator::input_gain(const Vec& x) const {
    return checked_inverse(mass_matrix(x.head<2>(), params_));
}

Mat TwoLinkManipulator::input_gain_inverse(const Vec& x) const {
    return mass_matrix(x.head<2>(), params_);
}

LinearDriftPlant::LinearDriftPlant(Mat a_pos, Mat a_vel) : a_pos_(std::move(a_pos)), a_vel_(std::move(a_vel)) {
    if (a_pos_.rows() != a_pos_.cols() || a_vel_.rows() != a_vel_.cols() ||
        a_pos_.rows() != a_vel_.rows() || a_pos_.rows() == 0) {
        throw std::invalid_argument("LinearDriftPlant: drift blocks must be square and of equal size");
    }
}

LinearDriftPlant LinearDriftPlant::double_integrator(int n) {
    return {Mat::Zero(n, n), Mat::Zero(n, n)};
}

Vec LinearDriftPlant::drift(const Vec& x) const {
    const Eigen::Index k = n();
    return a_pos_ * x.head(k) + a_vel_ * x.tail(k);
}

Mat LinearDriftPlant::input_gain(const Vec&) const { return Mat::Identity(n(), n()); }
Mat LinearDriftPlant::input_gain_inverse(const Vec&) const { return Mat::Identity(n(), n()); }

Vec rk4_step(const std::function<Vec(const Vec&, const Vec&)>& dynamics, const Vec& x,
             const Vec& u, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
    return rk4_step([&](double, const Vec& s) { return dynamics(s, u); }, 0.0, x, dt);
}

Trajectory simulate(const PlantModel& plant, const FeedbackLaw& controller,
                    const ExternalSignal& external, const Vec& x0, double horizon, double dt,
                    const SimulateOptions& options) {
    if (!(dt > 0.0) || !(horizon >= 0.0)) {
        throw std::invalid_argument("simulate: need dt > 0 and horizon >= 0");
    }
    if (x0.size() != plant.state_dim()) throw std::invalid_argument("simulate: x0 has wrong dimension");
    if (options.substeps < 1) throw std::invalid_argument("simulate: substeps must be >= 1");
    const double ratio = horizon / dt;
    const auto steps = static_cast<std::size_t>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio)) {
        throw std::invalid_argument("simulate: dt must divide the horizon");
    }

    Trajectory traj;
    traj.times.reserve(steps + 1);
    traj.states.reserve(steps + 1);
    traj.applied_inputs.reserve(steps + 1);
    traj.external_inputs.reserve(steps + 1);

    std::size_t step = 0;
    auto checked_input = [&](const Vec& x, const Vec& v) {
        Vec u = controller(x, v);
        if (u.size() != plant.input_dim() || !u.allFinite()) {
            throw SimulationError("controller returned a non-finite or misshaped input", step);
        }
        return u;
    };
    auto closed_loop = [&](double t, const Vec& x) {
        return plant.state_derivative(x, checked_input(x, external(t)));
    };

    Vec x = x0;
    for (step = 0; step <= steps; ++step) {
        const double t = static_cast<double>(step) * dt;
        const Vec v = external(t);
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.external_inputs.push_back(v);
        traj.applied_inputs.push_back(checked_input(x, v));

        if (options.guard) {
            const double g = options.guard(x);
            if (!(g >= options.guard_floor)) {
                traj.abort_reason = "state left the admissible domain at t=" + std::to_string(t) +
                                    " (guard " + std::to_string(g) + " < " +
                                    std::to_string(options.guard_floor) + ")";
                break;
            }
        }
        if (step == steps) break;
        try {
            const double h = dt / options.substeps;
            for (int s = 0; s < options.substeps; ++s) x = rk4_step(closed_loop, t + s * h, x, h);
        } catch (const SimulationError& e) {
            if (e.step() == step) throw;
            throw SimulationError("integration produced a non-finite state at t=" + std::to_string(t), step);
        }
        if (!x.allFinite()) throw SimulationError("state became non-finite", step);
    }
    return traj;
}

void SamplingDomain::validate() const {
    if (lo.size() == 0 || lo.size() != hi.size()) {
        throw std::invalid_argument("sampling domain bounds must be nonempty and of equal size");
    }
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
        if (!(hi[j] > lo[j])) {
            throw std::invalid_argument("sampling domain is degenerate along axis " + std::to_string(j));
        }
    }
}

TrainingSet collect_data(const PlantModel& plant, int count, double sample_dt, double noise_std,
                         std::uint64_t seed, const SamplingDomain& domain) {
    if (count < 1) throw std::invalid_argument("collect_data: need at least one sample");
    if (!(sample_dt > 0.0)) throw std::invalid_argument("collect_data: sample_dt must be positive");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("collect_data: noise_std must be nonnegative");
    domain.validate();
    if (domain.lo.size() != plant.state_dim()) {
        throw std::invalid_argument("collect_data: domain dimension does not match the plant");
    }

    constexpr long kMaxConsecutiveRejects = 1'000'000;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const Eigen::Index d = plant.state_dim();
    const Eigen::Index n = plant.n();
    TrainingSet data;
    data.inputs.resize(count, d);
    data.targets.resize(count, n);
    data.noise_std = noise_std;
    data.noise_added.assign(static_cast<std::size_t>(count), noise_std > 0.0);

    const Vec zero_u = Vec::Zero(plant.input_dim());
    auto open_loop = [&](const Vec& x, const Vec& u) { return plant.state_derivative(x, u); };

    for (int s = 0; s < count; ++s) {
        Vec x(d);
        long rejects = 0;
        while (true) {
            for (Eigen::Index j = 0; j < d; ++j) x[j] = domain.lo[j] + (domain.hi[j] - domain.lo[j]) * unit(rng);
            if (!domain.accept || domain.accept(x)) break;
            if (++rejects >= kMaxConsecutiveRejects) {
                throw std::invalid_argument("collect_data: sampling domain appears empty");
            }
        }
        const Vec next = rk4_step(open_loop, x, zero_u, sample_dt);
        Vec y = (next.tail(n) - x.tail(n)) / sample_dt;
        if (noise_std > 0.0) {
            for (Eigen::Index i = 0; i < n; ++i) y[i] += noise_std * noise(rng);
        }
        data.inputs.row(s) = x.transpose();
        data.targets.row(s) = y.transpose();
    }
    return data;
}

}  // namespace isps
