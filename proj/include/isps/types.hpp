#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace isps {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Full state x = [x1; x2] of a strict-feedback plant, x1, x2 in R^n.
struct StrictFeedbackState {
    Vec x1;
    Vec x2;

    StrictFeedbackState() = default;
    StrictFeedbackState(Vec positions, Vec velocities);

    static StrictFeedbackState split(const Vec& x);
    Vec stacked() const;
    Eigen::Index n() const { return x1.size(); }
};

inline Eigen::Index half_dim(const Vec& x) { return x.size() / 2; }

// Thrown when an SPD factorization cannot be obtained even after jitter escalation.
class IllConditionedError : public std::runtime_error {
public:
    IllConditionedError(const std::string& what, double max_jitter)
        : std::runtime_error(what), max_jitter_(max_jitter) {}
    double max_jitter() const { return max_jitter_; }

private:
    double max_jitter_;
};

// Aborts a rollout; carries the step at which the problem was detected.
class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

class ControllerFault : public std::runtime_error {
public:
    ControllerFault(const std::string& what, Vec state)
        : std::runtime_error(what), state_(std::move(state)) {}
    const Vec& state() const { return state_; }

private:
    Vec state_;
};

}  // namespace isps
