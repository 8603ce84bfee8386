#include "isps/controller.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <sstream>

namespace isps {

Gains validate_gains(const Gains& g) {
    if (!(g.theta > 0.0)) {
        throw GainValidationError("theta > 0 violated: theta = " + std::to_string(g.theta));
    }
    if (!(g.lambda1 > 0.5)) {
        std::ostringstream msg;
        msg << "lambda1 > 1/2 violated: lambda1 = " << g.lambda1
            << " (must be strictly greater than 0.5)";
        throw GainValidationError(msg.str());
    }
    const double lambda2_min = 2.0 + 1.0 / (2.0 * g.theta);
    if (!(g.lambda2 > lambda2_min)) {
        std::ostringstream msg;
        msg << "lambda2 > 2 + 1/(2 theta) violated: lambda2 = " << g.lambda2
            << " (must be strictly greater than " << lambda2_min << " for theta = " << g.theta << ")";
        throw GainValidationError(msg.str());
    }
    return g;
}

ControllerMode ControllerMode::parse(const std::string& name) {
    if (name == "learned") return {DriftSource::learned, true};
    if (name == "oracle-drift") return {DriftSource::oracle, true};
    if (name == "filter-off") return {DriftSource::learned, false};
    if (name == "oracle-drift+filter-off" || name == "filter-off+oracle-drift") {
        return {DriftSource::oracle, false};
    }
    throw std::invalid_argument("unknown controller mode '" + name + "'");
}

std::string ControllerMode::name() const {
    if (drift == DriftSource::learned) return filter ? "learned" : "filter-off";
    return filter ? "oracle-drift" : "oracle-drift+filter-off";
}

IspsController::IspsController(ControllerConfig cfg) : cfg_(std::move(cfg)) {
    validate_gains(cfg_.gains);
    if (!cfg_.plant) throw std::invalid_argument("controller needs the plant's known input gain");
    if (cfg_.mode.drift == DriftSource::learned && !cfg_.gp) {
        throw std::invalid_argument("learned-drift controller needs a trained GP");
    }
    if (cfg_.mode.filter) cfg_.barrier.validate();
    if (!(cfg_.alpha_coeff > 0.0)) throw std::invalid_argument("alpha_coeff must be positive");
}

ControlBreakdown IspsController::evaluate(const Vec& x, const Vec& v) const {
    const Eigen::Index n = cfg_.plant->n();
    if (x.size() != 2 * n || v.size() != n) throw std::invalid_argument("control_law: dimension mismatch");
    const Gains& g = cfg_.gains;

    ControlBreakdown out;
    out.drift_estimate = cfg_.mode.drift == DriftSource::oracle ? cfg_.plant->drift(x)
                                                                 : cfg_.gp->predict_mean(x);
    out.nominal = -(g.lambda1 + g.lambda2) * x.tail(n) - g.lambda1 * g.lambda2 * x.head(n);
    if (cfg_.mode.filter) {
        const BarrierEval be = eval_barrier(x, cfg_.barrier);
        out.phi0 = phi0(x, be, g, cfg_.alpha_coeff);
        out.phi1 = be.grad_x2;
        out.correction = relu_correction(out.phi0, out.phi1, v);
    } else {
        out.phi1 = Vec::Zero(n);
        out.correction = Vec::Zero(n);
    }
    const Mat g_inv = cfg_.plant->input_gain_inverse(x);
    if (!g_inv.allFinite()) throw ControllerFault("input gain inverse is not finite", x);
    out.u = g_inv * (-out.drift_estimate + out.nominal + v + out.correction);
    if (!out.u.allFinite()) throw ControllerFault("control input is not finite", x);
    return out;
}

Vec control_law(const Vec& x, const Vec& v, const ControllerConfig& cfg) {
    return IspsController(cfg)(x, v);
}

SpectralReport closed_loop_error_dynamics_check(const Gains& gains, int n) {
    validate_gains(gains);
    const Mat id = Mat::Identity(n, n);
    Mat a = Mat::Zero(2 * n, 2 * n);
    a.topLeftCorner(n, n) = -gains.lambda1 * id;
    a.topRightCorner(n, n) = id;
    a.bottomRightCorner(n, n) = -gains.lambda2 * id;

    Eigen::EigenSolver<Mat> es(a, false);
    SpectralReport report;
    const auto ev = es.eigenvalues();
    report.eigenvalues.assign(ev.data(), ev.data() + ev.size());
    std::sort(report.eigenvalues.begin(), report.eigenvalues.end(),
              [](const auto& l, const auto& r) { return l.real() > r.real(); });
    report.spectral_abscissa = report.eigenvalues.front().real();
    report.hurwitz = report.spectral_abscissa < 0.0;
    return report;
}

}  // namespace isps
