#include "isps/safety_filter.hpp"

#include <algorithm>
#include <cmath>

namespace isps {

namespace {

double ipow(double base, int e) {
    double r = 1.0;
    while (e > 0) {
        if (e & 1) r *= base;
        base *= base;
        e >>= 1;
    }
    return r;
}

}  // namespace

void PNormBarrier::validate() const {
    if (p < 2 || p % 2 != 0) throw std::invalid_argument("barrier exponent p must be even and >= 2");
    if (half_widths.size() == 0 || half_widths.size() % 2 != 0) {
        throw std::invalid_argument("barrier half_widths must cover a strict-feedback state");
    }
    if (!(half_widths.minCoeff() > 0.0)) throw std::invalid_argument("barrier half_widths must be positive");
}

// With m = max_j |x_j / w_j|, S^(1/p) = m * (sum_j (r_j / m)^p)^(1/p); scaling by
// m keeps the sum in [1, d] and avoids under/overflow for large p.
double barrier_value(const Vec& x, const PNormBarrier& b) {
    const Eigen::ArrayXd r = x.array() / b.half_widths.array();
    const double m = r.abs().maxCoeff();
    if (m == 0.0) return 1.0;
    double s = 0.0;
    for (Eigen::Index j = 0; j < r.size(); ++j) s += ipow(r[j] / m, b.p);
    return 1.0 - m * std::pow(s, 1.0 / b.p);
}

BarrierEval eval_barrier(const Vec& x, const PNormBarrier& b) {
    if (x.size() != b.half_widths.size()) throw std::invalid_argument("eval_barrier: dimension mismatch");
    const Eigen::Index n = x.size() / 2;
    BarrierEval out;
    out.grad_x1 = Vec::Zero(n);
    out.grad_x2 = Vec::Zero(n);

    const Eigen::ArrayXd r = x.array() / b.half_widths.array();
    const double m = r.abs().maxCoeff();
    if (m == 0.0) {
        // removable singularity at the origin: the gradient limit is zero
        out.value = 1.0;
        return out;
    }
    double s = 0.0;
    for (Eigen::Index j = 0; j < r.size(); ++j) s += ipow(r[j] / m, b.p);
    out.value = 1.0 - m * std::pow(s, 1.0 / b.p);

    // dh/dx_j = -s^(1/p - 1) (r_j / m)^(p - 1) / w_j
    const double scale = std::pow(s, 1.0 / b.p - 1.0);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double g = -scale * ipow(r[j] / m, b.p - 1) / b.half_widths[j];
        if (j < n) {
            out.grad_x1[j] = g;
        } else {
            out.grad_x2[j - n] = g;
        }
    }
    return out;
}

double phi0(const Vec& x, const BarrierEval& be, const Gains& gains, double alpha_coeff) {
    const Eigen::Index n = x.size() / 2;
    const auto x1 = x.head(n);
    const auto x2 = x.tail(n);
    const Vec nominal = -(gains.lambda1 + gains.lambda2) * x2 - gains.lambda1 * gains.lambda2 * x1;
    return be.grad_x1.dot(x2) + be.grad_x2.dot(nominal) + alpha_coeff * be.value;
}

Vec relu_correction(double phi0_value, const Vec& phi1_value, const Vec& v) {
    if (phi1_value.size() != v.size()) throw std::invalid_argument("relu_correction: dimension mismatch");
    const double sq = phi1_value.squaredNorm();
    if (!(std::sqrt(sq) >= kPhi1Tolerance)) return Vec::Zero(v.size());
    const double active = std::max(0.0, -phi0_value - phi1_value.dot(v));
    if (active == 0.0) return Vec::Zero(v.size());
    return (active / sq) * phi1_value;
}

SafeSetCheck in_safe_set(const Vec& x, const PNormBarrier& barrier, const SafetyMargins& margins) {
    const double h = barrier_value(x, barrier);
    const double floor = -SafetyMargins::chi(margins.d_inf);
    return {h >= floor, h - floor};
}

double d_inf_norm(double error_bound, const PNormBarrier& barrier, const Mat& state_grid) {
    if (state_grid.rows() == 0) throw std::invalid_argument("d_inf_norm: empty grid");
    if (error_bound < 0.0) throw std::invalid_argument("d_inf_norm: error bound must be nonnegative");
    double sup = 0.0;
    for (Eigen::Index r = 0; r < state_grid.rows(); ++r) {
        sup = std::max(sup, eval_barrier(state_grid.row(r).transpose(), barrier).grad_x2.norm());
    }
    return error_bound * sup;
}

double sup_relu_term(const PNormBarrier& barrier, const Gains& gains, double alpha_coeff,
                     const Mat& state_grid, const Mat& input_grid) {
    if (state_grid.rows() == 0 || input_grid.rows() == 0) {
        throw std::invalid_argument("sup_relu_term: empty grid");
    }
    double sup = 0.0;
    for (Eigen::Index r = 0; r < state_grid.rows(); ++r) {
        const Vec x = state_grid.row(r).transpose();
        const BarrierEval be = eval_barrier(x, barrier);
        const double p0 = phi0(x, be, gains, alpha_coeff);
        for (Eigen::Index k = 0; k < input_grid.rows(); ++k) {
            sup = std::max(sup, relu_correction(p0, be.grad_x2, input_grid.row(k).transpose()).squaredNorm());
        }
    }
    return sup;
}

}  // namespace isps
