#pragma once

#include "isps/gains.hpp"
#include "isps/types.hpp"

namespace isps {

/// h(x) = 1 - (sum_j (x_j / w_j)^p)^(1/p) for an even exponent p.
struct PNormBarrier {
    int p = 20;
    Vec half_widths;

    void validate() const;
};

struct BarrierEval {
    double value = 0.0;
    Vec grad_x1;
    Vec grad_x2;
};

BarrierEval eval_barrier(const Vec& x, const PNormBarrier& barrier);

/// Barrier value only; cheaper than eval_barrier.
double barrier_value(const Vec& x, const PNormBarrier& barrier);

/// phi0 = grad_x1 h . x2 + grad_x2 h . (-(l1 + l2) x2 - l1 l2 x1) + alpha_coeff h.
double phi0(const Vec& x, const BarrierEval& be, const Gains& gains, double alpha_coeff);
inline const Vec& phi1(const BarrierEval& be) { return be.grad_x2; }

// Below this norm of phi1 the correction is zero.
inline constexpr double kPhi1Tolerance = 1e-8;

/// ReLU(-phi0 - phi1 v) phi1^T / (phi1 phi1^T); zero when phi1 is degenerate.
Vec relu_correction(double phi0_value, const Vec& phi1_value, const Vec& v);

/// Relaxed safe set C_d = {h >= -chi(d_inf)} with chi the identity and a
/// linear extended class-K function alpha(h) = alpha_coeff h.
struct SafetyMargins {
    double d_inf = 0.0;
    double alpha_coeff = 1.0;

    static double chi(double r) { return r; }
    double alpha(double h) const { return alpha_coeff * h; }
};

struct SafeSetCheck {
    bool inside = false;
    double margin = 0.0;  // h(x) + d_inf
};

SafeSetCheck in_safe_set(const Vec& x, const PNormBarrier& barrier, const SafetyMargins& margins);

/// error_bound * max over the grid rows of ||grad_x2 h||.
double d_inf_norm(double error_bound, const PNormBarrier& barrier, const Mat& state_grid);

/// max over state_grid x input_grid of ||relu_correction(phi0(x), phi1(x), v)||^2.
double sup_relu_term(const PNormBarrier& barrier, const Gains& gains, double alpha_coeff,
                     const Mat& state_grid, const Mat& input_grid);

}  // namespace isps
