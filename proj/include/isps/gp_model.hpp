#pragma once

#include "isps/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace isps {

/// Squared-exponential kernel with one lengthscale per state coordinate:
/// k(x, x') = signal_std^2 * exp(-sum_j (x_j - x'_j)^2 / (2 l_j^2)).
struct KernelParams {
    double signal_std = 1.0;
    Vec lengthscales;

    void validate() const;
};

double eval_kernel(const Vec& x, const Vec& x_prime, const KernelParams& params);

/// Noisy drift observations y = f(x) + w, one row per sample.
struct TrainingSet {
    Mat inputs;   // N x d
    Mat targets;  // N x n
    double noise_std = 0.0;
    std::vector<bool> noise_added;  // per sample: was a noise realization added to the target

    Eigen::Index size() const { return inputs.rows(); }
    void validate() const;
};

/// Uniform model-error bound ||f(x) - mu(x)|| <= eta_norm * rho_bar_norm, holding with
/// probability at least (1 - epsilon)^n.
struct ErrorBoundParams {
    double eta_norm = 0.0;
    double rho_bar_norm = 0.0;
    double epsilon = 0.5;
    int output_dim = 1;
    // Set when the bound is supplied directly instead of through eta.
    std::optional<double> direct_bound;

    double bound() const { return direct_bound ? *direct_bound : eta_norm * rho_bar_norm; }
    double confidence() const;
    void validate() const;

    // Builds parameters whose product equals a directly supplied bound.
    static ErrorBoundParams from_direct(double bound, double rho_bar_norm, double epsilon,
                                        int output_dim);
};

struct JitterPolicy {
    double initial = 1e-10;  // relative to signal_std^2
    double maximum = 1e-4;
    double growth = 10.0;
};

/// One trained scalar GP.
struct GpOutput {
    KernelParams kernel;
    Eigen::LLT<Mat> factor;  // of K + (noise_std^2 + jitter) I
    Vec weights;             // (K + noise_std^2 I)^-1 y
    double jitter = 0.0;     // absolute diagonal jitter actually added
};

class GpPosterior {
public:
    GpPosterior() = default;
    GpPosterior(Mat inputs, double noise_std, std::vector<GpOutput> outputs);

    Vec predict_mean(const Vec& x) const;
    Vec predict_var(const Vec& x) const;

    /// Posterior mean and variance at many states at once (rows of `states`).
    /// Returns (mean, var), each states.rows() x n.
    std::pair<Mat, Mat> predict_batch(const Mat& states) const;

    Eigen::Index input_dim() const { return inputs_.cols(); }
    Eigen::Index output_dim() const { return static_cast<Eigen::Index>(outputs_.size()); }
    Eigen::Index sample_count() const { return inputs_.rows(); }
    double noise_std() const { return noise_std_; }
    const Mat& inputs() const { return inputs_; }
    const std::vector<GpOutput>& outputs() const { return outputs_; }

    const std::optional<ErrorBoundParams>& error_bound() const { return error_bound_; }
    void set_error_bound(const ErrorBoundParams& b) { error_bound_ = b; }

private:
    Vec kernel_column(std::size_t i, const Vec& x) const;
    double clamp_variance(std::size_t i, double var) const;

    Mat inputs_;
    double noise_std_ = 0.0;
    std::vector<GpOutput> outputs_;
    std::vector<Mat> scaled_inputs_;  // inputs / lengthscales, per output
    std::optional<ErrorBoundParams> error_bound_;
};

GpPosterior fit(const TrainingSet& data, std::span<const KernelParams> params,
                const JitterPolicy& jitter = {});

struct StdBound {
    Vec rho_bar;  // per output dimension: max over the grid of the posterior std
    double norm = 0.0;
};

/// Grid estimate of rho_bar_i = max_x rho_i(x); rows of `grid` are states.
StdBound max_std_bound(const GpPosterior& gp, const Mat& grid);

struct GridSweep {
    StdBound bound;
    double max_abs_mean = 0.0;  // max over grid and outputs of |mu_i(x)|
};

/// max_std_bound plus the largest posterior-mean magnitude, in one pass.
GridSweep sweep_posterior(const GpPosterior& gp, const Mat& grid);

struct Eta {
    Vec eta;
    double norm = 0.0;
};

/// eta_i = sqrt(2 B_i^2 + 300 gamma_i log^3((N + 1) / epsilon)).
Eta compute_eta(const Vec& rkhs_norm_bounds, const Vec& info_gains, double epsilon,
                long long sample_count);

// Versioned JSON model file. Weight vectors round-trip bit-exactly; the
// factorization is rebuilt from the stored inputs on load.
void save_model(const std::filesystem::path& path, const GpPosterior& gp);
GpPosterior load_model(const std::filesystem::path& path);

}  // namespace isps
