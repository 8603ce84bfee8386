#include "isps/gp_model.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "isps/csv_io.hpp"

namespace isps {

namespace {

constexpr int kModelSchemaVersion = 1;
constexpr double kVarianceClampTol = 1e-9;  // relative to signal_std^2
constexpr Eigen::Index kBatchRows = 2048;

Mat kernel_matrix(const Mat& inputs, const KernelParams& kp) {
    const Eigen::Index n = inputs.rows();
    const double s2 = kp.signal_std * kp.signal_std;
    const Mat scaled = inputs.array().rowwise() / kp.lengthscales.transpose().array();
    Mat k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = s2;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r2 = (scaled.row(i) - scaled.row(j)).squaredNorm();
            k(i, j) = k(j, i) = s2 * std::exp(-0.5 * r2);
        }
    }
    return k;
}

// N x m matrix of k(x^(j), q) for the m query rows.
Mat cross_kernel(const Mat& inputs, const Mat& queries, const KernelParams& kp) {
    const double s2 = kp.signal_std * kp.signal_std;
    const Eigen::ArrayXXd inv_l = kp.lengthscales.cwiseInverse().transpose().array();
    const Mat a = inputs.array().rowwise() * inv_l.row(0);
    const Mat b = queries.array().rowwise() * inv_l.row(0);
    Mat k(a.rows(), b.rows());
    for (Eigen::Index q = 0; q < b.rows(); ++q) {
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
            k(j, q) = s2 * std::exp(-0.5 * (a.row(j) - b.row(q)).squaredNorm());
        }
    }
    return k;
}

void check_dim(const Vec& x, Eigen::Index d) {
    if (x.size() != d) {
        throw std::invalid_argument("state dimension " + std::to_string(x.size()) +
                                    " does not match model input dimension " + std::to_string(d));
    }
}

}  // namespace

void KernelParams::validate() const {
    if (!(signal_std > 0.0) || !std::isfinite(signal_std)) {
        throw std::invalid_argument("kernel signal_std must be positive");
    }
    if (lengthscales.size() == 0) {
        throw std::invalid_argument("kernel needs at least one lengthscale");
    }
    for (Eigen::Index j = 0; j < lengthscales.size(); ++j) {
        if (!(lengthscales[j] > 0.0) || !std::isfinite(lengthscales[j])) {
            throw std::invalid_argument("kernel lengthscale " + std::to_string(j) +
                                        " must be positive");
        }
    }
}

double eval_kernel(const Vec& x, const Vec& x_prime, const KernelParams& params) {
    if (x.size() != x_prime.size() || x.size() != params.lengthscales.size()) {
        throw std::invalid_argument("eval_kernel: dimension mismatch");
    }
    const double r2 = ((x - x_prime).array() / params.lengthscales.array()).square().sum();
    return params.signal_std * params.signal_std * std::exp(-0.5 * r2);
}

void TrainingSet::validate() const {
    if (inputs.rows() < 1) throw std::invalid_argument("training set is empty");
    if (inputs.rows() != targets.rows()) {
        throw std::invalid_argument("training inputs and targets differ in count");
    }
    if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be nonnegative");
    if (!inputs.allFinite() || !targets.allFinite()) {
        throw std::invalid_argument("training set contains non-finite values");
    }
}

double ErrorBoundParams::confidence() const {
    return std::pow(1.0 - epsilon, output_dim);
}

void ErrorBoundParams::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
    if (eta_norm < 0.0 || rho_bar_norm < 0.0) {
        throw std::invalid_argument("error-bound norms must be nonnegative");
    }
    if (direct_bound && *direct_bound < 0.0) {
        throw std::invalid_argument("direct error bound must be nonnegative");
    }
    if (output_dim < 1) throw std::invalid_argument("output_dim must be positive");
}

ErrorBoundParams ErrorBoundParams::from_direct(double bound, double rho_bar_norm, double epsilon,
                                               int output_dim) {
    ErrorBoundParams p;
    p.rho_bar_norm = rho_bar_norm;
    p.eta_norm = rho_bar_norm > 0.0 ? bound / rho_bar_norm : 0.0;
    p.epsilon = epsilon;
    p.output_dim = output_dim;
    p.direct_bound = bound;
    p.validate();
    return p;
}

GpPosterior::GpPosterior(Mat inputs, double noise_std, std::vector<GpOutput> outputs)
    : inputs_(std::move(inputs)), noise_std_(noise_std), outputs_(std::move(outputs)) {
    for (const auto& o : outputs_) {
        scaled_inputs_.push_back(inputs_ * o.kernel.lengthscales.cwiseInverse().asDiagonal());
    }
}

Vec GpPosterior::kernel_column(std::size_t i, const Vec& x) const {
    const Mat& a = scaled_inputs_[i];
    const KernelParams& kp = outputs_[i].kernel;
    Eigen::ArrayXd r2 = Eigen::ArrayXd::Zero(a.rows());
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        r2 += (a.col(j).array() - x[j] / kp.lengthscales[j]).square();
    }
    return kp.signal_std * kp.signal_std * (-0.5 * r2).exp();
}

double GpPosterior::clamp_variance(std::size_t i, double var) const {
    if (var >= 0.0) return var;
    const double s = outputs_[i].kernel.signal_std;
    if (var >= -kVarianceClampTol * s * s) return 0.0;
    throw std::logic_error("posterior variance " + std::to_string(var) +
                           " is negative beyond round-off tolerance");
}

Vec GpPosterior::predict_mean(const Vec& x) const {
    check_dim(x, input_dim());
    Vec mu(output_dim());
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        mu[static_cast<Eigen::Index>(i)] = kernel_column(i, x).dot(outputs_[i].weights);
    }
    return mu;
}

Vec GpPosterior::predict_var(const Vec& x) const {
    check_dim(x, input_dim());
    Vec var(output_dim());
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        const Vec kbar = kernel_column(i, x);
        const Vec v = outputs_[i].factor.matrixL().solve(kbar);
        const double s = outputs_[i].kernel.signal_std;
        var[static_cast<Eigen::Index>(i)] = clamp_variance(i, s * s - v.squaredNorm());
    }
    return var;
}

std::pair<Mat, Mat> GpPosterior::predict_batch(const Mat& states) const {
    if (states.cols() != input_dim()) {
        throw std::invalid_argument("predict_batch: state dimension mismatch");
    }
    Mat mean(states.rows(), output_dim());
    Mat var(states.rows(), output_dim());
    for (Eigen::Index start = 0; start < states.rows(); start += kBatchRows) {
        const Eigen::Index m = std::min(kBatchRows, states.rows() - start);
        const Mat block = states.middleRows(start, m);
        for (std::size_t i = 0; i < outputs_.size(); ++i) {
            const auto col = static_cast<Eigen::Index>(i);
            Mat kx = cross_kernel(inputs_, block, outputs_[i].kernel);
            mean.block(start, col, m, 1) = kx.transpose() * outputs_[i].weights;
            outputs_[i].factor.matrixL().solveInPlace(kx);
            const double s = outputs_[i].kernel.signal_std;
            const Vec q = kx.colwise().squaredNorm().transpose();
            for (Eigen::Index r = 0; r < m; ++r) {
                var(start + r, col) = clamp_variance(i, s * s - q[r]);
            }
        }
    }
    return {mean, var};
}

GpPosterior fit(const TrainingSet& data, std::span<const KernelParams> params,
                const JitterPolicy& jitter) {
    data.validate();
    if (params.size() != static_cast<std::size_t>(data.targets.cols())) {
        throw std::invalid_argument("fit: need one KernelParams per output dimension");
    }
    const Eigen::Index n_samples = data.inputs.rows();
    const double noise_var = data.noise_std * data.noise_std;

    std::vector<GpOutput> outputs;
    outputs.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const KernelParams& kp = params[i];
        kp.validate();
        if (kp.lengthscales.size() != data.inputs.cols()) {
            throw std::invalid_argument("fit: lengthscale count does not match state dimension");
        }
        Mat k = kernel_matrix(data.inputs, kp);
        k.diagonal().array() += noise_var;

        const double s2 = kp.signal_std * kp.signal_std;
        GpOutput out;
        out.kernel = kp;
        out.factor.compute(k);
        double added = 0.0;
        double rel = jitter.initial;
        while (out.factor.info() != Eigen::Success) {
            if (rel > jitter.maximum * (1.0 + 1e-12)) {
                throw IllConditionedError(
                    "kernel matrix for output " + std::to_string(i) + " (N=" +
                        std::to_string(n_samples) +
                        ") is not positive definite after jitter escalation to " +
                        std::to_string(jitter.maximum) + " * signal_std^2",
                    jitter.maximum * s2);
            }
            Mat kj = k;
            added = rel * s2;
            kj.diagonal().array() += added;
            out.factor.compute(kj);
            rel *= jitter.growth;
        }
        out.jitter = added;
        out.weights = out.factor.solve(data.targets.col(static_cast<Eigen::Index>(i)));
        outputs.push_back(std::move(out));
    }
    return GpPosterior(data.inputs, data.noise_std, std::move(outputs));
}

GridSweep sweep_posterior(const GpPosterior& gp, const Mat& grid) {
    if (grid.rows() == 0) throw std::invalid_argument("max_std_bound: empty grid");
    GridSweep out;
    out.bound.rho_bar = Vec::Zero(gp.output_dim());
    for (Eigen::Index start = 0; start < grid.rows(); start += kBatchRows) {
        const Eigen::Index m = std::min(kBatchRows, grid.rows() - start);
        const auto [mean, var] = gp.predict_batch(grid.middleRows(start, m));
        out.bound.rho_bar = out.bound.rho_bar.cwiseMax(var.colwise().maxCoeff().transpose().cwiseSqrt());
        out.max_abs_mean = std::max(out.max_abs_mean, mean.cwiseAbs().maxCoeff());
    }
    out.bound.norm = out.bound.rho_bar.norm();
    return out;
}

StdBound max_std_bound(const GpPosterior& gp, const Mat& grid) {
    return sweep_posterior(gp, grid).bound;
}

Eta compute_eta(const Vec& rkhs_norm_bounds, const Vec& info_gains, double epsilon,
                long long sample_count) {
    if (rkhs_norm_bounds.size() != info_gains.size()) {
        throw std::invalid_argument("compute_eta: RKHS bounds and information gains differ in size");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
    if (sample_count < 0) throw std::invalid_argument("sample count must be nonnegative");
    const double ratio = (static_cast<double>(sample_count) + 1.0) / epsilon;
    if (!(ratio > 1.0)) throw std::invalid_argument("compute_eta requires (N+1)/epsilon > 1");
    const double l = std::log(ratio);

    Eta out;
    out.eta.resize(rkhs_norm_bounds.size());
    for (Eigen::Index i = 0; i < rkhs_norm_bounds.size(); ++i) {
        if (rkhs_norm_bounds[i] < 0.0 || info_gains[i] < 0.0) {
            throw std::invalid_argument("compute_eta: bounds and gains must be nonnegative");
        }
        const double b = rkhs_norm_bounds[i];
        out.eta[i] = std::sqrt(2.0 * b * b + 300.0 * info_gains[i] * l * l * l);
    }
    out.norm = out.eta.norm();
    return out;
}

namespace {

nlohmann::json to_json_vec(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vec from_json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_model(const std::filesystem::path& path, const GpPosterior& gp) {
    nlohmann::json j;
    j["schema"] = "isps.gp_model";
    j["version"] = kModelSchemaVersion;
    j["noise_std"] = gp.noise_std();
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < gp.inputs().rows(); ++r) rows.push_back(to_json_vec(gp.inputs().row(r)));
    j["inputs"] = rows;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : gp.outputs()) {
        outs.push_back({{"signal_std", o.kernel.signal_std},
                        {"lengthscales", to_json_vec(o.kernel.lengthscales)},
                        {"jitter", o.jitter},
                        {"weights", to_json_vec(o.weights)}});
    }
    j["outputs"] = outs;
    if (const auto& b = gp.error_bound()) {
        nlohmann::json eb = {{"eta_norm", b->eta_norm},
                             {"rho_bar_norm", b->rho_bar_norm},
                             {"epsilon", b->epsilon},
                             {"output_dim", b->output_dim},
                             {"bound", b->bound()}};
        if (b->direct_bound) eb["direct_bound"] = *b->direct_bound;
        j["error_bound"] = eb;
    }
    write_file_atomic(path, j.dump(2) + "\n");
}

GpPosterior load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file " + path.string());
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("schema", "") != "isps.gp_model") {
        throw std::runtime_error(path.string() + " is not a GP model file");
    }
    if (j.at("version").get<int>() != kModelSchemaVersion) {
        throw std::runtime_error("unsupported GP model schema version in " + path.string());
    }
    const auto& rows = j.at("inputs");
    if (rows.empty()) throw std::runtime_error("model file has no training inputs");
    const auto d = static_cast<Eigen::Index>(rows.at(0).size());
    Mat inputs(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        inputs.row(static_cast<Eigen::Index>(r)) = from_json_vec(rows[r]).transpose();
    }
    const double noise_std = j.at("noise_std").get<double>();

    std::vector<GpOutput> outputs;
    for (const auto& o : j.at("outputs")) {
        GpOutput out;
        out.kernel.signal_std = o.at("signal_std").get<double>();
        out.kernel.lengthscales = from_json_vec(o.at("lengthscales"));
        out.kernel.validate();
        out.jitter = o.at("jitter").get<double>();
        out.weights = from_json_vec(o.at("weights"));
        Mat k = kernel_matrix(inputs, out.kernel);
        k.diagonal().array() += noise_std * noise_std + out.jitter;
        out.factor.compute(k);
        if (out.factor.info() != Eigen::Success) {
            throw IllConditionedError("stored model does not refactorize", out.jitter);
        }
        outputs.push_back(std::move(out));
    }
    GpPosterior gp(std::move(inputs), noise_std, std::move(outputs));
    if (j.contains("error_bound")) {
        const auto& eb = j.at("error_bound");
        ErrorBoundParams b;
        b.eta_norm = eb.at("eta_norm").get<double>();
        b.rho_bar_norm = eb.at("rho_bar_norm").get<double>();
        b.epsilon = eb.at("epsilon").get<double>();
        b.output_dim = eb.at("output_dim").get<int>();
        if (eb.contains("direct_bound")) b.direct_bound = eb.at("direct_bound").get<double>();
        gp.set_error_bound(b);
    }
    return gp;
}

}  // namespace isps
