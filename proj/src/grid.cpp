#include "isps/grid.hpp"

#include <vector>

namespace isps {

Mat uniform_grid(const Vec& lo, const Vec& hi, int points_per_axis) {
    if (lo.size() != hi.size() || lo.size() == 0) {
        throw std::invalid_argument("uniform_grid: bounds must be nonempty and of equal size");
    }
    if (points_per_axis < 1) throw std::invalid_argument("uniform_grid: need at least one point per axis");
    if ((hi - lo).minCoeff() < 0.0) throw std::invalid_argument("uniform_grid: hi < lo");

    const Eigen::Index d = lo.size();
    Eigen::Index total = 1;
    for (Eigen::Index j = 0; j < d; ++j) total *= points_per_axis;

    Mat grid(total, d);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (Eigen::Index r = 0; r < total; ++r) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const int k = idx[static_cast<std::size_t>(j)];
            grid(r, j) = points_per_axis == 1
                             ? 0.5 * (lo[j] + hi[j])
                             : lo[j] + (hi[j] - lo[j]) * k / (points_per_axis - 1);
        }
        for (Eigen::Index j = d - 1; j >= 0; --j) {
            auto& k = idx[static_cast<std::size_t>(j)];
            if (++k < points_per_axis) break;
            k = 0;
        }
    }
    return grid;
}

Mat filter_rows(const Mat& grid, const std::function<bool(const Vec&)>& keep) {
    std::vector<Eigen::Index> kept;
    for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        if (keep(grid.row(r).transpose())) kept.push_back(r);
    }
    Mat out(static_cast<Eigen::Index>(kept.size()), grid.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = grid.row(kept[i]);
    return out;
}

}  // namespace isps
