#pragma once

#include "isps/types.hpp"

#include <functional>

namespace isps {

/// Tensor-product grid over the box [lo, hi], `points_per_axis` samples per
/// coordinate including both endpoints; one grid point per row, last coordinate
/// varying fastest.
Mat uniform_grid(const Vec& lo, const Vec& hi, int points_per_axis);

/// Rows of `grid` for which `keep` returns true, in their original order.
Mat filter_rows(const Mat& grid, const std::function<bool(const Vec&)>& keep);

}  // namespace isps
