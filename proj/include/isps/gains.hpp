#pragma once

namespace isps {

/// Nominal feedback gains and the Young's-inequality weight theta.
/// Admissible when lambda1 > 1/2, lambda2 > 2 + 1/(2 theta), theta > 0.
struct Gains {
    double lambda1 = 1.5;
    double lambda2 = 503.0;
    double theta = 0.001;
};

}  // namespace isps
