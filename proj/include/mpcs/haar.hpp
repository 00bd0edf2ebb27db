#pragma once

#include <Eigen/Core>

namespace mpcs {

// Orthonormal 2-D Haar analysis / synthesis with the usual pyramid layout:
// level-l output occupies the top-left (rows/2^l) x (cols/2^l) block plus its
// three detail blocks; the next level recurses on the approximation block.
// Both maps preserve the l2 norm exactly (up to rounding).
Eigen::MatrixXd haar_dwt2(const Eigen::MatrixXd& image, int levels);
Eigen::MatrixXd haar_idwt2(const Eigen::MatrixXd& coeffs, int levels);

}  // namespace mpcs
