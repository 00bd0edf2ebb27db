#include "mpcs/haar.hpp"

#include "mpcs/errors.hpp"

namespace mpcs {

namespace {

void check_dims(const Eigen::MatrixXd& m, int levels, const char* who) {
  if (levels < 1) throw InvalidLevelsError(std::string(who) + ": levels must be >= 1");
  const long scale = 1L << levels;
  if (m.rows() <= 0 || m.cols() <= 0 || m.rows() % scale != 0 ||
      m.cols() % scale != 0)
    throw DimensionError(std::string(who) + ": dims must be divisible by 2^levels");
}

// One analysis level on the top-left nr x nc block: each 2x2 block
// [a b; c d] maps to the orthonormal butterfly
//   approx (a+b+c+d)/2,  col-detail (a-b+c-d)/2,
//   row-detail (a+b-c-d)/2,  diagonal (a-b-c+d)/2.
void analyze_level(Eigen::MatrixXd& m, int nr, int nc) {
  Eigen::MatrixXd block(nr, nc);
  const int hr = nr / 2, hc = nc / 2;
  for (int j = 0; j < hc; ++j) {
    for (int i = 0; i < hr; ++i) {
      const double a = m(2 * i, 2 * j);
      const double b = m(2 * i, 2 * j + 1);
      const double c = m(2 * i + 1, 2 * j);
      const double d = m(2 * i + 1, 2 * j + 1);
      block(i, j) = 0.5 * (a + b + c + d);
      block(i, j + hc) = 0.5 * (a - b + c - d);
      block(i + hr, j) = 0.5 * (a + b - c - d);
      block(i + hr, j + hc) = 0.5 * (a - b - c + d);
    }
  }
  m.topLeftCorner(nr, nc) = block;
}

void synthesize_level(Eigen::MatrixXd& m, int nr, int nc) {
  Eigen::MatrixXd block(nr, nc);
  const int hr = nr / 2, hc = nc / 2;
  for (int j = 0; j < hc; ++j) {
    for (int i = 0; i < hr; ++i) {
      const double s = m(i, j);
      const double h = m(i, j + hc);
      const double v = m(i + hr, j);
      const double g = m(i + hr, j + hc);
      block(2 * i, 2 * j) = 0.5 * (s + h + v + g);
      block(2 * i, 2 * j + 1) = 0.5 * (s - h + v - g);
      block(2 * i + 1, 2 * j) = 0.5 * (s + h - v - g);
      block(2 * i + 1, 2 * j + 1) = 0.5 * (s - h - v + g);
    }
  }
  m.topLeftCorner(nr, nc) = block;
}

}  // namespace

Eigen::MatrixXd haar_dwt2(const Eigen::MatrixXd& image, int levels) {
  check_dims(image, levels, "haar_dwt2");
  Eigen::MatrixXd out = image;
  int nr = static_cast<int>(image.rows());
  int nc = static_cast<int>(image.cols());
  for (int l = 0; l < levels; ++l) {
    analyze_level(out, nr, nc);
    nr /= 2;
    nc /= 2;
  }
  return out;
}

Eigen::MatrixXd haar_idwt2(const Eigen::MatrixXd& coeffs, int levels) {
  check_dims(coeffs, levels, "haar_idwt2");
  Eigen::MatrixXd out = coeffs;
  int nr = static_cast<int>(coeffs.rows()) >> (levels - 1);
  int nc = static_cast<int>(coeffs.cols()) >> (levels - 1);
  for (int l = 0; l < levels; ++l) {
    synthesize_level(out, nr, nc);
    nr *= 2;
    nc *= 2;
  }
  return out;
}

}  // namespace mpcs
