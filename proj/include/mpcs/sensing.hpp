#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace mpcs {

// Orthonormal synthesis transform: coefficients -> signal domain. Identity
// for already-coefficient-domain problems, inverse 2-D Haar for images.
class Synthesis {
 public:
  static Synthesis identity(int p);
  static Synthesis haar(int rows, int cols, int levels);

  int size() const { return p_; }
  bool is_identity() const { return levels_ == 0; }
  Eigen::VectorXd apply(const Eigen::VectorXd& coeffs) const;
  Eigen::VectorXd apply_adjoint(const Eigen::VectorXd& x) const;

 private:
  Synthesis(int rows, int cols, int levels, int p)
      : rows_(rows), cols_(cols), levels_(levels), p_(p) {}
  int rows_ = 0, cols_ = 0, levels_ = 0, p_ = 0;
};

// Linear map y = H s with transpose application and a power-iteration
// certificate of its spectral norm (== 1 after proper scaling).
class SensingOperator {
 public:
  virtual ~SensingOperator() = default;

  int n_measurements() const { return n_; }
  int n_coefficients() const { return p_; }

  virtual void forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const = 0;
  virtual void adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const = 0;

  Eigen::VectorXd forward(const Eigen::VectorXd& s) const;
  Eigen::VectorXd adjoint(const Eigen::VectorXd& r) const;

  double spectral_norm_certificate() const { return certificate_; }

  // Non-null when H is materialized; enables direct N x N solves.
  virtual const Eigen::MatrixXd* dense_matrix() const { return nullptr; }

 protected:
  SensingOperator(int n, int p, double certificate)
      : n_(n), p_(p), certificate_(certificate) {}
  int n_, p_;
  double certificate_;
};

class DenseOperator final : public SensingOperator {
 public:
  using SensingOperator::forward;
  using SensingOperator::adjoint;
  explicit DenseOperator(Eigen::MatrixXd h);
  DenseOperator(Eigen::MatrixXd h, double certificate);

  void forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const override;
  void adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const override;
  const Eigen::MatrixXd* dense_matrix() const override { return &h_; }

 private:
  Eigen::MatrixXd h_;
};

// H = Phi * Psi with dense Phi and orthonormal synthesis Psi.
class ComposedOperator final : public SensingOperator {
 public:
  using SensingOperator::forward;
  using SensingOperator::adjoint;
  ComposedOperator(Eigen::MatrixXd phi, Synthesis psi, double certificate);

  void forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const override;
  void adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const override;

 private:
  Eigen::MatrixXd phi_;
  Synthesis psi_;
};

// Fast operator with exactly orthonormal rows, H H^T = I_N: a random +-1
// sign diagonal, a global orthonormal 1-D DCT-II over the vectorized image,
// and a uniform subsample of N out of p coefficients, composed with
// inverse-Haar synthesis. The DCT rows are delocalized, so the subsampled
// rows stay incoherent with the wavelet atoms.
class StructurallyRandomOperator final : public SensingOperator {
 public:
  using SensingOperator::forward;
  using SensingOperator::adjoint;
  StructurallyRandomOperator(int rows, int cols, int n, int levels,
                             std::uint64_t seed);

  void forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const override;
  void adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const override;

 private:
  int rows_, cols_, levels_;
  Eigen::VectorXd signs_;
  std::vector<int> selected_;
};

// Dense sampling-matrix families. All entries/columns drawn in a fixed
// order, so a seed pins the matrix exactly.
Eigen::MatrixXd gen_white_gaussian(int n, int p, std::uint64_t seed);
Eigen::MatrixXd gen_row_correlated(int n, int p, double r, std::uint64_t seed);
Eigen::MatrixXd gen_col_correlated(int n, int p, double c, std::uint64_t seed);

struct PowerIterOptions {
  double tol = 1e-8;       // relative change of the Rayleigh quotient
  int max_iters = 10000;
  std::uint64_t seed = 0x5744f7a10d9c36b1ULL;  // start vector, fixed
};

// Largest singular value via power iteration on H^T H. The returned value is
// ||H v|| for an explicit unit vector v, hence a lower bound on the true norm.
double spectral_norm_power(
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& fwd,
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& adj,
    int n, int p, const PowerIterOptions& opts = {});
double spectral_norm_power(const Eigen::MatrixXd& m,
                           const PowerIterOptions& opts = {});
double spectral_norm_power(const SensingOperator& op,
                           const PowerIterOptions& opts = {});

struct Measurement {
  Eigen::VectorXd y;
  std::optional<double> sigma2_true;
};

struct ScaledSystem {
  std::unique_ptr<SensingOperator> op;
  Eigen::VectorXd y;
  double sigma2;
  double rho;  // spectral-norm estimate of the raw sampling matrix
};

// Scales (Phi, y, sigma2) so the sensing operator H = Phi Psi / rho has unit
// spectral norm: y /= rho, sigma2 /= rho^2. The operator's certificate is a
// fresh power-iteration estimate on the scaled map.
ScaledSystem scale_to_unit_spectral_norm(Eigen::MatrixXd phi,
                                         const Synthesis& psi,
                                         Eigen::VectorXd y_raw,
                                         double sigma2_raw);

// y = H s + noise, iid N(0, sigma2); sigma2 == 0 gives exact measurements.
Measurement simulate_measurements(const SensingOperator& op,
                                  const Eigen::VectorXd& s, double sigma2,
                                  std::uint64_t seed);

}  // namespace mpcs
