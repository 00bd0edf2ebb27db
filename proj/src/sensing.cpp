#include "mpcs/sensing.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <utility>

#include "mpcs/errors.hpp"
#include "mpcs/haar.hpp"
#include "mpcs/rng.hpp"

namespace mpcs {

// ---------------------------------------------------------------- Synthesis

Synthesis Synthesis::identity(int p) {
  if (p <= 0) throw DimensionError("Synthesis: p must be positive");
  return Synthesis(0, 0, 0, p);
}

Synthesis Synthesis::haar(int rows, int cols, int levels) {
  if (levels < 1) throw InvalidLevelsError("Synthesis: levels must be >= 1");
  const long scale = 1L << levels;
  if (rows <= 0 || cols <= 0 || rows % scale != 0 || cols % scale != 0)
    throw DimensionError("Synthesis: dims must be divisible by 2^levels");
  return Synthesis(rows, cols, levels, rows * cols);
}

Eigen::VectorXd Synthesis::apply(const Eigen::VectorXd& coeffs) const {
  if (coeffs.size() != p_) throw DimensionError("Synthesis: length mismatch");
  if (is_identity()) return coeffs;
  Eigen::Map<const Eigen::MatrixXd> m(coeffs.data(), rows_, cols_);
  Eigen::MatrixXd img = haar_idwt2(m, levels_);
  return Eigen::Map<Eigen::VectorXd>(img.data(), p_);
}

Eigen::VectorXd Synthesis::apply_adjoint(const Eigen::VectorXd& x) const {
  if (x.size() != p_) throw DimensionError("Synthesis: length mismatch");
  if (is_identity()) return x;
  Eigen::Map<const Eigen::MatrixXd> m(x.data(), rows_, cols_);
  Eigen::MatrixXd coeffs = haar_dwt2(m, levels_);
  return Eigen::Map<Eigen::VectorXd>(coeffs.data(), p_);
}

// ---------------------------------------------------------------- operators

Eigen::VectorXd SensingOperator::forward(const Eigen::VectorXd& s) const {
  Eigen::VectorXd y(n_);
  forward(s, y);
  return y;
}

Eigen::VectorXd SensingOperator::adjoint(const Eigen::VectorXd& r) const {
  Eigen::VectorXd out(p_);
  adjoint(r, out);
  return out;
}

DenseOperator::DenseOperator(Eigen::MatrixXd h)
    : SensingOperator(static_cast<int>(h.rows()), static_cast<int>(h.cols()),
                      0.0),
      h_(std::move(h)) {
  certificate_ = spectral_norm_power(h_);
}

DenseOperator::DenseOperator(Eigen::MatrixXd h, double certificate)
    : SensingOperator(static_cast<int>(h.rows()), static_cast<int>(h.cols()),
                      certificate),
      h_(std::move(h)) {}

void DenseOperator::forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const {
  if (s.size() != p_) throw DimensionError("DenseOperator: forward length mismatch");
  y.noalias() = h_ * s;
}

void DenseOperator::adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const {
  if (r.size() != n_) throw DimensionError("DenseOperator: adjoint length mismatch");
  out.noalias() = h_.transpose() * r;
}

ComposedOperator::ComposedOperator(Eigen::MatrixXd phi, Synthesis psi,
                                   double certificate)
    : SensingOperator(static_cast<int>(phi.rows()), psi.size(), certificate),
      phi_(std::move(phi)),
      psi_(psi) {
  if (phi_.cols() != psi_.size())
    throw DimensionError("ComposedOperator: Phi/Psi size mismatch");
}

void ComposedOperator::forward(const Eigen::VectorXd& s,
                               Eigen::VectorXd& y) const {
  if (s.size() != p_) throw DimensionError("ComposedOperator: forward length mismatch");
  y.noalias() = phi_ * psi_.apply(s);
}

void ComposedOperator::adjoint(const Eigen::VectorXd& r,
                               Eigen::VectorXd& out) const {
  if (r.size() != n_) throw DimensionError("ComposedOperator: adjoint length mismatch");
  out = psi_.apply_adjoint(phi_.transpose() * r);
}

StructurallyRandomOperator::StructurallyRandomOperator(int rows, int cols,
                                                       int n, int levels,
                                                       std::uint64_t seed)
    : SensingOperator(n, rows * cols, 1.0),
      rows_(rows),
      cols_(cols),
      levels_(levels) {
  if (levels < 1) throw InvalidLevelsError("StructurallyRandomOperator: levels >= 1");
  const long scale = 1L << levels;
  if (rows <= 0 || cols <= 0 || rows % scale != 0 || cols % scale != 0)
    throw DimensionError("StructurallyRandomOperator: dims must be divisible by 2^levels");
  if (n < 1 || n > p_)
    throw DimensionError("StructurallyRandomOperator: need 1 <= N <= p");

  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  signs_.resize(p_);
  for (int i = 0; i < p_; ++i) signs_[i] = unif(rng) < 0.5 ? -1.0 : 1.0;

  // N distinct coefficient indices, partial Fisher-Yates.
  std::vector<int> perm(p_);
  for (int i = 0; i < p_; ++i) perm[i] = i;
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, p_ - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  selected_.assign(perm.begin(), perm.begin() + n);
}

namespace {

// Cached FFTW plans per transform length. Plan creation is not thread-safe;
// execution through the new-array interface on distinct buffers is.
struct DctPlans {
  fftw_plan forward;   // REDFT10 (DCT-II)
  fftw_plan backward;  // REDFT01 (DCT-III)
};

const DctPlans& dct_plans(int n) {
  static std::map<int, DctPlans> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<double> a(n), b(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    DctPlans plans{
        fftw_plan_r2r_1d(n, a.data(), b.data(), FFTW_REDFT10, flags),
        fftw_plan_r2r_1d(n, a.data(), b.data(), FFTW_REDFT01, flags)};
    it = cache.emplace(n, plans).first;
  }
  return it->second;
}

// Orthonormal DCT-II, out = C in.
void dct_orthonormal(const Eigen::VectorXd& in, Eigen::VectorXd& out) {
  const int n = static_cast<int>(in.size());
  out.resize(n);
  fftw_execute_r2r(dct_plans(n).forward, const_cast<double*>(in.data()),
                   out.data());
  out[0] /= std::sqrt(4.0 * n);
  out.tail(n - 1) /= std::sqrt(2.0 * n);
}

// Transpose (= inverse) of the orthonormal DCT-II, out = C^T in.
void dct_orthonormal_adjoint(const Eigen::VectorXd& in, Eigen::VectorXd& out) {
  const int n = static_cast<int>(in.size());
  Eigen::VectorXd scaled(n);
  scaled[0] = in[0] / std::sqrt(static_cast<double>(n));
  scaled.tail(n - 1) = in.tail(n - 1) / std::sqrt(2.0 * n);
  out.resize(n);
  fftw_execute_r2r(dct_plans(n).backward, scaled.data(), out.data());
}

}  // namespace

void StructurallyRandomOperator::forward(const Eigen::VectorXd& s,
                                         Eigen::VectorXd& y) const {
  if (s.size() != p_)
    throw DimensionError("StructurallyRandomOperator: forward length mismatch");
  // H = R F D Psi with Psi = inverse Haar, D = signs, F = global DCT-II.
  Eigen::Map<const Eigen::MatrixXd> coeffs(s.data(), rows_, cols_);
  Eigen::MatrixXd img = haar_idwt2(coeffs, levels_);
  Eigen::Map<Eigen::VectorXd> v(img.data(), p_);
  v.array() *= signs_.array();
  Eigen::VectorXd f;
  dct_orthonormal(v, f);
  y.resize(n_);
  for (int i = 0; i < n_; ++i) y[i] = f[selected_[i]];
}

void StructurallyRandomOperator::adjoint(const Eigen::VectorXd& r,
                                         Eigen::VectorXd& out) const {
  if (r.size() != n_)
    throw DimensionError("StructurallyRandomOperator: adjoint length mismatch");
  Eigen::VectorXd scattered = Eigen::VectorXd::Zero(p_);
  for (int i = 0; i < n_; ++i) scattered[selected_[i]] = r[i];
  Eigen::VectorXd img_vec;
  dct_orthonormal_adjoint(scattered, img_vec);
  img_vec.array() *= signs_.array();
  Eigen::Map<const Eigen::MatrixXd> img(img_vec.data(), rows_, cols_);
  Eigen::MatrixXd w = haar_dwt2(img, levels_);
  out = Eigen::Map<const Eigen::VectorXd>(w.data(), p_);
}

// --------------------------------------------------------------- generators

Eigen::MatrixXd gen_white_gaussian(int n, int p, std::uint64_t seed) {
  if (n < 1 || p < 1) throw DimensionError("gen_white_gaussian: dims must be positive");
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(n, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < n; ++i) m(i, j) = gauss(rng);
  return m;
}

Eigen::MatrixXd gen_row_correlated(int n, int p, double r, std::uint64_t seed) {
  if (n < 1 || p < 1) throw DimensionError("gen_row_correlated: dims must be positive");
  if (!(r >= 0.0 && r < 1.0)) throw RangeError("gen_row_correlated: r must lie in [0,1)");
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double w = std::sqrt(1.0 - r * r);
  Eigen::MatrixXd m(n, p);
  // iid columns; down each column a stationary AR(1) with lag-k
  // autocovariance r^k and unit marginal variance.
  for (int j = 0; j < p; ++j) {
    m(0, j) = gauss(rng);
    for (int i = 1; i < n; ++i) m(i, j) = r * m(i - 1, j) + w * gauss(rng);
  }
  return m;
}

Eigen::MatrixXd gen_col_correlated(int n, int p, double c, std::uint64_t seed) {
  if (n < 1 || p < 1) throw DimensionError("gen_col_correlated: dims must be positive");
  if (!(c >= 0.0 && c < 1.0)) throw RangeError("gen_col_correlated: c must lie in [0,1)");
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double w = std::sqrt(1.0 - c * c);
  Eigen::MatrixXd m(n, p);
  for (int i = 0; i < n; ++i) {
    m(i, 0) = gauss(rng);
    for (int j = 1; j < p; ++j) m(i, j) = c * m(i, j - 1) + w * gauss(rng);
  }
  return m;
}

// ------------------------------------------------------------- power method

double spectral_norm_power(
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& fwd,
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& adj,
    int n, int p, const PowerIterOptions& opts) {
  auto rng = make_rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(p);
  for (int i = 0; i < p; ++i) v[i] = gauss(rng);
  v.normalize();

  Eigen::VectorXd hv(n), hthv(p);
  double lambda_prev = 0.0;
  for (int it = 0; it < opts.max_iters; ++it) {
    fwd(v, hv);
    const double lambda = hv.squaredNorm();  // Rayleigh quotient of H^T H
    if (lambda == 0.0) return 0.0;
    if (it > 0 && std::abs(lambda - lambda_prev) <= opts.tol * lambda)
      return std::sqrt(lambda);
    lambda_prev = lambda;
    adj(hv, hthv);
    v = hthv.normalized();
  }
  throw ConvergenceError("spectral_norm_power: no convergence within max_iters");
}

double spectral_norm_power(const Eigen::MatrixXd& m,
                           const PowerIterOptions& opts) {
  return spectral_norm_power(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) { out.noalias() = m * x; },
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
        out.noalias() = m.transpose() * x;
      },
      static_cast<int>(m.rows()), static_cast<int>(m.cols()), opts);
}

double spectral_norm_power(const SensingOperator& op,
                           const PowerIterOptions& opts) {
  return spectral_norm_power(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) { op.forward(x, out); },
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) { op.adjoint(x, out); },
      op.n_measurements(), op.n_coefficients(), opts);
}

// ------------------------------------------------------------------ scaling

ScaledSystem scale_to_unit_spectral_norm(Eigen::MatrixXd phi,
                                         const Synthesis& psi,
                                         Eigen::VectorXd y_raw,
                                         double sigma2_raw) {
  if (phi.cols() != psi.size())
    throw DimensionError("scale_to_unit_spectral_norm: Phi/Psi size mismatch");
  if (y_raw.size() != phi.rows())
    throw DimensionError("scale_to_unit_spectral_norm: y length mismatch");
  if (!(sigma2_raw >= 0.0))
    throw RangeError("scale_to_unit_spectral_norm: sigma2 must be >= 0");

  // rho(Phi Psi) = rho(Phi) for orthonormal Psi.
  const double rho = spectral_norm_power(phi);
  if (!(rho > 0.0))
    throw SolveError("scale_to_unit_spectral_norm: zero spectral norm estimate");

  phi /= rho;
  ScaledSystem sys;
  if (psi.is_identity()) {
    double cert = spectral_norm_power(phi);
    sys.op = std::make_unique<DenseOperator>(std::move(phi), cert);
  } else {
    ComposedOperator tmp(phi, psi, 1.0);
    double cert = spectral_norm_power(tmp);
    sys.op = std::make_unique<ComposedOperator>(std::move(phi), psi, cert);
  }
  sys.y = y_raw / rho;
  sys.sigma2 = sigma2_raw / (rho * rho);
  sys.rho = rho;
  return sys;
}

Measurement simulate_measurements(const SensingOperator& op,
                                  const Eigen::VectorXd& s, double sigma2,
                                  std::uint64_t seed) {
  if (!(sigma2 >= 0.0)) throw RangeError("simulate_measurements: sigma2 must be >= 0");
  Measurement meas;
  meas.y = op.forward(s);
  meas.sigma2_true = sigma2;
  if (sigma2 > 0.0) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2));
    for (int i = 0; i < meas.y.size(); ++i) meas.y[i] += gauss(rng);
  }
  return meas;
}

}  // namespace mpcs
