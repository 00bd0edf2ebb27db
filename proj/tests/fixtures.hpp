// Shared instance builders for the EM / experiment test suites.
#pragma once

#include <memory>

#include "mpcs/em.hpp"
#include "mpcs/rng.hpp"
#include "mpcs/sensing.hpp"
#include "mpcs/tree.hpp"

namespace fixtures {

inline mpcs::HmtParams tuning_params() {
  return mpcs::HmtParams(1000.0, 0.1, 0.2, 0.2, 1e-5);
}

inline mpcs::HmtParams star_params() {
  return mpcs::HmtParams(1e4, 1.0, 0.5, 0.5, 1e-4);
}

struct Instance {
  mpcs::TreeStructure tree;
  std::unique_ptr<mpcs::SensingOperator> op;
  mpcs::StateEstimate truth;
  Eigen::VectorXd y;
  double sigma2_star;
};

// White Gaussian operator scaled to unit spectral norm, signal from the
// tree prior, noisy measurements. The default scale puts the large
// coefficients at standard deviation ~1000, far above the absolute
// convergence threshold delta.
inline Instance make_white_instance(int rows, int cols, int levels, int n,
                                    std::uint64_t seed,
                                    double sigma2_star = 100.0) {
  Instance inst{mpcs::build_tree(rows, cols, levels), nullptr, {}, {}, sigma2_star};
  const int p = rows * cols;
  auto sys = mpcs::scale_to_unit_spectral_norm(
      mpcs::gen_white_gaussian(n, p, mpcs::derive_seed(seed, 0)),
      mpcs::Synthesis::identity(p), Eigen::VectorXd::Zero(n), 0.0);
  inst.op = std::move(sys.op);
  inst.truth = mpcs::sample_prior(inst.tree, star_params(), sigma2_star,
                                  mpcs::derive_seed(seed, 1));
  inst.y = mpcs::simulate_measurements(*inst.op, inst.truth.s, sigma2_star,
                                       mpcs::derive_seed(seed, 2))
               .y;
  return inst;
}

// Adapter that hides the dense matrix, forcing matrix-free code paths.
class OpaqueOperator final : public mpcs::SensingOperator {
 public:
  explicit OpaqueOperator(const mpcs::SensingOperator& inner)
      : mpcs::SensingOperator(inner.n_measurements(), inner.n_coefficients(),
                              inner.spectral_norm_certificate()),
        inner_(inner) {}
  void forward(const Eigen::VectorXd& s, Eigen::VectorXd& y) const override {
    inner_.forward(s, y);
  }
  void adjoint(const Eigen::VectorXd& r, Eigen::VectorXd& out) const override {
    inner_.adjoint(r, out);
  }

 private:
  const mpcs::SensingOperator& inner_;
};

}  // namespace fixtures
