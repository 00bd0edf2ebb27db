#pragma once

#include <Eigen/Core>
#include <vector>

#include "mpcs/sensing.hpp"
#include "mpcs/tree.hpp"

namespace mpcs {

struct EmConfig {
  double delta = 1e-10;   // threshold on ||s_next - s||^2 / p
  int max_iters = 2000;
  int grid_k = 16;
  double grid_d = 2.0;    // geometric grid ratio, > 1
  bool record_trace = false;
  int grid_refine = 0;    // extra refinement points around the selected sigma2

  void validate() const;
};

struct EmIterRecord {
  int iteration;
  double log_cond_posterior;
  double conv_metric;
};

struct EmRunResult {
  StateEstimate theta;
  int iterations = 0;
  bool max_iter_hit = false;
  std::vector<EmIterRecord> trace;  // filled when record_trace is set
};

struct GridPointRecord {
  int grid_index;
  double sigma2;
  double log_marginal_posterior;
  int iterations;
  bool max_iter_hit;
  bool selected;
};

struct GridSearchResult {
  double sigma2_selected = 0.0;
  StateEstimate theta;
  std::vector<GridPointRecord> grid;
  std::vector<std::vector<EmIterRecord>> traces;  // per grid point, if recorded
  int total_iterations = 0;
  bool any_max_iter_hit = false;
};

// Backprojection expectation of the missing data: z = s + H^T (y - H s).
Eigen::VectorXd estep(const Eigen::VectorXd& s, const SensingOperator& op,
                      const Eigen::VectorXd& y);

// ||y - H s||^2 + s^T D^{-1}(q) s, the quadratic form shared by the
// posterior evaluators and the variance estimate.
double residual_quadratic(const StateEstimate& theta, const SensingOperator& op,
                          const Eigen::VectorXd& y, const HmtParams& params);

// ln p(theta | sigma2, y) up to an additive constant (fixed to 0); -inf when
// q violates the approximation-state pinning.
double log_conditional_posterior(const StateEstimate& theta, double sigma2,
                                 const SensingOperator& op,
                                 const Eigen::VectorXd& y,
                                 const TreeStructure& tree,
                                 const HmtParams& params);

// ln p(theta | y) with the noise variance integrated out, constant fixed
// to 0. Throws DegenerateError when the quadratic form vanishes.
double log_marginal_posterior(const StateEstimate& theta,
                              const SensingOperator& op,
                              const Eigen::VectorXd& y,
                              const TreeStructure& tree,
                              const HmtParams& params);

// Linear-model MMSE estimate s_bar(q) = D H^T (I_N + H D H^T)^{-1} y.
// Direct N x N solve when H is materialized, conjugate gradients on the
// equivalent (D^{-1} + H^T H) s = H^T y system otherwise.
Eigen::VectorXd mmse_given_q(const Eigen::VectorXi& q,
                             const SensingOperator& op,
                             const Eigen::VectorXd& y,
                             const HmtParams& params);

// Conditional-mode noise variance (||y - H s||^2 + s^T D^{-1} s) / (p + N).
double sigma2_hat(const StateEstimate& theta, const SensingOperator& op,
                  const Eigen::VectorXd& y, const HmtParams& params);

// EM iteration at fixed sigma2 from s_init until the convergence criterion
// or max_iters. The trace always has the per-iteration log posterior when
// record_trace is set.
EmRunResult run_em(const SensingOperator& op, const Eigen::VectorXd& y,
                   double sigma2, const Eigen::VectorXd& s_init,
                   const EmConfig& config, const TreeStructure& tree,
                   const HmtParams& params);

// Geometric grid descent from sigma2_max = ||y||^2/(p+N), warm-started, with
// the marginal posterior as the selection criterion.
GridSearchResult grid_search(const SensingOperator& op,
                             const Eigen::VectorXd& y, const EmConfig& config,
                             const TreeStructure& tree,
                             const HmtParams& params);

struct OuterEmRecord {
  double sigma2;
  double log_marginal_posterior;
  int em_iterations;
};

// Diagnostic coordinate ascent on the marginal posterior: alternate the EM
// run at fixed sigma2 with the closed-form variance update. Tends to stall
// in poor local maxima; the grid search is the default path.
std::vector<OuterEmRecord> outer_em(const SensingOperator& op,
                                    const Eigen::VectorXd& y,
                                    double sigma2_init, int outer_iters,
                                    const EmConfig& config,
                                    const TreeStructure& tree,
                                    const HmtParams& params);

}  // namespace mpcs
