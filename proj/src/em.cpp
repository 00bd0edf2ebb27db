#include "mpcs/em.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

#include "mpcs/errors.hpp"
#include "mpcs/max_product.hpp"

namespace mpcs {

void EmConfig::validate() const {
  if (!(delta > 0.0)) throw RangeError("EmConfig: delta must be > 0");
  if (max_iters < 1) throw RangeError("EmConfig: max_iters must be >= 1");
  if (grid_k < 1) throw RangeError("EmConfig: grid_k must be >= 1");
  if (!(grid_d > 1.0)) throw RangeError("EmConfig: grid_d must be > 1");
  if (grid_refine < 0) throw RangeError("EmConfig: grid_refine must be >= 0");
}

Eigen::VectorXd estep(const Eigen::VectorXd& s, const SensingOperator& op,
                      const Eigen::VectorXd& y) {
  if (s.size() != op.n_coefficients() || y.size() != op.n_measurements())
    throw DimensionError("estep: dimension mismatch");
  Eigen::VectorXd residual = y - op.forward(s);
  return s + op.adjoint(residual);
}

double residual_quadratic(const StateEstimate& theta, const SensingOperator& op,
                          const Eigen::VectorXd& y, const HmtParams& params) {
  if (theta.s.size() != op.n_coefficients() || y.size() != op.n_measurements())
    throw DimensionError("residual_quadratic: dimension mismatch");
  double quad = (y - op.forward(theta.s)).squaredNorm();
  for (int i = 0; i < theta.s.size(); ++i)
    quad += theta.s[i] * theta.s[i] / params.rel_variance(theta.q[i]);
  return quad;
}

double log_conditional_posterior(const StateEstimate& theta, double sigma2,
                                 const SensingOperator& op,
                                 const Eigen::VectorXd& y,
                                 const TreeStructure& tree,
                                 const HmtParams& params) {
  if (!(sigma2 > 0.0))
    throw RangeError("log_conditional_posterior: sigma2 must be > 0");
  const double lq = log_prior_q(theta.q, tree, params);
  if (lq == -std::numeric_limits<double>::infinity()) return lq;
  const double quad = residual_quadratic(theta, op, y, params);
  const double n_high = static_cast<double>(theta.q.sum());
  return -0.5 * quad / sigma2 +
         0.5 * std::log(params.eps2 / params.gamma2) * n_high + lq;
}

double log_marginal_posterior(const StateEstimate& theta,
                              const SensingOperator& op,
                              const Eigen::VectorXd& y,
                              const TreeStructure& tree,
                              const HmtParams& params) {
  const double lq = log_prior_q(theta.q, tree, params);
  if (lq == -std::numeric_limits<double>::infinity()) return lq;
  const double quad = residual_quadratic(theta, op, y, params);
  if (!(quad > 0.0))
    throw DegenerateError("log_marginal_posterior: zero residual quadratic form");
  const double pn = static_cast<double>(op.n_coefficients() + op.n_measurements());
  const double n_high = static_cast<double>(theta.q.sum());
  return lq + 0.5 * std::log(params.eps2 / params.gamma2) * n_high -
         0.5 * pn * std::log(quad / pn);
}

namespace {

Eigen::VectorXd mmse_dense(const Eigen::VectorXi& q, const Eigen::MatrixXd& h,
                           const Eigen::VectorXd& y, const HmtParams& params) {
  const int n = static_cast<int>(h.rows());
  Eigen::VectorXd d(h.cols());
  for (int i = 0; i < d.size(); ++i) d[i] = params.rel_variance(q[i]);

  Eigen::MatrixXd gram = h * d.asDiagonal() * h.transpose();
  gram += Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw SolveError("mmse_given_q: Cholesky factorization failed");
  return d.asDiagonal() * (h.transpose() * llt.solve(y));
}

// CG on (D^{-1} + H^T H) s = H^T y; same solution through the matrix
// inversion lemma, never materializes H.
Eigen::VectorXd mmse_cg(const Eigen::VectorXi& q, const SensingOperator& op,
                        const Eigen::VectorXd& y, const HmtParams& params) {
  const int p = op.n_coefficients();
  Eigen::VectorXd dinv(p);
  for (int i = 0; i < p; ++i) dinv[i] = 1.0 / params.rel_variance(q[i]);

  auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return dinv.cwiseProduct(v) + op.adjoint(op.forward(v));
  };

  const Eigen::VectorXd b = op.adjoint(y);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd r = b;
  Eigen::VectorXd d = r;
  double rs = r.squaredNorm();
  const double tol2 = 1e-20 * b.squaredNorm();  // relative residual 1e-10
  const int max_iters = 20 * p;
  for (int it = 0; it < max_iters && rs > tol2; ++it) {
    Eigen::VectorXd ad = apply(d);
    const double alpha = rs / d.dot(ad);
    if (!std::isfinite(alpha))
      throw SolveError("mmse_given_q: conjugate gradient breakdown");
    x += alpha * d;
    r -= alpha * ad;
    const double rs_next = r.squaredNorm();
    d = r + (rs_next / rs) * d;
    rs = rs_next;
  }
  if (rs > tol2)
    throw ConvergenceError("mmse_given_q: conjugate gradient did not converge");
  return x;
}

}  // namespace

Eigen::VectorXd mmse_given_q(const Eigen::VectorXi& q,
                             const SensingOperator& op,
                             const Eigen::VectorXd& y,
                             const HmtParams& params) {
  if (q.size() != op.n_coefficients() || y.size() != op.n_measurements())
    throw DimensionError("mmse_given_q: dimension mismatch");
  if (const Eigen::MatrixXd* h = op.dense_matrix())
    return mmse_dense(q, *h, y, params);
  return mmse_cg(q, op, y, params);
}

double sigma2_hat(const StateEstimate& theta, const SensingOperator& op,
                  const Eigen::VectorXd& y, const HmtParams& params) {
  const double pn = static_cast<double>(op.n_coefficients() + op.n_measurements());
  return residual_quadratic(theta, op, y, params) / pn;
}

EmRunResult run_em(const SensingOperator& op, const Eigen::VectorXd& y,
                   double sigma2, const Eigen::VectorXd& s_init,
                   const EmConfig& config, const TreeStructure& tree,
                   const HmtParams& params) {
  config.validate();
  if (!(sigma2 > 0.0)) throw RangeError("run_em: sigma2 must be > 0");
  if (s_init.size() != op.n_coefficients())
    throw DimensionError("run_em: s_init length mismatch");
  if (tree.size() != op.n_coefficients())
    throw DimensionError("run_em: tree/operator size mismatch");

  const double p = static_cast<double>(op.n_coefficients());
  EmRunResult res;
  Eigen::VectorXd s = s_init;
  res.max_iter_hit = true;
  for (int j = 0; j < config.max_iters; ++j) {
    Eigen::VectorXd z = estep(s, op, y);
    res.theta = mstep(MstepInput{z, sigma2, tree, params});
    res.iterations = j + 1;
    const double metric = (res.theta.s - s).squaredNorm() / p;
    if (config.record_trace) {
      res.trace.push_back(
          {j + 1, log_conditional_posterior(res.theta, sigma2, op, y, tree, params),
           metric});
    }
    s = res.theta.s;
    if (metric < config.delta) {
      res.max_iter_hit = false;
      break;
    }
  }
  return res;
}

namespace {

struct GridState {
  GridSearchResult out;
  double best_lmp = -std::numeric_limits<double>::infinity();

  void visit(double sigma2, const EmRunResult& run, double lmp,
             const EmConfig& config) {
    const int index = static_cast<int>(out.grid.size());
    out.grid.push_back({index, sigma2, lmp, run.iterations, run.max_iter_hit, false});
    if (config.record_trace) out.traces.push_back(run.trace);
    out.total_iterations += run.iterations;
    out.any_max_iter_hit = out.any_max_iter_hit || run.max_iter_hit;
    if (lmp > best_lmp) {
      best_lmp = lmp;
      out.sigma2_selected = sigma2;
      out.theta = run.theta;
      for (auto& g : out.grid) g.selected = false;
      out.grid.back().selected = true;
    }
  }
};

}  // namespace

GridSearchResult grid_search(const SensingOperator& op,
                             const Eigen::VectorXd& y, const EmConfig& config,
                             const TreeStructure& tree,
                             const HmtParams& params) {
  config.validate();
  if (y.size() != op.n_measurements())
    throw DimensionError("grid_search: y length mismatch");
  if (y.squaredNorm() == 0.0)
    throw EmptyInputError("grid_search: y must be nonzero");

  const double pn = static_cast<double>(op.n_coefficients() + op.n_measurements());
  const double sigma2_max = y.squaredNorm() / pn;

  GridState state;
  Eigen::VectorXd s_warm = Eigen::VectorXd::Zero(op.n_coefficients());
  double sigma2 = sigma2_max;
  for (int k = 0; k < config.grid_k; ++k) {
    EmRunResult run = run_em(op, y, sigma2, s_warm, config, tree, params);
    const double lmp = log_marginal_posterior(run.theta, op, y, tree, params);
    state.visit(sigma2, run, lmp, config);
    s_warm = run.theta.s;
    sigma2 /= config.grid_d;
  }

  if (config.grid_refine > 0) {
    // Optional second pass between the geometric neighbors of the winner.
    const double center = state.out.sigma2_selected;
    const int m = config.grid_refine;
    Eigen::VectorXd s_local = state.out.theta.s;
    for (int k = 1; k <= m; ++k) {
      const double frac = static_cast<double>(k) / (m + 1) - 0.5;
      const double sigma2_ref = center * std::pow(config.grid_d, -2.0 * frac);
      EmRunResult run = run_em(op, y, sigma2_ref, s_local, config, tree, params);
      const double lmp = log_marginal_posterior(run.theta, op, y, tree, params);
      state.visit(sigma2_ref, run, lmp, config);
      s_local = run.theta.s;
    }
  }
  return state.out;
}

std::vector<OuterEmRecord> outer_em(const SensingOperator& op,
                                    const Eigen::VectorXd& y,
                                    double sigma2_init, int outer_iters,
                                    const EmConfig& config,
                                    const TreeStructure& tree,
                                    const HmtParams& params) {
  if (!(sigma2_init > 0.0)) throw RangeError("outer_em: sigma2_init must be > 0");
  std::vector<OuterEmRecord> records;
  double sigma2 = sigma2_init;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(op.n_coefficients());
  for (int t = 0; t < outer_iters; ++t) {
    EmRunResult run = run_em(op, y, sigma2, s, config, tree, params);
    records.push_back(
        {sigma2, log_marginal_posterior(run.theta, op, y, tree, params),
         run.iterations});
    s = run.theta.s;
    const double next = sigma2_hat(run.theta, op, y, params);
    if (!(next > 0.0)) break;  // exact fit; variance update degenerates
    sigma2 = next;
  }
  return records;
}

}  // namespace mpcs
