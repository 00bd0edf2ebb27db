#include "mpcs/max_product.hpp"

#include <cassert>
#include <cmath>

#include "mpcs/errors.hpp"

namespace mpcs {

namespace {

// (a, b) -> (a, b) - log(exp(a) + exp(b))
inline void normalize_pair(double& a, double& b) {
  const double m = a > b ? a : b;
  const double lse = m + std::log1p(std::exp(-std::abs(a - b)));
  a -= lse;
  b -= lse;
}

struct LogParams {
  double lp_root, lq_root, lp_high, lq_high, lp_low, lq_low;
  explicit LogParams(const HmtParams& p)
      : lp_root(std::log(p.p_root)),
        lq_root(std::log1p(-p.p_root)),
        lp_high(std::log(p.p_high)),
        lq_high(std::log1p(-p.p_high)),
        lp_low(std::log(p.p_low)),
        lq_low(std::log1p(-p.p_low)) {}
};

}  // namespace

std::pair<double, double> shat_pair(double z, const HmtParams& params) {
  return {params.eps2 / (1.0 + params.eps2) * z,
          params.gamma2 / (1.0 + params.gamma2) * z};
}

std::pair<double, double> log_phi(double z, double sigma2,
                                  const HmtParams& params) {
  const double z2 = z * z;
  return {-z2 / (2.0 * sigma2 * (1.0 + params.eps2)) - 0.5 * std::log(params.eps2),
          -z2 / (2.0 * sigma2 * (1.0 + params.gamma2)) - 0.5 * std::log(params.gamma2)};
}

void upward_pass(const MstepInput& in, NodeMessages& msgs) {
  const TreeStructure& tree = in.tree;
  if (in.z.size() != tree.size())
    throw DimensionError("upward_pass: z length mismatch");
  if (!(in.sigma2 > 0.0)) throw RangeError("upward_pass: sigma2 must be > 0");

  const int p = tree.size();
  msgs.up_log.setZero(p, 2);
  msgs.eta_up_log.setZero(p, 2);
  const LogParams lp(in.params);

  // Children before parents: deepest level first.
  for (int l = tree.levels(); l >= 1; --l) {
    for (int i : tree.level_nodes(l)) {
      if (tree.has_children(i)) {
        double e0 = 0.0, e1 = 0.0;
        for (int k : tree.children(i)) {
          e0 += msgs.up_log(k, 0);
          e1 += msgs.up_log(k, 1);
        }
        msgs.eta_up_log(i, 0) = e0;
        msgs.eta_up_log(i, 1) = e1;
      }
      if (tree.is_root(i)) continue;  // roots send no upward message

      const auto [lphi0, lphi1] = log_phi(in.z[i], in.sigma2, in.params);
      const double cand0 = lphi0 + msgs.eta_up_log(i, 0);  // q_i = 0 branch
      const double cand1 = lphi1 + msgs.eta_up_log(i, 1);  // q_i = 1 branch
      double m0 = std::max(lp.lq_low + cand0, lp.lp_low + cand1);
      double m1 = std::max(lp.lq_high + cand0, lp.lp_high + cand1);
      normalize_pair(m0, m1);
      msgs.up_log(i, 0) = m0;
      msgs.up_log(i, 1) = m1;
    }
  }
}

void downward_pass(const MstepInput& in, NodeMessages& msgs) {
  const TreeStructure& tree = in.tree;
  assert(msgs.up_log.rows() == tree.size() && "upward pass must run first");

  const int p = tree.size();
  msgs.down_log.setZero(p, 2);
  const LogParams lp(in.params);

  // Parents before children: messages into level-l nodes come from level l-1.
  for (int l = 2; l <= tree.levels(); ++l) {
    for (int i : tree.level_nodes(l)) {
      const int par = tree.parent(i);
      assert(par >= 0);
      const auto [lphi0, lphi1] = log_phi(in.z[par], in.sigma2, in.params);

      // Product of upward messages from the siblings of i, by parent state.
      double sib0 = 0.0, sib1 = 0.0;
      for (int k : tree.children(par)) {
        if (k == i) continue;
        sib0 += msgs.up_log(k, 0);
        sib1 += msgs.up_log(k, 1);
      }

      // Message into the parent from above: root prior at the top level,
      // the parent's own downward message otherwise.
      double eta0, eta1;
      if (tree.is_root(par)) {
        eta0 = lp.lq_root;
        eta1 = lp.lp_root;
      } else {
        eta0 = msgs.down_log(par, 0);
        eta1 = msgs.down_log(par, 1);
      }

      const double cand0 = lphi0 + sib0 + eta0;  // parent state 0
      const double cand1 = lphi1 + sib1 + eta1;  // parent state 1
      double m0 = std::max(lp.lq_low + cand0, lp.lq_high + cand1);
      double m1 = std::max(lp.lp_low + cand0, lp.lp_high + cand1);
      normalize_pair(m0, m1);
      msgs.down_log(i, 0) = m0;
      msgs.down_log(i, 1) = m1;
    }
  }
}

StateEstimate maximize_beliefs(const MstepInput& in, NodeMessages& msgs) {
  const TreeStructure& tree = in.tree;
  const int p = tree.size();
  msgs.belief_log.setZero(p, 2);
  const LogParams lp(in.params);

  StateEstimate est;
  est.q = Eigen::VectorXi::Zero(p);
  est.s = Eigen::VectorXd::Zero(p);

  for (int i : tree.set_T()) {
    const auto [lphi0, lphi1] = log_phi(in.z[i], in.sigma2, in.params);
    double b0, b1;
    if (tree.is_root(i)) {
      b0 = lp.lq_root + lphi0 + msgs.eta_up_log(i, 0);
      b1 = lp.lp_root + lphi1 + msgs.eta_up_log(i, 1);
    } else {
      b0 = lphi0 + msgs.down_log(i, 0) + msgs.eta_up_log(i, 0);
      b1 = lphi1 + msgs.down_log(i, 1) + msgs.eta_up_log(i, 1);
    }
    normalize_pair(b0, b1);
    msgs.belief_log(i, 0) = b0;
    msgs.belief_log(i, 1) = b1;

    const auto [s0, s1] = shat_pair(in.z[i], in.params);
    if (b1 >= b0) {  // tie goes to the high state
      est.q[i] = 1;
      est.s[i] = s1;
    } else {
      est.q[i] = 0;
      est.s[i] = s0;
    }
  }
  return est;
}

StateEstimate mstep(const MstepInput& in) {
  NodeMessages msgs;
  upward_pass(in, msgs);
  downward_pass(in, msgs);
  StateEstimate est = maximize_beliefs(in, msgs);
  for (int i : in.tree.set_A()) {
    est.q[i] = 1;
    est.s[i] = shat_pair(in.z[i], in.params).second;
  }
  return est;
}

}  // namespace mpcs
