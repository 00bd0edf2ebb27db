#pragma once

#include <Eigen/Core>
#include <utility>

#include "mpcs/tree.hpp"

namespace mpcs {

// Inputs of one M step: the missing-data estimate z, the working noise
// variance, and the tree prior.
struct MstepInput {
  const Eigen::VectorXd& z;
  double sigma2;
  const TreeStructure& tree;
  const HmtParams& params;
};

// Per-node message state, log domain throughout. Each (m0, m1) pair is
// normalized so exp(m0) + exp(m1) == 1.
//   up_log[i]     message i -> parent(i), indexed by the parent's state
//   down_log[i]   message parent(i) -> i, indexed by i's state
//   eta_up_log[i] summed children messages (zero pair at leaves)
//   belief_log[i] max-marginal belief at i
struct NodeMessages {
  Eigen::ArrayX2d up_log;
  Eigen::ArrayX2d down_log;
  Eigen::ArrayX2d eta_up_log;
  Eigen::ArrayX2d belief_log;
};

// Conditional maximizers (s_hat(0), s_hat(1)) of the per-coefficient
// posterior: eps2*z/(1+eps2) and gamma2*z/(1+gamma2).
std::pair<double, double> shat_pair(double z, const HmtParams& params);

// Log node potentials (ln phi_0, ln phi_1) after maximizing out s:
// -z^2 / (2 sigma2 (1+eps2)) - ln(eps) and the gamma2 counterpart.
std::pair<double, double> log_phi(double z, double sigma2,
                                  const HmtParams& params);

// Leaves-to-roots sweep; fills up_log and eta_up_log.
void upward_pass(const MstepInput& in, NodeMessages& msgs);

// Roots-to-leaves sweep; fills down_log. Requires a completed upward pass.
void downward_pass(const MstepInput& in, NodeMessages& msgs);

// Belief maximization over the tree nodes. Ties beta(1) == beta(0) resolve
// to q = 1. Entries outside T are left at zero.
StateEstimate maximize_beliefs(const MstepInput& in, NodeMessages& msgs);

// Exact maximizer of the complete-data posterior over (q, s): approximation
// nodes in closed form, tree nodes via the two passes plus beliefs.
StateEstimate mstep(const MstepInput& in);

}  // namespace mpcs
