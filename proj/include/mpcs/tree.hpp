#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace mpcs {

// Tuning constants of the Markov-tree signal model: relative variances of the
// large/small coefficient priors (relative to the noise variance) and the
// root / high-parent / low-parent transition probabilities.
struct HmtParams {
  double gamma2;
  double eps2;
  double p_root;
  double p_high;
  double p_low;

  HmtParams(double gamma2_, double eps2_, double p_root_, double p_high_,
            double p_low_);

  // diag(D(q)) entry for one state.
  double rel_variance(int q) const { return q ? gamma2 : eps2; }
};

// Paired estimate (q, s): binary states and real coefficients, both length p.
struct StateEstimate {
  Eigen::VectorXi q;
  Eigen::VectorXd s;
};

// Columnwise linearization of 2-D grid indices; 1-based on both sides.
int upsilon(int i1, int i2, int rows);
std::pair<int, int> upsilon_inv(int i, int rows);

// Quadtree index algebra over a rows x cols coefficient grid with `levels`
// decomposition levels. Node ids are 0-based (id = upsilon(i1,i2,rows) - 1).
//
// Nodes split into the approximation set A (states pinned to 1), and the
// tree set T = everything else, organized as |T_root| independent 4-ary
// trees of depth `levels`: roots at level 1, leaves at level `levels`.
class TreeStructure {
 public:
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int levels() const { return levels_; }
  int size() const { return p_; }

  bool in_A(int i) const { return level_[i] == 0; }
  bool in_T(int i) const { return level_[i] != 0; }
  bool is_root(int i) const { return level_[i] == 1; }
  bool is_leaf(int i) const { return level_[i] == levels_; }
  int level(int i) const { return level_[i]; }

  // Parent within T; -1 for A nodes and roots.
  int parent(int i) const { return parent_[i]; }
  // Four children for non-leaf T nodes; empty span for leaves and A nodes.
  const std::array<int, 4>& children(int i) const { return children_[i]; }
  bool has_children(int i) const { return in_T(i) && !is_leaf(i); }

  const std::vector<int>& set_A() const { return set_A_; }
  const std::vector<int>& set_T_root() const { return set_T_root_; }
  const std::vector<int>& set_T() const { return set_T_; }
  const std::vector<int>& set_T_leaf() const { return set_T_leaf_; }

  // Nodes of tree level l (1-based), ascending id. Level order is a valid
  // message schedule: children of level-l nodes are exactly level l+1.
  const std::vector<int>& level_nodes(int l) const { return by_level_[l]; }

  friend TreeStructure build_tree(int rows, int cols, int levels);

 private:
  int rows_ = 0, cols_ = 0, levels_ = 0, p_ = 0;
  std::vector<int> parent_;
  std::vector<std::array<int, 4>> children_;
  std::vector<int> level_;
  std::vector<int> set_A_, set_T_root_, set_T_, set_T_leaf_;
  std::vector<std::vector<int>> by_level_;
};

TreeStructure build_tree(int rows, int cols, int levels);

// Expected fraction of high states E[sum q_i]/p under the tree prior.
double expected_high_fraction(const HmtParams& params, int levels);

// Log of the prior pmf of q, additive constant fixed to 0. Returns -inf when
// any approximation state is not 1.
double log_prior_q(const Eigen::VectorXi& q, const TreeStructure& tree,
                   const HmtParams& params);

// Draws (q, s) from the prior: q top-down through the trees, then
// s_i ~ N(0, sigma2 * gamma2) or N(0, sigma2 * eps2) given q_i.
StateEstimate sample_prior(const TreeStructure& tree, const HmtParams& params,
                           double sigma2, std::uint64_t seed);

}  // namespace mpcs
