#include "mpcs/tree.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "mpcs/errors.hpp"
#include "mpcs/rng.hpp"

namespace mpcs {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

HmtParams::HmtParams(double gamma2_, double eps2_, double p_root_,
                     double p_high_, double p_low_)
    : gamma2(gamma2_),
      eps2(eps2_),
      p_root(p_root_),
      p_high(p_high_),
      p_low(p_low_) {
  if (!(eps2 > 0.0) || !(gamma2 > eps2))
    throw RangeError("HmtParams: need gamma2 > eps2 > 0");
  for (double pr : {p_root, p_high, p_low})
    if (!(pr > 0.0 && pr < 1.0))
      throw RangeError("HmtParams: probabilities must lie in (0,1)");
}

int upsilon(int i1, int i2, int rows) {
  if (i1 < 1 || i1 > rows || i2 < 1)
    throw RangeError("upsilon: index outside grid");
  return (i2 - 1) * rows + i1;
}

std::pair<int, int> upsilon_inv(int i, int rows) {
  if (i < 1) throw RangeError("upsilon_inv: index outside grid");
  int i1 = (i - 1) % rows + 1;
  int i2 = (i - 1) / rows + 1;
  return {i1, i2};
}

TreeStructure build_tree(int rows, int cols, int levels) {
  if (levels < 1) throw InvalidLevelsError("build_tree: levels must be >= 1");
  const int scale = 1 << levels;
  if (rows <= 0 || cols <= 0 || rows % scale != 0 || cols % scale != 0)
    throw DimensionError("build_tree: rows and cols must be divisible by 2^levels");

  TreeStructure t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.levels_ = levels;
  t.p_ = rows * cols;
  t.parent_.assign(t.p_, -1);
  t.children_.assign(t.p_, {-1, -1, -1, -1});
  t.level_.assign(t.p_, -1);
  t.by_level_.assign(levels + 1, {});

  auto id = [rows](int i1, int i2) { return (i2 - 1) * rows + i1 - 1; };

  // Level of (i1,i2): 0 on the approximation block, l on block_l \ block_{l-1}
  // where block_l = {1..rows/2^(levels-l)} x {1..cols/2^(levels-l)}.
  for (int i2 = 1; i2 <= cols; ++i2) {
    for (int i1 = 1; i1 <= rows; ++i1) {
      int l = 0;
      while (i1 > rows >> (levels - l) || i2 > cols >> (levels - l)) ++l;
      t.level_[id(i1, i2)] = l;
    }
  }

  for (int i = 0; i < t.p_; ++i) {
    const int l = t.level_[i];
    t.by_level_[l].push_back(i);
    if (l == 0) {
      t.set_A_.push_back(i);
      continue;
    }
    t.set_T_.push_back(i);
    if (l == 1) t.set_T_root_.push_back(i);
    if (l == levels) t.set_T_leaf_.push_back(i);

    auto [i1, i2] = upsilon_inv(i + 1, rows);
    if (l > 1) t.parent_[i] = id((i1 + 1) / 2, (i2 + 1) / 2);
    if (l < levels) {
      t.children_[i] = {id(2 * i1 - 1, 2 * i2 - 1), id(2 * i1, 2 * i2 - 1),
                        id(2 * i1 - 1, 2 * i2), id(2 * i1, 2 * i2)};
    }
  }
  return t;
}

double expected_high_fraction(const HmtParams& params, int levels) {
  if (levels < 1)
    throw InvalidLevelsError("expected_high_fraction: levels must be >= 1");
  double p_level = params.p_root;
  double sum = 0.0;
  double four_l = 1.0;
  for (int l = 0; l < levels; ++l) {
    sum += four_l * p_level;
    p_level = p_level * params.p_high + (1.0 - p_level) * params.p_low;
    four_l *= 4.0;
  }
  return (1.0 + 3.0 * sum) / std::pow(4.0, levels);
}

double log_prior_q(const Eigen::VectorXi& q, const TreeStructure& tree,
                   const HmtParams& params) {
  if (q.size() != tree.size())
    throw DimensionError("log_prior_q: state vector length mismatch");

  for (int i : tree.set_A())
    if (q[i] != 1) return kNegInf;

  const double lp_root = std::log(params.p_root);
  const double lq_root = std::log1p(-params.p_root);
  const double lp_high = std::log(params.p_high);
  const double lq_high = std::log1p(-params.p_high);
  const double lp_low = std::log(params.p_low);
  const double lq_low = std::log1p(-params.p_low);

  double lp = 0.0;
  for (int i : tree.set_T()) {
    if (tree.is_root(i)) {
      lp += q[i] ? lp_root : lq_root;
    } else if (q[tree.parent(i)]) {
      lp += q[i] ? lp_high : lq_high;
    } else {
      lp += q[i] ? lp_low : lq_low;
    }
  }
  return lp;
}

StateEstimate sample_prior(const TreeStructure& tree, const HmtParams& params,
                           double sigma2, std::uint64_t seed) {
  if (!(sigma2 > 0.0)) throw RangeError("sample_prior: sigma2 must be > 0");

  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  StateEstimate est;
  est.q = Eigen::VectorXi::Zero(tree.size());
  est.s = Eigen::VectorXd::Zero(tree.size());

  for (int i : tree.set_A()) est.q[i] = 1;
  // States top-down: level order guarantees parents are drawn first.
  for (int l = 1; l <= tree.levels(); ++l) {
    for (int i : tree.level_nodes(l)) {
      double p1 = tree.is_root(i)
                      ? params.p_root
                      : (est.q[tree.parent(i)] ? params.p_high : params.p_low);
      est.q[i] = unif(rng) < p1 ? 1 : 0;
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sd_high = std::sqrt(sigma2 * params.gamma2);
  const double sd_low = std::sqrt(sigma2 * params.eps2);
  for (int i = 0; i < tree.size(); ++i)
    est.s[i] = (est.q[i] ? sd_high : sd_low) * gauss(rng);

  return est;
}

}  // namespace mpcs
