#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mpcs/em.hpp"
#include "mpcs/sensing.hpp"
#include "mpcs/tree.hpp"

namespace mpcs {

// ||estimate - truth||^2 / ||truth||^2.
double nmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

// 10 log10( range(Psi truth)^2 / (||estimate - truth||^2 / p) ); +inf on
// exact recovery.
double psnr_db(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth,
               const Synthesis& psi);

enum class MatrixKind { White, RowCorrelated, ColCorrelated, StructurallyRandom };

std::string to_string(MatrixKind kind);
MatrixKind matrix_kind_from_string(const std::string& name);

struct TrialSpec {
  int rows = 32, cols = 32, levels = 4;
  MatrixKind kind = MatrixKind::White;
  double corr = 0.0;          // r or c for the correlated families
  double n_over_p = 0.5;

  HmtParams model;            // data-generating parameters
  double sigma2_star = 1e-6;  // measurement noise variance
  double signal_sigma2 = 0.0; // prior scale for the signal; defaults to sigma2_star

  HmtParams algo;             // reconstruction tuning parameters
  EmConfig em;

  std::uint64_t master_seed = 1;
  int n_trials = 50;
  int threads = 0;            // 0 = hardware concurrency
  bool with_baselines = false;

  TrialSpec(HmtParams model_, HmtParams algo_)
      : model(model_), algo(algo_) {}

  int p() const { return rows * cols; }
  int n_measurements() const;
  void validate() const;
};

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  double nmse = 0.0;
  double psnr_db = 0.0;
  double sigma2_selected = 0.0;
  int em_iters_total = 0;
  double wall_ms = 0.0;
  bool max_iter_hit = false;
  bool failed = false;
  std::string error;
  // Filled when TrialSpec::with_baselines is set.
  double nmse_genie = 0.0;
  double nmse_allhigh = 0.0;
};

// Fresh operator/signal/measurement per trial from per-trial seed streams,
// reconstruction via grid search, metrics per trial. Deterministic for a
// given spec regardless of thread count; per-trial failures are recorded and
// the sweep continues.
std::vector<TrialResult> run_sweep(
    const TrialSpec& spec,
    const std::function<void(const TrialResult&)>& on_trial = nullptr);

// MMSE solve with the true states; benchmark anchor for the sweeps.
Eigen::VectorXd genie_baseline(const Eigen::VectorXi& q_true,
                               const SensingOperator& op,
                               const Eigen::VectorXd& y,
                               const HmtParams& params);

enum class ImageKind { Blocks, Wedges };

// Piecewise-constant synthetic grayscale image with integer values in
// [0, 255]; stands in for natural test images.
Eigen::MatrixXd synth_image(ImageKind kind, int rows, int cols,
                            std::uint64_t seed);

// Per-trial CSV; wall_ms is the only nondeterministic column, so byte-level
// reproducibility checks should pass include_timing = false.
void write_trials_csv(std::ostream& os, const TrialSpec& spec,
                      const std::vector<TrialResult>& results,
                      bool include_timing = true);

struct SweepAggregate {
  std::string matrix_kind;
  double corr = 0.0;
  double n_over_p = 0.0;
  int trials = 0;
  int failures = 0;
  double mean_nmse = 0.0;
  double stderr_nmse = 0.0;
  double mean_psnr_db = 0.0;
  double mean_iters = 0.0;
};

SweepAggregate aggregate_results(const TrialSpec& spec,
                                 const std::vector<TrialResult>& results);
void write_aggregate_csv(std::ostream& os,
                         const std::vector<SweepAggregate>& rows);

}  // namespace mpcs
