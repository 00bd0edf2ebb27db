#include "mpcs/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include "mpcs/errors.hpp"
#include "mpcs/rng.hpp"

namespace mpcs {

double nmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size())
    throw DimensionError("nmse: length mismatch");
  const double denom = truth.squaredNorm();
  if (denom == 0.0) throw ZeroSignalError("nmse: truth signal is zero");
  return (estimate - truth).squaredNorm() / denom;
}

double psnr_db(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth,
               const Synthesis& psi) {
  if (estimate.size() != truth.size())
    throw DimensionError("psnr_db: length mismatch");
  const Eigen::VectorXd image = psi.apply(truth);
  const double range = image.maxCoeff() - image.minCoeff();
  if (!(range > 0.0)) throw DegenerateError("psnr_db: zero image range");
  const double mse =
      (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse);
}

std::string to_string(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::White: return "white";
    case MatrixKind::RowCorrelated: return "row_corr";
    case MatrixKind::ColCorrelated: return "col_corr";
    case MatrixKind::StructurallyRandom: return "srm";
  }
  return "white";
}

MatrixKind matrix_kind_from_string(const std::string& name) {
  if (name == "white") return MatrixKind::White;
  if (name == "row_corr") return MatrixKind::RowCorrelated;
  if (name == "col_corr") return MatrixKind::ColCorrelated;
  if (name == "srm") return MatrixKind::StructurallyRandom;
  throw ParseError("unknown matrix kind: " + name);
}

int TrialSpec::n_measurements() const {
  return static_cast<int>(std::lround(n_over_p * p()));
}

void TrialSpec::validate() const {
  em.validate();
  build_tree(rows, cols, levels);  // throws on bad geometry
  const int n = n_measurements();
  if (n < 1 || n > p())
    throw RangeError("TrialSpec: N = round(N_over_p * p) must lie in [1, p]");
  if (kind != MatrixKind::White && kind != MatrixKind::StructurallyRandom &&
      !(corr >= 0.0 && corr < 1.0))
    throw RangeError("TrialSpec: correlation must lie in [0,1)");
  if (!(sigma2_star >= 0.0)) throw RangeError("TrialSpec: sigma2_star must be >= 0");
  const double sig = signal_sigma2 > 0.0 ? signal_sigma2 : sigma2_star;
  if (!(sig > 0.0))
    throw RangeError("TrialSpec: prior signal scale must be positive "
                     "(set signal_sigma2 when sigma2_star is 0)");
  if (n_trials < 1) throw RangeError("TrialSpec: n_trials must be >= 1");
}

namespace {

struct TrialData {
  std::unique_ptr<SensingOperator> op;
  StateEstimate truth;
  Eigen::VectorXd y;
  Synthesis psi = Synthesis::identity(1);
};

TrialData make_trial_data(const TrialSpec& spec, const TreeStructure& tree,
                          std::uint64_t trial_seed) {
  const std::uint64_t matrix_seed = derive_seed(trial_seed, 0);
  const std::uint64_t signal_seed = derive_seed(trial_seed, 1);
  const std::uint64_t noise_seed = derive_seed(trial_seed, 2);
  const int n = spec.n_measurements();
  const int p = spec.p();

  TrialData data;
  switch (spec.kind) {
    case MatrixKind::White:
      data.op = scale_to_unit_spectral_norm(gen_white_gaussian(n, p, matrix_seed),
                                            Synthesis::identity(p),
                                            Eigen::VectorXd::Zero(n), 0.0)
                    .op;
      data.psi = Synthesis::identity(p);
      break;
    case MatrixKind::RowCorrelated:
      data.op = scale_to_unit_spectral_norm(
                    gen_row_correlated(n, p, spec.corr, matrix_seed),
                    Synthesis::identity(p), Eigen::VectorXd::Zero(n), 0.0)
                    .op;
      data.psi = Synthesis::identity(p);
      break;
    case MatrixKind::ColCorrelated:
      data.op = scale_to_unit_spectral_norm(
                    gen_col_correlated(n, p, spec.corr, matrix_seed),
                    Synthesis::identity(p), Eigen::VectorXd::Zero(n), 0.0)
                    .op;
      data.psi = Synthesis::identity(p);
      break;
    case MatrixKind::StructurallyRandom:
      data.op = std::make_unique<StructurallyRandomOperator>(
          spec.rows, spec.cols, n, spec.levels, matrix_seed);
      data.psi = Synthesis::haar(spec.rows, spec.cols, spec.levels);
      break;
  }

  const double sig = spec.signal_sigma2 > 0.0 ? spec.signal_sigma2 : spec.sigma2_star;
  data.truth = sample_prior(tree, spec.model, sig, signal_seed);
  data.y = simulate_measurements(*data.op, data.truth.s, spec.sigma2_star,
                                 noise_seed)
               .y;
  return data;
}

TrialResult run_one_trial(const TrialSpec& spec, const TreeStructure& tree,
                          int trial) {
  TrialResult res;
  res.trial = trial;
  res.seed = derive_seed(spec.master_seed, static_cast<std::uint64_t>(trial));
  try {
    TrialData data = make_trial_data(spec, tree, res.seed);
    const auto t0 = std::chrono::steady_clock::now();
    GridSearchResult gs =
        grid_search(*data.op, data.y, spec.em, tree, spec.algo);
    const auto t1 = std::chrono::steady_clock::now();
    res.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    res.nmse = nmse(gs.theta.s, data.truth.s);
    res.psnr_db = psnr_db(gs.theta.s, data.truth.s, data.psi);
    res.sigma2_selected = gs.sigma2_selected;
    res.em_iters_total = gs.total_iterations;
    res.max_iter_hit = gs.any_max_iter_hit;
    if (spec.with_baselines) {
      const Eigen::VectorXd genie =
          genie_baseline(data.truth.q, *data.op, data.y, spec.model);
      res.nmse_genie = nmse(genie, data.truth.s);
      const Eigen::VectorXi all_high = Eigen::VectorXi::Ones(spec.p());
      const Eigen::VectorXd flat =
          mmse_given_q(all_high, *data.op, data.y, spec.model);
      res.nmse_allhigh = nmse(flat, data.truth.s);
    }
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

}  // namespace

std::vector<TrialResult> run_sweep(
    const TrialSpec& spec,
    const std::function<void(const TrialResult&)>& on_trial) {
  spec.validate();
  const TreeStructure tree = build_tree(spec.rows, spec.cols, spec.levels);

  std::vector<TrialResult> results(spec.n_trials);
  unsigned n_threads = spec.threads > 0
                           ? static_cast<unsigned>(spec.threads)
                           : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, spec.n_trials);

  std::atomic<int> next{0};
  std::mutex report_mutex;
  auto worker = [&]() {
    for (int t = next.fetch_add(1); t < spec.n_trials; t = next.fetch_add(1)) {
      results[t] = run_one_trial(spec, tree, t);
      if (on_trial) {
        std::lock_guard<std::mutex> lock(report_mutex);
        on_trial(results[t]);
      }
    }
  };

  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

Eigen::VectorXd genie_baseline(const Eigen::VectorXi& q_true,
                               const SensingOperator& op,
                               const Eigen::VectorXd& y,
                               const HmtParams& params) {
  return mmse_given_q(q_true, op, y, params);
}

Eigen::MatrixXd synth_image(ImageKind kind, int rows, int cols,
                            std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw DimensionError("synth_image: bad dims");
  auto rng = make_rng(seed);
  std::uniform_int_distribution<int> gray(0, 255);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd img =
      Eigen::MatrixXd::Constant(rows, cols, std::uniform_int_distribution<int>(40, 90)(rng));

  if (kind == ImageKind::Blocks) {
    const int n_blocks = 6;
    for (int b = 0; b < n_blocks; ++b) {
      const int h = 1 + static_cast<int>(unif(rng) * rows / 2);
      const int w = 1 + static_cast<int>(unif(rng) * cols / 2);
      const int r0 = static_cast<int>(unif(rng) * (rows - h));
      const int c0 = static_cast<int>(unif(rng) * (cols - w));
      img.block(r0, c0, h, w).setConstant(gray(rng));
    }
  } else {
    const int n_wedges = 3;
    constexpr double kTwoPi = 6.283185307179586;
    for (int wdg = 0; wdg < n_wedges; ++wdg) {
      const double cx = unif(rng) * rows;
      const double cy = unif(rng) * cols;
      const double angle = unif(rng) * kTwoPi;
      const double nx = std::sin(angle), ny = -std::cos(angle);
      const double value = gray(rng);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
          if ((i - cx) * nx + (j - cy) * ny > 0.0) img(i, j) = value;
    }
  }
  return img;
}

namespace {

void write_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

void write_trials_csv(std::ostream& os, const TrialSpec& spec,
                      const std::vector<TrialResult>& results,
                      bool include_timing) {
  os << "trial,seed,matrix_kind,r_or_c,N_over_p,gamma2_star,nmse,psnr_db,"
        "sigma2_selected,em_iters_total";
  if (include_timing) os << ",wall_ms";
  os << "\n";
  for (const auto& r : results) {
    os << r.trial << ',' << r.seed << ',' << to_string(spec.kind) << ',';
    write_double(os, spec.corr);
    os << ',';
    write_double(os, spec.n_over_p);
    os << ',';
    write_double(os, spec.model.gamma2);
    os << ',';
    if (r.failed) {
      os << "nan,nan,nan,0";
    } else {
      write_double(os, r.nmse);
      os << ',';
      write_double(os, r.psnr_db);
      os << ',';
      write_double(os, r.sigma2_selected);
      os << ',' << r.em_iters_total;
    }
    if (include_timing) {
      os << ',';
      write_double(os, r.wall_ms);
    }
    os << "\n";
  }
}

SweepAggregate aggregate_results(const TrialSpec& spec,
                                 const std::vector<TrialResult>& results) {
  SweepAggregate agg;
  agg.matrix_kind = to_string(spec.kind);
  agg.corr = spec.corr;
  agg.n_over_p = spec.n_over_p;
  agg.trials = static_cast<int>(results.size());

  double sum = 0.0, sum2 = 0.0, psnr_sum = 0.0, iter_sum = 0.0;
  int n_ok = 0;
  for (const auto& r : results) {
    if (r.failed) {
      ++agg.failures;
      continue;
    }
    ++n_ok;
    sum += r.nmse;
    sum2 += r.nmse * r.nmse;
    psnr_sum += r.psnr_db;
    iter_sum += r.em_iters_total;
  }
  if (n_ok > 0) {
    agg.mean_nmse = sum / n_ok;
    agg.mean_psnr_db = psnr_sum / n_ok;
    agg.mean_iters = iter_sum / n_ok;
    if (n_ok > 1) {
      const double var = (sum2 - sum * sum / n_ok) / (n_ok - 1);
      agg.stderr_nmse = std::sqrt(std::max(0.0, var) / n_ok);
    }
  }
  return agg;
}

void write_aggregate_csv(std::ostream& os,
                         const std::vector<SweepAggregate>& rows) {
  os << "matrix_kind,r_or_c,N_over_p,trials,failures,mean_nmse,stderr_nmse,"
        "mean_psnr_db,mean_iters\n";
  for (const auto& a : rows) {
    os << a.matrix_kind << ',';
    write_double(os, a.corr);
    os << ',';
    write_double(os, a.n_over_p);
    os << ',' << a.trials << ',' << a.failures << ',';
    write_double(os, a.mean_nmse);
    os << ',';
    write_double(os, a.stderr_nmse);
    os << ',';
    write_double(os, a.mean_psnr_db);
    os << ',';
    write_double(os, a.mean_iters);
    os << "\n";
  }
}

}  // namespace mpcs
