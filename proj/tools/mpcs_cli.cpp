// Command-line driver: simulate measurement sets, reconstruct signals from
// saved measurements, run Monte Carlo sweeps, and run image experiments.
//
// Every run is driven by a flat key-value config file plus command-line
// overrides; all randomness flows from one master seed expanded into named
// streams, so any output can be reproduced from its manifest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mpcs/em.hpp"
#include "mpcs/errors.hpp"
#include "mpcs/experiments.hpp"
#include "mpcs/haar.hpp"
#include "mpcs/io.hpp"
#include "mpcs/max_product.hpp"
#include "mpcs/rng.hpp"
#include "mpcs/sensing.hpp"
#include "mpcs/tree.hpp"

namespace fs = std::filesystem;
using namespace mpcs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitWarning = 1;
constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;

// Seed streams hanging off the master seed.
enum Stream : std::uint64_t { kMatrix = 1, kSignal = 2, kNoise = 3, kImage = 4 };

struct CommonOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> sigma2_fixed;
  std::optional<int> grid_k;
  std::optional<double> grid_d;
  std::optional<double> delta;
  std::optional<int> trials;
  std::string config_path;
  std::string out_dir = ".";
  std::string in_dir;
};

HmtParams algo_params(const KeyValueFile& cfg) {
  return HmtParams(cfg.get_double("gamma2", 1000.0), cfg.get_double("eps2", 0.1),
                   cfg.get_double("p_root", 0.2), cfg.get_double("p_high", 0.2),
                   cfg.get_double("p_low", 1e-5));
}

HmtParams star_params(const KeyValueFile& cfg) {
  return HmtParams(cfg.get_double("gamma2_star", 1e4),
                   cfg.get_double("eps2_star", 1.0),
                   cfg.get_double("p_root_star", 0.5),
                   cfg.get_double("p_high_star", 0.5),
                   cfg.get_double("p_low_star", 1e-4));
}

EmConfig em_config(const KeyValueFile& cfg, const CommonOverrides& ov,
                   double default_delta = 1e-10) {
  EmConfig em;
  em.delta = ov.delta.value_or(cfg.get_double("delta", default_delta));
  em.max_iters = cfg.get_int("max_iters", 2000);
  em.grid_k = ov.grid_k.value_or(cfg.get_int("grid_k", 16));
  em.grid_d = ov.grid_d.value_or(cfg.get_double("grid_d", 2.0));
  em.grid_refine = cfg.get_int("grid_refine", 0);
  em.validate();
  return em;
}

void require_readable(const std::string& path) {
  if (!fs::exists(path)) throw MissingInputError("missing file: " + path);
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

struct Problem {
  int rows, cols, levels, n, p;
  MatrixKind kind;
  double corr;
};

Problem read_problem(const KeyValueFile& cfg) {
  Problem pb;
  pb.rows = cfg.get_int("rows", 32);
  pb.cols = cfg.get_int("cols", 32);
  pb.levels = cfg.get_int("levels", 4);
  pb.p = pb.rows * pb.cols;
  pb.kind = matrix_kind_from_string(cfg.get_string("matrix_kind", "white"));
  pb.corr = cfg.get_double("corr", 0.0);
  const double n_over_p = cfg.get_double("n_over_p", 0.5);
  pb.n = static_cast<int>(std::lround(n_over_p * pb.p));
  if (pb.n < 1 || pb.n > pb.p)
    throw RangeError("config: N = round(n_over_p * p) must lie in [1, p]");
  return pb;
}

// Unit-norm operator for a problem; dense kinds go through the
// power-iteration scaling, the structurally random kind is exact.
struct BuiltOperator {
  std::unique_ptr<SensingOperator> op;
  double rho = 1.0;
  Eigen::MatrixXd phi_raw;  // empty for the structurally random kind
};

BuiltOperator build_operator(const Problem& pb, const Synthesis& psi,
                             std::uint64_t matrix_seed) {
  BuiltOperator built;
  switch (pb.kind) {
    case MatrixKind::White:
      built.phi_raw = gen_white_gaussian(pb.n, pb.p, matrix_seed);
      break;
    case MatrixKind::RowCorrelated:
      built.phi_raw = gen_row_correlated(pb.n, pb.p, pb.corr, matrix_seed);
      break;
    case MatrixKind::ColCorrelated:
      built.phi_raw = gen_col_correlated(pb.n, pb.p, pb.corr, matrix_seed);
      break;
    case MatrixKind::StructurallyRandom:
      built.op = std::make_unique<StructurallyRandomOperator>(
          pb.rows, pb.cols, pb.n, pb.levels, matrix_seed);
      return built;
  }
  auto sys = scale_to_unit_spectral_norm(built.phi_raw, psi,
                                         Eigen::VectorXd::Zero(pb.n), 0.0);
  built.op = std::move(sys.op);
  built.rho = sys.rho;
  return built;
}

void write_grid_trace_csv(const std::string& path, const GridSearchResult& gs) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "grid_index,sigma2,log_marginal_posterior,iters,selected_flag\n";
  char buf[96];
  for (const auto& g : gs.grid) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d,%d\n", g.grid_index,
                  g.sigma2, g.log_marginal_posterior, g.iterations,
                  g.selected ? 1 : 0);
    os << buf;
  }
}

void write_iter_trace_csv(const std::string& path, const GridSearchResult& gs) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "grid_index,sigma2,iteration,log_cond_posterior,conv_metric\n";
  char buf[128];
  for (size_t k = 0; k < gs.traces.size(); ++k) {
    for (const auto& it : gs.traces[k]) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%d,%.17g,%.17g\n", k,
                    gs.grid[k].sigma2, it.iteration, it.log_cond_posterior,
                    it.conv_metric);
      os << buf;
    }
  }
}

// ------------------------------------------------------------------ simulate

int cmd_simulate(const CommonOverrides& ov) {
  KeyValueFile cfg = KeyValueFile::load(ov.config_path);
  const Problem pb = read_problem(cfg);
  const TreeStructure tree = build_tree(pb.rows, pb.cols, pb.levels);
  const HmtParams model = star_params(cfg);
  const double sigma2_star = cfg.get_double("sigma2_star", 1e-6);
  const double signal_sigma2 = cfg.get_double("signal_sigma2", sigma2_star);
  if (!(signal_sigma2 > 0.0))
    throw RangeError("config: signal_sigma2 must be positive "
                     "(set it explicitly when sigma2_star = 0)");
  const std::uint64_t seed = ov.seed.value_or(cfg.get_u64("seed", 1));

  ensure_out_dir(ov.out_dir);
  const Synthesis psi = pb.kind == MatrixKind::StructurallyRandom
                            ? Synthesis::haar(pb.rows, pb.cols, pb.levels)
                            : Synthesis::identity(pb.p);
  BuiltOperator built = build_operator(pb, psi, derive_seed(seed, kMatrix));

  StateEstimate truth =
      sample_prior(tree, model, signal_sigma2, derive_seed(seed, kSignal));
  Measurement meas = simulate_measurements(*built.op, truth.s, sigma2_star,
                                           derive_seed(seed, kNoise));

  if (built.phi_raw.size() > 0)
    save_matrix_binary(join(ov.out_dir, "phi.mpcs"), built.phi_raw);
  save_vector_binary(join(ov.out_dir, "s_true.mpcs"), truth.s);
  save_vector_binary(join(ov.out_dir, "q_true.mpcs"), truth.q.cast<double>());
  save_vector_binary(join(ov.out_dir, "y.mpcs"), meas.y);

  KeyValueFile manifest;
  manifest.set("format", "mpcs-sim-1");
  manifest.set_int("rows", pb.rows);
  manifest.set_int("cols", pb.cols);
  manifest.set_int("levels", pb.levels);
  manifest.set("matrix_kind", to_string(pb.kind));
  manifest.set_double("corr", pb.corr);
  manifest.set_int("n", pb.n);
  manifest.set_int("p", pb.p);
  manifest.set_double("sigma2_star", sigma2_star);
  manifest.set_double("signal_sigma2", signal_sigma2);
  manifest.set_double("gamma2_star", model.gamma2);
  manifest.set_double("eps2_star", model.eps2);
  manifest.set_double("p_root_star", model.p_root);
  manifest.set_double("p_high_star", model.p_high);
  manifest.set_double("p_low_star", model.p_low);
  manifest.set_u64("seed", seed);
  manifest.set_u64("matrix_seed", derive_seed(seed, kMatrix));
  manifest.set_double("rho", built.rho);
  manifest.set("y_file", "y.mpcs");
  manifest.set("s_true_file", "s_true.mpcs");
  manifest.set("q_true_file", "q_true.mpcs");
  if (built.phi_raw.size() > 0) manifest.set("phi_file", "phi.mpcs");
  manifest.save(join(ov.out_dir, "manifest.txt"));

  std::printf("simulate: wrote %s (p=%d, N=%d, kind=%s, seed=%llu)\n",
              ov.out_dir.c_str(), pb.p, pb.n, to_string(pb.kind).c_str(),
              static_cast<unsigned long long>(seed));
  return kExitOk;
}

// --------------------------------------------------------------- reconstruct

int cmd_reconstruct(const CommonOverrides& ov) {
  KeyValueFile cfg = KeyValueFile::load(ov.config_path);
  const std::string manifest_path = join(ov.in_dir, "manifest.txt");
  require_readable(manifest_path);
  KeyValueFile manifest = KeyValueFile::load(manifest_path);

  const int rows = manifest.get_int("rows");
  const int cols = manifest.get_int("cols");
  const int levels = manifest.get_int("levels");
  const int n = manifest.get_int("n");
  const int p = manifest.get_int("p");
  const MatrixKind kind = matrix_kind_from_string(manifest.get_string("matrix_kind"));
  const TreeStructure tree = build_tree(rows, cols, levels);

  const Synthesis psi = kind == MatrixKind::StructurallyRandom
                            ? Synthesis::haar(rows, cols, levels)
                            : Synthesis::identity(p);

  std::unique_ptr<SensingOperator> op;
  if (kind == MatrixKind::StructurallyRandom) {
    op = std::make_unique<StructurallyRandomOperator>(
        rows, cols, n, levels, manifest.get_u64("matrix_seed"));
  } else {
    const std::string phi_path = join(ov.in_dir, manifest.get_string("phi_file"));
    require_readable(phi_path);
    Eigen::MatrixXd phi = load_matrix_binary(phi_path);
    if (phi.rows() != n || phi.cols() != p)
      throw DimensionError("dimension mismatch in " + phi_path);
    op = scale_to_unit_spectral_norm(std::move(phi), psi,
                                     Eigen::VectorXd::Zero(n), 0.0)
             .op;
  }

  const std::string y_path = join(ov.in_dir, manifest.get_string("y_file", "y.mpcs"));
  require_readable(y_path);
  Eigen::VectorXd y = load_vector_binary(y_path);
  if (y.size() != n) throw DimensionError("dimension mismatch in " + y_path);

  const HmtParams tuning = algo_params(cfg);
  EmConfig em = em_config(cfg, ov);
  em.record_trace = true;

  ensure_out_dir(ov.out_dir);
  GridSearchResult gs;
  if (ov.sigma2_fixed) {
    if (!(*ov.sigma2_fixed > 0.0))
      throw RangeError("--sigma2-fixed must be positive");
    EmRunResult run = run_em(*op, y, *ov.sigma2_fixed,
                             Eigen::VectorXd::Zero(p), em, tree, tuning);
    gs.sigma2_selected = *ov.sigma2_fixed;
    gs.theta = run.theta;
    gs.grid.push_back({0, *ov.sigma2_fixed,
                       log_marginal_posterior(run.theta, *op, y, tree, tuning),
                       run.iterations, run.max_iter_hit, true});
    gs.traces.push_back(run.trace);
    gs.total_iterations = run.iterations;
    gs.any_max_iter_hit = run.max_iter_hit;
  } else {
    gs = grid_search(*op, y, em, tree, tuning);
  }

  save_vector_binary(join(ov.out_dir, "s_hat.mpcs"), gs.theta.s);
  save_vector_binary(join(ov.out_dir, "q_hat.mpcs"), gs.theta.q.cast<double>());
  write_grid_trace_csv(join(ov.out_dir, "trace_grid.csv"), gs);
  write_iter_trace_csv(join(ov.out_dir, "trace_iters.csv"), gs);

  KeyValueFile est;
  est.set("format", "mpcs-estimate-1");
  est.set_double("sigma2_selected", gs.sigma2_selected);
  est.set_int("em_iters_total", gs.total_iterations);
  est.set_int("max_iter_warning", gs.any_max_iter_hit ? 1 : 0);
  est.set_int("n_high", gs.theta.q.sum());

  std::printf("reconstruct: sigma2_selected=%.6g iters=%d high=%d\n",
              gs.sigma2_selected, gs.total_iterations, gs.theta.q.sum());

  const std::string s_true_path =
      join(ov.in_dir, manifest.get_string("s_true_file", "s_true.mpcs"));
  if (fs::exists(s_true_path)) {
    Eigen::VectorXd s_true = load_vector_binary(s_true_path);
    if (s_true.size() != p)
      throw DimensionError("dimension mismatch in " + s_true_path);
    const double err = nmse(gs.theta.s, s_true);
    const double psnr = psnr_db(gs.theta.s, s_true, psi);
    est.set_double("nmse", err);
    est.set_double("psnr_db", psnr);
    std::printf("reconstruct: NMSE=%.6g PSNR=%.2f dB\n", err, psnr);
  }
  est.save(join(ov.out_dir, "estimate.txt"));

  return gs.any_max_iter_hit ? kExitWarning : kExitOk;
}

// --------------------------------------------------------------------- sweep

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
  if (values.empty()) throw ParseError("empty list in config");
  return values;
}

int cmd_sweep(const CommonOverrides& ov) {
  KeyValueFile cfg = KeyValueFile::load(ov.config_path);
  TrialSpec base(star_params(cfg), algo_params(cfg));
  base.rows = cfg.get_int("rows", 32);
  base.cols = cfg.get_int("cols", 32);
  base.levels = cfg.get_int("levels", 4);
  base.kind = matrix_kind_from_string(cfg.get_string("matrix_kind", "white"));
  base.corr = cfg.get_double("corr", 0.0);
  base.sigma2_star = cfg.get_double("sigma2_star", 1e-6);
  base.signal_sigma2 = cfg.get_double("signal_sigma2", 0.0);
  base.em = em_config(cfg, ov);
  base.master_seed = ov.seed.value_or(cfg.get_u64("seed", 1));
  base.n_trials = ov.trials.value_or(cfg.get_int("trials", 50));
  base.threads = ov.threads.value_or(cfg.get_int("threads", 0));

  const std::vector<double> n_over_p_list = parse_list(
      cfg.get_string("n_over_p_list", cfg.get_string("n_over_p", "0.5")));

  ensure_out_dir(ov.out_dir);
  std::ofstream trials_csv(join(ov.out_dir, "trials.csv"));
  if (!trials_csv) throw IoError("cannot open trials.csv for writing");
  std::vector<SweepAggregate> aggregates;

  bool any_warning = false;
  bool first_block = true;
  for (double n_over_p : n_over_p_list) {
    TrialSpec spec = base;
    spec.n_over_p = n_over_p;
    // Decorrelate trials across sweep points.
    spec.master_seed = derive_seed(
        base.master_seed, static_cast<std::uint64_t>(std::llround(n_over_p * 1e6)));
    spec.validate();
    std::printf("sweep: kind=%s N/p=%.3f trials=%d\n",
                to_string(spec.kind).c_str(), n_over_p, spec.n_trials);
    auto results = run_sweep(spec, [](const TrialResult& r) {
      if (r.failed)
        std::printf("  trial %d FAILED: %s\n", r.trial, r.error.c_str());
      else
        std::printf("  trial %d nmse=%.4g psnr=%.2f iters=%d (%.0f ms)\n",
                    r.trial, r.nmse, r.psnr_db, r.em_iters_total, r.wall_ms);
      std::fflush(stdout);
    });
    std::ostringstream block;
    write_trials_csv(block, spec, results, /*include_timing=*/true);
    std::string text = block.str();
    if (!first_block) text.erase(0, text.find('\n') + 1);  // one shared header
    trials_csv << text;
    first_block = false;
    aggregates.push_back(aggregate_results(spec, results));
    for (const auto& r : results) any_warning |= r.max_iter_hit || r.failed;
  }

  std::ofstream agg_csv(join(ov.out_dir, "aggregate.csv"));
  if (!agg_csv) throw IoError("cannot open aggregate.csv for writing");
  write_aggregate_csv(agg_csv, aggregates);

  for (const auto& a : aggregates)
    std::printf("sweep: N/p=%.3f mean NMSE=%.5g (+-%.2g), failures=%d\n",
                a.n_over_p, a.mean_nmse, a.stderr_nmse, a.failures);
  return any_warning ? kExitWarning : kExitOk;
}

// --------------------------------------------------------------------- image

int cmd_image(const CommonOverrides& ov) {
  KeyValueFile cfg = KeyValueFile::load(ov.config_path);
  const std::string kind_name = cfg.get_string("image_kind", "blocks");
  const std::uint64_t seed = ov.seed.value_or(cfg.get_u64("seed", 1));

  Eigen::MatrixXd image;
  if (kind_name == "file") {
    const std::string path = cfg.get_string("image_path");
    require_readable(path);
    image = read_pgm(path);
  } else {
    const int rows = cfg.get_int("rows", 64);
    const int cols = cfg.get_int("cols", 64);
    image = synth_image(kind_name == "wedges" ? ImageKind::Wedges : ImageKind::Blocks,
                        rows, cols, derive_seed(seed, kImage));
  }

  Problem pb;
  pb.rows = static_cast<int>(image.rows());
  pb.cols = static_cast<int>(image.cols());
  pb.levels = cfg.get_int("levels", 4);
  pb.p = pb.rows * pb.cols;
  pb.kind = matrix_kind_from_string(cfg.get_string("matrix_kind", "srm"));
  pb.corr = cfg.get_double("corr", 0.0);
  const double n_over_p = cfg.get_double("n_over_p", 0.35);
  pb.n = static_cast<int>(std::lround(n_over_p * pb.p));
  if (pb.n < 1 || pb.n > pb.p)
    throw RangeError("config: N = round(n_over_p * p) must lie in [1, p]");
  if (pb.rows % (1 << pb.levels) != 0 || pb.cols % (1 << pb.levels) != 0)
    throw DimensionError("image dims must be divisible by 2^levels");

  const TreeStructure tree = build_tree(pb.rows, pb.cols, pb.levels);
  const Synthesis psi = Synthesis::haar(pb.rows, pb.cols, pb.levels);

  // Zero-mean pixels in the synthesis domain; analysis gives the coefficients.
  const double mean = image.mean();
  Eigen::MatrixXd centered = image.array() - mean;
  Eigen::MatrixXd coeffs = haar_dwt2(centered, pb.levels);
  Eigen::VectorXd s_true = Eigen::Map<Eigen::VectorXd>(coeffs.data(), pb.p);

  BuiltOperator built = build_operator(pb, psi, derive_seed(seed, kMatrix));
  const double sigma2_star = cfg.get_double("sigma2_star", 0.0);
  Eigen::VectorXd y = simulate_measurements(*built.op, s_true, sigma2_star,
                                            derive_seed(seed, kNoise))
                          .y;

  // Default convergence threshold for image-sized problems.
  EmConfig em = em_config(cfg, ov, pb.p > 16384 ? 0.1 : 0.01);
  em.record_trace = cfg.get_int("record_trace", 0) != 0;
  const HmtParams tuning = algo_params(cfg);

  GridSearchResult gs = grid_search(*built.op, y, em, tree, tuning);

  const double psnr = psnr_db(gs.theta.s, s_true, psi);
  const double err = nmse(gs.theta.s, s_true);

  ensure_out_dir(ov.out_dir);
  Eigen::VectorXd recon_pixels = psi.apply(gs.theta.s);
  Eigen::Map<Eigen::MatrixXd> recon(recon_pixels.data(), pb.rows, pb.cols);
  write_pgm(join(ov.out_dir, "original.pgm"), image);
  write_pgm(join(ov.out_dir, "recon.pgm"), recon.array() + mean);
  if (em.record_trace) {
    write_grid_trace_csv(join(ov.out_dir, "trace_grid.csv"), gs);
    write_iter_trace_csv(join(ov.out_dir, "trace_iters.csv"), gs);
  }

  KeyValueFile metrics;
  metrics.set("format", "mpcs-image-1");
  metrics.set_double("psnr_db", psnr);
  metrics.set_double("nmse", err);
  metrics.set_double("sigma2_selected", gs.sigma2_selected);
  metrics.set_int("em_iters_total", gs.total_iterations);
  metrics.set_int("max_iter_warning", gs.any_max_iter_hit ? 1 : 0);
  metrics.set_u64("seed", seed);
  metrics.save(join(ov.out_dir, "metrics.txt"));

  std::printf("image: %dx%d N/p=%.3f kind=%s PSNR=%.2f dB NMSE=%.5g iters=%d\n",
              pb.rows, pb.cols, n_over_p, to_string(pb.kind).c_str(), psnr, err,
              gs.total_iterations);
  return gs.any_max_iter_hit ? kExitWarning : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-tree compressive sensing reconstruction toolkit"};
  app.require_subcommand(1);

  CommonOverrides ov;
  auto add_common = [&](CLI::App* sub, bool needs_in) {
    sub->add_option("--config", ov.config_path, "flat key=value config file")
        ->required();
    sub->add_option("--out", ov.out_dir, "output directory");
    sub->add_option("--seed", ov.seed, "master seed override");
    sub->add_option("--threads", ov.threads, "worker threads (sweep)");
    sub->add_option("--grid-k", ov.grid_k, "grid length override");
    sub->add_option("--grid-d", ov.grid_d, "grid ratio override");
    sub->add_option("--delta", ov.delta, "convergence threshold override");
    sub->add_option("--trials", ov.trials, "Monte Carlo trials override");
    sub->add_option("--sigma2-fixed", ov.sigma2_fixed,
                    "skip the grid search and run at this noise variance");
    if (needs_in)
      sub->add_option("--in", ov.in_dir, "simulation directory")->required();
  };

  CLI::App* sim = app.add_subcommand("simulate", "generate a measurement set");
  add_common(sim, false);
  CLI::App* rec = app.add_subcommand("reconstruct", "reconstruct from saved data");
  add_common(rec, true);
  CLI::App* swp = app.add_subcommand("sweep", "Monte Carlo NMSE sweep");
  add_common(swp, false);
  CLI::App* img = app.add_subcommand("image", "synthetic/PGM image experiment");
  add_common(img, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(ov);
    if (rec->parsed()) return cmd_reconstruct(ov);
    if (swp->parsed()) return cmd_sweep(ov);
    if (img->parsed()) return cmd_image(ov);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitOk;
}
