#pragma once

// Grid orchestration: learning curves, phase diagrams and gain maps over CHMM
// parameters, with simulation (TF, RF, 2L, ftTF) and theory (theoryTF, theoryRF)
// branches, a resumable run directory and CSV / SVG export.
//
// Run directory layout:
//   manifest.json      config, config hash, seeds, amortization counters
//   cells/<id>.json    one file per completed grid cell (all protocols, all seeds)
//   cache/             trained source networks, reused on resume
//   export/            CSV tables and SVG heatmaps

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chmm/convex.hpp"
#include "chmm/generator.hpp"
#include "chmm/replica.hpp"
#include "chmm/twolayer.hpp"

namespace chmm {

enum class Protocol { TF, RF, TwoLayer, FtTF, TheoryTF, TheoryRF };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);
bool is_theory(Protocol p);

enum class AxisName { M_target, q_teacher, eta, rho_sub, L_t, H, M_source };

std::string to_string(AxisName a);
AxisName parse_axis(const std::string& name);

struct Axis {
  AxisName name = AxisName::M_target;
  std::vector<double> values;  // M_target values are ratios M/H
  bool log_scale = false;

  /// `count` points from `lo` to `hi`, geometric when `log_scale`.
  static Axis range(AxisName name, double lo, double hi, int count, bool log_scale);
};

/// Seeds per cell keyed on M/H.
struct SeedSchedule {
  bool enabled = false;
  double low_threshold = 1.0, high_threshold = 10.0;
  int low = 50, mid = 20, high = 10;

  int count(double m_over_h) const;
};

struct ExperimentConfig {
  Index D = 1000, H = 500, L_s = 150, L_t = 150;
  TransformSpec transform{1.0, 0.3, 1.0, 0};
  Index M_source = 51200;
  double M_target = 1.0;  // ratio M/H when M_target is not an axis
  Index latent_sum = 0;   // when > 0, L_s = latent_sum - L_t
  std::vector<Axis> axes;
  std::vector<Protocol> protocols;
  std::vector<std::uint64_t> seeds;  // explicit seeds, or the base list when the schedule is on
  SeedSchedule schedule;
  int source_pool = 0;  // > 0: seeds share source_pool source realizations (seed mod pool)
  double lambda = 1e-7;
  Index n_test = 10000;
  Index n_mc = 0;  // 0 means 10·H
  MomentKind moments = MomentKind::Uncentered;
  TrainOpts source_opts = TrainOpts::source_defaults();
  TrainOpts two_layer_opts = TrainOpts::two_layer_defaults();
  TrainOpts fine_tune_opts = TrainOpts::fine_tune_defaults();
  LogisticOpts logistic;
  SolverOpts solver;

  /// Every problem found, in order; empty when valid.
  std::vector<std::string> problems() const;
  /// Throws std::invalid_argument listing all problems.
  void validate() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON dump, hex.
  std::string hash() const;

  /// Seeds used at a given M/H (schedule or explicit list).
  std::vector<std::uint64_t> seeds_for(double m_over_h) const;
};

struct SeedRecord {
  std::uint64_t seed = 0;
  double error = 0.0;
  bool converged = true;
  nlohmann::json extra;  // protocol-specific diagnostics (train loss, overlaps, ...)
};

struct CellRecord {
  std::vector<std::pair<AxisName, double>> coords;
  Protocol protocol = Protocol::TF;
  double mean_error = 0.0;
  double sem = 0.0;
  int n_seeds = 0;
  double converged_fraction = 0.0;
  std::vector<SeedRecord> per_seed;
  std::vector<std::string> failures;  // "seed N: message"

  double coord(AxisName a) const;
  /// Mean of a numeric `extra` field over seeds that report it (NaN if none).
  double mean_extra(const std::string& key) const;
};

struct RunCounters {
  int source_trainings = 0;
  int covariance_estimations = 0;
  int cells_computed = 0;
  int cells_reused = 0;
};

struct GridResult {
  ExperimentConfig config;
  std::vector<CellRecord> records;  // grid order, then protocol order
  RunCounters counters;

  /// The record for a grid point and protocol; throws if absent.
  const CellRecord& at(const std::vector<std::pair<AxisName, double>>& coords, Protocol p) const;
  const CellRecord* find(const std::vector<std::pair<AxisName, double>>& coords, Protocol p) const;
};

struct RunOptions {
  std::filesystem::path run_dir;  // empty: in-memory only
  bool resume = false;            // reuse cells/ and cache/ from an existing run_dir
  std::filesystem::path cache_dir;  // empty: run_dir/cache; may be shared between runs
  int jobs = 0;                   // 0: CHMM_LAB_JOBS, else hardware concurrency
  bool verbose = false;
};

/// Any grid (zero, one or more axes).
GridResult run_grid(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Single M_target axis.
GridResult learning_curve(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Exactly two axes.
GridResult phase_diagram(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// err_ref - err_tf: positive when TF is better.
double gain(double err_ref, double err_tf);

/// One row per (cell, protocol): axis columns, protocol, mean_error, sem, n_seeds, converged_fraction.
std::string to_csv(const GridResult& result);
void write_csv(const GridResult& result, const std::filesystem::path& path);
/// Parses a CSV written by to_csv; per-seed detail is not part of the table.
std::vector<CellRecord> read_csv(const std::filesystem::path& path);

/// SVG heatmap of gain(ref, tf) over a two-axis grid, diverging palette centered at 0.
std::string gain_heatmap_svg(const GridResult& result, Protocol ref, Protocol tf);
void write_gain_heatmap(const GridResult& result, Protocol ref, Protocol tf, const std::filesystem::path& path);

/// Loads a run directory written by run_grid (config from the manifest, cells from cells/).
GridResult load_run(const std::filesystem::path& run_dir);

/// Number of worker threads: explicit value, else CHMM_LAB_JOBS, else hardware concurrency.
int resolve_jobs(int requested);

}  // namespace chmm
