#include "chmm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "chmm/container.hpp"
#include "chmm/convex.hpp"
#include "chmm/equivalence.hpp"
#include "chmm/experiments.hpp"
#include "chmm/generator.hpp"
#include "chmm/realdata.hpp"
#include "chmm/rng.hpp"
#include "chmm/twolayer.hpp"

namespace chmm {

namespace fs = std::filesystem;

std::vector<IniEntry> read_ini(const fs::path& path, std::vector<std::string>& errors) {
  std::ifstream in(path);
  if (!in) {
    errors.push_back("cannot read config file " + path.string());
    return {};
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<IniEntry> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = path.filename().string() + ":" + std::to_string(n) + ": ";
    if (line[0] == '[') {
      errors.push_back(where + "sections are not supported (flat key = value only)");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) {
      errors.push_back(where + "empty key");
      continue;
    }
    out.push_back({key, trim(line.substr(eq + 1)), n});
  }
  return out;
}

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  int jobs = 0;
  bool verbose = false;
  bool resume = false;
};

// Flag values that map onto an ExperimentConfig.
struct ExperimentFlags {
  ExperimentConfig cfg;
  std::vector<std::string> protocols;
  int n_seeds = 1;
  std::string schedule_counts = "50,20,10";
  std::string schedule_thresholds = "1,10";
  bool centered = false;
  std::string M_axis;               // curve, theory
  std::vector<std::string> axes;    // phase
  std::string gain_ref = "RF", gain_tf = "TF";
};

void add_common(CLI::App* app, Common& c, bool resumable) {
  app->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--config", c.config, "Flat key = value config file (keys are flag names)");
  app->add_option("--jobs", c.jobs, "Worker threads (default: CHMM_LAB_JOBS, else all cores)");
  app->add_flag("--verbose", c.verbose, "Progress on stderr");
  if (resumable) app->add_flag("--resume", c.resume, "Reuse completed cells in --out");
}

void add_train_opts(CLI::App* app, const std::string& prefix, TrainOpts& o, bool early_stop_flags) {
  app->add_option("--" + prefix + "-lr", o.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--" + prefix + "-batch", o.batch_size, "Mini-batch size")->capture_default_str();
  app->add_option("--" + prefix + "-epochs", o.max_epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--" + prefix + "-l2", o.l2_lambda, "L2 penalty on the second layer")->capture_default_str();
  if (early_stop_flags) {
    app->add_option("--" + prefix + "-patience", o.patience, "Early-stopping patience")->capture_default_str();
    app->add_option("--" + prefix + "-holdout", o.holdout_fraction, "Early-stopping holdout fraction")
        ->capture_default_str();
  }
}

void add_model_dims(CLI::App* app, ExperimentConfig& c) {
  app->add_option("--D", c.D, "Input dimension")->capture_default_str();
  app->add_option("--H", c.H, "Hidden units")->capture_default_str();
  app->add_option("--L-s", c.L_s, "Source latent dimension")->capture_default_str();
  app->add_option("--L-t", c.L_t, "Target latent dimension")->capture_default_str();
  app->add_option("--latent-sum", c.latent_sum, "If > 0, L_s = latent-sum - L_t")->capture_default_str();
  app->add_option("--eta", c.transform.eta, "Feature retention")->capture_default_str();
  app->add_option("--rho-sub", c.transform.rho_sub, "Fraction of substituted features")->capture_default_str();
  app->add_option("--q-teacher", c.transform.q_teacher, "Teacher alignment")->capture_default_str();
  app->add_option("--M-source", c.M_source, "Source training samples")->capture_default_str();
}

void add_experiment(CLI::App* app, ExperimentFlags& f, const std::string& default_protocols, bool with_training,
                    bool with_theory) {
  ExperimentConfig& c = f.cfg;
  add_model_dims(app, c);
  app->add_option("--protocols", f.protocols, "Comma list of TF, RF, 2L, ftTF, theoryTF, theoryRF")
      ->delimiter(',')
      ->default_str(default_protocols);
  app->add_option("--n-seeds", f.n_seeds, "Seeds per cell: seed .. seed+n-1")->capture_default_str();
  app->add_flag("--schedule", c.schedule.enabled, "Seeds per cell by M/H (overrides --n-seeds)");
  app->add_option("--schedule-thresholds", f.schedule_thresholds, "M/H thresholds of the seed schedule")
      ->capture_default_str();
  app->add_option("--schedule-counts", f.schedule_counts, "Seeds below, between and above the thresholds")
      ->capture_default_str();
  app->add_option("--source-pool", c.source_pool, "Distinct source realizations (0: one per seed)")
      ->capture_default_str();
  app->add_option("--lambda", c.lambda, "Ridge penalty of the readout")->capture_default_str();
  app->add_option("--n-mc", c.n_mc, "Monte Carlo samples for covariances (0: 10 H)")->capture_default_str();
  app->add_flag("--centered", f.centered, "Centered covariance estimates");
  add_train_opts(app, "source", c.source_opts, true);
  if (with_training) {
    app->add_option("--n-test", c.n_test, "Test samples per seed")->capture_default_str();
    app->add_option("--logistic-tol", c.logistic.tol, "Readout solver gradient tolerance")->capture_default_str();
    app->add_option("--logistic-max-iter", c.logistic.max_iter, "Readout solver iteration cap")->capture_default_str();
    add_train_opts(app, "twolayer", c.two_layer_opts, false);
    add_train_opts(app, "ft", c.fine_tune_opts, false);
  }
  if (with_theory) {
    app->add_option("--damping", c.solver.damping, "Saddle-point damping")->capture_default_str();
    app->add_option("--saddle-tol", c.solver.tol, "Saddle-point tolerance")->capture_default_str();
    app->add_option("--saddle-max-iter", c.solver.max_iter, "Saddle-point iteration cap")->capture_default_str();
    app->add_option("--quad-nodes", c.solver.quadrature_nodes, "Gaussian quadrature nodes")->capture_default_str();
  }
}

std::vector<double> parse_doubles(const std::string& s, std::vector<std::string>& errors, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      errors.push_back(what + ": '" + item + "' is not a number");
    }
  }
  return out;
}

// "lo:hi:count[:log]" or "v1,v2,...".
Axis parse_axis_values(AxisName name, const std::string& spec, std::vector<std::string>& errors) {
  const std::string what = "axis " + to_string(name);
  Axis a;
  a.name = name;
  if (spec.find(':') == std::string::npos) {
    a.values = parse_doubles(spec, errors, what);
    return a;
  }
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  const bool log = parts.size() == 4 && parts[3] == "log";
  if (!(parts.size() == 3 || log)) {
    errors.push_back(what + ": expected lo:hi:count[:log], got '" + spec + "'");
    return a;
  }
  try {
    return Axis::range(name, std::stod(parts[0]), std::stod(parts[1]), std::stoi(parts[2]), log);
  } catch (const std::exception& e) {
    errors.push_back(what + ": " + e.what());
  }
  return a;
}

// Completes f.cfg from the auxiliary flag strings.
void finish_experiment(ExperimentFlags& f, const Common& common, const std::string& default_protocols,
                       std::vector<std::string>& errors) {
  ExperimentConfig& c = f.cfg;
  std::vector<std::string> names = f.protocols;
  if (names.empty()) {
    std::stringstream ss(default_protocols);
    std::string s;
    while (std::getline(ss, s, ',')) names.push_back(s);
  }
  for (const auto& n : names) {
    try {
      c.protocols.push_back(parse_protocol(n));
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (f.n_seeds < 1) errors.push_back("n-seeds must be positive");
  for (int i = 0; i < std::max(1, f.n_seeds); ++i) c.seeds.push_back(common.seed + static_cast<std::uint64_t>(i));
  const auto th = parse_doubles(f.schedule_thresholds, errors, "schedule-thresholds");
  const auto ct = parse_doubles(f.schedule_counts, errors, "schedule-counts");
  if (th.size() == 2) {
    c.schedule.low_threshold = th[0];
    c.schedule.high_threshold = th[1];
  } else {
    errors.push_back("schedule-thresholds needs two values");
  }
  if (ct.size() == 3) {
    c.schedule.low = static_cast<int>(ct[0]);
    c.schedule.mid = static_cast<int>(ct[1]);
    c.schedule.high = static_cast<int>(ct[2]);
  } else {
    errors.push_back("schedule-counts needs three values");
  }
  c.moments = f.centered ? MomentKind::Centered : MomentKind::Uncentered;
  c.transform.target_latent_dim = c.L_t;
  if (!f.M_axis.empty()) c.axes.push_back(parse_axis_values(AxisName::M_target, f.M_axis, errors));
  for (const auto& spec : f.axes) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      errors.push_back("axis '" + spec + "': expected name=values");
      continue;
    }
    try {
      c.axes.push_back(parse_axis_values(parse_axis(spec.substr(0, eq)), spec.substr(eq + 1), errors));
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  for (auto& p : c.problems()) errors.push_back(std::move(p));
}

// Applies config entries to options that were not given on the command line.
void apply_config(CLI::App* app, const std::string& path, std::vector<std::string>& errors) {
  if (path.empty()) return;
  for (const auto& e : read_ini(path, errors)) {
    const std::string where = fs::path(path).filename().string() + ":" + std::to_string(e.line) + ": ";
    CLI::Option* opt = nullptr;
    for (CLI::Option* o : app->get_options())
      if (o->check_lname(e.key)) opt = o;
    if (!opt || e.key == "config" || e.key == "help") {
      errors.push_back(where + "unknown key '" + e.key + "'");
      continue;
    }
    if (opt->count() > 0) continue;  // the flag wins
    try {
      opt->add_result(e.value);
      opt->run_callback();
    } catch (const CLI::Error& ex) {
      errors.push_back(where + e.key + ": " + ex.what());
      // Put the default back so later checks do not report a knock-on error.
      opt->clear();
      if (!opt->get_default_str().empty()) {
        try {
          opt->add_result(opt->get_default_str());
          opt->run_callback();
        } catch (const CLI::Error&) {
        }
      }
      opt->clear();
    }
  }
}

bool report(const std::vector<std::string>& errors, std::ostream& err) {
  if (errors.empty()) return false;
  err << "error: invalid configuration (" << errors.size() << " problem" << (errors.size() == 1 ? "" : "s") << ")\n";
  for (const auto& e : errors) err << "  - " << e << '\n';
  return true;
}

RunOptions run_options(const Common& c, bool need_dir) {
  RunOptions o;
  if (need_dir || !c.out.empty()) o.run_dir = c.out;
  o.resume = c.resume;
  o.jobs = c.jobs;
  o.verbose = c.verbose;
  return o;
}

void export_run(const GridResult& r, const fs::path& dir, Protocol ref, Protocol tf, std::ostream& out) {
  write_csv(r, dir / "results.csv");
  out << "wrote " << (dir / "results.csv").string() << '\n';
  const bool has = [&] {
    bool a = false, b = false;
    for (Protocol p : r.config.protocols) {
      a = a || p == ref;
      b = b || p == tf;
    }
    return a && b;
  }();
  if (r.config.axes.size() == 2 && has) {
    const fs::path svg = dir / ("gain_" + to_string(ref) + "_" + to_string(tf) + ".svg");
    write_gain_heatmap(r, ref, tf, svg);
    out << "wrote " << svg.string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// real: IDX pipeline

struct RealFlags {
  std::string source_images, source_labels, source_rule = "even_odd";
  std::string target_images, target_labels, target_rule = "threshold_ge:5";
  std::string test_images, test_labels;
  Index H = 500, M_source = 10000;
  std::string M_over_H = "0.5,1,2,4";
  std::vector<std::string> protocols;
  int n_seeds = 1;
  double lambda = 1e-7;
  LogisticOpts logistic;
  TrainOpts source_opts = TrainOpts::source_defaults();
  TrainOpts two_layer_opts = TrainOpts::two_layer_defaults();
  TrainOpts fine_tune_opts = TrainOpts::fine_tune_defaults();
};

LabeledSet load_labeled(const std::string& images, const std::string& labels, const LabelRule& rule,
                        const std::string& what, std::ostream& out) {
  const ImageSet set = load_idx(images, labels);
  LabeledSet l = apply_rule(set, rule);
  out << what << ": " << l.rows_in << " rows in, " << l.rows_kept << " kept, " << l.rows_dropped
      << " dropped (rule " << rule.describe() << ", D=" << set.input_dim() << ")\n";
  return l;
}

int run_real(const RealFlags& f, const Common& common, std::ostream& out, std::ostream& err) {
  std::vector<std::string> errors;
  std::optional<LabelRule> src_rule, tgt_rule;
  try {
    src_rule = LabelRule::parse(f.source_rule);
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  try {
    tgt_rule = LabelRule::parse(f.target_rule);
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  for (const auto& [name, val] : std::vector<std::pair<std::string, std::string>>{
           {"source-images", f.source_images}, {"source-labels", f.source_labels},
           {"target-images", f.target_images}, {"target-labels", f.target_labels},
           {"test-images", f.test_images}, {"test-labels", f.test_labels}})
    if (val.empty()) errors.push_back(name + " is required");
  std::vector<Protocol> protocols;
  for (const auto& p : f.protocols.empty() ? std::vector<std::string>{"TF", "RF", "2L", "ftTF"} : f.protocols) {
    try {
      protocols.push_back(parse_protocol(p));
      if (is_theory(protocols.back())) errors.push_back("real: theory protocols need a generative model");
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  const Axis axis = parse_axis_values(AxisName::M_target, f.M_over_H, errors);
  if (f.H < 1) errors.push_back("H must be positive");
  if (f.n_seeds < 1) errors.push_back("n-seeds must be positive");
  if (!(f.lambda > 0.0)) errors.push_back("lambda must be positive");
  for (const TrainOpts* o : {&f.source_opts, &f.two_layer_opts, &f.fine_tune_opts}) {
    try {
      o->validate();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (report(errors, err)) return 2;

  const auto source = load_labeled(f.source_images, f.source_labels, *src_rule, "source", out);
  const auto target = load_labeled(f.target_images, f.target_labels, *tgt_rule, "target", out);
  const auto test = load_labeled(f.test_images, f.test_labels, *tgt_rule, "test", out);
  const Index D = source.data.inputs.cols();
  if (target.data.inputs.cols() != D || test.data.inputs.cols() != D)
    throw std::runtime_error("source, target and test images must share one size");

  const Index Ms = std::min(f.M_source, source.data.size());
  const Dataset src = subsample(source.data, Ms, derive_seed(common.seed, fnv1a("real_source")));
  TrainOpts so = f.source_opts;
  so.seed = derive_seed(common.seed, fnv1a("real_source_train"));
  const auto src_net = train(init_network(D, f.H, derive_seed(common.seed, fnv1a("real_source_init"))), src, so);
  out << "source network: " << Ms << " samples, stopped at epoch " << src_net.trace.stop_epoch
      << "\n";
  const FeatureMap fm_tf = transferred_feature_map(src_net.net);
  const Matrix test_tf = activations(fm_tf, test.data.inputs);

  GridResult result;
  result.config.axes = {axis};
  result.config.protocols = protocols;
  for (double ratio : axis.values) {
    const Index M = std::max<Index>(1, std::llround(ratio * static_cast<double>(f.H)));
    if (M > target.data.size())
      throw std::runtime_error("M/H=" + std::to_string(ratio) + " needs " + std::to_string(M) + " target rows, only " +
                               std::to_string(target.data.size()) + " available");
    std::map<Protocol, CellRecord> cell;
    for (int s = 0; s < f.n_seeds; ++s) {
      const std::uint64_t seed = common.seed + static_cast<std::uint64_t>(s);
      const Dataset sub = subsample(target.data, M, derive_seed(seed, fnv1a("real_target")));
      const auto fm_rf = random_feature_map(f.H, D, derive_seed(seed, fnv1a("rf")));
      std::optional<ReadoutFit> tf_fit;
      for (Protocol p : protocols) {
        SeedRecord r;
        r.seed = seed;
        if (p == Protocol::TF || p == Protocol::FtTF) {
          if (!tf_fit) tf_fit = fit_ridge_logistic(activations(fm_tf, sub.inputs), sub.labels, f.lambda, f.logistic);
          if (p == Protocol::TF) {
            r.error = readout_error(test_tf, test.data.labels, tf_fit->w2);
            r.converged = tf_fit->converged;
          } else {
            TrainOpts o = f.fine_tune_opts;
            o.seed = derive_seed(seed, fnv1a("ft_train"));
            const auto res = fine_tune(stack(fm_tf, tf_fit->w2), sub, o);
            r.error = classification_error(res.net, test.data.inputs, test.data.labels);
            r.converged = !res.trace.diverged;
          }
        } else if (p == Protocol::RF) {
          const auto fit = fit_ridge_logistic(activations(fm_rf, sub.inputs), sub.labels, f.lambda, f.logistic);
          r.error = readout_error(activations(fm_rf, test.data.inputs), test.data.labels, fit.w2);
          r.converged = fit.converged;
        } else {
          TrainOpts o = f.two_layer_opts;
          o.seed = derive_seed(seed, fnv1a("2l_train"));
          const auto res = train(init_network(D, f.H, derive_seed(seed, fnv1a("2l_init"))), sub, o);
          r.error = classification_error(res.net, test.data.inputs, test.data.labels);
          r.converged = !res.trace.diverged;
        }
        cell[p].per_seed.push_back(r);
      }
    }
    for (Protocol p : protocols) {
      CellRecord rec = cell[p];
      rec.coords = {{AxisName::M_target, ratio}};
      rec.protocol = p;
      double sum = 0.0, ss = 0.0;
      int conv = 0;
      for (const auto& s : rec.per_seed) {
        sum += s.error;
        conv += s.converged ? 1 : 0;
      }
      const double n = static_cast<double>(rec.per_seed.size());
      rec.mean_error = sum / n;
      for (const auto& s : rec.per_seed) ss += (s.error - rec.mean_error) * (s.error - rec.mean_error);
      rec.sem = rec.per_seed.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
      rec.n_seeds = static_cast<int>(rec.per_seed.size());
      rec.converged_fraction = conv / n;
      result.records.push_back(std::move(rec));
    }
  }
  const std::string csv = to_csv(result);
  out << csv;
  if (!common.out.empty()) {
    write_csv(result, fs::path(common.out) / "real.csv");
    save_network(fs::path(common.out), "source_net", src_net.net, {{"samples", Ms}, {"rule", src_rule->describe()}});
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer learning in the correlated hidden manifold model", "chmm_lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "chmm_lab 1.0");
  app.get_formatter()->column_width(38);

  Common common;

  // gen
  auto* gen = app.add_subcommand("gen", "Sample a generative pair and datasets");
  Index g_L = 150, g_D = 1000, g_M = 1000, g_L_t = 0, g_test = 0;
  TransformSpec g_tf{1.0, 0.0, 1.0, 0};
  bool g_target = false;
  add_common(gen, common, false);
  gen->add_option("--L", g_L, "Latent dimension")->capture_default_str();
  gen->add_option("--D", g_D, "Input dimension")->capture_default_str();
  gen->add_option("--M", g_M, "Samples")->capture_default_str();
  gen->add_option("--n-test", g_test, "Additional test samples (0: none)")->capture_default_str();
  gen->add_flag("--target", g_target, "Also derive a target pair and dataset");
  gen->add_option("--L-t", g_L_t, "Target latent dimension (0: same as source)")->capture_default_str();
  gen->add_option("--eta", g_tf.eta, "Feature retention")->capture_default_str();
  gen->add_option("--rho-sub", g_tf.rho_sub, "Fraction of substituted features")->capture_default_str();
  gen->add_option("--q-teacher", g_tf.q_teacher, "Teacher alignment")->capture_default_str();

  // train-source
  auto* ts = app.add_subcommand("train-source", "Train the source two-layer network");
  Index t_L = 150, t_D = 1000, t_H = 500, t_M = 51200;
  TrainOpts t_opts = TrainOpts::source_defaults();
  add_common(ts, common, false);
  ts->add_option("--L", t_L, "Source latent dimension")->capture_default_str();
  ts->add_option("--D", t_D, "Input dimension")->capture_default_str();
  ts->add_option("--H", t_H, "Hidden units")->capture_default_str();
  ts->add_option("--M", t_M, "Training samples")->capture_default_str();
  add_train_opts(ts, "source", t_opts, true);

  // experiment-backed subcommands
  ExperimentFlags xf_transfer, xf_theory, xf_curve, xf_phase;
  auto* tr = app.add_subcommand("transfer", "Empirical TF / RF / 2L / ftTF test errors at one point");
  add_common(tr, common, false);
  add_experiment(tr, xf_transfer, "TF,RF,2L,ftTF", true, false);
  tr->add_option("--M-target", xf_transfer.cfg.M_target, "Target samples as a ratio M/H")->capture_default_str();

  auto* th = app.add_subcommand("theory", "Asymptotic test error from the saddle-point equations (CSV on stdout)");
  add_common(th, common, false);
  add_experiment(th, xf_theory, "theoryTF,theoryRF", false, true);
  xf_theory.M_axis = "0.1:10:12:log";
  th->add_option("--M-over-H", xf_theory.M_axis, "M/H values: lo:hi:count[:log] or v1,v2,...")
      ->capture_default_str();

  auto* cu = app.add_subcommand("curve", "Learning curve over M/H");
  add_common(cu, common, true);
  add_experiment(cu, xf_curve, "TF,RF,theoryTF,theoryRF", true, true);
  xf_curve.M_axis = "0.1:10:12:log";
  cu->add_option("--M-over-H", xf_curve.M_axis, "M/H values: lo:hi:count[:log] or v1,v2,...")
      ->capture_default_str();

  auto* ph = app.add_subcommand("phase", "Two-parameter phase diagram with gain heatmap");
  add_common(ph, common, true);
  add_experiment(ph, xf_phase, "TF,RF", true, true);
  ph->add_option("--M-target", xf_phase.cfg.M_target, "Target samples as a ratio M/H (unless an axis)")
      ->capture_default_str();
  ph->add_option("--axis", xf_phase.axes,
                 "name=lo:hi:count[:log] or name=v1,v2,...; give twice (rows, then columns). Names: M_target, "
                 "q_teacher, eta, rho_sub, L_t, H, M_source")
      ->take_all();
  ph->add_option("--gain-ref", xf_phase.gain_ref, "Reference protocol of the gain")->capture_default_str();
  ph->add_option("--gain-tf", xf_phase.gain_tf, "Transfer protocol of the gain")->capture_default_str();

  // real
  auto* re = app.add_subcommand("real", "Transfer on IDX image datasets");
  RealFlags rf;
  add_common(re, common, false);
  re->add_option("--source-images", rf.source_images, "Source IDX images");
  re->add_option("--source-labels", rf.source_labels, "Source IDX labels");
  re->add_option("--source-rule", rf.source_rule,
                 "Source label rule: even_odd, threshold_ge:K, groups:A/B, luminosity[:lo,hi;...]")
      ->capture_default_str();
  re->add_option("--target-images", rf.target_images, "Target IDX images (training pool)");
  re->add_option("--target-labels", rf.target_labels, "Target IDX labels (training pool)");
  re->add_option("--target-rule", rf.target_rule, "Target label rule")->capture_default_str();
  re->add_option("--test-images", rf.test_images, "Target IDX test images");
  re->add_option("--test-labels", rf.test_labels, "Target IDX test labels");
  re->add_option("--H", rf.H, "Hidden units")->capture_default_str();
  re->add_option("--M-source", rf.M_source, "Source samples (capped at the available rows)")->capture_default_str();
  re->add_option("--M-over-H", rf.M_over_H, "Target M/H values")->capture_default_str();
  re->add_option("--protocols", rf.protocols, "Comma list of TF, RF, 2L, ftTF")->delimiter(',')->default_str(
      "TF,RF,2L,ftTF");
  re->add_option("--n-seeds", rf.n_seeds, "Seeds per point")->capture_default_str();
  re->add_option("--lambda", rf.lambda, "Ridge penalty of the readout")->capture_default_str();
  re->add_option("--logistic-tol", rf.logistic.tol, "Readout solver gradient tolerance")->capture_default_str();
  re->add_option("--logistic-max-iter", rf.logistic.max_iter, "Readout solver iteration cap")->capture_default_str();
  add_train_opts(re, "source", rf.source_opts, true);
  add_train_opts(re, "twolayer", rf.two_layer_opts, false);
  add_train_opts(re, "ft", rf.fine_tune_opts, false);

  // export
  auto* ex = app.add_subcommand("export", "CSV and gain heatmap from a run directory");
  std::string ex_run, ex_ref = "RF", ex_tf = "TF";
  add_common(ex, common, false);
  ex->add_option("--run", ex_run, "Run directory written by curve or phase");
  ex->add_option("--gain-ref", ex_ref, "Reference protocol of the gain")->capture_default_str();
  ex->add_option("--gain-tf", ex_tf, "Transfer protocol of the gain")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  std::vector<std::string> errors;
  apply_config(sub, common.config, errors);

  try {
    if (sub == gen) {
      if (g_L < 1 || g_D < 1 || g_M < 1) errors.push_back("L, D and M must be positive");
      if (g_test < 0) errors.push_back("n-test must be non-negative");
      g_tf.target_latent_dim = g_L_t;
      if (g_target) {
        try {
          g_tf.validate();
        } catch (const std::exception& e) {
          errors.push_back(e.what());
        }
      }
      if (report(errors, err)) return 2;
      const fs::path dir = common.out.empty() ? fs::path("chmm_out") : fs::path(common.out);
      const nlohmann::json meta = {{"seed", common.seed}};
      const auto pair = sample_generative_pair(g_L, g_D, derive_seed(common.seed, fnv1a("source_pair")));
      save_pair(dir, "source", pair, meta);
      save_dataset(dir, "source_train", sample_dataset(pair, g_M, derive_seed(common.seed, fnv1a("source_data"))), meta);
      if (g_test > 0)
        save_dataset(dir, "source_test", sample_dataset(pair, g_test, derive_seed(common.seed, fnv1a("source_test"))),
                     meta);
      if (g_target) {
        const auto target = derive_target(pair, g_tf, derive_seed(common.seed, fnv1a("target")));
        nlohmann::json tmeta = meta;
        tmeta["transform"] = g_tf.to_json();
        save_pair(dir, "target", target, tmeta);
        save_dataset(dir, "target_train",
                     sample_dataset(target, g_M, derive_seed(common.seed, fnv1a("target_data"))), tmeta);
        if (g_test > 0)
          save_dataset(dir, "target_test",
                       sample_dataset(target, g_test, derive_seed(common.seed, fnv1a("target_test"))), tmeta);
      }
      out << "wrote " << dir.string() << '\n';
      return 0;
    }

    if (sub == ts) {
      if (t_L < 1 || t_D < 1 || t_H < 1 || t_M < 2) errors.push_back("L, D, H must be positive and M at least 2");
      try {
        t_opts.validate();
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
      if (report(errors, err)) return 2;
      const fs::path dir = common.out.empty() ? fs::path("chmm_out") : fs::path(common.out);
      const auto pair = sample_generative_pair(t_L, t_D, derive_seed(common.seed, fnv1a("source_pair")));
      const auto data = sample_dataset(pair, t_M, derive_seed(common.seed, fnv1a("source_data")));
      t_opts.seed = derive_seed(common.seed, fnv1a("source_train"));
      const auto res = train(init_network(t_D, t_H, derive_seed(common.seed, fnv1a("source_init"))), data, t_opts);
      const auto test = sample_dataset(pair, 10000, derive_seed(common.seed, fnv1a("source_test")));
      const double test_err = classification_error(res.net, test.inputs, test.labels);
      save_pair(dir, "source", pair, {{"seed", common.seed}});
      save_network(dir, "source_net", res.net,
                   {{"seed", common.seed},
                    {"opts", t_opts.to_json()},
                    {"stop_epoch", res.trace.stop_epoch},
                    {"best_epoch", res.trace.best_epoch},
                    {"test_error", test_err}});
      std::ofstream(dir / "source_trace.csv") << res.trace.to_csv();
      out << "source network: stop epoch " << res.trace.stop_epoch << ", best epoch " << res.trace.best_epoch
          << ", test error " << test_err << "\nwrote " << dir.string() << '\n';
      return res.trace.diverged ? 1 : 0;
    }

    if (sub == re) {
      if (report(errors, err)) return 2;
      return run_real(rf, common, out, err);
    }

    if (sub == ex) {
      Protocol ref = Protocol::RF, tf = Protocol::TF;
      if (ex_run.empty()) errors.push_back("--run is required");
      try {
        ref = parse_protocol(ex_ref);
        tf = parse_protocol(ex_tf);
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
      if (report(errors, err)) return 2;
      const auto r = load_run(ex_run);
      export_run(r, common.out.empty() ? fs::path(ex_run) / "export" : fs::path(common.out), ref, tf, out);
      return 0;
    }

    // Grid-backed subcommands.
    ExperimentFlags* f = sub == tr ? &xf_transfer : sub == th ? &xf_theory : sub == cu ? &xf_curve : &xf_phase;
    const std::string defaults = sub == tr ? "TF,RF,2L,ftTF" : sub == th ? "theoryTF,theoryRF" : sub == cu
                                                                                               ? "TF,RF,theoryTF,theoryRF"
                                                                                               : "TF,RF";
    if (sub == tr || sub == th) {
      if (common.resume) errors.push_back("--resume applies to curve and phase");
    }
    if (sub == ph && f->axes.size() != 2) errors.push_back("phase needs exactly two --axis options");
    if ((sub == cu || sub == ph) && common.out.empty()) errors.push_back("--out (run directory) is required");
    Protocol ref = Protocol::RF, tfp = Protocol::TF;
    if (sub == ph) {
      try {
        ref = parse_protocol(f->gain_ref);
        tfp = parse_protocol(f->gain_tf);
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    }
    finish_experiment(*f, common, defaults, errors);
    if (report(errors, err)) return 2;

    const RunOptions ro = run_options(common, sub == cu || sub == ph);
    const GridResult r = run_grid(f->cfg, ro);
    int failures = 0;
    for (const auto& rec : r.records) {
      for (const auto& msg : rec.failures) err << "warning: " << to_string(rec.protocol) << ": " << msg << '\n';
      failures += static_cast<int>(rec.failures.size());
    }
    if (sub == th || sub == tr) {
      out << to_csv(r);
      if (!common.out.empty()) write_csv(r, fs::path(common.out) / "results.csv");
    } else {
      export_run(r, fs::path(common.out) / "export", ref, tfp, out);
      out << "source trainings: " << r.counters.source_trainings
          << ", covariance estimations: " << r.counters.covariance_estimations
          << ", cells computed: " << r.counters.cells_computed << ", reused: " << r.counters.cells_reused << '\n';
    }
    return failures > 0 ? 1 : 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace chmm
