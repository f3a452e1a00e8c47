#include "chmm/experiments.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "chmm/container.hpp"
#include "chmm/equivalence.hpp"
#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

namespace chmm {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Names

namespace {

const std::vector<std::pair<Protocol, const char*>> kProtocolNames = {
    {Protocol::TF, "TF"},         {Protocol::RF, "RF"},           {Protocol::TwoLayer, "2L"},
    {Protocol::FtTF, "ftTF"},     {Protocol::TheoryTF, "theoryTF"}, {Protocol::TheoryRF, "theoryRF"}};

const std::vector<std::pair<AxisName, const char*>> kAxisNames = {
    {AxisName::M_target, "M_target"}, {AxisName::q_teacher, "q_teacher"}, {AxisName::eta, "eta"},
    {AxisName::rho_sub, "rho_sub"},   {AxisName::L_t, "L_t"},             {AxisName::H, "H"},
    {AxisName::M_source, "M_source"}};

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::uint64_t tagged(std::uint64_t seed, std::string_view tag) { return derive_seed(seed, fnv1a(tag)); }

bool is_integral(double x) { return std::isfinite(x) && std::floor(x) == x; }

}  // namespace

std::string to_string(Protocol p) {
  for (const auto& [k, v] : kProtocolNames)
    if (k == p) return v;
  return "?";
}

Protocol parse_protocol(const std::string& name) {
  for (const auto& [k, v] : kProtocolNames)
    if (name == v) return k;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected TF, RF, 2L, ftTF, theoryTF, theoryRF)");
}

bool is_theory(Protocol p) { return p == Protocol::TheoryTF || p == Protocol::TheoryRF; }

std::string to_string(AxisName a) {
  for (const auto& [k, v] : kAxisNames)
    if (k == a) return v;
  return "?";
}

AxisName parse_axis(const std::string& name) {
  for (const auto& [k, v] : kAxisNames)
    if (name == v) return k;
  throw std::invalid_argument("unknown axis '" + name +
                              "' (expected M_target, q_teacher, eta, rho_sub, L_t, H, M_source)");
}

Axis Axis::range(AxisName name, double lo, double hi, int count, bool log_scale) {
  if (count < 1) throw std::invalid_argument("Axis::range: count must be positive");
  if (log_scale && !(lo > 0.0 && hi > 0.0)) throw std::invalid_argument("Axis::range: log axis needs positive ends");
  Axis a;
  a.name = name;
  a.log_scale = log_scale;
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    a.values.push_back(log_scale ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))) : lo + t * (hi - lo));
  }
  if (name == AxisName::L_t || name == AxisName::H || name == AxisName::M_source)
    for (double& v : a.values) v = std::round(v);
  return a;
}

int SeedSchedule::count(double m_over_h) const {
  if (m_over_h < low_threshold) return low;
  if (m_over_h < high_threshold) return mid;
  return high;
}

// ---------------------------------------------------------------------------
// Config

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) out.push_back(msg);
  };
  need(D >= 1, "D must be positive");
  need(H >= 1, "H must be positive");
  need(L_s >= 1 || latent_sum > 0, "L_s must be positive");
  need(L_t >= 1, "L_t must be positive");
  need(latent_sum == 0 || latent_sum > L_t, "latent_sum must exceed L_t");
  need(M_source >= 2, "M_source must be at least 2");
  need(M_target > 0.0, "M_target (ratio M/H) must be positive");
  need(transform.eta >= 0.0 && transform.eta <= 1.0, "eta must lie in [0, 1]");
  need(transform.rho_sub >= 0.0 && transform.rho_sub <= 1.0, "rho_sub must lie in [0, 1]");
  need(transform.q_teacher >= -1.0 && transform.q_teacher <= 1.0, "q_teacher must lie in [-1, 1]");
  need(!protocols.empty(), "protocol set is empty");
  need(!seeds.empty(), "seed list is empty");
  need(source_pool >= 0, "source_pool must be non-negative");
  need(n_test >= 1, "n_test must be positive");
  need(n_mc >= 0, "n_mc must be non-negative");
  need(lambda > 0.0, "lambda must be positive");
  if (schedule.enabled) {
    need(schedule.low >= 1 && schedule.mid >= 1 && schedule.high >= 1, "schedule seed counts must be positive");
    need(schedule.low_threshold <= schedule.high_threshold, "schedule thresholds must be ordered");
  }
  {
    std::set<Protocol> seen;
    for (Protocol p : protocols) {
      need(seen.insert(p).second, "protocol " + to_string(p) + " listed twice");
      if (is_theory(p)) need(lambda >= kMinLambda, "theory protocols need lambda >= 1e-8");
    }
  }
  std::set<AxisName> seen_axes;
  for (const Axis& a : axes) {
    const std::string n = to_string(a.name);
    need(seen_axes.insert(a.name).second, "axis " + n + " listed twice");
    need(!a.values.empty(), "axis " + n + " has no values");
    for (double v : a.values) {
      switch (a.name) {
        case AxisName::M_target:
          need(v > 0.0, "axis M_target: values must be positive");
          break;
        case AxisName::q_teacher:
          need(v >= -1.0 && v <= 1.0, "axis q_teacher: values must lie in [-1, 1]");
          break;
        case AxisName::eta:
        case AxisName::rho_sub:
          need(v >= 0.0 && v <= 1.0, "axis " + n + ": values must lie in [0, 1]");
          break;
        case AxisName::L_t:
          need(is_integral(v) && v >= 1.0, "axis L_t: values must be positive integers");
          need(latent_sum == 0 || v < static_cast<double>(latent_sum), "axis L_t: values must be below latent_sum");
          break;
        case AxisName::H:
          need(is_integral(v) && v >= 1.0, "axis H: values must be positive integers");
          break;
        case AxisName::M_source:
          need(is_integral(v) && v >= 2.0, "axis M_source: values must be integers >= 2");
          break;
      }
    }
  }
  try {
    source_opts.validate();
    two_layer_opts.validate();
    fine_tune_opts.validate();
    solver.validate();
  } catch (const std::exception& e) {
    out.push_back(e.what());
  }
  // Deduplicate messages from repeated axis values.
  std::vector<std::string> unique;
  for (auto& m : out)
    if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(m);
  return unique;
}

void ExperimentConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid experiment config:";
  for (const auto& s : p) msg += "\n  - " + s;
  throw std::invalid_argument(msg);
}

namespace {

json solver_json(const SolverOpts& s) {
  return {{"damping", s.damping},   {"tol", s.tol},       {"max_iter", s.max_iter},
          {"quadrature_nodes", s.quadrature_nodes},
          {"init_q", s.init.q}, {"init_V", s.init.V}, {"init_m", s.init.m}};
}

SolverOpts solver_from_json(const json& j) {
  SolverOpts s;
  s.damping = j.at("damping").get<double>();
  s.tol = j.at("tol").get<double>();
  s.max_iter = j.at("max_iter").get<int>();
  s.quadrature_nodes = j.at("quadrature_nodes").get<int>();
  s.init.q = j.at("init_q").get<double>();
  s.init.V = j.at("init_V").get<double>();
  s.init.m = j.at("init_m").get<double>();
  return s;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json axes_j = json::array();
  for (const Axis& a : axes) axes_j.push_back({{"name", to_string(a.name)}, {"values", a.values}, {"log", a.log_scale}});
  json prot = json::array();
  for (Protocol p : protocols) prot.push_back(to_string(p));
  return {{"D", D},
          {"H", H},
          {"L_s", L_s},
          {"L_t", L_t},
          {"eta", transform.eta},
          {"rho_sub", transform.rho_sub},
          {"q_teacher", transform.q_teacher},
          {"M_source", M_source},
          {"M_target", M_target},
          {"latent_sum", latent_sum},
          {"axes", axes_j},
          {"protocols", prot},
          {"seeds", seeds},
          {"schedule",
           {{"enabled", schedule.enabled},
            {"low_threshold", schedule.low_threshold},
            {"high_threshold", schedule.high_threshold},
            {"low", schedule.low},
            {"mid", schedule.mid},
            {"high", schedule.high}}},
          {"source_pool", source_pool},
          {"lambda", lambda},
          {"n_test", n_test},
          {"n_mc", n_mc},
          {"centered_moments", moments == MomentKind::Centered},
          {"source_opts", source_opts.to_json()},
          {"two_layer_opts", two_layer_opts.to_json()},
          {"fine_tune_opts", fine_tune_opts.to_json()},
          {"logistic", {{"tol", logistic.tol}, {"max_iter", logistic.max_iter}}},
          {"solver", solver_json(solver)}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.D = j.at("D").get<Index>();
  c.H = j.at("H").get<Index>();
  c.L_s = j.at("L_s").get<Index>();
  c.L_t = j.at("L_t").get<Index>();
  c.transform.eta = j.at("eta").get<double>();
  c.transform.rho_sub = j.at("rho_sub").get<double>();
  c.transform.q_teacher = j.at("q_teacher").get<double>();
  c.M_source = j.at("M_source").get<Index>();
  c.M_target = j.at("M_target").get<double>();
  c.latent_sum = j.at("latent_sum").get<Index>();
  for (const auto& a : j.at("axes")) {
    Axis ax;
    ax.name = parse_axis(a.at("name").get<std::string>());
    ax.values = a.at("values").get<std::vector<double>>();
    ax.log_scale = a.at("log").get<bool>();
    c.axes.push_back(ax);
  }
  for (const auto& p : j.at("protocols")) c.protocols.push_back(parse_protocol(p.get<std::string>()));
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  const auto& s = j.at("schedule");
  c.schedule.enabled = s.at("enabled").get<bool>();
  c.schedule.low_threshold = s.at("low_threshold").get<double>();
  c.schedule.high_threshold = s.at("high_threshold").get<double>();
  c.schedule.low = s.at("low").get<int>();
  c.schedule.mid = s.at("mid").get<int>();
  c.schedule.high = s.at("high").get<int>();
  c.source_pool = j.at("source_pool").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.n_test = j.at("n_test").get<Index>();
  c.n_mc = j.at("n_mc").get<Index>();
  c.moments = j.at("centered_moments").get<bool>() ? MomentKind::Centered : MomentKind::Uncentered;
  c.source_opts = TrainOpts::from_json(j.at("source_opts"));
  c.two_layer_opts = TrainOpts::from_json(j.at("two_layer_opts"));
  c.fine_tune_opts = TrainOpts::from_json(j.at("fine_tune_opts"));
  c.logistic.tol = j.at("logistic").at("tol").get<double>();
  c.logistic.max_iter = j.at("logistic").at("max_iter").get<int>();
  c.solver = solver_from_json(j.at("solver"));
  return c;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

std::vector<std::uint64_t> ExperimentConfig::seeds_for(double m_over_h) const {
  if (!schedule.enabled) return seeds;
  // The schedule draws consecutive seeds starting at the first listed seed.
  const auto n = static_cast<std::uint64_t>(schedule.count(m_over_h));
  std::vector<std::uint64_t> out(n);
  std::iota(out.begin(), out.end(), seeds.front());
  return out;
}

// ---------------------------------------------------------------------------
// Records

double CellRecord::coord(AxisName a) const {
  for (const auto& [k, v] : coords)
    if (k == a) return v;
  throw std::out_of_range("CellRecord: no axis " + to_string(a));
}

double CellRecord::mean_extra(const std::string& key) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : per_seed) {
    if (s.extra.contains(key) && s.extra[key].is_number()) {
      sum += s.extra[key].get<double>();
      ++n;
    }
  }
  return n ? sum / n : std::nan("");
}

const CellRecord* GridResult::find(const std::vector<std::pair<AxisName, double>>& coords, Protocol p) const {
  for (const auto& r : records) {
    if (r.protocol != p || r.coords.size() != coords.size()) continue;
    bool match = true;
    for (const auto& [k, v] : coords) {
      bool hit = false;
      for (const auto& [rk, rv] : r.coords)
        if (rk == k && std::abs(rv - v) <= 1e-12 * std::max(1.0, std::abs(v))) hit = true;
      match = match && hit;
    }
    if (match) return &r;
  }
  return nullptr;
}

const CellRecord& GridResult::at(const std::vector<std::pair<AxisName, double>>& coords, Protocol p) const {
  const CellRecord* r = find(coords, p);
  if (!r) throw std::out_of_range("GridResult: no record for protocol " + to_string(p) + " at the requested point");
  return *r;
}

double gain(double err_ref, double err_tf) {
  if (!(err_ref >= 0.0 && err_ref <= 1.0 && err_tf >= 0.0 && err_tf <= 1.0))
    throw std::invalid_argument("gain: errors must lie in [0, 1]");
  return err_ref - err_tf;
}

int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CHMM_LAB_JOBS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Execution

namespace {

using Coords = std::vector<std::pair<AxisName, double>>;

struct CellParams {
  Index D, H, L_s, L_t, M_source, M;
  double m_over_h;
  TransformSpec transform;
};

CellParams params_for(const ExperimentConfig& cfg, const Coords& coords) {
  CellParams p{cfg.D, cfg.H, cfg.L_s, cfg.L_t, cfg.M_source, 0, cfg.M_target, cfg.transform};
  for (const auto& [axis, v] : coords) {
    switch (axis) {
      case AxisName::M_target: p.m_over_h = v; break;
      case AxisName::q_teacher: p.transform.q_teacher = v; break;
      case AxisName::eta: p.transform.eta = v; break;
      case AxisName::rho_sub: p.transform.rho_sub = v; break;
      case AxisName::L_t: p.L_t = static_cast<Index>(v); break;
      case AxisName::H: p.H = static_cast<Index>(v); break;
      case AxisName::M_source: p.M_source = static_cast<Index>(v); break;
    }
  }
  if (cfg.latent_sum > 0) p.L_s = cfg.latent_sum - p.L_t;
  p.transform.target_latent_dim = p.L_t;
  p.M = std::max<Index>(1, std::llround(p.m_over_h * static_cast<double>(p.H)));
  return p;
}

std::vector<Coords> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<Coords> cells{Coords{}};
  for (const Axis& a : cfg.axes) {
    std::vector<Coords> next;
    for (const auto& c : cells)
      for (double v : a.values) {
        Coords d = c;
        d.emplace_back(a.name, v);
        next.push_back(std::move(d));
      }
    cells = std::move(next);
  }
  return cells;
}

// Everything that selects a slice: all coordinates except M_target.
std::string slice_key(const Coords& c) {
  std::string key;
  for (const auto& [a, v] : c)
    if (a != AxisName::M_target) key += to_string(a) + "=" + format_number(v) + ";";
  return key;
}

std::string cell_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell_%05zu.json", index);
  return buf;
}

json coords_json(const Coords& c) {
  json j = json::array();
  for (const auto& [a, v] : c) j.push_back({{"axis", to_string(a)}, {"value", v}});
  return j;
}

double json_number(const json& j) { return j.is_number() ? j.get<double>() : std::nan(""); }

json record_json(const CellRecord& r) {
  json seeds = json::array();
  for (const auto& s : r.per_seed)
    seeds.push_back({{"seed", s.seed}, {"error", s.error}, {"converged", s.converged}, {"extra", s.extra}});
  return {{"protocol", to_string(r.protocol)},
          {"mean_error", r.mean_error},
          {"sem", r.sem},
          {"n_seeds", r.n_seeds},
          {"converged_fraction", r.converged_fraction},
          {"per_seed", seeds},
          {"failures", r.failures}};
}

CellRecord record_from_json(const json& j, const Coords& coords) {
  CellRecord r;
  r.coords = coords;
  r.protocol = parse_protocol(j.at("protocol").get<std::string>());
  r.mean_error = json_number(j.at("mean_error"));
  r.sem = json_number(j.at("sem"));
  r.n_seeds = j.at("n_seeds").get<int>();
  r.converged_fraction = json_number(j.at("converged_fraction"));
  for (const auto& s : j.at("per_seed"))
    r.per_seed.push_back({s.at("seed").get<std::uint64_t>(), json_number(s.at("error")), s.at("converged").get<bool>(),
                          s.at("extra")});
  r.failures = j.at("failures").get<std::vector<std::string>>();
  return r;
}

void summarize(CellRecord& r) {
  std::sort(r.per_seed.begin(), r.per_seed.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
  std::vector<double> errs;
  int conv = 0;
  for (const auto& s : r.per_seed) {
    if (std::isfinite(s.error)) errs.push_back(s.error);
    if (s.converged) ++conv;
  }
  r.n_seeds = static_cast<int>(errs.size());
  r.converged_fraction = r.per_seed.empty() ? 0.0 : static_cast<double>(conv) / static_cast<double>(r.per_seed.size());
  if (errs.empty()) {
    r.mean_error = r.sem = std::nan("");
    return;
  }
  double sum = 0.0;
  for (double e : errs) sum += e;
  r.mean_error = sum / static_cast<double>(errs.size());
  double ss = 0.0;
  for (double e : errs) ss += (e - r.mean_error) * (e - r.mean_error);
  r.sem = errs.size() > 1 ? std::sqrt(ss / static_cast<double>(errs.size() - 1) / static_cast<double>(errs.size())) : 0.0;
}

// Per-run state shared by worker threads.
class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts) {}

  GridResult run();

 private:
  struct Task {
    std::string slice;
    std::uint64_t seed;
    std::vector<std::size_t> cells;  // cells of this slice that need this seed
  };
  struct Pending {
    std::map<Protocol, CellRecord> records;
    std::size_t expected = 0, received = 0;
  };

  void execute(const Task& task);
  TwoLayerNet source_network(const CellParams& p, std::uint64_t src_seed);
  std::shared_ptr<const EquivalentModel> covariances(const std::string& key, const FeatureMap& fm,
                                                     const GenerativePair& target, std::uint64_t seed);
  void deliver(std::size_t cell, const std::map<Protocol, SeedRecord>& recs, const std::map<Protocol, std::string>& fails,
               std::uint64_t seed);
  void write_cell(std::size_t cell);
  void write_manifest(const std::string& status);
  void log(const std::string& msg);
  fs::path cache_dir() const { return opts_.cache_dir.empty() ? opts_.run_dir / "cache" : opts_.cache_dir; }
  bool use_disk() const { return !opts_.run_dir.empty() || !opts_.cache_dir.empty(); }

  const ExperimentConfig& cfg_;
  const RunOptions& opts_;
  std::vector<Coords> cells_;
  std::vector<std::vector<std::uint64_t>> cell_seeds_;
  std::vector<bool> done_;

  std::mutex mu_;
  std::map<std::size_t, Pending> pending_;
  std::map<std::size_t, std::vector<CellRecord>> finished_;
  std::map<std::string, std::shared_future<TwoLayerNet>> sources_;
  std::map<std::string, std::shared_future<std::shared_ptr<const EquivalentModel>>> covs_;
  RunCounters counters_, previous_;
  std::mutex log_mu_;
};

void Runner::log(const std::string& msg) {
  if (!opts_.verbose) return;
  std::lock_guard lock(log_mu_);
  std::clog << msg << std::endl;
}

TwoLayerNet Runner::source_network(const CellParams& p, std::uint64_t src_seed) {
  std::ostringstream k;
  k << "source_L" << p.L_s << "_D" << p.D << "_H" << p.H << "_M" << p.M_source << "_s" << src_seed << "_"
    << hex64(fnv1a(cfg_.source_opts.to_json().dump()));
  const std::string key = k.str();

  std::promise<TwoLayerNet> promise;
  std::shared_future<TwoLayerNet> fut;
  bool owner = false;
  {
    std::lock_guard lock(mu_);
    auto it = sources_.find(key);
    if (it == sources_.end()) {
      fut = promise.get_future().share();
      sources_.emplace(key, fut);
      owner = true;
    } else {
      fut = it->second;
    }
  }
  if (!owner) return fut.get();

  try {
    const std::string file = hex64(fnv1a(key));
    if (use_disk() && fs::exists(cache_dir() / (file + ".w1.bin"))) {
      promise.set_value(load_network(cache_dir(), file));
      return fut.get();
    }
    log("training source " + key);
    const auto pair = sample_generative_pair(p.L_s, p.D, tagged(src_seed, "source_pair"));
    const auto data = sample_dataset(pair, p.M_source, tagged(src_seed, "source_data"));
    TrainOpts o = cfg_.source_opts;
    o.seed = tagged(src_seed, "source_train");
    auto result = train(init_network(p.D, p.H, tagged(src_seed, "source_init")), data, o);
    if (result.trace.diverged) throw std::runtime_error("source training diverged at epoch " +
                                                        std::to_string(result.trace.diverged_epoch));
    if (use_disk())
      save_network(cache_dir(), file, result.net,
                   {{"key", key}, {"stop_epoch", result.trace.stop_epoch}, {"best_epoch", result.trace.best_epoch}});
    {
      std::lock_guard lock(mu_);
      ++counters_.source_trainings;
    }
    promise.set_value(std::move(result.net));
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  return fut.get();
}

std::shared_ptr<const EquivalentModel> Runner::covariances(const std::string& key, const FeatureMap& fm,
                                                           const GenerativePair& target, std::uint64_t seed) {
  using Ptr = std::shared_ptr<const EquivalentModel>;
  std::promise<Ptr> promise;
  std::shared_future<Ptr> fut;
  bool owner = false;
  {
    std::lock_guard lock(mu_);
    auto it = covs_.find(key);
    if (it == covs_.end()) {
      fut = promise.get_future().share();
      covs_.emplace(key, fut);
      owner = true;
    } else {
      fut = it->second;
    }
  }
  if (!owner) return fut.get();
  try {
    const Index n_mc = cfg_.n_mc > 0 ? cfg_.n_mc : default_mc_samples(fm.hidden_dim());
    auto eq = std::make_shared<const EquivalentModel>(estimate_covariances(fm, target, n_mc, seed, cfg_.moments));
    {
      std::lock_guard lock(mu_);
      ++counters_.covariance_estimations;
    }
    promise.set_value(eq);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  return fut.get();
}

void Runner::execute(const Task& task) {
  const std::uint64_t seed = task.seed;
  const CellParams base = params_for(cfg_, cells_[task.cells.front()]);
  const auto& prot = cfg_.protocols;
  auto wants = [&](Protocol p) { return std::find(prot.begin(), prot.end(), p) != prot.end(); };
  const bool need_tf_fm = wants(Protocol::TF) || wants(Protocol::FtTF) || wants(Protocol::TheoryTF);
  const bool need_rf_fm = wants(Protocol::RF) || wants(Protocol::TheoryRF);
  const bool need_sim = wants(Protocol::TF) || wants(Protocol::RF) || wants(Protocol::TwoLayer) || wants(Protocol::FtTF);

  std::map<std::size_t, std::map<Protocol, SeedRecord>> out;
  std::map<std::size_t, std::map<Protocol, std::string>> fails;
  auto fail_all = [&](Protocol p, const std::string& msg) {
    for (std::size_t c : task.cells) fails[c][p] = msg;
  };

  try {
    const std::uint64_t src_seed = cfg_.source_pool > 0 ? seed % static_cast<std::uint64_t>(cfg_.source_pool) : seed;
    const auto source_pair = sample_generative_pair(base.L_s, base.D, tagged(src_seed, "source_pair"));
    const auto target = derive_target(source_pair, base.transform, tagged(seed, "target"));

    std::optional<FeatureMap> fm_tf, fm_rf;
    if (need_tf_fm) fm_tf = transferred_feature_map(source_network(base, src_seed));
    if (need_rf_fm) fm_rf = random_feature_map(base.H, base.D, tagged(seed, "rf"));

    // Covariances depend on the target features only, not on its teacher.
    std::ostringstream tk;
    tk << "target_Ls" << base.L_s << "_Lt" << base.L_t << "_D" << base.D << "_eta" << format_number(base.transform.eta)
       << "_rho" << format_number(base.transform.rho_sub) << "_src" << src_seed << "_s" << seed << "_mc"
       << cfg_.n_mc << (cfg_.moments == MomentKind::Centered ? "c" : "u");
    std::ostringstream sk;
    sk << "H" << base.H << "_M" << base.M_source << "_" << hex64(fnv1a(cfg_.source_opts.to_json().dump()));
    std::shared_ptr<const EquivalentModel> cov_tf, cov_rf;
    std::optional<SpectralModel> spec_tf, spec_rf;
    if (wants(Protocol::TheoryTF)) {
      cov_tf = covariances("tf_" + sk.str() + "_" + tk.str(), *fm_tf, target, tagged(seed, "mc"));
      spec_tf = spectralize(*cov_tf, target.teacher);
    }
    if (wants(Protocol::TheoryRF)) {
      cov_rf = covariances("rf_H" + std::to_string(base.H) + "_" + tk.str(), *fm_rf, target, tagged(seed, "mc"));
      spec_rf = spectralize(*cov_rf, target.teacher);
    }

    Dataset data, test;
    Matrix test_tf, test_rf;
    if (need_sim) {
      Index M_max = 0;
      for (std::size_t c : task.cells) M_max = std::max(M_max, params_for(cfg_, cells_[c]).M);
      data = sample_dataset(target, M_max, tagged(seed, "target_data"));
      test = sample_dataset(target, cfg_.n_test, tagged(seed, "target_test"));
      if (fm_tf) test_tf = activations(*fm_tf, test.inputs);
      if (fm_rf && wants(Protocol::RF)) test_rf = activations(*fm_rf, test.inputs);
    }

    for (std::size_t c : task.cells) {
      const CellParams p = params_for(cfg_, cells_[c]);
      const double alpha = static_cast<double>(p.M) / static_cast<double>(p.H);
      Dataset sub;
      if (need_sim) {
        sub.inputs = data.inputs.topRows(p.M);
        sub.labels = data.labels.head(p.M);
        sub.latents = data.latents.topRows(p.M);
      }
      auto guarded = [&](Protocol pr, auto&& body) {
        if (!wants(pr)) return;
        try {
          out[c][pr] = body();
        } catch (const std::exception& e) {
          fails[c][pr] = e.what();
        }
      };

      std::optional<ReadoutFit> tf_fit;
      auto readout = [&](const FeatureMap& fm, const Matrix& test_v, const EquivalentModel* cov) {
        const Matrix V = activations(fm, sub.inputs);
        ReadoutFit fit = fit_ridge_logistic(V, sub.labels, cfg_.lambda, cfg_.logistic);
        SeedRecord r;
        r.seed = seed;
        r.error = readout_error(test_v, test.labels, fit.w2);
        r.converged = fit.converged;
        r.extra = fit.sidecar();
        r.extra["train_loss"] = readout_mean_loss(V, sub.labels, fit.w2);
        r.extra["train_error"] = readout_error(V, sub.labels, fit.w2);
        r.extra["w2_norm"] = fit.w2.norm();
        if (cov) {
          const double H = static_cast<double>(fm.hidden_dim()), L = static_cast<double>(target.latent_dim());
          r.extra["q_tilde"] = fit.w2.dot(cov->omega * fit.w2) / H;
          r.extra["m_tilde"] = target.teacher.dot(cov->phi * fit.w2) / std::sqrt(L * H);
        }
        return std::make_pair(r, fit);
      };
      guarded(Protocol::TF, [&] {
        auto [r, fit] = readout(*fm_tf, test_tf, cov_tf.get());
        tf_fit = fit;
        return r;
      });
      guarded(Protocol::RF, [&] { return readout(*fm_rf, test_rf, nullptr).first; });
      guarded(Protocol::TwoLayer, [&] {
        TrainOpts o = cfg_.two_layer_opts;
        o.seed = tagged(seed, "2l_train");
        const auto res = train(init_network(p.D, p.H, tagged(seed, "2l_init")), sub, o);
        SeedRecord r;
        r.seed = seed;
        r.converged = !res.trace.diverged;
        r.error = res.trace.diverged ? std::nan("") : classification_error(res.net, test.inputs, test.labels);
        r.extra = {{"train_error", classification_error(res.net, sub.inputs, sub.labels)},
                   {"epochs", res.trace.stop_epoch},
                   {"final_train_loss", res.trace.epochs.empty() ? 0.0 : res.trace.epochs.back().train_loss}};
        if (res.trace.diverged) throw std::runtime_error("2L diverged at epoch " + std::to_string(res.trace.diverged_epoch));
        return r;
      });
      guarded(Protocol::FtTF, [&] {
        if (!tf_fit) {
          const Matrix V = activations(*fm_tf, sub.inputs);
          tf_fit = fit_ridge_logistic(V, sub.labels, cfg_.lambda, cfg_.logistic);
        }
        TrainOpts o = cfg_.fine_tune_opts;
        o.seed = tagged(seed, "ft_train");
        const auto res = fine_tune(stack(*fm_tf, tf_fit->w2), sub, o);
        SeedRecord r;
        r.seed = seed;
        r.converged = !res.trace.diverged;
        if (res.trace.diverged) throw std::runtime_error("ftTF diverged at epoch " + std::to_string(res.trace.diverged_epoch));
        r.error = classification_error(res.net, test.inputs, test.labels);
        r.extra = {{"train_error", classification_error(res.net, sub.inputs, sub.labels)}};
        return r;
      });
      auto theory = [&](const SpectralModel& spec) {
        const OverlapState st = iterate_saddle(spec, alpha, cfg_.lambda, cfg_.solver);
        SeedRecord r;
        r.seed = seed;
        r.converged = st.converged;
        r.error = generalization_error(st.m, st.q, spec.rho_norm);
        r.extra = st.to_json();
        r.extra["rho_norm"] = spec.rho_norm;
        r.extra["alpha"] = alpha;
        return r;
      };
      guarded(Protocol::TheoryTF, [&] { return theory(*spec_tf); });
      guarded(Protocol::TheoryRF, [&] { return theory(*spec_rf); });
    }
  } catch (const std::exception& e) {
    for (Protocol p : prot) fail_all(p, e.what());
  }
  for (std::size_t c : task.cells) deliver(c, out[c], fails[c], seed);
}

void Runner::deliver(std::size_t cell, const std::map<Protocol, SeedRecord>& recs,
                     const std::map<Protocol, std::string>& fails, std::uint64_t seed) {
  bool complete = false;
  {
    std::lock_guard lock(mu_);
    Pending& pend = pending_[cell];
    for (Protocol p : cfg_.protocols) {
      CellRecord& r = pend.records[p];
      r.coords = cells_[cell];
      r.protocol = p;
      if (auto it = recs.find(p); it != recs.end()) {
        r.per_seed.push_back(it->second);
      } else if (auto f = fails.find(p); f != fails.end()) {
        r.failures.push_back("seed " + std::to_string(seed) + ": " + f->second);
      }
    }
    pend.expected = cell_seeds_[cell].size();
    complete = ++pend.received == pend.expected;
  }
  if (complete) write_cell(cell);
}

void Runner::write_cell(std::size_t cell) {
  std::vector<CellRecord> recs;
  {
    std::lock_guard lock(mu_);
    for (Protocol p : cfg_.protocols) {
      CellRecord r = std::move(pending_[cell].records[p]);
      std::sort(r.failures.begin(), r.failures.end());
      summarize(r);
      recs.push_back(std::move(r));
    }
    pending_.erase(cell);
    finished_[cell] = recs;
    ++counters_.cells_computed;
  }
  if (!opts_.run_dir.empty()) {
    json records = json::array();
    for (const auto& r : recs) records.push_back(record_json(r));
    write_json(opts_.run_dir / "cells" / cell_file_name(cell),
               {{"index", cell}, {"coords", coords_json(cells_[cell])}, {"records", records}});
  }
  std::ostringstream msg;
  msg << "cell " << cell + 1 << "/" << cells_.size();
  for (const auto& [a, v] : cells_[cell]) msg << " " << to_string(a) << "=" << v;
  for (const auto& r : recs) msg << " " << to_string(r.protocol) << "=" << r.mean_error;
  log(msg.str());
}

void Runner::write_manifest(const std::string& status) {
  if (opts_.run_dir.empty()) return;
  json seeds_used = json::array();
  for (std::size_t i = 0; i < cells_.size(); ++i) seeds_used.push_back(cell_seeds_[i]);
  RunCounters total = counters_;
  total.source_trainings += previous_.source_trainings;
  total.covariance_estimations += previous_.covariance_estimations;
  write_json(opts_.run_dir / "manifest.json",
             {{"config", cfg_.to_json()},
              {"config_hash", cfg_.hash()},
              {"status", status},
              {"updated", static_cast<long long>(std::time(nullptr))},
              {"cells", cells_.size()},
              {"seeds_per_cell", seeds_used},
              {"counters",
               {{"source_trainings", total.source_trainings},
                {"covariance_estimations", total.covariance_estimations}}},
              {"last_run",
               {{"source_trainings", counters_.source_trainings},
                {"covariance_estimations", counters_.covariance_estimations},
                {"cells_computed", counters_.cells_computed},
                {"cells_reused", counters_.cells_reused}}}});
}

GridResult Runner::run() {
  cfg_.validate();
  cells_ = enumerate_cells(cfg_);
  done_.assign(cells_.size(), false);
  for (const auto& c : cells_) cell_seeds_.push_back(cfg_.seeds_for(params_for(cfg_, c).m_over_h));

  if (!opts_.run_dir.empty()) {
    const fs::path manifest = opts_.run_dir / "manifest.json";
    if (fs::exists(manifest)) {
      if (!opts_.resume)
        throw std::runtime_error("run directory " + opts_.run_dir.string() + " already holds a run; use resume");
      const json m = read_json(manifest);
      if (m.at("config_hash").get<std::string>() != cfg_.hash())
        throw std::runtime_error("cannot resume " + opts_.run_dir.string() + ": configuration differs from the stored run");
      previous_.source_trainings = m.at("counters").at("source_trainings").get<int>();
      previous_.covariance_estimations = m.at("counters").at("covariance_estimations").get<int>();
      for (std::size_t i = 0; i < cells_.size(); ++i) {
        const fs::path f = opts_.run_dir / "cells" / cell_file_name(i);
        if (!fs::exists(f)) continue;
        const json cj = read_json(f);
        std::vector<CellRecord> recs;
        for (const auto& r : cj.at("records")) recs.push_back(record_from_json(r, cells_[i]));
        finished_[i] = std::move(recs);
        done_[i] = true;
        ++counters_.cells_reused;
      }
    }
    fs::create_directories(opts_.run_dir / "cells");
    fs::create_directories(cache_dir());
    write_manifest("running");
  }

  // One task per (slice, seed), covering every missing cell of the slice that uses the seed.
  std::vector<std::string> slice_order;
  std::map<std::string, std::map<std::uint64_t, std::vector<std::size_t>>> slices;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (done_[i]) continue;
    const std::string key = slice_key(cells_[i]);
    if (!slices.count(key)) slice_order.push_back(key);
    for (std::uint64_t s : cell_seeds_[i]) slices[key][s].push_back(i);
  }
  std::vector<Task> tasks;
  for (const auto& key : slice_order)
    for (const auto& [seed, cells] : slices[key]) tasks.push_back({key, seed, cells});

  const int jobs = std::min<int>(resolve_jobs(opts_.jobs), std::max<std::size_t>(1, tasks.size()));
  log("grid: " + std::to_string(cells_.size()) + " cells, " + std::to_string(tasks.size()) + " tasks, " +
      std::to_string(jobs) + " workers");
  std::atomic<std::size_t> next{0}, done{0};
  auto worker = [&] {
    if (jobs > 1) omp_set_num_threads(1);
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      execute(tasks[i]);
      log("task " + std::to_string(++done) + "/" + std::to_string(tasks.size()) + " (seed " +
          std::to_string(tasks[i].seed) + ") done");
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  write_manifest("complete");

  GridResult result;
  result.config = cfg_;
  result.counters = counters_;
  for (std::size_t i = 0; i < cells_.size(); ++i)
    for (auto& r : finished_.at(i)) result.records.push_back(r);
  return result;
}

}  // namespace

GridResult run_grid(const ExperimentConfig& cfg, const RunOptions& opts) {
  Runner runner(cfg, opts);
  return runner.run();
}

GridResult learning_curve(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.axes.size() != 1 || cfg.axes[0].name != AxisName::M_target)
    throw std::invalid_argument("learning_curve: expects exactly one axis, M_target");
  return run_grid(cfg, opts);
}

GridResult phase_diagram(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.axes.size() != 2) throw std::invalid_argument("phase_diagram: expects exactly two axes");
  return run_grid(cfg, opts);
}

GridResult load_run(const fs::path& run_dir) {
  const json m = read_json(run_dir / "manifest.json");
  GridResult result;
  result.config = ExperimentConfig::from_json(m.at("config"));
  const auto cells = enumerate_cells(result.config);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path f = run_dir / "cells" / cell_file_name(i);
    if (!fs::exists(f)) continue;
    const json cj = read_json(f);
    for (const auto& r : cj.at("records")) result.records.push_back(record_from_json(r, cells[i]));
  }
  result.counters.source_trainings = m.at("counters").at("source_trainings").get<int>();
  result.counters.covariance_estimations = m.at("counters").at("covariance_estimations").get<int>();
  return result;
}

// ---------------------------------------------------------------------------
// Export

std::string to_csv(const GridResult& result) {
  std::ostringstream out;
  for (const Axis& a : result.config.axes) out << to_string(a.name) << ',';
  out << "protocol,mean_error,sem,n_seeds,converged_fraction\n";
  for (const auto& r : result.records) {
    for (const Axis& a : result.config.axes) out << format_number(r.coord(a.name)) << ',';
    out << to_string(r.protocol) << ',' << format_number(r.mean_error) << ',' << format_number(r.sem) << ','
        << r.n_seeds << ',' << format_number(r.converged_fraction) << '\n';
  }
  return out.str();
}

void write_csv(const GridResult& result, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv(result);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<CellRecord> read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    return cols;
  };
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty CSV: " + path.string());
  const auto header = split(line);
  const auto prot_col = std::find(header.begin(), header.end(), "protocol");
  if (prot_col == header.end() || header.end() - prot_col != 5)
    throw std::runtime_error("unexpected CSV header in " + path.string());
  const auto n_axes = static_cast<std::size_t>(prot_col - header.begin());
  std::vector<AxisName> axes;
  for (std::size_t i = 0; i < n_axes; ++i) axes.push_back(parse_axis(header[i]));

  std::vector<CellRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = split(line);
    if (cols.size() != header.size()) throw std::runtime_error("malformed CSV row: " + line);
    CellRecord r;
    for (std::size_t i = 0; i < n_axes; ++i) r.coords.emplace_back(axes[i], std::stod(cols[i]));
    r.protocol = parse_protocol(cols[n_axes]);
    r.mean_error = std::stod(cols[n_axes + 1]);
    r.sem = std::stod(cols[n_axes + 2]);
    r.n_seeds = std::stoi(cols[n_axes + 3]);
    r.converged_fraction = std::stod(cols[n_axes + 4]);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Diverging palette: red (negative) - white - blue (positive).
std::string diverging_color(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const double a = std::abs(t);
  int r, g, b;
  if (t >= 0.0) {
    r = static_cast<int>(std::lround(255 - a * (255 - 33)));
    g = static_cast<int>(std::lround(255 - a * (255 - 102)));
    b = static_cast<int>(std::lround(255 - a * (255 - 172)));
  } else {
    r = static_cast<int>(std::lround(255 - a * (255 - 178)));
    g = static_cast<int>(std::lround(255 - a * (255 - 24)));
    b = static_cast<int>(std::lround(255 - a * (255 - 43)));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string short_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace

std::string gain_heatmap_svg(const GridResult& result, Protocol ref, Protocol tf) {
  const auto& axes = result.config.axes;
  if (axes.size() != 2) throw std::invalid_argument("gain heatmap needs a two-axis grid");
  const Axis& ay = axes[0];
  const Axis& ax = axes[1];
  const std::size_t ny = ay.values.size(), nx = ax.values.size();
  std::vector<double> g(nx * ny, std::nan(""));
  double vmax = 0.0;
  for (std::size_t i = 0; i < ny; ++i)
    for (std::size_t j = 0; j < nx; ++j) {
      const Coords c{{ay.name, ay.values[i]}, {ax.name, ax.values[j]}};
      const CellRecord* a = result.find(c, ref);
      const CellRecord* b = result.find(c, tf);
      if (!a || !b || !std::isfinite(a->mean_error) || !std::isfinite(b->mean_error)) continue;
      g[i * nx + j] = a->mean_error - b->mean_error;
      vmax = std::max(vmax, std::abs(g[i * nx + j]));
    }
  if (vmax == 0.0) vmax = 1.0;

  const int cell = 40, left = 80, top = 40, bar = 20;
  const int width = left + static_cast<int>(nx) * cell + 100, height = top + static_cast<int>(ny) * cell + 70;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">gain " << to_string(ref) << " - " << to_string(tf)
    << " (blue: " << to_string(tf) << " better)</text>\n";
  // Rows are drawn with the first value at the bottom.
  for (std::size_t i = 0; i < ny; ++i)
    for (std::size_t j = 0; j < nx; ++j) {
      const double v = g[i * nx + j];
      const int x = left + static_cast<int>(j) * cell, y = top + static_cast<int>(ny - 1 - i) * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
        << (std::isfinite(v) ? diverging_color(v / vmax) : std::string("#cccccc")) << "\"><title>"
        << (std::isfinite(v) ? short_number(v) : std::string("missing")) << "</title></rect>\n";
    }
  for (std::size_t j = 0; j < nx; ++j)
    s << "<text x=\"" << left + static_cast<int>(j) * cell + cell / 2 << "\" y=\"" << top + static_cast<int>(ny) * cell + 15
      << "\" text-anchor=\"middle\">" << short_number(ax.values[j]) << "</text>\n";
  for (std::size_t i = 0; i < ny; ++i)
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + static_cast<int>(ny - 1 - i) * cell + cell / 2 + 4
      << "\" text-anchor=\"end\">" << short_number(ay.values[i]) << "</text>\n";
  s << "<text x=\"" << left + static_cast<int>(nx) * cell / 2 << "\" y=\"" << top + static_cast<int>(ny) * cell + 35
    << "\" text-anchor=\"middle\">" << to_string(ax.name) << (ax.name == AxisName::M_target ? " (M/H)" : "")
    << "</text>\n";
  s << "<text x=\"15\" y=\"" << top + static_cast<int>(ny) * cell / 2 << "\" transform=\"rotate(-90 15 "
    << top + static_cast<int>(ny) * cell / 2 << ")\" text-anchor=\"middle\">" << to_string(ay.name) << "</text>\n";
  // Color bar.
  const int bx = left + static_cast<int>(nx) * cell + 30, bh = static_cast<int>(ny) * cell;
  for (int k = 0; k < bh; ++k) {
    const double t = 1.0 - 2.0 * k / std::max(1, bh - 1);
    s << "<rect x=\"" << bx << "\" y=\"" << top + k << "\" width=\"" << bar << "\" height=\"1\" fill=\""
      << diverging_color(t) << "\"/>\n";
  }
  s << "<text x=\"" << bx + bar + 4 << "\" y=\"" << top + 8 << "\">" << short_number(vmax) << "</text>\n";
  s << "<text x=\"" << bx + bar + 4 << "\" y=\"" << top + bh / 2 + 4 << "\">0</text>\n";
  s << "<text x=\"" << bx + bar + 4 << "\" y=\"" << top + bh << "\">" << short_number(-vmax) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_gain_heatmap(const GridResult& result, Protocol ref, Protocol tf, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << gain_heatmap_svg(result, ref, tf);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace chmm
