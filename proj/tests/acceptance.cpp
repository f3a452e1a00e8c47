// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--only 1,3] [--fresh] [--jobs N] [--verbose]
//
// Grid runs are stored under DIR (one run directory per criterion plus a shared
// source-network cache) and resumed on the next invocation; --fresh wipes DIR.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "chmm/cli.hpp"
#include "chmm/container.hpp"
#include "chmm/convex.hpp"
#include "chmm/equivalence.hpp"
#include "chmm/experiments.hpp"
#include "chmm/kernels.hpp"
#include "chmm/replica.hpp"
#include "chmm/rng.hpp"
#include "chmm/twolayer.hpp"

using namespace chmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Env {
  fs::path work;
  int jobs = 0;
  bool verbose = false;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Runs (or resumes) a grid in work/name; a stale run with a different config is replaced.
GridResult run(const Env& env, const std::string& name, const ExperimentConfig& cfg) {
  RunOptions o;
  o.run_dir = env.work / name;
  o.cache_dir = env.work / "sources";
  o.jobs = env.jobs;
  o.verbose = env.verbose;
  o.resume = true;
  const fs::path manifest = o.run_dir / "manifest.json";
  if (fs::exists(manifest) && read_json(manifest).at("config_hash").get<std::string>() != cfg.hash()) {
    std::cout << "  (" << name << ": configuration changed, recomputing)\n";
    fs::remove_all(o.run_dir);
  }
  return run_grid(cfg, o);
}

ExperimentConfig base_config() {
  ExperimentConfig c;
  c.D = 1000;
  c.H = 500;
  c.M_source = 51200;
  c.n_test = 10000;
  c.source_pool = 3;
  return c;
}

// Theory runs need a finer covariance estimate than the 10 H default.
void fine_covariances(ExperimentConfig& c) { c.n_mc = 100 * c.H; }

std::vector<double> curve(const GridResult& r, Protocol p, const std::vector<double>& xs) {
  std::vector<double> out;
  for (double x : xs) out.push_back(r.at({{AxisName::M_target, x}}, p).mean_error);
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void table(const GridResult& r, const std::vector<Protocol>& ps) {
  for (const auto& rec : r.records) {
    if (std::find(ps.begin(), ps.end(), rec.protocol) == ps.end()) continue;
    std::cout << "   ";
    for (const auto& [a, v] : rec.coords) std::cout << " " << to_string(a) << "=" << fmt("%.4g", v);
    std::cout << " " << to_string(rec.protocol) << " err=" << fmt("%.4f", rec.mean_error)
              << " sem=" << fmt("%.4f", rec.sem) << " n=" << rec.n_seeds;
    if (!rec.failures.empty()) std::cout << " failures=" << rec.failures.size();
    std::cout << '\n';
  }
}

// ---------------------------------------------------------------------------

ExperimentConfig c1_config() {
  auto c = base_config();
  c.L_s = c.L_t = 150;
  c.transform = {1.0, 0.3, 1.0, 0};
  c.lambda = 1e-7;
  c.axes = {Axis::range(AxisName::M_target, 0.1, 100.0, 8, true)};
  c.protocols = {Protocol::TF, Protocol::RF, Protocol::TheoryTF, Protocol::TheoryRF};
  c.schedule.enabled = true;
  c.seeds = {1};
  fine_covariances(c);
  return c;
}

Outcome criterion1(const Env& env) {
  const auto cfg = c1_config();
  const auto r = run(env, "c1_learning_curve", cfg);
  table(r, cfg.protocols);
  const auto& xs = cfg.axes[0].values;
  bool pass = true;
  std::ostringstream d;
  for (auto [sim, th] : {std::pair{Protocol::TF, Protocol::TheoryTF}, std::pair{Protocol::RF, Protocol::TheoryRF}}) {
    const auto es = curve(r, sim, xs), et = curve(r, th, xs);
    const std::size_t peak = argmax(et);
    double worst_far = 0.0, worst_near = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double dev = std::abs(es[i] - et[i]);
      const bool near = (i + 1 >= peak) && (i <= peak + 1);
      if (!std::isfinite(dev)) pass = false;
      if (near) worst_near = std::max(worst_near, dev);
      else worst_far = std::max(worst_far, dev);
      if (dev > (near ? 0.05 : 0.02)) pass = false;
    }
    d << to_string(sim) << ": max |sim-theory| " << fmt("%.4f", worst_far) << " away from peak (M/H="
      << fmt("%.3g", xs[peak]) << "), " << fmt("%.4f", worst_near) << " near it; ";
  }
  return {pass, d.str()};
}

// Threshold: last grid index with zero mean training error.
int separability_index(const GridResult& r, Protocol p, const std::vector<double>& xs) {
  int last = -1;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (r.at({{AxisName::M_target, xs[i]}}, p).mean_extra("train_error") == 0.0) last = static_cast<int>(i);
  return last;
}

Outcome criterion2(const Env& env) {
  auto c = base_config();
  c.L_s = c.L_t = 200;
  c.transform = {1.0, 0.2, 0.8, 0};
  c.lambda = 1e-8;
  c.axes = {Axis::range(AxisName::M_target, 0.5, 16.0, 11, true)};
  c.protocols = {Protocol::TF, Protocol::RF};
  c.seeds = {1, 2, 3, 4, 5};
  const auto r = run(env, "c2_double_descent", c);
  const auto& xs = c.axes[0].values;
  bool pass = true;
  std::ostringstream d;
  int thr[2] = {-1, -1};
  int k = 0;
  for (Protocol p : c.protocols) {
    std::cout << "    " << to_string(p) << ":";
    for (double x : xs) {
      const auto& rec = r.at({{AxisName::M_target, x}}, p);
      std::cout << " " << fmt("%.3g", x) << ":" << fmt("%.3f", rec.mean_error) << "/"
                << fmt("%.2g", rec.mean_extra("train_loss"));
    }
    std::cout << "  (M/H:test error/train loss)\n";
    const auto e = curve(r, p, xs);
    const std::size_t peak = argmax(e);
    const int t = separability_index(r, p, xs);
    thr[k++] = t;
    const bool local_max = peak > 0 && peak + 1 < xs.size() && e[peak] > e[peak - 1] && e[peak] > e[peak + 1];
    const bool at_threshold = t >= 0 && std::abs(static_cast<int>(peak) - t) <= 1;
    pass = pass && local_max && at_threshold;
    d << to_string(p) << " peak at M/H=" << fmt("%.3g", xs[peak]) << (local_max ? "" : " (not a local max)")
      << ", training error zero up to M/H=" << (t >= 0 ? fmt("%.3g", xs[static_cast<std::size_t>(t)]) : "none")
      << "; ";
  }
  const bool shift = thr[0] >= 0 && thr[1] >= 0 && thr[0] < thr[1];
  d << "TF threshold " << (shift ? "<" : "not <") << " RF threshold";
  return {pass && shift, d.str()};
}

ExperimentConfig fig3_config() {
  auto c = base_config();
  c.L_s = c.L_t = 200;
  c.transform = {1.0, 0.0, 1.0, 0};
  c.lambda = 1e-7;
  c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  fine_covariances(c);
  return c;
}

Outcome criterion3(const Env& env) {
  auto c = fig3_config();
  c.axes = {Axis::range(AxisName::q_teacher, 0.0, 1.0, 5, false), Axis::range(AxisName::M_target, 0.1, 10.0, 5, true)};
  c.protocols = {Protocol::TheoryTF, Protocol::TheoryRF};
  const auto r = run(env, "c3_negative_transfer", c);
  table(r, c.protocols);
  bool found = false;
  std::ostringstream d;
  double best = -1.0;
  for (double q : c.axes[0].values)
    for (double x : c.axes[1].values) {
      if (q > 0.2 || x > 1.0) continue;
      const auto& tf = r.at({{AxisName::q_teacher, q}, {AxisName::M_target, x}}, Protocol::TheoryTF);
      const auto& rf = r.at({{AxisName::q_teacher, q}, {AxisName::M_target, x}}, Protocol::TheoryRF);
      // Paired differences over the common seeds.
      std::vector<double> diff;
      for (const auto& a : tf.per_seed)
        for (const auto& b : rf.per_seed)
          if (a.seed == b.seed && std::isfinite(a.error) && std::isfinite(b.error)) diff.push_back(a.error - b.error);
      if (diff.size() < 2) continue;
      double mean = 0.0, ss = 0.0;
      for (double v : diff) mean += v;
      mean /= static_cast<double>(diff.size());
      for (double v : diff) ss += (v - mean) * (v - mean);
      const double se = std::sqrt(ss / static_cast<double>(diff.size() - 1) / static_cast<double>(diff.size()));
      if (mean > se) found = true;
      if (mean - se > best) {
        best = mean - se;
        d.str("");
        d << "q=" << q << ", M/H=" << fmt("%.3g", x) << ": TF-RF=" << fmt("%.4f", mean) << " (se " << fmt("%.4f", se)
          << ")";
      }
    }
  return {found, (found ? "negative transfer at " : "no negative transfer; closest ") + d.str()};
}

Outcome criterion4(const Env& env) {
  auto c = fig3_config();
  c.axes = {Axis{AxisName::M_target, {0.1, 0.5, 30.0}, true}};
  c.protocols = {Protocol::TheoryTF, Protocol::TwoLayer};
  const auto r = run(env, "c4_tf_vs_2l", c);
  table(r, c.protocols);
  bool pass = true;
  std::ostringstream d;
  for (double x : c.axes[0].values) {
    const double tf = r.at({{AxisName::M_target, x}}, Protocol::TheoryTF).mean_error;
    const double tl = r.at({{AxisName::M_target, x}}, Protocol::TwoLayer).mean_error;
    const bool ok = x <= 0.5 ? tl - tf >= 0.02 : std::abs(tf - tl) <= 0.02;
    pass = pass && ok;
    d << "M/H=" << x << ": 2L-TF=" << fmt("%.4f", tl - tf) << (ok ? "" : " (fails)") << "; ";
  }
  return {pass, d.str()};
}

Outcome criterion5(const Env& env) {
  auto c = base_config();
  c.latent_sum = 500;
  c.L_t = 100;
  c.transform = {0.8, 0.0, 0.9, 0};
  c.lambda = 1e-6;
  c.axes = {Axis{AxisName::L_t, {100.0, 400.0}, false}, Axis{AxisName::M_target, {0.1, 1.0, 10.0}, true}};
  c.protocols = {Protocol::TheoryTF, Protocol::TheoryRF};
  c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  fine_covariances(c);
  const auto r = run(env, "c5_asymmetric", c);
  table(r, c.protocols);
  auto g = [&](double Lt) {
    const std::vector<std::pair<AxisName, double>> at{{AxisName::L_t, Lt}, {AxisName::M_target, 0.1}};
    return gain(r.at(at, Protocol::TheoryRF).mean_error, r.at(at, Protocol::TheoryTF).mean_error);
  };
  const double hard_to_easy = g(100.0), easy_to_hard = g(400.0);
  std::ostringstream d;
  d << "gain at M/H=0.1: hard->easy " << fmt("%.4f", hard_to_easy) << ", easy->hard " << fmt("%.4f", easy_to_hard)
    << ", ratio " << fmt("%.2f", hard_to_easy / easy_to_hard);
  return {hard_to_easy > easy_to_hard, d.str()};
}

// Gaussian covariates with the feature map's second moments.
Outcome criterion6(const Env&) {
  const Index D = 400, H = 200, L = 100, n_test = 10000;
  const double lambda = 1e-4;
  const auto pair = sample_generative_pair(L, D, 11);
  const auto fm = random_feature_map(H, D, 12);
  const auto eq = estimate_covariances(fm, pair, 40 * H, 13);
  const auto spec = spectralize(eq, pair.teacher);

  const Eigen::MatrixXd S = eq.omega - eq.phi.transpose() * eq.phi;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::MatrixXd R =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Matrix Phi = eq.phi, Rm = R;
  auto sample = [&](Index M, std::uint64_t seed, Matrix& V, Vector& y) {
    const Matrix C = gaussian_matrix(M, L, seed, Stream::Covariates);
    V = C * Phi + gaussian_matrix(M, H, seed, Stream::Covariates, 1u << 30) * Rm;
    y = teacher_labels(C, pair.teacher);
  };

  bool pass = true;
  std::ostringstream d;
  for (double alpha : {0.5, 2.0, 10.0}) {
    const auto st = iterate_saddle(spec, alpha, lambda);
    const double theory = generalization_error(st.m, st.q, spec.rho_norm);
    double sum = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
      Matrix V, Vt;
      Vector y, yt;
      sample(static_cast<Index>(std::llround(alpha * H)), 100 + s, V, y);
      sample(n_test, 1000 + s, Vt, yt);
      const auto fit = fit_ridge_logistic(V, y, lambda);
      sum += readout_error(Vt, yt, fit.w2);
    }
    const double sim = sum / seeds;
    const bool ok = std::abs(sim - theory) <= 0.02 && st.converged;
    pass = pass && ok;
    d << "alpha=" << alpha << ": sim " << fmt("%.4f", sim) << " theory " << fmt("%.4f", theory) << "; ";
  }
  return {pass, d.str()};
}

Outcome criterion7(const Env& env) {
  const auto cfg = c1_config();
  const auto r = run(env, "c1_learning_curve", cfg);
  bool pass = true;
  bool any = false;
  std::ostringstream d;
  for (double x : cfg.axes[0].values) {
    const auto& sim = r.at({{AxisName::M_target, x}}, Protocol::TF);
    const auto& th = r.at({{AxisName::M_target, x}}, Protocol::TheoryTF);
    if (sim.n_seeds != 10) continue;
    any = true;
    const double qs = sim.mean_extra("q_tilde"), ms = sim.mean_extra("m_tilde");
    const double qt = th.mean_extra("q"), mt = th.mean_extra("m");
    const double eq = std::abs(qs - qt) / std::abs(qt), em = std::abs(ms - mt) / std::abs(mt);
    const bool ok = eq <= 0.05 && em <= 0.05 && sim.converged_fraction == 1.0;
    pass = pass && ok;
    d << "M/H=" << fmt("%.3g", x) << ": q " << fmt("%.4g", qs) << " vs " << fmt("%.4g", qt) << ", m " << fmt("%.4g", ms)
      << " vs " << fmt("%.4g", mt) << "; ";
  }
  return {pass && any, d.str()};
}

Outcome criterion8(const Env&) {
  std::ostringstream d;
  bool pass = true;
  auto rel = [](double a, double b, double floor) { return std::abs(a - b) / std::max(floor, std::abs(b)); };

  {  // two-layer gradient
    const Index D = 8, H = 5, M = 12;
    const auto net = init_network(D, H, 4);
    const Matrix X = gaussian_matrix(M, D, 5, Stream::TestData).cwiseAbs() * 3.0;
    Vector y(M);
    for (Index i = 0; i < M; ++i) y(i) = i % 3 == 0 ? -1.0 : 1.0;
    const double lam = 0.3, h = 1e-5;
    const auto g = loss_gradient(net, X, y, lam);
    double worst = 0.0;
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < D; ++j) {
        TwoLayerNet p = net, m = net;
        p.w1(i, j) += h;
        m.w1(i, j) -= h;
        const double fd = (loss(p, X, y, lam) - loss(m, X, y, lam)) / (2 * h);
        if (std::abs(fd) > 1e-9 || std::abs(g.w1(i, j)) > 1e-9) worst = std::max(worst, rel(g.w1(i, j), fd, 1e-8));
      }
      TwoLayerNet p = net, m = net;
      p.w2(i) += h;
      m.w2(i) -= h;
      worst = std::max(worst, rel(g.w2(i), (loss(p, X, y, lam) - loss(m, X, y, lam)) / (2 * h), 1e-8));
    }
    pass = pass && worst < 1e-4;
    d << "2L grad " << fmt("%.1e", worst) << "; ";
  }
  {  // energetic partials
    const double h = 1e-6;
    double worst = 0.0;
    for (double q : {0.3, 2.0, 40.0})
      for (double V : {0.05, 1.0, 20.0})
        for (double frac : {-0.5, 0.3, 0.9}) {
          const double rho = 1.3, m = frac * std::sqrt(rho * q);
          const auto e = energetic(q, V, m, rho);
          worst = std::max(worst, rel(e.dq, (energetic(q + h, V, m, rho).g - energetic(q - h, V, m, rho).g) / (2 * h), 1e-6));
          worst = std::max(worst, rel(e.dV, (energetic(q, V + h, m, rho).g - energetic(q, V - h, m, rho).g) / (2 * h), 1e-6));
          worst = std::max(worst, rel(e.dm, (energetic(q, V, m + h, rho).g - energetic(q, V, m - h, rho).g) / (2 * h), 1e-6));
        }
    pass = pass && worst < 1e-5;
    d << "energetic " << fmt("%.1e", worst) << "; ";
  }
  {  // entropic partials
    const Index H = 30, L = 12;
    const Matrix A = gaussian_matrix(H, H, 4, Stream::TestData);
    EquivalentModel eq;
    eq.omega = A * A.transpose() / static_cast<double>(H);
    eq.phi = gaussian_matrix(L, H, 5, Stream::TestData);
    eq.rho_norm = 1.0;
    eq.gamma = static_cast<double>(L) / static_cast<double>(H);
    const auto spec = spectralize(eq, gaussian_vector(L, 6, Stream::TestData));
    const double qh = 0.8, Vh = 1.7, mh = 0.45, lam = 0.03, h = 1e-5;
    const auto e = entropic(qh, Vh, mh, spec, lam);
    double worst = 0.0;
    worst = std::max(worst, rel(e.dq_hat, (entropic(qh + h, Vh, mh, spec, lam).g - entropic(qh - h, Vh, mh, spec, lam).g) / (2 * h), 1e-12));
    worst = std::max(worst, rel(e.dV_hat, (entropic(qh, Vh + h, mh, spec, lam).g - entropic(qh, Vh - h, mh, spec, lam).g) / (2 * h), 1e-12));
    worst = std::max(worst, rel(e.dm_hat, (entropic(qh, Vh, mh + h, spec, lam).g - entropic(qh, Vh, mh - h, spec, lam).g) / (2 * h), 1e-12));
    pass = pass && worst < 1e-8;
    d << "entropic " << fmt("%.1e", worst) << "; ";
  }
  {  // proximal stationarity
    double worst = 0.0;
    for (int y : {1, -1})
      for (double omega = -40.0; omega <= 25.0; omega += 0.37)
        for (double V : {1e-6, 0.01, 0.5, 1.0, 7.0, 20.0, 300.0})
          worst = std::max(worst, std::abs(prox_residual(y, omega, V, proximal_logistic(y, omega, V).u_star)));
    pass = pass && worst < 1e-10;
    d << "prox " << fmt("%.1e", worst) << "; ";
  }
  {  // convex uniqueness
    const Index M = 300, H = 40;
    const Matrix V = gaussian_matrix(M, H, 7, Stream::TestData).cwiseMax(0.0);
    Vector y(M);
    const Vector t = gaussian_vector(H, 8, Stream::TestData);
    for (Index i = 0; i < M; ++i) y(i) = (V.row(i).dot(t) + 0.3 * std::sin(static_cast<double>(i))) >= 0.0 ? 1.0 : -1.0;
    const auto base = fit_ridge_logistic(V, y, 1e-3);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Vector init = 10.0 * gaussian_vector(H, 20 + s, Stream::TestData);
      const auto f = fit_ridge_logistic(V, y, 1e-3, {}, init);
      worst = std::max(worst, (f.w2 - base.w2).cwiseAbs().maxCoeff());
    }
    pass = pass && worst < 1e-5;
    d << "convex uniqueness " << fmt("%.1e", worst) << "; ";
  }
  {  // trivial generalization errors
    const double rho = 1.3, q = 0.7, top = std::sqrt(rho * q);
    const bool ok = generalization_error(0.0, q, rho) == 0.5 && generalization_error(top, q, rho) == 0.0 &&
                    std::abs(generalization_error(0.5 * top, q, rho) - 1.0 / 3.0) < 1e-15;
    pass = pass && ok;
    d << "eps_g cases " << (ok ? "exact" : "wrong");
  }
  return {pass, d.str()};
}

Outcome criterion9(const Env&) {
  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "chmm_lab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return std::make_pair(code, out.str());
  };
  const std::vector<std::string> small = {"--D", "200", "--H", "100", "--L-s", "40", "--L-t", "40", "--M-source",
                                          "3000", "--source-epochs", "20", "--seed", "7", "--n-seeds", "2"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), small.begin(), small.end());
    return a;
  };
  const auto t1 = call(with({"theory", "--M-over-H", "0.3,1,3", "--jobs", "1"}));
  const auto t2 = call(with({"theory", "--M-over-H", "0.3,1,3", "--jobs", "2"}));
  const auto r1 = call(with({"transfer", "--M-target", "2", "--n-test", "2000", "--twolayer-epochs", "20",
                             "--ft-epochs", "10", "--jobs", "1"}));
  const auto r2 = call(with({"transfer", "--M-target", "2", "--n-test", "2000", "--twolayer-epochs", "20",
                             "--ft-epochs", "10", "--jobs", "2"}));
  const bool ok = t1.first == 0 && r1.first == 0 && t1.second == t2.second && r1.second == r2.second &&
                  !t1.second.empty() && !r1.second.empty();
  return {ok, std::string("theory CSV ") + (t1.second == t2.second ? "identical" : "differs") + ", transfer CSV " +
                  (r1.second == r2.second ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria", "acceptance"};
  Env env;
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool fresh = false;
  app.add_option("--work", work, "Work directory for cached runs")->capture_default_str();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_flag("--fresh", fresh, "Delete the work directory first");
  app.add_option("--jobs", env.jobs, "Worker threads");
  app.add_flag("--verbose", env.verbose, "Grid progress on stderr");
  CLI11_PARSE(app, argc, argv);
  env.work = work;
  if (fresh) fs::remove_all(env.work);
  fs::create_directories(env.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Env&)>>> criteria = {
      {"theory-simulation agreement", criterion1}, {"double descent and threshold shift", criterion2},
      {"negative transfer region", criterion3},   {"TF vs 2L crossover", criterion4},
      {"asymmetric transfer", criterion5},        {"Gaussian-equivalent covariates", criterion6},
      {"overlap concentration", criterion7},      {"numerical hygiene", criterion8},
      {"determinism", criterion9}};
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(env);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << " (" << fmt("%.0f", secs) << " s)" << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
