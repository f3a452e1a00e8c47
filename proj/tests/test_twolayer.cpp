#include <doctest.h>

#include <cmath>

#include "chmm/rng.hpp"
#include "chmm/twolayer.hpp"

using namespace chmm;

namespace {

// Straight-line reimplementation of the forward pass.
double scalar_logit(const TwoLayerNet& net, const Vector& x) {
  const Index H = net.hidden_dim(), D = net.input_dim();
  double out = 0.0;
  for (Index h = 0; h < H; ++h) {
    double pre = 0.0;
    for (Index j = 0; j < D; ++j) pre += net.w1(h, j) * x(j);
    pre /= static_cast<double>(D);
    out += (pre > 0.0 ? pre : 0.0) * net.w2(h);
  }
  return out / std::sqrt(static_cast<double>(H));
}

Dataset small_dataset(Index M, Index D, std::uint64_t seed) {
  const auto pair = sample_generative_pair(4, D, seed);
  return sample_dataset(pair, M, seed + 1);
}

}  // namespace

TEST_CASE("init_network: shapes, determinism, moments") {
  const auto tiny = init_network(1, 1, 3);
  CHECK(tiny.w1.rows() == 1);
  CHECK(tiny.w1.cols() == 1);
  CHECK(tiny.w2.size() == 1);
  CHECK(init_network(1, 1, 3).w1 == tiny.w1);
  CHECK(init_network(1, 1, 3).w2 == tiny.w2);

  const auto net = init_network(1000, 500, 9);
  const double n = static_cast<double>(net.w1.size());
  const double mean = net.w1.mean();
  const double var = (net.w1.array() - mean).square().sum() / (n - 1.0);
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("forward: trivial cases and scalar oracle") {
  auto net = init_network(10, 7, 2);
  const auto zero = forward(net, Vector::Zero(10));
  CHECK(zero.hidden.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.logit == 0.0);
  CHECK(zero.prob == 0.5);

  const Vector x = gaussian_vector(10, 5, Stream::TestData);
  const auto r = forward(net, x);
  CHECK(std::abs(r.logit - scalar_logit(net, x)) < 1e-12);
  CHECK(r.prob == doctest::Approx(1.0 / (1.0 + std::exp(-r.logit))).epsilon(1e-14));

  Matrix X(3, 10);
  for (int i = 0; i < 3; ++i) X.row(i) = gaussian_vector(10, 20 + i, Stream::TestData).transpose();
  const Vector z = logits(net, X);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(z(i) - scalar_logit(net, X.row(i).transpose())) < 1e-12);

  net.w2.setZero();
  CHECK(forward(net, x).prob == 0.5);
}

TEST_CASE("loss_gradient matches central finite differences") {
  const Index D = 8, H = 5, M = 6;
  const auto net = init_network(D, H, 4);
  Matrix X = gaussian_matrix(M, D, 5, Stream::TestData).cwiseAbs() * 3.0;
  Vector y(M);
  y << 1, -1, -1, 1, 1, -1;
  const double lam = 0.3, h = 1e-5;
  const auto g = loss_gradient(net, X, y, lam);
  CHECK(g.loss == doctest::Approx(loss(net, X, y, lam)).epsilon(1e-14));

  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b))); };
  double worst = 0.0;
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < D; ++j) {
      TwoLayerNet p = net, m = net;
      p.w1(i, j) += h;
      m.w1(i, j) -= h;
      const double fd = (loss(p, X, y, lam) - loss(m, X, y, lam)) / (2 * h);
      if (std::abs(fd) > 1e-9 || std::abs(g.w1(i, j)) > 1e-9) worst = std::max(worst, rel(fd, g.w1(i, j)));
    }
    TwoLayerNet p = net, m = net;
    p.w2(i) += h;
    m.w2(i) -= h;
    const double fd = (loss(p, X, y, lam) - loss(m, X, y, lam)) / (2 * h);
    worst = std::max(worst, rel(fd, g.w2(i)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("Adam: zero gradient leaves weights unchanged") {
  Vector p = gaussian_vector(6, 1, Stream::TestData);
  const Vector before = p;
  const Vector g = Vector::Zero(6);
  Adam adam(6, 0.1);
  for (int i = 0; i < 5; ++i) adam.step(Eigen::Map<Vector>(p.data(), 6), Eigen::Map<const Vector>(g.data(), 6));
  CHECK(p == before);
  CHECK(adam.steps() == 5);
}

TEST_CASE("train: separable toy reaches zero training error") {
  Dataset data;
  data.inputs.resize(2, 3);
  data.inputs << 1.0, 0.0, 0.5,  //
      0.0, 1.0, 0.5;
  data.labels.resize(2);
  data.labels << 1.0, -1.0;
  data.latents = Matrix::Zero(2, 1);
  TrainOpts opts = TrainOpts::two_layer_defaults();
  opts.max_epochs = 300;
  opts.batch_size = 2;
  const auto r = train(init_network(3, 4, 1), data, opts);
  CHECK(classification_error(r.net, data.inputs, data.labels) == 0.0);
  CHECK_FALSE(r.trace.diverged);
}

TEST_CASE("train: defaults") {
  const auto s = TrainOpts::source_defaults();
  CHECK(s.learning_rate == 1e-3);
  CHECK(s.batch_size == 50);
  CHECK(s.max_epochs == 200);
  CHECK(s.early_stop);
  CHECK(s.patience == 0);
  const auto t = TrainOpts::two_layer_defaults();
  CHECK(t.learning_rate == 0.1);
  CHECK(t.batch_size == 1000);
  CHECK(t.max_epochs == 200);
  CHECK_FALSE(t.early_stop);
  const auto f = TrainOpts::fine_tune_defaults();
  CHECK(f.learning_rate == 0.01);
  CHECK(f.batch_size == 1000);
  CHECK(f.max_epochs == 200);
  const auto back = TrainOpts::from_json(s.to_json());
  CHECK(back.learning_rate == s.learning_rate);
  CHECK(back.patience == s.patience);
}

TEST_CASE("train: early stopping with patience 0 returns the pre-increase epoch") {
  const auto data = small_dataset(400, 20, 3);
  TrainOpts opts = TrainOpts::source_defaults();
  opts.learning_rate = 0.05;
  opts.batch_size = 20;
  opts.max_epochs = 100;
  opts.seed = 5;
  const auto r = train(init_network(20, 30, 2), data, opts);
  const auto& ep = r.trace.epochs;
  REQUIRE(!ep.empty());
  if (r.trace.stop_epoch < opts.max_epochs) {
    // Stopped at the first epoch whose holdout loss failed to improve.
    CHECK(r.trace.best_epoch == r.trace.stop_epoch - 1);
    CHECK(ep.back().holdout_loss >= ep[ep.size() - 2].holdout_loss);
  }
  for (std::size_t i = 1; i + 1 < ep.size(); ++i) CHECK(ep[i].holdout_loss < ep[i - 1].holdout_loss);
}

TEST_CASE("train: deterministic given seed") {
  const auto data = small_dataset(120, 10, 7);
  TrainOpts opts = TrainOpts::source_defaults();
  opts.max_epochs = 5;
  opts.seed = 11;
  const auto a = train(init_network(10, 6, 1), data, opts);
  const auto b = train(init_network(10, 6, 1), data, opts);
  CHECK(a.net.w1 == b.net.w1);
  CHECK(a.net.w2 == b.net.w2);
  CHECK(a.trace.to_csv() == b.trace.to_csv());
}

TEST_CASE("train: second layer only keeps w1 frozen") {
  const auto data = small_dataset(100, 10, 1);
  TrainOpts opts = TrainOpts::two_layer_defaults();
  opts.max_epochs = 3;
  const auto init = init_network(10, 6, 1);
  const auto r = train(init, data, opts, Trainable::SecondOnly);
  CHECK(r.net.w1 == init.w1);
  CHECK(r.net.w2 != init.w2);
}

TEST_CASE("train: divergence is reported with its epoch") {
  const auto data = small_dataset(100, 10, 1);
  TrainOpts opts = TrainOpts::two_layer_defaults();
  opts.max_epochs = 3;
  auto net = init_network(10, 6, 1);
  net.w2(0) = std::numeric_limits<double>::infinity();
  const auto r = train(net, data, opts);
  CHECK(r.trace.diverged);
  CHECK(r.trace.diverged_epoch == 1);
}

TEST_CASE("fine_tune: zero learning rate leaves the network unchanged") {
  const auto data = small_dataset(100, 10, 2);
  TrainOpts opts = TrainOpts::fine_tune_defaults();
  opts.learning_rate = 0.0;
  opts.max_epochs = 3;
  const auto init = init_network(10, 6, 3);
  const auto r = fine_tune(init, data, opts);
  CHECK(r.net.w1 == init.w1);
  CHECK(r.net.w2 == init.w2);
}

TEST_CASE("TrainOpts validation") {
  TrainOpts o;
  o.batch_size = 0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.holdout_fraction = 1.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.learning_rate = -1.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
}
