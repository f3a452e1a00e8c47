#include "chmm/twolayer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "chmm/container.hpp"
#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

namespace chmm {

using kernels::sigmoid;
using kernels::softplus;

void TrainOpts::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  if (max_epochs < 0) throw std::invalid_argument("train: max_epochs must be non-negative");
  if (l2_lambda < 0.0) throw std::invalid_argument("train: l2_lambda must be non-negative");
  if (patience < 0) throw std::invalid_argument("train: patience must be non-negative");
  if (early_stop && !(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw std::invalid_argument("train: early stopping needs holdout_fraction in (0,1)");
}

nlohmann::json TrainOpts::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"max_epochs", max_epochs},
          {"l2_lambda", l2_lambda},         {"early_stop", early_stop}, {"patience", patience},
          {"holdout_fraction", holdout_fraction}, {"seed", seed}};
}

TrainOpts TrainOpts::from_json(const nlohmann::json& j) {
  TrainOpts o;
  o.learning_rate = j.at("learning_rate").get<double>();
  o.batch_size = j.at("batch_size").get<Index>();
  o.max_epochs = j.at("max_epochs").get<int>();
  o.l2_lambda = j.at("l2_lambda").get<double>();
  o.early_stop = j.at("early_stop").get<bool>();
  o.patience = j.at("patience").get<int>();
  o.holdout_fraction = j.at("holdout_fraction").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  return o;
}

TrainOpts TrainOpts::source_defaults() { return TrainOpts{}; }

TrainOpts TrainOpts::two_layer_defaults() {
  TrainOpts o;
  o.learning_rate = 0.1;
  o.batch_size = 1000;
  o.early_stop = false;
  return o;
}

TrainOpts TrainOpts::fine_tune_defaults() {
  TrainOpts o;
  o.learning_rate = 0.01;
  o.batch_size = 1000;
  o.early_stop = false;
  return o;
}

std::string TrainTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,holdout_loss\n";
  for (const auto& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.holdout_loss << '\n';
  return out.str();
}

TwoLayerNet init_network(Index D, Index H, std::uint64_t seed) {
  if (D < 1 || H < 1) throw std::invalid_argument("init_network: dimensions must be positive");
  TwoLayerNet net;
  net.w1 = gaussian_matrix(H, D, seed, Stream::NetworkInit);
  net.w2 = gaussian_vector(H, seed, Stream::NetworkInit, static_cast<std::uint64_t>(H));
  return net;
}

ForwardResult forward(const TwoLayerNet& net, const Vector& x) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
  ForwardResult r;
  const double D = static_cast<double>(net.input_dim());
  r.hidden = (net.w1 * x / D).cwiseMax(0.0);
  r.logit = r.hidden.dot(net.w2) / std::sqrt(static_cast<double>(net.hidden_dim()));
  r.prob = sigmoid(r.logit);
  return r;
}

Vector logits(const TwoLayerNet& net, const Matrix& X) {
  Matrix hidden;
  kernels::relu_project(X, net.w1, 1.0 / static_cast<double>(net.input_dim()), hidden);
  return hidden * net.w2 / std::sqrt(static_cast<double>(net.hidden_dim()));
}

double loss(const TwoLayerNet& net, const Matrix& X, const Vector& y, double l2_lambda) {
  const Vector z = logits(net, X);
  double total = 0.0;
  for (Index i = 0; i < z.size(); ++i) total += softplus(-y(i) * z(i));
  return total / static_cast<double>(z.size()) + 0.5 * l2_lambda * net.w2.squaredNorm();
}

LossGradient loss_gradient(const TwoLayerNet& net, const Matrix& X, const Vector& y, double l2_lambda) {
  const Index B = X.rows();
  const double D = static_cast<double>(net.input_dim());
  const double sqrtH = std::sqrt(static_cast<double>(net.hidden_dim()));
  Matrix pre = X * net.w1.transpose() / D;
  Matrix hidden = pre.cwiseMax(0.0);
  const Vector z = hidden * net.w2 / sqrtH;

  LossGradient g;
  Vector gz(B);
  for (Index i = 0; i < B; ++i) {
    const double yz = y(i) * z(i);
    g.loss += softplus(-yz);
    gz(i) = -y(i) * sigmoid(-yz) / static_cast<double>(B);
  }
  g.loss = g.loss / static_cast<double>(B) + 0.5 * l2_lambda * net.w2.squaredNorm();
  g.w2 = hidden.transpose() * gz / sqrtH + l2_lambda * net.w2;

  // Back through the ReLU; reuse `pre` as the pre-activation gradient.
  for (Index i = 0; i < B; ++i)
    for (Index h = 0; h < pre.cols(); ++h)
      pre(i, h) = pre(i, h) > 0.0 ? gz(i) * net.w2(h) / sqrtH : 0.0;
  g.w1 = pre.transpose() * X / D;
  return g;
}

double classification_error(const TwoLayerNet& net, const Matrix& X, const Vector& y) {
  const Vector z = logits(net, X);
  Index wrong = 0;
  for (Index i = 0; i < z.size(); ++i) wrong += sign_pm(z(i)) != y(i);
  return static_cast<double>(wrong) / static_cast<double>(z.size());
}

Adam::Adam(Index size, double learning_rate, double beta1, double beta2, double epsilon)
    : m_(Vector::Zero(size)), v_(Vector::Zero(size)), lr_(learning_rate), beta1_(beta1),
      beta2_(beta2), eps_(epsilon) {}

void Adam::step(Eigen::Map<Vector> param, Eigen::Map<const Vector> grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  param.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

Matrix gather_rows(const Matrix& X, const std::vector<Index>& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), X.cols());
  for (std::size_t k = begin; k < end; ++k) out.row(static_cast<Index>(k - begin)) = X.row(idx[k]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Index>& idx, std::size_t begin, std::size_t end) {
  Vector out(static_cast<Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out(static_cast<Index>(k - begin)) = v(idx[k]);
  return out;
}

}  // namespace

TrainResult train(const TwoLayerNet& init, const Dataset& data, const TrainOpts& opts,
                  Trainable trainable) {
  opts.validate();
  const Index M = data.size();
  if (M < 1) throw std::invalid_argument("train: empty dataset");
  if (data.inputs.cols() != init.input_dim()) throw std::invalid_argument("train: input dimension mismatch");

  std::vector<Index> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<Index> train_idx = order, holdout_idx;
  if (opts.early_stop) {
    Engine eng = make_engine(opts.seed, Stream::Holdout);
    std::shuffle(order.begin(), order.end(), eng);
    auto n_hold = static_cast<std::size_t>(std::llround(opts.holdout_fraction * static_cast<double>(M)));
    n_hold = std::clamp<std::size_t>(n_hold, 1, order.size() - 1);
    if (M < 2) throw std::invalid_argument("train: early stopping needs at least two samples");
    holdout_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  }
  Matrix X_hold;
  Vector y_hold;
  if (!holdout_idx.empty()) {
    X_hold = gather_rows(data.inputs, holdout_idx, 0, holdout_idx.size());
    y_hold = gather(data.labels, holdout_idx, 0, holdout_idx.size());
  }

  TrainResult result{init, {}};
  TwoLayerNet& net = result.net;
  TwoLayerNet best = net;
  const bool train_w1 = trainable != Trainable::SecondOnly;
  Adam adam_w1(net.w1.size(), opts.learning_rate), adam_w2(net.w2.size(), opts.learning_rate);

  double best_holdout = std::numeric_limits<double>::infinity();
  int wait = 0;
  const auto n_train = train_idx.size();
  const auto batch = static_cast<std::size_t>(opts.batch_size);

  for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    Engine eng = make_engine(opts.seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(train_idx.begin(), train_idx.end(), eng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_train; b += batch) {
      const std::size_t e = std::min(b + batch, n_train);
      const Matrix Xb = gather_rows(data.inputs, train_idx, b, e);
      const Vector yb = gather(data.labels, train_idx, b, e);
      LossGradient g = loss_gradient(net, Xb, yb, opts.l2_lambda);
      loss_sum += g.loss * static_cast<double>(e - b);
      if (train_w1)
        adam_w1.step(Eigen::Map<Vector>(net.w1.data(), net.w1.size()),
                     Eigen::Map<const Vector>(g.w1.data(), g.w1.size()));
      adam_w2.step(Eigen::Map<Vector>(net.w2.data(), net.w2.size()),
                   Eigen::Map<const Vector>(g.w2.data(), g.w2.size()));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.holdout_loss = holdout_idx.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : loss(net, X_hold, y_hold, opts.l2_lambda);
    result.trace.epochs.push_back(rec);
    result.trace.stop_epoch = epoch;

    if (!std::isfinite(rec.train_loss) || (!holdout_idx.empty() && !std::isfinite(rec.holdout_loss))) {
      result.trace.diverged = true;
      result.trace.diverged_epoch = epoch;
      break;
    }
    if (!opts.early_stop) {
      result.trace.best_epoch = epoch;
      continue;
    }
    // Keras-style: any epoch that fails to improve counts against the patience.
    if (rec.holdout_loss < best_holdout) {
      best_holdout = rec.holdout_loss;
      best = net;
      result.trace.best_epoch = epoch;
      wait = 0;
    } else if (++wait > opts.patience) {
      break;
    }
  }
  if (opts.early_stop) net = best;
  return result;
}

TrainResult fine_tune(const TwoLayerNet& net, const Dataset& data, const TrainOpts& opts) {
  TrainOpts o = opts;
  o.early_stop = false;
  return train(net, data, o, Trainable::FromGiven);
}

void save_network(const std::filesystem::path& dir, const std::string& name, const TwoLayerNet& net,
                  const nlohmann::json& meta) {
  write_matrix(dir / (name + ".w1.bin"), net.w1);
  write_vector(dir / (name + ".w2.bin"), net.w2);
  nlohmann::json j = meta;
  j["hidden_dim"] = net.hidden_dim();
  j["input_dim"] = net.input_dim();
  write_json(dir / (name + ".json"), j);
}

TwoLayerNet load_network(const std::filesystem::path& dir, const std::string& name) {
  TwoLayerNet net;
  net.w1 = read_matrix(dir / (name + ".w1.bin"));
  net.w2 = read_vector(dir / (name + ".w2.bin"));
  if (net.w2.size() != net.w1.rows()) throw ContainerError("network: layer shapes disagree");
  return net;
}

}  // namespace chmm
