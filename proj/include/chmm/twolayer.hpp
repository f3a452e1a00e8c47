#pragma once

// Bias-free two-layer network
//   hidden = ReLU(w1 x / D),  logit = hidden·w2 / √H,  prob = sigmoid(logit)
// trained with mini-batch Adam on mean binary cross-entropy plus (λ/2)‖w2‖².

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chmm/generator.hpp"
#include "chmm/types.hpp"

namespace chmm {

struct TwoLayerNet {
  Matrix w1;  // H×D
  Vector w2;  // H

  Index hidden_dim() const { return w1.rows(); }
  Index input_dim() const { return w1.cols(); }
};

struct TrainOpts {
  double learning_rate = 1e-3;
  Index batch_size = 50;
  int max_epochs = 200;
  double l2_lambda = 1e-4;  // second layer only
  bool early_stop = true;
  int patience = 0;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainOpts from_json(const nlohmann::json& j);

  /// Source training (early stopping, patience 0).
  static TrainOpts source_defaults();
  /// 2L baseline trained from scratch on the target.
  static TrainOpts two_layer_defaults();
  /// ft-TF fine-tuning from the TF initialization.
  static TrainOpts fine_tune_defaults();
};

enum class Trainable { BothLayers, SecondOnly, FromGiven };

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;  // NaN when no holdout split
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  int stop_epoch = 0;   // last epoch run
  int best_epoch = 0;   // epoch whose weights were returned (0 = initial weights)
  bool diverged = false;
  int diverged_epoch = -1;

  std::string to_csv() const;
};

struct TrainResult {
  TwoLayerNet net;
  TrainTrace trace;
};

struct ForwardResult {
  Vector hidden;
  double logit = 0.0;
  double prob = 0.5;
};

TwoLayerNet init_network(Index D, Index H, std::uint64_t seed);

ForwardResult forward(const TwoLayerNet& net, const Vector& x);

/// Batched logits for the rows of X.
Vector logits(const TwoLayerNet& net, const Matrix& X);

/// Mean binary cross-entropy (labels ±1) plus (λ/2)‖w2‖².
double loss(const TwoLayerNet& net, const Matrix& X, const Vector& y, double l2_lambda);

struct LossGradient {
  double loss = 0.0;
  Matrix w1;
  Vector w2;
};

/// Loss and its analytic gradient on a (sub)set of rows.
LossGradient loss_gradient(const TwoLayerNet& net, const Matrix& X, const Vector& y, double l2_lambda);

/// Fraction of rows with sign(logit) ≠ y (sign(0) = +1).
double classification_error(const TwoLayerNet& net, const Matrix& X, const Vector& y);

TrainResult train(const TwoLayerNet& net, const Dataset& data, const TrainOpts& opts,
                  Trainable trainable = Trainable::BothLayers);

/// End-to-end training from a transferred initialization (no early stopping).
TrainResult fine_tune(const TwoLayerNet& net, const Dataset& data, const TrainOpts& opts);

/// Adam over a flat parameter block. The step counter advances on every call.
class Adam {
 public:
  explicit Adam(Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(Eigen::Map<Vector> param, Eigen::Map<const Vector> grad);

  long steps() const { return t_; }

 private:
  Vector m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

void save_network(const std::filesystem::path& dir, const std::string& name, const TwoLayerNet& net,
                  const nlohmann::json& meta);
TwoLayerNet load_network(const std::filesystem::path& dir, const std::string& name);

}  // namespace chmm
