#pragma once

// Training of the embedding weights W with softmax cross-entropy over the
// seen classes, using mini-batch SGD with momentum and L2 weight decay.
// The attribute classifier stays fixed; only W is updated.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "selar/feature_store.hpp"
#include "selar/semantic_head.hpp"

namespace selar {

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  PoolingConfig pooling;
  std::uint64_t seed = 0;
  double init_scale = 1.0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// JSON object with any subset of the TrainConfig fields; pooling is
// {"method": "GMP", "space": "attribute"}.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& json_text);
std::string to_json(const TrainConfig& config);

struct OptimizerState {
  Matrix<float> velocity;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  bool operator==(const TrainHistory&) const = default;
};

// epoch,loss,train_acc with full precision.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

template <typename T>
struct LossAndGradient {
  double loss = 0.0;
  std::vector<T> dlogits;
};

// -log softmax(z)[y] computed with max subtraction; dz = softmax(z) - onehot(y).
template <typename T>
LossAndGradient<T> softmax_cross_entropy(std::span<const T> logits, std::size_t label) {
  if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy: empty logits");
  if (label >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(logits.size()) + " classes");
  }
  double max_logit = static_cast<double>(logits[0]);
  for (const auto z : logits) max_logit = std::max(max_logit, static_cast<double>(z));
  std::vector<double> shifted_exp(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    shifted_exp[k] = std::exp(static_cast<double>(logits[k]) - max_logit);
    sum += shifted_exp[k];
  }
  LossAndGradient<T> out;
  out.loss = std::log(sum) - (static_cast<double>(logits[label]) - max_logit);
  out.dlogits.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double p = shifted_exp[k] / sum;
    out.dlogits[k] = static_cast<T>(k == label ? p - 1.0 : p);
  }
  return out;
}

// velocity <- momentum * velocity + grad + weight_decay * W;  W <- W - lr * velocity.
// Throws std::runtime_error on a non-finite gradient.
void sgd_step(EmbeddingWeights& weights, const Matrix<float>& grad, OptimizerState& state,
              const TrainConfig& config);

// Entries i.i.d. uniform in [-init_scale / sqrt(D), +init_scale / sqrt(D)].
EmbeddingWeights init_weights(std::size_t num_attributes, std::size_t feature_depth,
                              std::uint64_t seed, double init_scale);

struct TrainResult {
  EmbeddingWeights weights;
  TrainHistory history;
};

struct TrainOptions {
  // Starting weights; init_weights(L, D, seed, init_scale) when empty.
  EmbeddingWeights initial_weights;
  // Called after every epoch.
  std::function<void(const EpochStats&)> on_epoch;
};

// Trains on splits.train_indices against the normalized rows of the seen
// classes. Unseen attribute rows are never read.
TrainResult train(const FeatureSet& features, const Splits& splits,
                  const AttributeMatrix& attributes, const TrainConfig& config,
                  const TrainOptions& options = {});

// Gradient of the mean cross-entropy over `batch` (image indices), summed in a
// fixed order so the result does not depend on the worker count. Returns the
// mean loss and the number of correctly classified images.
struct BatchResult {
  Matrix<float> gradient;
  double mean_loss = 0.0;
  std::size_t correct = 0;
};

BatchResult batch_gradient(const EmbeddingWeights& weights, const AttributeMatrix& seen_rows,
                           std::span<const std::uint32_t> seen_position,
                           const FeatureSet& features, std::span<const std::uint32_t> batch,
                           const PoolingConfig& pooling);

}  // namespace selar
