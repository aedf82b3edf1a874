#include "selar/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "selar/parallel.hpp"

namespace selar {

using json = nlohmann::ordered_json;

namespace {

// Batch gradients are reduced over this many fixed chunks regardless of the
// number of workers, which keeps the summation order constant.
constexpr std::size_t kGradientChunks = 8;

constexpr std::uint32_t kNotSeen = std::numeric_limits<std::uint32_t>::max();

// Separate stream for shuffling so the initialization only depends on seed.
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ull;

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail("learning_rate must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    fail("weight_decay must be non-negative");
  }
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) fail("init_scale must be non-negative");
}

TrainConfig parse_train_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("train config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("train config: expected an object");
  TrainConfig cfg;
  auto number = [&](const char* key, double& out) {
    if (!doc.contains(key)) return;
    if (!doc.at(key).is_number()) {
      throw std::invalid_argument(std::string("train config: '") + key + "' must be a number");
    }
    out = doc.at(key).get<double>();
  };
  auto count = [&](const char* key, auto& out) {
    if (!doc.contains(key)) return;
    if (!doc.at(key).is_number_unsigned()) {
      throw std::invalid_argument(std::string("train config: '") + key +
                                  "' must be a non-negative integer");
    }
    out = doc.at(key).get<std::remove_reference_t<decltype(out)>>();
  };
  number("learning_rate", cfg.learning_rate);
  number("momentum", cfg.momentum);
  number("weight_decay", cfg.weight_decay);
  number("init_scale", cfg.init_scale);
  count("epochs", cfg.epochs);
  count("batch_size", cfg.batch_size);
  count("seed", cfg.seed);
  if (doc.contains("pooling")) {
    const auto& p = doc.at("pooling");
    if (!p.is_object()) throw std::invalid_argument("train config: 'pooling' must be an object");
    if (p.contains("method")) cfg.pooling.method = parse_pool_method(p.at("method").get<std::string>());
    if (p.contains("space")) cfg.pooling.space = parse_pool_space(p.at("space").get<std::string>());
  }
  for (const auto& [key, _] : doc.items()) {
    static const char* known[] = {"learning_rate", "momentum", "weight_decay", "init_scale",
                                  "epochs",        "batch_size", "seed",       "pooling"};
    if (std::none_of(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; })) {
      throw std::invalid_argument("train config: unknown field '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("train config not found: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

std::string to_json(const TrainConfig& config) {
  json doc;
  doc["learning_rate"] = config.learning_rate;
  doc["momentum"] = config.momentum;
  doc["weight_decay"] = config.weight_decay;
  doc["epochs"] = config.epochs;
  doc["batch_size"] = config.batch_size;
  doc["pooling"] = {{"method", to_string(config.pooling.method)},
                    {"space", to_string(config.pooling.space)}};
  doc["seed"] = config.seed;
  doc["init_scale"] = config.init_scale;
  return doc.dump(2);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss,train_acc\n";
  char line[128];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", e.epoch, e.loss, e.train_accuracy);
    out << line;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void sgd_step(EmbeddingWeights& weights, const Matrix<float>& grad, OptimizerState& state,
              const TrainConfig& config) {
  if (grad.rows() != weights.rows() || grad.cols() != weights.cols()) {
    throw std::invalid_argument("sgd_step: gradient shape does not match W");
  }
  if (state.velocity.empty()) state.velocity = Matrix<float>(weights.rows(), weights.cols(), 0.0f);
  if (state.velocity.rows() != weights.rows() || state.velocity.cols() != weights.cols()) {
    throw std::invalid_argument("sgd_step: velocity shape does not match W");
  }
  if (!all_finite(grad.data())) {
    throw std::runtime_error("sgd_step: non-finite gradient, aborting training");
  }
  auto w = weights.data();
  auto v = state.velocity.data();
  const auto g = grad.data();
  const double momentum = config.momentum;
  const double decay = config.weight_decay;
  const double lr = config.learning_rate;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double vel = momentum * v[i] + g[i] + decay * w[i];
    v[i] = static_cast<float>(vel);
    w[i] = static_cast<float>(w[i] - lr * v[i]);
  }
}

EmbeddingWeights init_weights(std::size_t num_attributes, std::size_t feature_depth,
                              std::uint64_t seed, double init_scale) {
  if (num_attributes == 0 || feature_depth == 0) {
    throw std::invalid_argument("init_weights: dimensions must be positive");
  }
  EmbeddingWeights w(num_attributes, feature_depth);
  const double bound = init_scale / std::sqrt(static_cast<double>(feature_depth));
  if (bound == 0.0) return w;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : w.data()) x = static_cast<float>(dist(rng));
  return w;
}

BatchResult batch_gradient(const EmbeddingWeights& weights, const AttributeMatrix& seen_rows,
                           std::span<const std::uint32_t> seen_position,
                           const FeatureSet& features, std::span<const std::uint32_t> batch,
                           const PoolingConfig& pooling) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  const auto chunks = std::min(kGradientChunks, batch.size());
  const auto per_chunk = (batch.size() + chunks - 1) / chunks;

  struct ChunkSum {
    Matrix<double> grad;
    double loss = 0.0;
    std::size_t correct = 0;
  };
  std::vector<ChunkSum> partial(chunks);

  parallel_for(chunks, [&](std::size_t chunk) {
    auto& sum = partial[chunk];
    sum.grad = Matrix<double>(weights.rows(), weights.cols(), 0.0);
    const auto begin = chunk * per_chunk;
    const auto end = std::min(batch.size(), begin + per_chunk);
    for (std::size_t b = begin; b < end; ++b) {
      const auto index = batch[b];
      const auto features_i = features.get(index);
      const auto target = seen_position[features.label(index)];
      if (target == kNotSeen) {
        throw std::invalid_argument("batch_gradient: image " + std::to_string(index) +
                                    " does not belong to a seen class");
      }
      const auto trace = forward(weights, seen_rows, features_i, pooling);
      const auto ce = softmax_cross_entropy(std::span<const float>(trace.logits), target);
      const auto predicted = static_cast<std::size_t>(
          std::max_element(trace.logits.begin(), trace.logits.end()) - trace.logits.begin());
      if (predicted == target) ++sum.correct;
      sum.loss += ce.loss;
      const auto g = backward(trace, features_i, seen_rows, std::span<const float>(ce.dlogits));
      auto acc = sum.grad.data();
      const auto src = g.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
    }
  });

  BatchResult out;
  Matrix<double> total(weights.rows(), weights.cols(), 0.0);
  double loss = 0.0;
  for (const auto& p : partial) {
    auto t = total.data();
    const auto s = p.grad.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += s[i];
    loss += p.loss;
    out.correct += p.correct;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.gradient = Matrix<float>(weights.rows(), weights.cols());
  auto g = out.gradient.data();
  const auto t = total.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(t[i] * inv);
  out.mean_loss = loss * inv;
  return out;
}

TrainResult train(const FeatureSet& features, const Splits& splits,
                  const AttributeMatrix& attributes, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (splits.train_indices.empty()) throw std::invalid_argument("train: empty train split");
  if (splits.seen_class_ids.empty()) throw std::invalid_argument("train: no seen classes");

  const auto& manifest = features.manifest();
  const auto seen_rows = normalize_attribute_rows(select_rows(attributes, splits.seen_class_ids));
  std::vector<std::uint32_t> seen_position(std::max(attributes.rows(), manifest.num_classes),
                                           kNotSeen);
  for (std::size_t i = 0; i < splits.seen_class_ids.size(); ++i) {
    seen_position[splits.seen_class_ids[i]] = static_cast<std::uint32_t>(i);
  }

  TrainResult result;
  if (options.initial_weights.empty()) {
    result.weights =
        init_weights(attributes.cols(), manifest.feature_depth, config.seed, config.init_scale);
  } else {
    result.weights = options.initial_weights;
  }
  if (result.weights.rows() != attributes.cols() ||
      result.weights.cols() != manifest.feature_depth) {
    throw std::invalid_argument("train: initial weights have the wrong shape");
  }

  OptimizerState state{Matrix<float>(result.weights.rows(), result.weights.cols(), 0.0f)};
  std::vector<std::uint32_t> order(splits.train_indices);
  std::mt19937_64 shuffle_rng(config.seed ^ kShuffleStream);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::uint32_t> batch(order.data() + start, end - start);
      const auto step = batch_gradient(result.weights, seen_rows, seen_position, features, batch,
                                       config.pooling);
      if (!std::isfinite(step.mean_loss)) {
        throw std::runtime_error("train: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      loss_sum += step.mean_loss * static_cast<double>(batch.size());
      correct += step.correct;
      sgd_step(result.weights, step.gradient, state, config);
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    result.history.epochs.push_back(stats);
    if (options.on_epoch) options.on_epoch(stats);
  }
  return result;
}

}  // namespace selar
