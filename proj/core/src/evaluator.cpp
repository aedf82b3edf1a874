#include "selar/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "selar/parallel.hpp"

namespace selar {

namespace {

std::vector<std::uint32_t> classes_present(std::span<const Prediction> predictions) {
  std::vector<std::uint32_t> out;
  for (const auto& p : predictions) out.push_back(p.truth);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Prediction> predict_all(const std::vector<std::vector<float>>& logits,
                                    std::span<const std::uint32_t> indices,
                                    const FeatureSet& features, const std::vector<bool>& seen,
                                    double gamma) {
  std::vector<Prediction> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[i].index = indices[i];
    out[i].truth = features.label(indices[i]);
    out[i].predicted = predict_from_logits(logits[i], seen, gamma);
  }
  return out;
}

}  // namespace

double harmonic_mean(double acc_u, double acc_s) {
  const double denom = acc_u + acc_s;
  if (denom == 0.0) return 0.0;
  return 2.0 * acc_u * acc_s / denom;
}

GzslMetrics make_metrics(double acc_u, double acc_s) {
  GzslMetrics m;
  m.acc_u = acc_u;
  m.acc_s = acc_s;
  m.h = harmonic_mean(acc_u, acc_s);
  if (acc_u > 0.0) m.s_over_u = acc_s / acc_u;
  return m;
}

double per_class_top1(std::span<const Prediction> predictions,
                      std::span<const std::uint32_t> class_subset) {
  if (class_subset.empty()) throw std::invalid_argument("per_class_top1: empty class subset");
  std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> tally;  // class -> (hits, total)
  for (const auto c : class_subset) tally[c] = {0, 0};
  for (const auto& p : predictions) {
    auto it = tally.find(p.truth);
    if (it == tally.end()) {
      throw std::invalid_argument("per_class_top1: image " + std::to_string(p.index) +
                                  " has label " + std::to_string(p.truth) +
                                  " outside the class subset");
    }
    ++it->second.second;
    if (p.predicted == p.truth) ++it->second.first;
  }
  double sum = 0.0;
  for (const auto& [cls, counts] : tally) {
    if (counts.second == 0) {
      throw std::invalid_argument("per_class_top1: class " + std::to_string(cls) +
                                  " has no examples");
    }
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return sum / static_cast<double>(tally.size());
}

std::vector<bool> seen_mask(std::size_t num_classes, std::span<const std::uint32_t> seen_ids) {
  std::vector<bool> mask(num_classes, false);
  for (const auto c : seen_ids) {
    if (c >= num_classes) throw std::out_of_range("seen_mask: class id out of range");
    mask[c] = true;
  }
  return mask;
}

std::uint32_t predict_from_logits(std::span<const float> logits, const std::vector<bool>& seen,
                                  double gamma) {
  if (logits.empty()) throw std::invalid_argument("predict: empty label space");
  if (seen.size() != logits.size()) {
    throw std::invalid_argument("predict: seen mask does not match label space");
  }
  std::uint32_t best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double score = static_cast<double>(logits[c]) - (seen[c] ? gamma : 0.0);
    if (c == 0 || score > best_score) {
      best = static_cast<std::uint32_t>(c);
      best_score = score;
    }
  }
  return best;
}

std::uint32_t predict(const EmbeddingWeights& weights, const AttributeMatrix& attributes_joint,
                      const LocalFeatureMap& features, const PoolingConfig& pooling,
                      const std::vector<bool>& seen, double gamma) {
  const auto trace = forward(weights, attributes_joint, features, pooling);
  return predict_from_logits(trace.logits, seen, gamma);
}

std::vector<std::vector<float>> joint_logits(const Checkpoint& model, const FeatureSet& features,
                                             std::span<const std::uint32_t> indices) {
  std::vector<std::vector<float>> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    out[i] = forward(model.weights, model.attributes, features.get(indices[i]), model.pooling)
                 .logits;
  });
  return out;
}

GzslMetrics metrics_from_predictions(std::span<const Prediction> unseen,
                                     std::span<const Prediction> seen) {
  if (unseen.empty() || seen.empty()) {
    throw std::invalid_argument("evaluate: empty test split");
  }
  const double acc_u = per_class_top1(unseen, classes_present(unseen));
  const double acc_s = per_class_top1(seen, classes_present(seen));
  return make_metrics(acc_u, acc_s);
}

EvaluationResult evaluate_gzsl(const Checkpoint& model, const FeatureSet& features,
                               const Splits& splits, double gamma) {
  if (splits.test_unseen_indices.empty()) throw std::invalid_argument("evaluate: empty test_unseen split");
  if (splits.test_seen_indices.empty()) throw std::invalid_argument("evaluate: empty test_seen split");
  if (model.attributes.rows() != features.manifest().num_classes) {
    throw std::invalid_argument("evaluate: checkpoint covers " +
                                std::to_string(model.attributes.rows()) + " classes, store has " +
                                std::to_string(features.manifest().num_classes));
  }
  const auto mask = seen_mask(model.attributes.rows(), splits.seen_class_ids);
  EvaluationResult result;
  result.unseen_predictions =
      predict_all(joint_logits(model, features, splits.test_unseen_indices),
                  splits.test_unseen_indices, features, mask, gamma);
  result.seen_predictions = predict_all(joint_logits(model, features, splits.test_seen_indices),
                                        splits.test_seen_indices, features, mask, gamma);
  result.metrics = metrics_from_predictions(result.unseen_predictions, result.seen_predictions);
  return result;
}

void write_predictions_csv(const std::filesystem::path& path, const EvaluationResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,truth,predicted,subset\n";
  for (const auto& p : result.seen_predictions) {
    out << p.index << ',' << p.truth << ',' << p.predicted << ",seen\n";
  }
  for (const auto& p : result.unseen_predictions) {
    out << p.index << ',' << p.truth << ',' << p.predicted << ",unseen\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string metrics_json(const GzslMetrics& metrics, double gamma) {
  nlohmann::ordered_json doc;
  doc["acc_u"] = metrics.acc_u;
  doc["acc_s"] = metrics.acc_s;
  doc["h"] = metrics.h;
  doc["s_over_u"] = metrics.s_over_u ? nlohmann::ordered_json(*metrics.s_over_u) : nullptr;
  doc["gamma"] = gamma;
  return doc.dump(2);
}

ValidationSplit split_validation(const Splits& splits, std::span<const std::uint32_t> labels,
                                 double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_validation: fraction must be in (0, 1)");
  }
  ValidationSplit out;
  for (auto* s : {&out.validation, &out.remainder}) {
    s->seen_class_ids = splits.seen_class_ids;
    s->unseen_class_ids = splits.unseen_class_ids;
  }
  std::mt19937_64 rng(seed);
  auto divide = [&](const std::vector<std::uint32_t>& indices, std::vector<std::uint32_t>& val,
                    std::vector<std::uint32_t>& rest) {
    std::map<std::uint32_t, std::vector<std::uint32_t>> by_class;
    for (const auto i : indices) by_class[labels[i]].push_back(i);
    for (auto& [cls, members] : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      std::size_t take = 0;
      if (members.size() >= 2) {
        take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        take = std::clamp<std::size_t>(take, 1, members.size() - 1);
      }
      val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
      rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
    }
    std::sort(val.begin(), val.end());
    std::sort(rest.begin(), rest.end());
  };
  divide(splits.test_seen_indices, out.validation.test_seen_indices,
         out.remainder.test_seen_indices);
  divide(splits.test_unseen_indices, out.validation.test_unseen_indices,
         out.remainder.test_unseen_indices);
  return out;
}

std::vector<double> make_gamma_grid(double max_spread, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("make_gamma_grid: steps must be positive");
  if (!(max_spread >= 0.0) || !std::isfinite(max_spread)) {
    throw std::invalid_argument("make_gamma_grid: spread must be finite and non-negative");
  }
  if (steps == 1) return {0.0};
  std::vector<double> grid(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    grid[i] = max_spread * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  return grid;
}

double max_logit_spread(std::span<const std::vector<float>> logits) {
  double spread = 0.0;
  for (const auto& row : logits) {
    if (row.empty()) continue;
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    spread = std::max(spread, static_cast<double>(*hi) - static_cast<double>(*lo));
  }
  return spread;
}

CalibrationResult calibrate(const Checkpoint& model, const FeatureSet& features,
                            const Splits& validation, std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("calibrate: empty gamma grid");
  if (validation.test_seen_indices.empty() || validation.test_unseen_indices.empty()) {
    throw std::invalid_argument(
        "calibrate: validation needs at least one seen-class and one unseen-class image");
  }
  const auto mask = seen_mask(model.attributes.rows(), validation.seen_class_ids);
  const auto unseen_logits = joint_logits(model, features, validation.test_unseen_indices);
  const auto seen_logits = joint_logits(model, features, validation.test_seen_indices);

  CalibrationResult result;
  bool have_best = false;
  for (const double gamma : grid) {
    const auto unseen = predict_all(unseen_logits, validation.test_unseen_indices, features, mask, gamma);
    const auto seen = predict_all(seen_logits, validation.test_seen_indices, features, mask, gamma);
    CalibrationPoint point{gamma, metrics_from_predictions(unseen, seen)};
    result.sweep.push_back(point);
    if (!have_best || point.metrics.h > result.metrics_at_gamma.h ||
        (point.metrics.h == result.metrics_at_gamma.h && gamma < result.gamma)) {
      result.gamma = gamma;
      result.metrics_at_gamma = point.metrics;
      have_best = true;
    }
  }
  return result;
}

SparsityStats sparsity_stats(std::span<const double> embedded, std::span<const float> attributes) {
  if (embedded.size() != attributes.size()) {
    throw std::invalid_argument("sparsity_stats: length mismatch");
  }
  double dot = 0.0, norm_a = 0.0, norm_psi = 0.0, mass = 0.0, off = 0.0;
  for (std::size_t l = 0; l < embedded.size(); ++l) {
    const double a = embedded[l];
    const double psi = attributes[l];
    dot += a * psi;
    norm_a += a * a;
    norm_psi += psi * psi;
    mass += std::abs(a);
    if (psi == 0.0) off += std::abs(a);
  }
  SparsityStats s;
  if (norm_a > 0.0 && norm_psi > 0.0) s.cosine = dot / std::sqrt(norm_a * norm_psi);
  if (mass > 0.0) s.off_attribute_mass = off / mass;
  return s;
}

std::vector<SparsityRow> sparsity_diagnostic(const Checkpoint& model, const FeatureSet& features,
                                             const Splits& splits) {
  std::vector<std::uint32_t> indices(splits.test_seen_indices);
  indices.insert(indices.end(), splits.test_unseen_indices.begin(),
                 splits.test_unseen_indices.end());
  std::vector<std::vector<float>> pooled(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    pooled[i] = forward(model.weights, model.attributes, features.get(indices[i]), model.pooling)
                    .pooled_attribute;
  });

  const auto num_attr = model.weights.rows();
  std::map<std::uint32_t, std::pair<std::vector<double>, std::size_t>> sums;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto& [sum, count] = sums[features.label(indices[i])];
    if (sum.empty()) sum.assign(num_attr, 0.0);
    for (std::size_t l = 0; l < num_attr; ++l) sum[l] += pooled[i][l];
    ++count;
  }
  std::vector<SparsityRow> rows;
  for (auto& [cls, entry] : sums) {
    auto& [sum, count] = entry;
    for (auto& v : sum) v /= static_cast<double>(count);
    rows.push_back({cls, count, sparsity_stats(sum, model.attributes.row(cls))});
  }
  return rows;
}

double mean_off_attribute_mass(std::span<const SparsityRow> rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rows) sum += r.stats.off_attribute_mass;
  return sum / static_cast<double>(rows.size());
}

}  // namespace selar
