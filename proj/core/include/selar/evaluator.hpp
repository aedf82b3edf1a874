#pragma once

// Generalized zero-shot evaluation over the joint label space of seen and
// unseen classes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selar/checkpoint.hpp"
#include "selar/feature_store.hpp"

namespace selar {

struct GzslMetrics {
  double acc_u = 0.0;
  double acc_s = 0.0;
  double h = 0.0;
  // acc_s / acc_u; empty when acc_u is zero.
  std::optional<double> s_over_u;

  bool operator==(const GzslMetrics&) const = default;
};

// 2 * u * s / (u + s), and 0 when both are 0.
double harmonic_mean(double acc_u, double acc_s);

// Fills h and s_over_u from the two accuracies.
GzslMetrics make_metrics(double acc_u, double acc_s);

struct Prediction {
  std::uint32_t index = 0;
  std::uint32_t truth = 0;
  std::uint32_t predicted = 0;

  bool operator==(const Prediction&) const = default;
};

// Mean over the classes in `class_subset` of each class's own top-1 accuracy.
// Throws std::invalid_argument if a class in the subset has no example or an
// example's true label lies outside the subset.
double per_class_top1(std::span<const Prediction> predictions,
                      std::span<const std::uint32_t> class_subset);

// Membership mask over the joint label space.
std::vector<bool> seen_mask(std::size_t num_classes, std::span<const std::uint32_t> seen_ids);

// argmax_c (logits[c] - gamma * [c is seen]); ties go to the lowest index.
std::uint32_t predict_from_logits(std::span<const float> logits, const std::vector<bool>& seen,
                                  double gamma);

// Joint-space prediction for one image. `attributes_joint` must already be
// L2-normalized and cover every class.
std::uint32_t predict(const EmbeddingWeights& weights, const AttributeMatrix& attributes_joint,
                      const LocalFeatureMap& features, const PoolingConfig& pooling,
                      const std::vector<bool>& seen, double gamma);

// Joint-space logits for the given images, computed in parallel.
std::vector<std::vector<float>> joint_logits(const Checkpoint& model, const FeatureSet& features,
                                             std::span<const std::uint32_t> indices);

struct EvaluationResult {
  GzslMetrics metrics;
  std::vector<Prediction> unseen_predictions;
  std::vector<Prediction> seen_predictions;
};

// acc_u from splits.test_unseen_indices and acc_s from splits.test_seen_indices,
// both predicted over all classes.
EvaluationResult evaluate_gzsl(const Checkpoint& model, const FeatureSet& features,
                               const Splits& splits, double gamma = 0.0);

// Recomputes metrics from a prediction table. Per-class accuracies average
// over the classes that occur as true labels in each list.
GzslMetrics metrics_from_predictions(std::span<const Prediction> unseen,
                                     std::span<const Prediction> seen);

// index,truth,predicted,subset with subset in {seen, unseen}.
void write_predictions_csv(const std::filesystem::path& path, const EvaluationResult& result);
std::string metrics_json(const GzslMetrics& metrics, double gamma);

// Held-out validation images for calibration, drawn per class from the test
// splits. Every class keeps at least one validation and one test image when it
// has two or more. Both halves keep the full seen/unseen class lists and have
// no train indices.
struct ValidationSplit {
  Splits validation;
  Splits remainder;
};

ValidationSplit split_validation(const Splits& splits, std::span<const std::uint32_t> labels,
                                 double fraction, std::uint64_t seed);

struct CalibrationPoint {
  double gamma = 0.0;
  GzslMetrics metrics;
};

struct CalibrationResult {
  double gamma = 0.0;
  GzslMetrics metrics_at_gamma;
  std::vector<CalibrationPoint> sweep;
};

// `steps` evenly spaced values from 0 to max_spread inclusive.
std::vector<double> make_gamma_grid(double max_spread, std::size_t steps);

// Largest (max logit - min logit) over the logit rows.
double max_logit_spread(std::span<const std::vector<float>> logits);

// Evaluates every gamma on the test_seen/test_unseen images of `validation`
// and keeps the one with the highest H (ties to the smaller gamma).
CalibrationResult calibrate(const Checkpoint& model, const FeatureSet& features,
                            const Splits& validation, std::span<const double> grid);

// Sparsity of the pooled attribute vector relative to a class description.
struct SparsityStats {
  double cosine = 0.0;
  // Share of sum |a| that falls on attributes the description sets to zero.
  double off_attribute_mass = 0.0;
};

SparsityStats sparsity_stats(std::span<const double> embedded, std::span<const float> attributes);

struct SparsityRow {
  std::uint32_t class_id = 0;
  std::size_t images = 0;
  SparsityStats stats;
};

// One row per class present in the test splits, built from the mean pooled
// attribute vector of that class's test images.
std::vector<SparsityRow> sparsity_diagnostic(const Checkpoint& model, const FeatureSet& features,
                                             const Splits& splits);

double mean_off_attribute_mass(std::span<const SparsityRow> rows);

}  // namespace selar
