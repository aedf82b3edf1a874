#pragma once

// On-disk feature store.
//
// A store is a directory holding
//   manifest.json    dataset shape and relative paths of the files below
//   features.bin     N records of M*M*D little-endian f32, (row, column, channel)
//   labels.bin       N little-endian u32 class indices
//   attributes.bin   C*L little-endian f32, row-major, one row per class
//   splits.json      seen/unseen class ids and train/test image indices
//
// Records are fixed size, so any record can be read independently.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "selar/tensor.hpp"

namespace selar {

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kManifestFileName = "manifest.json";
inline constexpr const char* kElementType = "f32le";

struct Manifest {
  std::string dataset_name;
  std::size_t spatial_size = 0;   // M
  std::size_t feature_depth = 0;  // D
  std::size_t num_attributes = 0; // L
  std::size_t num_classes = 0;    // C
  std::vector<std::string> class_names;
  std::string features_path = "features.bin";
  std::string labels_path = "labels.bin";
  std::string attributes_path = "attributes.bin";
  std::string splits_path = "splits.json";

  // Directory the relative paths resolve against; not serialized.
  std::filesystem::path root;
  // Derived from the features blob size; not serialized.
  std::size_t record_count = 0;

  std::size_t record_floats() const { return spatial_size * spatial_size * feature_depth; }
  std::size_t record_bytes() const { return record_floats() * sizeof(float); }
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

struct Splits {
  std::vector<std::uint32_t> seen_class_ids;
  std::vector<std::uint32_t> unseen_class_ids;
  std::vector<std::uint32_t> train_indices;
  std::vector<std::uint32_t> test_seen_indices;
  std::vector<std::uint32_t> test_unseen_indices;

  bool operator==(const Splits&) const = default;
};

// Checks every Splits invariant against the per-image labels and class count.
// Throws StoreError describing the first violation.
void validate_splits(const Splits& splits, std::span<const std::uint32_t> labels,
                     std::size_t num_classes);

// Reads and validates manifest.json: field presence and types, dtype tag,
// class_names length, and byte lengths of every referenced file.
Manifest load_manifest(const std::filesystem::path& path);

// Random-access reader over the records of a store. Copies share the
// underlying file; concurrent get() calls are safe.
class FeatureSet {
 public:
  FeatureSet() = default;

  static FeatureSet open(const Manifest& manifest);
  static FeatureSet from_memory(Manifest manifest, std::vector<LocalFeatureMap> records,
                                std::vector<std::uint32_t> labels);

  const Manifest& manifest() const { return manifest_; }
  std::size_t size() const { return labels_.size(); }

  LocalFeatureMap get(std::size_t index) const;
  std::uint32_t label(std::size_t index) const;
  std::span<const std::uint32_t> labels() const { return labels_; }

 private:
  struct Backend;

  Manifest manifest_;
  std::vector<std::uint32_t> labels_;
  std::shared_ptr<const Backend> backend_;
};

inline FeatureSet open_features(const Manifest& manifest) { return FeatureSet::open(manifest); }

AttributeMatrix load_attributes(const Manifest& manifest);
Splits load_splits(const Manifest& manifest);

// Everything in a store directory, validated.
struct Store {
  Manifest manifest;
  FeatureSet features;
  AttributeMatrix attributes;
  Splits splits;
};

Store open_store(const std::filesystem::path& dir);

// Full validation of a store including every record's values; returns the
// opened store on success.
Store validate_store(const std::filesystem::path& dir);

struct StoreInfo {
  std::string dataset_name = "dataset";
  // Empty means generated names class_000, class_001, ...
  std::vector<std::string> class_names;
};

Manifest write_store(const std::filesystem::path& dir, std::span<const LocalFeatureMap> features,
                     std::span<const std::uint32_t> labels, const AttributeMatrix& attributes,
                     const Splits& splits, const StoreInfo& info = {});

// Synthetic localized-attribute datasets.
struct SynthSpec {
  std::size_t spatial_size = 4;    // M
  std::size_t feature_depth = 64;  // D
  std::size_t num_attributes = 16; // L
  std::size_t num_classes = 20;    // C
  std::size_t per_class_count = 50;
  std::size_t num_seen = 14;
  double signal_strength = 2.0;
  double noise_sigma = 0.3;
};

// Throws std::invalid_argument naming the offending field.
void validate_synth_spec(const SynthSpec& spec);

inline constexpr std::int32_t kNotPlanted = -1;

struct SyntheticDataset {
  SynthSpec spec;
  std::vector<LocalFeatureMap> features;
  std::vector<std::uint32_t> labels;
  AttributeMatrix attributes;
  Splits splits;
  // Feature channels carrying each attribute, one list per attribute.
  std::vector<std::vector<std::uint32_t>> attribute_channels;
  // N x L flat location of each planted attribute, kNotPlanted when absent.
  Matrix<std::int32_t> planted_locations;

  FeatureSet feature_set(const std::string& dataset_name = "synthetic") const;
};

SyntheticDataset synthesize_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace selar
