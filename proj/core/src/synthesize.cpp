#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "selar/feature_store.hpp"

namespace selar {

namespace {

// Probability that a given attribute is active for a class.
constexpr double kAttributeDensity = 0.3;
// Active attribute values are drawn from [kAttributeMin, 1].
constexpr double kAttributeMin = 0.5;
// Share of each seen class's images assigned to training.
constexpr double kTrainFraction = 0.8;

}  // namespace

void validate_synth_spec(const SynthSpec& spec) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth spec: " + msg); };
  if (spec.spatial_size < 1) fail("M must be >= 1");
  if (spec.feature_depth < 1) fail("D must be >= 1");
  if (spec.num_attributes < 1) fail("L must be >= 1");
  if (spec.num_classes < 2) fail("C must be >= 2");
  if (spec.feature_depth < spec.num_attributes) fail("D must be >= L");
  if (spec.num_seen < 1) fail("num_seen must be >= 1");
  if (spec.num_seen >= spec.num_classes) fail("num_seen must be < C");
  if (spec.per_class_count < 2) fail("per_class_count must be >= 2");
  if (!(spec.signal_strength > 0.0) || !std::isfinite(spec.signal_strength)) {
    fail("signal_strength must be positive");
  }
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    fail("noise_sigma must be non-negative");
  }
}

SyntheticDataset synthesize_dataset(const SynthSpec& spec, std::uint64_t seed) {
  validate_synth_spec(spec);
  const auto side = spec.spatial_size;
  const auto depth = spec.feature_depth;
  const auto num_attr = spec.num_attributes;
  const auto num_classes = spec.num_classes;
  const auto locations = side * side;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticDataset ds;
  ds.spec = spec;

  // Disjoint channel groups of equal size; leftover channels carry only noise.
  std::vector<std::uint32_t> channels(depth);
  std::iota(channels.begin(), channels.end(), 0u);
  std::shuffle(channels.begin(), channels.end(), rng);
  const auto group = depth / num_attr;
  ds.attribute_channels.resize(num_attr);
  for (std::size_t l = 0; l < num_attr; ++l) {
    ds.attribute_channels[l].assign(channels.begin() + l * group,
                                    channels.begin() + (l + 1) * group);
    std::sort(ds.attribute_channels[l].begin(), ds.attribute_channels[l].end());
  }

  ds.attributes = AttributeMatrix(num_classes, num_attr);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto row = ds.attributes.row(c);
    bool any = false;
    for (auto& v : row) {
      if (unit(rng) < kAttributeDensity) {
        v = static_cast<float>(kAttributeMin + (1.0 - kAttributeMin) * unit(rng));
        any = true;
      }
    }
    if (!any) {
      std::uniform_int_distribution<std::size_t> pick(0, num_attr - 1);
      row[pick(rng)] = static_cast<float>(kAttributeMin + (1.0 - kAttributeMin) * unit(rng));
    }
  }

  std::vector<std::uint32_t> classes(num_classes);
  std::iota(classes.begin(), classes.end(), 0u);
  std::shuffle(classes.begin(), classes.end(), rng);
  ds.splits.seen_class_ids.assign(classes.begin(), classes.begin() + spec.num_seen);
  ds.splits.unseen_class_ids.assign(classes.begin() + spec.num_seen, classes.end());
  std::sort(ds.splits.seen_class_ids.begin(), ds.splits.seen_class_ids.end());
  std::sort(ds.splits.unseen_class_ids.begin(), ds.splits.unseen_class_ids.end());
  std::vector<bool> is_seen(num_classes, false);
  for (const auto c : ds.splits.seen_class_ids) is_seen[c] = true;

  const auto total = num_classes * spec.per_class_count;
  const auto train_per_class = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(kTrainFraction * spec.per_class_count)), 1,
      spec.per_class_count - 1);

  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  std::uniform_int_distribution<std::int32_t> location(0, static_cast<std::int32_t>(locations) - 1);

  ds.features.reserve(total);
  ds.labels.reserve(total);
  ds.planted_locations = Matrix<std::int32_t>(total, num_attr, kNotPlanted);

  for (std::uint32_t c = 0; c < num_classes; ++c) {
    const auto psi = ds.attributes.row(c);
    for (std::size_t k = 0; k < spec.per_class_count; ++k) {
      const auto index = static_cast<std::uint32_t>(ds.features.size());
      LocalFeatureMap map(side, depth, 0.0f);
      if (spec.noise_sigma > 0) {
        for (auto& v : map.data()) v = static_cast<float>(std::max(0.0, noise(rng)));
      }
      for (std::size_t l = 0; l < num_attr; ++l) {
        if (psi[l] <= 0.0f) continue;
        const auto loc = location(rng);
        ds.planted_locations(index, l) = loc;
        const auto signal = static_cast<float>(spec.signal_strength * psi[l]);
        auto cell = map.at(static_cast<std::size_t>(loc));
        for (const auto ch : ds.attribute_channels[l]) cell[ch] += signal;
      }
      ds.features.push_back(std::move(map));
      ds.labels.push_back(c);
      if (!is_seen[c]) {
        ds.splits.test_unseen_indices.push_back(index);
      } else if (k < train_per_class) {
        ds.splits.train_indices.push_back(index);
      } else {
        ds.splits.test_seen_indices.push_back(index);
      }
    }
  }
  return ds;
}

}  // namespace selar
