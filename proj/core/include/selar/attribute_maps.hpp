#pragma once

// Attribute Activation Maps (channels of the local semantic map) and Class
// Activation Maps (attribute-weighted sums of those channels), normalized to
// [0, 1] and exported as 8-bit PGM images.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "selar/semantic_head.hpp"

namespace selar {

enum class MapKind { kAttribute, kClass };

std::string to_string(MapKind kind);

struct Heatmap {
  std::size_t side = 0;
  // side x side values in [0, 1], row-major.
  std::vector<float> values;
  MapKind kind = MapKind::kAttribute;
  std::size_t source_index = 0;
  // Range of the raw map before min-max normalization.
  double raw_min = 0.0;
  double raw_max = 0.0;

  float at(std::size_t r, std::size_t c) const { return values[r * side + c]; }
};

// Min-max normalizes a raw side x side map. A constant map becomes all zeros.
Heatmap normalize_map(std::span<const double> raw, std::size_t side, MapKind kind,
                      std::size_t source_index);

// Channel `attribute_index` of the trace's local semantic map.
Heatmap extract_aam(const ForwardTrace<float>& trace, std::size_t attribute_index);

// Raw CAM: at every location, sum_i row[i] * local[loc][i].
std::vector<double> raw_cam(const Grid<float>& local_semantic, std::span<const float> class_row);

Heatmap compute_cam(const Grid<float>& local_semantic, std::span<const float> class_row,
                    std::size_t class_index = 0);

// Indices of the k largest entries, largest first; ties keep the lower index first.
std::vector<std::size_t> top_attributes(std::span<const float> class_row, std::size_t k);

// Corner-aligned bilinear resampling to resolution x resolution.
Heatmap upsample_bilinear(const Heatmap& map, std::size_t resolution);

// floor(value * 255 + 0.5), clamped to [0, 255].
std::uint8_t quantize(float value);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const Heatmap& map);
GrayImage read_pgm(const std::filesystem::path& path);

// Writes map_<nn>_<kind><index>.pgm for every map plus index.tsv with lines
// filename<TAB>kind<TAB>index<TAB>name. Returns the written image paths.
std::vector<std::filesystem::path> export_heatmap_grid(std::span<const Heatmap> maps,
                                                       std::span<const std::string> labels,
                                                       const std::filesystem::path& out_dir);

}  // namespace selar
