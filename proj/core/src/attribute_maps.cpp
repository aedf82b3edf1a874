#include "selar/attribute_maps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace selar {

std::string to_string(MapKind kind) { return kind == MapKind::kAttribute ? "aam" : "cam"; }

Heatmap normalize_map(std::span<const double> raw, std::size_t side, MapKind kind,
                      std::size_t source_index) {
  if (raw.size() != side * side || raw.empty()) {
    throw std::invalid_argument("normalize_map: expected " + std::to_string(side * side) +
                                " values");
  }
  Heatmap h;
  h.side = side;
  h.kind = kind;
  h.source_index = source_index;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  h.raw_min = *lo;
  h.raw_max = *hi;
  h.values.assign(raw.size(), 0.0f);
  const double range = h.raw_max - h.raw_min;
  if (range > 0.0) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      h.values[i] = static_cast<float>(std::clamp((raw[i] - h.raw_min) / range, 0.0, 1.0));
    }
  }
  return h;
}

Heatmap extract_aam(const ForwardTrace<float>& trace, std::size_t attribute_index) {
  if (!trace.local_semantic) {
    throw std::invalid_argument("extract_aam: trace has no local semantic map");
  }
  const auto& local = *trace.local_semantic;
  if (attribute_index >= local.depth()) {
    throw std::out_of_range("extract_aam: attribute " + std::to_string(attribute_index) +
                            " out of range [0, " + std::to_string(local.depth()) + ")");
  }
  std::vector<double> raw(local.locations());
  for (std::size_t loc = 0; loc < raw.size(); ++loc) raw[loc] = local.value(loc, attribute_index);
  return normalize_map(raw, local.side(), MapKind::kAttribute, attribute_index);
}

std::vector<double> raw_cam(const Grid<float>& local_semantic, std::span<const float> class_row) {
  if (class_row.size() != local_semantic.depth()) {
    throw std::invalid_argument("compute_cam: class row has " + std::to_string(class_row.size()) +
                                " attributes, local map has " +
                                std::to_string(local_semantic.depth()));
  }
  std::vector<double> out(local_semantic.locations(), 0.0);
  for (std::size_t loc = 0; loc < out.size(); ++loc) {
    const auto cell = local_semantic.at(loc);
    double acc = 0.0;
    for (std::size_t i = 0; i < cell.size(); ++i) {
      acc += static_cast<double>(class_row[i]) * static_cast<double>(cell[i]);
    }
    out[loc] = acc;
  }
  return out;
}

Heatmap compute_cam(const Grid<float>& local_semantic, std::span<const float> class_row,
                    std::size_t class_index) {
  return normalize_map(raw_cam(local_semantic, class_row), local_semantic.side(), MapKind::kClass,
                       class_index);
}

std::vector<std::size_t> top_attributes(std::span<const float> class_row, std::size_t k) {
  if (k < 1 || k > class_row.size()) {
    throw std::out_of_range("top_attributes: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(class_row.size()) + "]");
  }
  std::vector<std::size_t> order(class_row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return class_row[a] > class_row[b]; });
  order.resize(k);
  return order;
}

Heatmap upsample_bilinear(const Heatmap& map, std::size_t resolution) {
  if (resolution < map.side) {
    throw std::invalid_argument("upsample_bilinear: resolution " + std::to_string(resolution) +
                                " below map size " + std::to_string(map.side));
  }
  if (resolution == map.side) return map;
  Heatmap out = map;
  out.side = resolution;
  out.values.assign(resolution * resolution, 0.0f);
  const double scale =
      static_cast<double>(map.side - 1) / static_cast<double>(resolution - 1);
  for (std::size_t r = 0; r < resolution; ++r) {
    const double y = static_cast<double>(r) * scale;
    const auto y0 = std::min(static_cast<std::size_t>(y), map.side - 1);
    const auto y1 = std::min(y0 + 1, map.side - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < resolution; ++c) {
      const double x = static_cast<double>(c) * scale;
      const auto x0 = std::min(static_cast<std::size_t>(x), map.side - 1);
      const auto x1 = std::min(x0 + 1, map.side - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1.0 - fx) * map.at(y0, x0) + fx * map.at(y0, x1);
      const double bottom = (1.0 - fx) * map.at(y1, x0) + fx * map.at(y1, x1);
      out.values[r * resolution + c] =
          static_cast<float>(std::clamp((1.0 - fy) * top + fy * bottom, 0.0, 1.0));
    }
  }
  return out;
}

std::uint8_t quantize(float value) {
  const double scaled = std::floor(static_cast<double>(value) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

void write_pgm(const std::filesystem::path& path, const Heatmap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << map.side << ' ' << map.side << "\n255\n";
  std::vector<std::uint8_t> pixels(map.values.size());
  std::transform(map.values.begin(), map.values.end(), pixels.begin(), quantize);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) {
    throw std::runtime_error(path.string() + ": not an 8-bit P5 graymap");
  }
  in.get();  // single whitespace before the raster
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated raster");
  return img;
}

std::vector<std::filesystem::path> export_heatmap_grid(std::span<const Heatmap> maps,
                                                       std::span<const std::string> labels,
                                                       const std::filesystem::path& out_dir) {
  if (maps.empty()) throw std::invalid_argument("export_heatmap_grid: no maps");
  if (labels.size() != maps.size()) {
    throw std::invalid_argument("export_heatmap_grid: one label per map required");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::ostringstream index;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "map_%02zu_%s%zu.pgm", i, to_string(maps[i].kind).c_str(),
                  maps[i].source_index);
    const auto path = out_dir / name;
    write_pgm(path, maps[i]);
    written.push_back(path);
    index << name << '\t' << to_string(maps[i].kind) << '\t' << maps[i].source_index << '\t'
          << labels[i] << '\n';
  }
  std::ofstream out(out_dir / "index.tsv");
  out << index.str();
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "index.tsv").string());
  return written;
}

}  // namespace selar
