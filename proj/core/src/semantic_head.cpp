#include "selar/semantic_head.hpp"

#include <cmath>

namespace selar {

std::string to_string(PoolMethod method) {
  return method == PoolMethod::kGap ? "GAP" : "GMP";
}

std::string to_string(PoolSpace space) {
  switch (space) {
    case PoolSpace::kVisual:
      return "visual";
    case PoolSpace::kAttribute:
      return "attribute";
    case PoolSpace::kClass:
      return "class";
  }
  return "unknown";
}

std::string to_string(const PoolingConfig& config) {
  return to_string(config.method) + "-" + to_string(config.space);
}

PoolMethod parse_pool_method(std::string_view text) {
  if (text == "GAP" || text == "gap") return PoolMethod::kGap;
  if (text == "GMP" || text == "gmp") return PoolMethod::kGmp;
  throw std::invalid_argument("unknown pooling method '" + std::string(text) +
                              "' (expected GAP or GMP)");
}

PoolSpace parse_pool_space(std::string_view text) {
  if (text == "visual") return PoolSpace::kVisual;
  if (text == "attribute") return PoolSpace::kAttribute;
  if (text == "class") return PoolSpace::kClass;
  throw std::invalid_argument("unknown pooling space '" + std::string(text) +
                              "' (expected visual, attribute or class)");
}

AttributeMatrix normalize_attribute_rows(const AttributeMatrix& attributes) {
  AttributeMatrix out = attributes;
  for (std::size_t c = 0; c < out.rows(); ++c) {
    auto row = out.row(c);
    double sq = 0.0;
    for (const float v : row) sq += static_cast<double>(v) * v;
    if (!std::isfinite(sq)) {
      throw std::invalid_argument("normalize_attribute_rows: class " + std::to_string(c) +
                                  " has non-finite attributes");
    }
    if (sq == 0.0) {
      throw std::invalid_argument("normalize_attribute_rows: class " + std::to_string(c) +
                                  " has an all-zero attribute row");
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& v : row) v = static_cast<float>(v * inv);
  }
  return out;
}

AttributeMatrix select_rows(const AttributeMatrix& attributes,
                            std::span<const std::uint32_t> class_ids) {
  AttributeMatrix out(class_ids.size(), attributes.cols());
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] >= attributes.rows()) {
      throw std::out_of_range("select_rows: class " + std::to_string(class_ids[i]) +
                              " out of range");
    }
    const auto src = attributes.row(class_ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace selar
