#pragma once

// Trained head checkpoint. Binary layout, all little-endian:
//
//   u32 L, u32 D
//   f32 W[L * D]            row-major
//   u32 pooling method      0 = GAP, 1 = GMP
//   u32 pooling space       0 = visual, 1 = attribute, 2 = class
//   u32 C
//   f32 A[C * L]            L2-normalized attribute rows of every class
//
// The attribute matrix covers the joint label space so evaluation needs
// nothing else from training.

#include <filesystem>

#include "selar/semantic_head.hpp"
#include "selar/tensor.hpp"

namespace selar {

struct Checkpoint {
  EmbeddingWeights weights;
  PoolingConfig pooling;
  AttributeMatrix attributes;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace selar
