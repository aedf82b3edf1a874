#include "selar/checkpoint.hpp"

#include "binary_io.hpp"

namespace selar {

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto& w = checkpoint.weights;
  const auto& a = checkpoint.attributes;
  if (a.cols() != w.rows()) {
    throw std::invalid_argument("save_checkpoint: attribute matrix width does not match W");
  }
  detail::BinaryWriter out(path);
  out.put(static_cast<std::uint32_t>(w.rows()));
  out.put(static_cast<std::uint32_t>(w.cols()));
  out.put_all(w.data());
  out.put(static_cast<std::uint32_t>(checkpoint.pooling.method));
  out.put(static_cast<std::uint32_t>(checkpoint.pooling.space));
  out.put(static_cast<std::uint32_t>(a.rows()));
  out.put_all(a.data());
  out.close();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  Checkpoint ck;
  const auto num_attr = in.get<std::uint32_t>();
  const auto depth = in.get<std::uint32_t>();
  if (num_attr == 0 || depth == 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": zero-sized weights");
  }
  ck.weights = EmbeddingWeights(num_attr, depth, in.get_all<float>(std::size_t{num_attr} * depth));
  const auto method = in.get<std::uint32_t>();
  const auto space = in.get<std::uint32_t>();
  if (method > 1 || space > 2) {
    throw std::runtime_error("checkpoint " + path.string() + ": invalid pooling config");
  }
  ck.pooling = {static_cast<PoolMethod>(method), static_cast<PoolSpace>(space)};
  const auto num_classes = in.get<std::uint32_t>();
  ck.attributes =
      AttributeMatrix(num_classes, num_attr, in.get_all<float>(std::size_t{num_classes} * num_attr));
  if (!in.at_end()) {
    throw std::runtime_error("checkpoint " + path.string() + ": trailing bytes");
  }
  return ck;
}

}  // namespace selar
