#pragma once

// Embedding head: a 1x1 convolution W from visual to attribute space, global
// pooling applied in a configurable space, and a fixed classifier whose rows
// are the L2-normalized class attribute vectors.
//
//   visual:    z = A . W . pool(v)
//   attribute: z = A . pool(W * v)
//   class:     z = pool(A . (W * v))
//
// where `*` applies W at every spatial location. GAP commutes with the linear
// maps, so all three spaces give the same logits under GAP; GMP does not.
//
// Everything here is templated on the scalar type. Training runs in float;
// the double instantiation is the shadow path used by gradient checks.
// Accumulation is always carried out in double.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "selar/tensor.hpp"

namespace selar {

enum class PoolMethod { kGap, kGmp };
enum class PoolSpace { kVisual, kAttribute, kClass };

struct PoolingConfig {
  PoolMethod method = PoolMethod::kGmp;
  PoolSpace space = PoolSpace::kAttribute;

  bool operator==(const PoolingConfig&) const = default;
};

std::string to_string(PoolMethod method);
std::string to_string(PoolSpace space);
// "GMP-attribute", "GAP-visual", ...
std::string to_string(const PoolingConfig& config);
PoolMethod parse_pool_method(std::string_view text);
PoolSpace parse_pool_space(std::string_view text);

// Throws std::invalid_argument naming the first class whose row is all zeros
// or non-finite.
AttributeMatrix normalize_attribute_rows(const AttributeMatrix& attributes);

// Rows of `attributes` for the given classes, in the given order.
AttributeMatrix select_rows(const AttributeMatrix& attributes,
                            std::span<const std::uint32_t> class_ids);

template <typename T>
struct Pooled {
  std::vector<T> values;
  // Flat location of each channel's maximum; empty for GAP.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
struct ForwardTrace {
  PoolingConfig config;
  std::vector<std::uint32_t> active_class_ids;
  std::size_t side = 0;
  // M x M x L per-location attribute scores; kept for the attribute and class
  // spaces, and for the visual space only on request.
  std::optional<Grid<T>> local_semantic;
  // Pooled visual feature (length D); visual space only.
  std::vector<T> pooled_visual;
  // Global semantic feature a (length L). In the class space, where logits
  // are pooled after the classifier, this is the same pooling applied to the
  // local semantic map and does not feed the logits.
  std::vector<T> pooled_attribute;
  std::vector<T> logits;
  // GMP only: flat location selected for each pooled channel. Channels are
  // D (visual), L (attribute) or C (class) depending on the space.
  std::vector<std::uint32_t> argmax_locations;
};

struct ForwardOptions {
  bool keep_local_semantic = false;
  // Class ids the attribute rows correspond to; empty means 0..C-1.
  std::span<const std::uint32_t> class_ids = {};
};

namespace detail {

// out = M . x for a row-major matrix M.
template <typename T>
std::vector<T> mat_vec(const Matrix<T>& m, std::span<const T> x) {
  std::vector<T> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      acc += static_cast<double>(row[c]) * static_cast<double>(x[c]);
    }
    out[r] = static_cast<T>(acc);
  }
  return out;
}

// out = M^T . x, accumulated in double.
template <typename T>
std::vector<double> mat_t_vec(const Matrix<T>& m, std::span<const double> x) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (x[r] == 0.0) continue;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += x[r] * static_cast<double>(row[c]);
  }
  return out;
}

template <typename T>
std::vector<double> spatial_mean(const Grid<T>& g) {
  std::vector<double> mean(g.depth(), 0.0);
  for (std::size_t loc = 0; loc < g.locations(); ++loc) {
    const auto cell = g.at(loc);
    for (std::size_t k = 0; k < cell.size(); ++k) mean[k] += static_cast<double>(cell[k]);
  }
  const double inv = 1.0 / static_cast<double>(g.locations());
  for (auto& m : mean) m *= inv;
  return mean;
}

}  // namespace detail

// Applies W at every spatial location: out[loc] = W . v[loc].
template <typename T>
Grid<T> project_local(const Matrix<T>& weights, const Grid<T>& features) {
  if (weights.cols() != features.depth()) {
    throw std::invalid_argument("project_local: W has " + std::to_string(weights.cols()) +
                                " columns but features have depth " +
                                std::to_string(features.depth()));
  }
  Grid<T> out(features.side(), weights.rows());
  for (std::size_t loc = 0; loc < features.locations(); ++loc) {
    const auto projected = detail::mat_vec(weights, std::span<const T>(features.at(loc)));
    std::copy(projected.begin(), projected.end(), out.at(loc).begin());
  }
  return out;
}

// Global pooling over all locations. GMP ties resolve to the lowest flat index.
template <typename T>
Pooled<T> pool(const Grid<T>& t, PoolMethod method) {
  if (t.locations() == 0) throw std::invalid_argument("pool: empty grid");
  Pooled<T> out;
  if (method == PoolMethod::kGap) {
    const auto mean = detail::spatial_mean(t);
    out.values.assign(mean.begin(), mean.end());
    return out;
  }
  const auto first = t.at(0);
  out.values.assign(first.begin(), first.end());
  out.argmax.assign(t.depth(), 0);
  for (std::size_t loc = 1; loc < t.locations(); ++loc) {
    const auto cell = t.at(loc);
    for (std::size_t k = 0; k < cell.size(); ++k) {
      if (cell[k] > out.values[k]) {
        out.values[k] = cell[k];
        out.argmax[k] = static_cast<std::uint32_t>(loc);
      }
    }
  }
  return out;
}

// Compatibility logits for one image. `attributes` holds the unit-norm rows of
// the active classes only.
template <typename T>
ForwardTrace<T> forward(const Matrix<T>& weights, const Matrix<T>& attributes,
                        const Grid<T>& features, const PoolingConfig& config,
                        const ForwardOptions& options = {}) {
  if (weights.cols() != features.depth()) {
    throw std::invalid_argument("forward: W has " + std::to_string(weights.cols()) +
                                " columns but features have depth " +
                                std::to_string(features.depth()));
  }
  if (attributes.cols() != weights.rows()) {
    throw std::invalid_argument("forward: attribute matrix has " +
                                std::to_string(attributes.cols()) + " columns but W has " +
                                std::to_string(weights.rows()) + " rows");
  }
  if (attributes.rows() == 0) throw std::invalid_argument("forward: no active classes");
  if (!options.class_ids.empty() && options.class_ids.size() != attributes.rows()) {
    throw std::invalid_argument("forward: class_ids length does not match attribute rows");
  }

  ForwardTrace<T> trace;
  trace.config = config;
  trace.side = features.side();
  if (options.class_ids.empty()) {
    trace.active_class_ids.resize(attributes.rows());
    for (std::size_t c = 0; c < attributes.rows(); ++c) {
      trace.active_class_ids[c] = static_cast<std::uint32_t>(c);
    }
  } else {
    trace.active_class_ids.assign(options.class_ids.begin(), options.class_ids.end());
  }

  switch (config.space) {
    case PoolSpace::kVisual: {
      auto pooled = pool(features, config.method);
      trace.pooled_visual = std::move(pooled.values);
      trace.argmax_locations = std::move(pooled.argmax);
      trace.pooled_attribute = detail::mat_vec(weights, std::span<const T>(trace.pooled_visual));
      trace.logits = detail::mat_vec(attributes, std::span<const T>(trace.pooled_attribute));
      if (options.keep_local_semantic) trace.local_semantic = project_local(weights, features);
      break;
    }
    case PoolSpace::kAttribute: {
      auto local = project_local(weights, features);
      auto pooled = pool(local, config.method);
      trace.pooled_attribute = std::move(pooled.values);
      trace.argmax_locations = std::move(pooled.argmax);
      trace.logits = detail::mat_vec(attributes, std::span<const T>(trace.pooled_attribute));
      trace.local_semantic = std::move(local);
      break;
    }
    case PoolSpace::kClass: {
      auto local = project_local(weights, features);
      Grid<T> class_scores(local.side(), attributes.rows());
      for (std::size_t loc = 0; loc < local.locations(); ++loc) {
        const auto scores = detail::mat_vec(attributes, std::span<const T>(local.at(loc)));
        std::copy(scores.begin(), scores.end(), class_scores.at(loc).begin());
      }
      auto pooled = pool(class_scores, config.method);
      trace.logits = std::move(pooled.values);
      trace.argmax_locations = std::move(pooled.argmax);
      trace.pooled_attribute = pool(local, config.method).values;
      trace.local_semantic = std::move(local);
      break;
    }
  }
  return trace;
}

// Gradient of the loss with respect to W given dz = dLoss/dlogits. For GMP
// the gradient of every pooled channel flows only to its recorded argmax.
template <typename T>
Matrix<T> backward(const ForwardTrace<T>& trace, const Grid<T>& features,
                   const Matrix<T>& attributes, std::span<const T> dlogits) {
  const auto num_classes = attributes.rows();
  const auto num_attr = attributes.cols();
  const auto depth = features.depth();
  const bool gmp = trace.config.method == PoolMethod::kGmp;

  if (dlogits.size() != num_classes || trace.logits.size() != num_classes) {
    throw std::invalid_argument("backward: logit gradient length does not match trace");
  }
  if (trace.side != features.side() || trace.pooled_attribute.size() != num_attr) {
    throw std::invalid_argument("backward: trace does not match features or attributes");
  }

  std::vector<double> dz(dlogits.begin(), dlogits.end());
  Matrix<double> grad(num_attr, depth, 0.0);

  auto add_outer = [&](std::span<const double> left, auto right) {
    for (std::size_t l = 0; l < num_attr; ++l) {
      if (left[l] == 0.0) continue;
      auto row = grad.row(l);
      for (std::size_t d = 0; d < depth; ++d) row[d] += left[l] * static_cast<double>(right[d]);
    }
  };

  switch (trace.config.space) {
    case PoolSpace::kVisual: {
      if (trace.pooled_visual.size() != depth) {
        throw std::invalid_argument("backward: trace has no pooled visual feature");
      }
      const auto da = detail::mat_t_vec(attributes, dz);
      add_outer(da, std::span<const T>(trace.pooled_visual));
      break;
    }
    case PoolSpace::kAttribute: {
      const auto da = detail::mat_t_vec(attributes, dz);
      if (!gmp) {
        add_outer(da, std::span<const double>(detail::spatial_mean(features)));
        break;
      }
      if (trace.argmax_locations.size() != num_attr) {
        throw std::invalid_argument("backward: trace argmax does not match attributes");
      }
      for (std::size_t l = 0; l < num_attr; ++l) {
        if (da[l] == 0.0) continue;
        const auto v = features.at(trace.argmax_locations[l]);
        auto row = grad.row(l);
        for (std::size_t d = 0; d < depth; ++d) row[d] += da[l] * static_cast<double>(v[d]);
      }
      break;
    }
    case PoolSpace::kClass: {
      if (!gmp) {
        const auto da = detail::mat_t_vec(attributes, dz);
        add_outer(da, std::span<const double>(detail::spatial_mean(features)));
        break;
      }
      if (trace.argmax_locations.size() != num_classes) {
        throw std::invalid_argument("backward: trace argmax does not match classes");
      }
      // Per-location gradient of the local semantic map.
      Grid<double> dlocal(features.side(), num_attr, 0.0);
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (dz[c] == 0.0) continue;
        auto cell = dlocal.at(trace.argmax_locations[c]);
        const auto row = attributes.row(c);
        for (std::size_t l = 0; l < num_attr; ++l) cell[l] += dz[c] * static_cast<double>(row[l]);
      }
      for (std::size_t loc = 0; loc < features.locations(); ++loc) {
        add_outer(std::span<const double>(dlocal.at(loc)), features.at(loc));
      }
      break;
    }
  }
  if constexpr (std::is_same_v<T, double>) {
    return grad;
  } else {
    return grad.template cast<T>();
  }
}

}  // namespace selar
