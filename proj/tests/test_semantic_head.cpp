#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "selar/checkpoint.hpp"
#include "selar/semantic_head.hpp"
#include "support/oracles.hpp"

using namespace selar;

namespace {

const PoolingConfig kAllConfigs[] = {
    {PoolMethod::kGap, PoolSpace::kVisual}, {PoolMethod::kGap, PoolSpace::kAttribute},
    {PoolMethod::kGap, PoolSpace::kClass},  {PoolMethod::kGmp, PoolSpace::kVisual},
    {PoolMethod::kGmp, PoolSpace::kAttribute}, {PoolMethod::kGmp, PoolSpace::kClass}};

Grid<float> grid_from(std::size_t side, std::size_t depth, std::vector<float> values) {
  return Grid<float>(side, depth, std::move(values));
}

}  // namespace

TEST(NormalizeAttributeRows, ThreeFourFive) {
  AttributeMatrix a(1, 2, {3.0f, 4.0f});
  const auto n = normalize_attribute_rows(a);
  EXPECT_NEAR(n(0, 0), 0.6f, 1e-7);
  EXPECT_NEAR(n(0, 1), 0.8f, 1e-7);
}

TEST(NormalizeAttributeRows, UnitRowUnchanged) {
  AttributeMatrix a(2, 3, {1.0f, 0.0f, 0.0f, 0.6f, 0.0f, 0.8f});
  const auto n = normalize_attribute_rows(a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(n.data()[i], a.data()[i], 1e-7);
}

TEST(NormalizeAttributeRows, ZeroRowNamesClass) {
  AttributeMatrix a(3, 2, {1.0f, 1.0f, 0.0f, 0.0f, 2.0f, 0.0f});
  try {
    normalize_attribute_rows(a);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(NormalizeAttributeRows, RandomRowsUnitNormSameDirection) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 3.0f);
  AttributeMatrix a(20, 9);
  for (auto& v : a.data()) v = u(rng);
  const auto n = normalize_attribute_rows(a);
  for (std::size_t c = 0; c < a.rows(); ++c) {
    double sq = 0, dot = 0, raw = 0;
    for (std::size_t l = 0; l < a.cols(); ++l) {
      sq += double(n(c, l)) * n(c, l);
      dot += double(n(c, l)) * a(c, l);
      raw += double(a(c, l)) * a(c, l);
    }
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    EXPECT_NEAR(dot / std::sqrt(raw), 1.0, 1e-6);
  }
}

TEST(ProjectLocal, IdentityWeightsReturnInput) {
  const auto v = grid_from(2, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  EmbeddingWeights w(3, 3, 0.0f);
  for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0f;
  EXPECT_EQ(project_local(w, v), v);
}

TEST(ProjectLocal, SingleLocationIsMatrixVector) {
  const auto v = grid_from(1, 2, {2.0f, -1.0f});
  EmbeddingWeights w(3, 2, {1, 2, 3, 4, -5, 6});
  const auto out = project_local(w, v);
  EXPECT_FLOAT_EQ(out.value(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out.value(0, 1), 2.0f);
  EXPECT_FLOAT_EQ(out.value(0, 2), -16.0f);
}

TEST(ProjectLocal, MatchesTripleLoop) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  EmbeddingWeights w(3, 4);
  for (auto& x : w.data()) x = u(rng);
  Grid<float> v(2, 4);
  for (auto& x : v.data()) x = u(rng);
  const auto out = project_local(w, v);
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t l = 0; l < 3; ++l) {
      long double s = 0;
      for (std::size_t d = 0; d < 4; ++d) s += (long double)w(l, d) * v.value(p, d);
      EXPECT_NEAR(out.value(p, l), (double)s, 1e-6);
    }
  }
}

TEST(ProjectLocal, DimensionMismatchThrows) {
  EXPECT_THROW(project_local(EmbeddingWeights(2, 3), Grid<float>(2, 4)), std::invalid_argument);
}

TEST(Pool, ConstantTensor) {
  Grid<float> t(3, 2, 1.5f);
  for (auto m : {PoolMethod::kGap, PoolMethod::kGmp}) {
    const auto p = pool(t, m);
    EXPECT_FLOAT_EQ(p.values[0], 1.5f);
    EXPECT_FLOAT_EQ(p.values[1], 1.5f);
  }
}

TEST(Pool, ArithmeticExample) {
  const auto t = grid_from(2, 1, {1, 2, 3, 6});
  EXPECT_DOUBLE_EQ(pool(t, PoolMethod::kGap).values[0], 3.0);
  EXPECT_TRUE(pool(t, PoolMethod::kGap).argmax.empty());
  const auto gmp = pool(t, PoolMethod::kGmp);
  EXPECT_DOUBLE_EQ(gmp.values[0], 6.0);
  EXPECT_EQ(gmp.argmax[0], 3u);
}

TEST(Pool, TieGoesToLowestIndex) {
  const auto gmp = pool(grid_from(2, 1, {5, 5, 0, 0}), PoolMethod::kGmp);
  EXPECT_EQ(gmp.argmax[0], 0u);
  const auto later = pool(grid_from(2, 1, {0, 5, 0, 5}), PoolMethod::kGmp);
  EXPECT_EQ(later.argmax[0], 1u);
}

TEST(Pool, GmpDominatesGapProperty) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    Grid<float> t(1 + trial % 5, 1 + trial % 7);
    for (auto& x : t.data()) x = n(rng);
    const auto gap = pool(t, PoolMethod::kGap);
    const auto gmp = pool(t, PoolMethod::kGmp);
    for (std::size_t k = 0; k < t.depth(); ++k) EXPECT_GE(gmp.values[k], gap.values[k]);
  }
}

TEST(Pool, NonArgmaxPerturbationLeavesMaxUnchanged) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    Grid<float> t(3, 4);
    for (auto& x : t.data()) x = u(rng);
    const auto base = pool(t, PoolMethod::kGmp);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t p = (base.argmax[k] + 1 + trial % 8) % 9;
      const float gap = base.values[k] - t.value(p, k);
      auto perturbed = t;
      perturbed.at(p)[k] += 0.5f * gap;
      const auto after = pool(perturbed, PoolMethod::kGmp);
      EXPECT_EQ(after.values[k], base.values[k]);
      EXPECT_EQ(after.argmax[k], base.argmax[k]);
    }
  }
}

TEST(Forward, GapSpacesAgree) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = oracle::random_instance(rng, 1 + trial % 5, 1 + trial % 16, 1 + trial % 8,
                                            1 + trial % 6);
    const auto w = in.weights.cast<float>();
    const auto a = in.attributes.cast<float>();
    const auto v = in.features.cast<float>();
    const auto zv = forward(w, a, v, {PoolMethod::kGap, PoolSpace::kVisual}).logits;
    const auto za = forward(w, a, v, {PoolMethod::kGap, PoolSpace::kAttribute}).logits;
    const auto zc = forward(w, a, v, {PoolMethod::kGap, PoolSpace::kClass}).logits;
    EXPECT_LT(oracle::norm_relative_error(zv, za), 1e-5);
    EXPECT_LT(oracle::norm_relative_error(za, zc), 1e-5);
  }
}

TEST(Forward, SingleLocationMethodsAgree) {
  std::mt19937_64 rng(22);
  const auto in = oracle::random_instance(rng, 1, 6, 4, 3);
  for (auto space : {PoolSpace::kVisual, PoolSpace::kAttribute, PoolSpace::kClass}) {
    const auto gap = forward(in.weights, in.attributes, in.features, {PoolMethod::kGap, space});
    const auto gmp = forward(in.weights, in.attributes, in.features, {PoolMethod::kGmp, space});
    EXPECT_LT(oracle::norm_relative_error(gap.logits, gmp.logits), 1e-12);
  }
}

TEST(Forward, GmpAttributeMatchesExhaustiveOracle) {
  std::mt19937_64 rng(23);
  const auto in = oracle::random_instance(rng, 3, 5, 4, 3);
  const PoolingConfig cfg{PoolMethod::kGmp, PoolSpace::kAttribute};
  const auto expected = oracle::logits(in.weights, in.attributes, in.features, cfg);
  const auto got = forward(in.weights.cast<float>(), in.attributes.cast<float>(),
                           in.features.cast<float>(), cfg);
  ASSERT_EQ(got.logits.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(got.logits[c], (double)expected[c], 1e-6);
}

TEST(Forward, TraceShapes) {
  std::mt19937_64 rng(24);
  const auto in = oracle::random_instance(rng, 3, 5, 4, 2);
  for (const auto& cfg : kAllConfigs) {
    const auto t = forward(in.weights, in.attributes, in.features, cfg);
    EXPECT_EQ(t.logits.size(), t.active_class_ids.size());
    EXPECT_EQ(t.pooled_attribute.size(), 4u);
    EXPECT_EQ(t.argmax_locations.empty(), cfg.method == PoolMethod::kGap);
    for (const auto loc : t.argmax_locations) EXPECT_LT(loc, 9u);
    EXPECT_EQ(t.local_semantic.has_value(), cfg.space != PoolSpace::kVisual);
  }
  ForwardOptions keep;
  keep.keep_local_semantic = true;
  const std::vector<std::uint32_t> ids = {7, 3};
  keep.class_ids = ids;
  const auto t = forward(in.weights, in.attributes, in.features,
                         {PoolMethod::kGmp, PoolSpace::kVisual}, keep);
  EXPECT_TRUE(t.local_semantic.has_value());
  EXPECT_EQ(t.active_class_ids, ids);
}

TEST(Forward, ScaleEquivarianceProperty) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    const auto in = oracle::random_instance(rng, 1 + trial % 4, 2 + trial % 5, 1 + trial % 4, 3);
    const double alpha = 0.25 + trial * 0.3;
    Matrix<double> scaled = in.weights;
    for (auto& w : scaled.data()) w *= alpha;
    for (const auto& cfg : kAllConfigs) {
      auto base = forward(in.weights, in.attributes, in.features, cfg).logits;
      for (auto& z : base) z *= alpha;
      const auto got = forward(scaled, in.attributes, in.features, cfg).logits;
      EXPECT_LT(oracle::norm_relative_error(base, got), 1e-12);
    }
  }
}

TEST(Forward, OneHotClassifierReturnsPooledAttributes) {
  std::mt19937_64 rng(26);
  auto in = oracle::random_instance(rng, 3, 6, 4, 4);
  Matrix<double> eye(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const auto attrs = normalize_attribute_rows(eye.cast<float>());
  const auto w = in.weights.cast<float>();
  const auto v = in.features.cast<float>();
  for (auto method : {PoolMethod::kGap, PoolMethod::kGmp}) {
    for (auto space : {PoolSpace::kVisual, PoolSpace::kAttribute}) {
      const auto t = forward(w, attrs, v, {method, space});
      EXPECT_EQ(t.logits, t.pooled_attribute);
    }
  }
}

TEST(Forward, MismatchedShapesThrow) {
  EXPECT_THROW(forward(Matrix<float>(2, 3), Matrix<float>(2, 2), Grid<float>(2, 4), {}),
               std::invalid_argument);
  EXPECT_THROW(forward(Matrix<float>(2, 3), Matrix<float>(2, 5), Grid<float>(2, 3), {}),
               std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  std::mt19937_64 rng(31);
  const auto in = oracle::random_instance(rng, 3, 4, 3, 2);
  for (const auto& cfg : kAllConfigs) {
    const auto t = forward(in.weights, in.attributes, in.features, cfg);
    const std::vector<double> dz(2, 0.0);
    const auto g = backward(t, in.features, in.attributes, std::span<const double>(dz));
    for (const auto x : g.data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Backward, GmpAttributeRowsUseOnlyArgmaxLocation) {
  std::mt19937_64 rng(32);
  const auto in = oracle::random_instance(rng, 3, 5, 4, 3);
  const PoolingConfig cfg{PoolMethod::kGmp, PoolSpace::kAttribute};
  const auto t = forward(in.weights, in.attributes, in.features, cfg);
  const std::vector<double> dz = {0.3, -0.5, 0.2};
  const auto g = backward(t, in.features, in.attributes, std::span<const double>(dz));

  // Changing every non-argmax location of attribute l leaves row l intact.
  for (std::size_t l = 0; l < 4; ++l) {
    auto v2 = in.features;
    for (std::size_t p = 0; p < 9; ++p) {
      if (p == t.argmax_locations[l]) continue;
      for (auto& x : v2.at(p)) x *= 0.5;
    }
    const auto t2 = forward(in.weights, in.attributes, v2, cfg);
    if (t2.argmax_locations[l] != t.argmax_locations[l]) continue;
    const auto g2 = backward(t2, v2, in.attributes, std::span<const double>(dz));
    for (std::size_t d = 0; d < 5; ++d) {
      double da = 0;
      for (std::size_t c = 0; c < 3; ++c) da += dz[c] * in.attributes(c, l);
      EXPECT_NEAR(g(l, d), da * in.features.value(t.argmax_locations[l], d), 1e-12);
      EXPECT_NEAR(g2(l, d), g(l, d), 1e-12);
    }
  }
}

TEST(Backward, MatchesFiniteDifferencesAllConfigs) {
  std::mt19937_64 rng(33);
  int checked = 0;
  while (checked < 12) {
    const auto in = oracle::random_instance(rng, 1 + checked % 3 + 1, 3 + checked % 4, 2 + checked % 3, 2 + checked % 3);
    bool usable = true;
    for (auto space : {PoolSpace::kVisual, PoolSpace::kAttribute, PoolSpace::kClass}) {
      if (oracle::gmp_margin(in, space) < 0.05) usable = false;
    }
    if (!usable) continue;
    const std::size_t label = checked % in.classes;
    for (const auto& cfg : kAllConfigs) {
      const auto t = forward(in.weights, in.attributes, in.features, cfg);
      std::vector<double> z(t.logits.begin(), t.logits.end());
      double m = *std::max_element(z.begin(), z.end()), s = 0;
      for (auto x : z) s += std::exp(x - m);
      std::vector<double> dz(z.size());
      for (std::size_t c = 0; c < z.size(); ++c) dz[c] = std::exp(z[c] - m) / s - (c == label);
      const auto g = backward(t, in.features, in.attributes, std::span<const double>(dz));
      const auto fd = oracle::finite_difference_gradient(in, cfg, label, 1e-3);
      EXPECT_LT(oracle::norm_relative_error(g.data(), fd.data()), 1e-4) << to_string(cfg);
    }
    ++checked;
  }
}

TEST(Backward, FloatPathTracksDoubleShadow) {
  std::mt19937_64 rng(34);
  const auto in = oracle::random_instance(rng, 4, 8, 5, 3);
  const std::vector<double> dz = {0.2, -0.7, 0.5};
  const std::vector<float> dzf(dz.begin(), dz.end());
  for (const auto& cfg : kAllConfigs) {
    const auto td = forward(in.weights, in.attributes, in.features, cfg);
    const auto tf = forward(in.weights.cast<float>(), in.attributes.cast<float>(),
                            in.features.cast<float>(), cfg);
    if (td.argmax_locations != tf.argmax_locations) continue;
    const auto gd = backward(td, in.features, in.attributes, std::span<const double>(dz));
    const auto gf = backward(tf, in.features.cast<float>(), in.attributes.cast<float>(),
                             std::span<const float>(dzf));
    EXPECT_LT(oracle::norm_relative_error(gd.data(), gf.data()), 1e-5) << to_string(cfg);
  }
}

TEST(Backward, MismatchedTraceThrows) {
  std::mt19937_64 rng(35);
  const auto in = oracle::random_instance(rng, 3, 4, 3, 2);
  const auto t = forward(in.weights, in.attributes, in.features, {});
  const std::vector<double> wrong(5, 0.0);
  EXPECT_THROW(backward(t, in.features, in.attributes, std::span<const double>(wrong)),
               std::invalid_argument);
  EXPECT_THROW(backward(t, Grid<double>(2, 4), in.attributes,
                        std::span<const double>(std::vector<double>(2, 0.0))),
               std::invalid_argument);
}

TEST(PoolingConfigText, RoundTrips) {
  for (const auto& cfg : kAllConfigs) {
    EXPECT_EQ(parse_pool_method(to_string(cfg.method)), cfg.method);
    EXPECT_EQ(parse_pool_space(to_string(cfg.space)), cfg.space);
  }
  EXPECT_EQ(to_string(PoolingConfig{PoolMethod::kGmp, PoolSpace::kAttribute}), "GMP-attribute");
  EXPECT_THROW(parse_pool_method("AVG"), std::invalid_argument);
  EXPECT_THROW(parse_pool_space("pixel"), std::invalid_argument);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  std::mt19937_64 rng(36);
  std::normal_distribution<float> n(0, 1);
  Checkpoint ck;
  ck.weights = EmbeddingWeights(3, 5);
  for (auto& w : ck.weights.data()) w = n(rng);
  ck.pooling = {PoolMethod::kGap, PoolSpace::kClass};
  AttributeMatrix a(4, 3);
  for (auto& x : a.data()) x = std::abs(n(rng)) + 0.1f;
  ck.attributes = normalize_attribute_rows(a);
  const auto path = std::filesystem::temp_directory_path() / "selar_ckpt_test.bin";
  save_checkpoint(path, ck);
  EXPECT_EQ(std::filesystem::file_size(path), 4u * (2 + 15 + 3 + 12));
  EXPECT_EQ(load_checkpoint(path), ck);
  std::filesystem::remove(path);
}
