#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "maris/gpem.hpp"
#include "maris/random.hpp"
#include "oracles.hpp"

using namespace maris;
using namespace maris::gpem;

namespace {

FeaturePyramid random_pyramid(const std::vector<std::size_t>& sides, const std::vector<int>& chans,
                              std::mt19937_64& rng) {
  FeaturePyramid p;
  for (std::size_t l = 0; l < sides.size(); ++l) {
    p.levels.push_back({sides[l], sides[l], random_normal(sides[l] * sides[l],
                                                          static_cast<std::size_t>(chans[l]), 1.0, rng)});
    p.strides.push_back(4 << l);
  }
  return p;
}

void zero(ag::Var& v) { v.mutable_value().fill(0.0); }

}  // namespace

TEST(Upsample, RowsSumToOneAndIdentityAtSameSize) {
  const Matrix u = upsample_matrix(4, 3, 9, 7);
  for (std::size_t r = 0; r < u.rows(); ++r) {
    double s = 0;
    for (double v : u.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const Matrix id = upsample_matrix(5, 5, 5, 5);
  for (std::size_t r = 0; r < 25; ++r)
    for (std::size_t c = 0; c < 25; ++c) EXPECT_DOUBLE_EQ(id(r, c), r == c ? 1.0 : 0.0);
}

TEST(Upsample, DoublingHalfPixelWeights) {
  // 2 -> 4 along one axis: outputs sit at source coords -0.25, 0.25, 0.75, 1.25.
  const Matrix u = upsample_matrix(1, 2, 1, 4);
  EXPECT_DOUBLE_EQ(u(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(u(1, 0), 0.75);
  EXPECT_DOUBLE_EQ(u(1, 1), 0.25);
  EXPECT_DOUBLE_EQ(u(2, 0), 0.25);
  EXPECT_DOUBLE_EQ(u(3, 1), 1.0);
}

TEST(Refine, PreservesLevelShapes) {
  auto rng = stream_rng(1, "t");
  const auto p = random_pyramid({8, 4, 2}, {6, 8, 10}, rng);
  const auto params = RefineParams::init({6, 8, 10}, 5, 4, rng);
  const auto [out, agg] = refine_multiscale(p, params);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(out.levels[l].height, p.levels[l].height);
    EXPECT_EQ(out.levels[l].channels(), p.levels[l].channels());
    EXPECT_TRUE(out.levels[l].data.all_finite());
  }
  EXPECT_EQ(agg.height, 8u);
  EXPECT_EQ(agg.channels(), 5u);
}

TEST(Refine, ZeroOffsetsAndValuesPassInputThrough) {
  auto rng = stream_rng(2, "t");
  const auto p = random_pyramid({6, 3}, {4, 4}, rng);
  auto params = RefineParams::init({4, 4}, 3, 4, rng);
  for (auto& lv : params.levels) {
    zero(lv.offsets.weight), zero(lv.offsets.bias);
    zero(lv.value.weight), zero(lv.value.bias);
  }
  const auto out = refine_multiscale(p, params).first;
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(out.levels[l].data, p.levels[l].data);
}

TEST(Refine, SinglePointZeroOffsetIsDenseLinearMap) {
  auto rng = stream_rng(3, "t");
  FeaturePyramid p;
  p.levels.push_back({4, 4, random_normal(16, 8, 1.0, rng)});
  p.strides = {4};
  auto params = RefineParams::init({8}, 8, 1, rng);
  zero(params.levels[0].offsets.weight), zero(params.levels[0].offsets.bias);
  params.levels[0].value.bias.mutable_value() = random_normal(1, 8, 1.0, rng);
  params.levels[0].output.bias.mutable_value() = random_normal(1, 8, 1.0, rng);
  const auto out = refine_multiscale(as_constants(p), params).refined[0].data.value();
  const Matrix& x = p.levels[0].data;
  const Matrix expect = oracle::dense(oracle::dense(x, params.levels[0].value), params.levels[0].output);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], x[i] + expect[i], 1e-9);
}

TEST(Refine, LevelCountMismatchIsConfigError) {
  auto rng = stream_rng(4, "t");
  const auto p = random_pyramid({4, 2}, {4, 4}, rng);
  const auto params = RefineParams::init({4, 4, 4}, 3, 2, rng);
  EXPECT_THROW(refine_multiscale(p, params), ConfigError);
}

TEST(Fusion, MatchesScalarLoop) {
  for (int trial = 0; trial < 10; ++trial) {
    auto rng = stream_rng(static_cast<std::uint64_t>(trial), "fusion");
    const auto vis = random_pyramid({2, 1}, {3, 5}, rng);
    const auto geo = random_pyramid({2, 1}, {4, 2}, rng);
    auto params = FusionParams::init({3, 5}, {4, 2}, 6, true, rng);
    for (auto& lv : params.levels) lv.gate.bias.mutable_value() = random_normal(1, 6, 1.0, rng);
    const auto out = fuse_visual_geometric(vis, geo, params);
    for (std::size_t l = 0; l < 2; ++l) {
      const Matrix expect =
          oracle::fusion_level(vis.levels[l].data, geo.levels[l].data, params.levels[l], true);
      EXPECT_LT(max_abs_diff(out.levels[l].data, expect), 1e-6);
    }
  }
}

TEST(Fusion, GateSaturationEndpoints) {
  auto rng = stream_rng(5, "t");
  const auto vis = random_pyramid({3, 2}, {4, 4}, rng);
  const auto geo = random_pyramid({3, 2}, {4, 4}, rng);
  auto params = FusionParams::init({4, 4}, {4, 4}, 5, true, rng);
  for (double bias : {-1e6, 1e6}) {
    for (auto& lv : params.levels) lv.gate.bias.mutable_value().fill(bias);
    const auto out = fuse_visual_geometric(vis, geo, params);
    for (std::size_t l = 0; l < 2; ++l) {
      // Same layer code, so the comparison can be exact.
      const auto& p = params.levels[l];
      ag::Var pre = p.visual(ag::constant(vis.levels[l].data));
      if (bias > 0) pre = ag::add(pre, p.geometric(ag::constant(geo.levels[l].data)));
      const Matrix full = p.mlp(pre).value();
      EXPECT_EQ(out.levels[l].data, full) << "bias " << bias << " level " << l;
    }
  }
}

TEST(Fusion, GatesArePerChannelInUnitInterval) {
  auto rng = stream_rng(6, "t");
  const auto vis = random_pyramid({3, 2}, {4, 6}, rng);
  const auto geo = random_pyramid({3, 2}, {5, 2}, rng);
  const auto params = FusionParams::init({4, 6}, {5, 2}, 7, false, rng);
  FusionTrace trace;
  fuse_visual_geometric(as_constants(vis), as_constants(geo), params, &trace);
  ASSERT_EQ(trace.gates.size(), 2u);
  for (const auto& g : trace.gates) {
    EXPECT_EQ(g.cols(), 7u);
    for (double a : g.value().data()) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
  }
}

TEST(Fusion, IdentityMlpAblation) {
  auto rng = stream_rng(7, "t");
  const auto vis = random_pyramid({2, 1}, {3, 3}, rng);
  const auto geo = random_pyramid({2, 1}, {3, 3}, rng);
  const auto params = FusionParams::init({3, 3}, {3, 3}, 4, false, rng);
  const auto out = fuse_visual_geometric(vis, geo, params);
  for (std::size_t l = 0; l < 2; ++l)
    EXPECT_LT(max_abs_diff(out.levels[l].data, oracle::fusion_level(vis.levels[l].data,
                                                                    geo.levels[l].data,
                                                                    params.levels[l], false)),
              1e-9);
  ParamSet set;
  params.register_params(set, "");
  for (const auto& [name, v] : set) EXPECT_EQ(name.find("mlp"), std::string::npos);
}

TEST(Fusion, MisalignedLevelIsShapeErrorNamingLevel) {
  auto rng = stream_rng(8, "t");
  const auto vis = random_pyramid({4, 2}, {3, 3}, rng);
  auto geo = random_pyramid({4, 3}, {3, 3}, rng);
  const auto params = FusionParams::init({3, 3}, {3, 3}, 4, true, rng);
  try {
    fuse_visual_geometric(vis, geo, params);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("level 1"), std::string::npos);
  }
}

TEST(Bridge, NoLayersReturnsQueriesUnchanged) {
  auto rng = stream_rng(9, "t");
  const auto fused = random_pyramid({4, 2}, {6, 6}, rng);
  const auto qs = QuerySet::init(5, 6, rng);
  const auto params = BridgeParams::init(2, 6, 0, rng);
  EXPECT_EQ(bridge_queries(fused, qs.vectors.value(), qs.positions.value(), params),
            qs.vectors.value());
}

TEST(Bridge, SingleTokenClosedForm) {
  auto rng = stream_rng(10, "t");
  const std::size_t c = 5;
  FeaturePyramid fused;
  fused.levels.push_back({1, 1, random_normal(1, c, 1.0, rng)});
  fused.strides = {4};
  const auto qs = QuerySet::init(1, static_cast<int>(c), rng);
  auto params = BridgeParams::init(1, static_cast<int>(c), 1, rng);
  auto& layer = params.layers[0];
  layer.cross[0].output.bias.mutable_value() = random_normal(1, c, 0.5, rng);
  const Matrix out = bridge_queries(fused, qs.vectors.value(), qs.positions.value(), params);

  // With one key the softmax weight is 1, so attention is (k Wv) Wo + bo.
  auto attend = [](const Matrix& kv, const Attention& a) {
    return oracle::dense(oracle::dense(kv, a.value.value(), Matrix(1, kv.cols())), a.output);
  };
  Matrix q = qs.vectors.value();
  const Matrix cross = attend(fused.levels[0].data, layer.cross[0]);
  for (std::size_t j = 0; j < c; ++j) q[j] += cross[j];
  const Matrix self = attend(q, layer.self);
  for (std::size_t j = 0; j < c; ++j) q[j] += self[j];
  const Matrix ff = oracle::mlp(q, layer.ffn);
  for (std::size_t j = 0; j < c; ++j) q[j] += ff[j];
  EXPECT_LT(max_abs_diff(out, q), 1e-6);
}

TEST(Bridge, DefaultQueryCountOutputShape) {
  auto rng = stream_rng(11, "t");
  GpemConfig cfg;
  const auto fused = random_pyramid({16, 8, 4}, {cfg.latent_dim, cfg.latent_dim, cfg.latent_dim}, rng);
  const auto qs = QuerySet::init(cfg.num_queries, cfg.latent_dim, rng);
  const auto params = BridgeParams::init(3, cfg.latent_dim, cfg.num_layers, rng);
  const Matrix out = bridge_queries(fused, qs.vectors.value(), qs.positions.value(), params);
  EXPECT_EQ(out.rows(), 100u);
  EXPECT_EQ(out.cols(), static_cast<std::size_t>(cfg.latent_dim));
  EXPECT_TRUE(out.all_finite());
}

TEST(Bridge, LevelMismatchIsConfigError) {
  auto rng = stream_rng(12, "t");
  const auto fused = random_pyramid({4, 2}, {6, 6}, rng);
  const auto qs = QuerySet::init(3, 6, rng);
  const auto params = BridgeParams::init(3, 6, 1, rng);
  EXPECT_THROW(bridge_queries(fused, qs.vectors.value(), qs.positions.value(), params), ConfigError);
}

TEST(GpemConfig, JsonRoundTripAndValidation) {
  GpemConfig c;
  c.num_queries = 7;
  c.fusion_mlp = false;
  nlohmann::json j = c;
  const auto back = j.get<GpemConfig>();
  EXPECT_EQ(back.num_queries, 7);
  EXPECT_FALSE(back.fusion_mlp);
  j["num_points"] = 0;
  EXPECT_THROW(j.get<GpemConfig>(), ConfigError);
}
