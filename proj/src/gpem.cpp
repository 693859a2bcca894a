#include "maris/gpem.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maris/random.hpp"

namespace maris::gpem {

void GpemConfig::validate() const {
  if (latent_dim <= 0) throw ConfigError("gpem: latent_dim must be positive");
  if (num_queries <= 0) throw ConfigError("gpem: num_queries must be positive");
  if (num_layers < 0) throw ConfigError("gpem: num_layers must be >= 0");
  if (num_points <= 0) throw ConfigError("gpem: num_points must be positive");
}

void to_json(nlohmann::json& j, const GpemConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim}, {"num_queries", c.num_queries},
                     {"num_layers", c.num_layers}, {"num_points", c.num_points},
                     {"fusion_mlp", c.fusion_mlp}};
}

void from_json(const nlohmann::json& j, GpemConfig& c) {
  GpemConfig d;
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.num_queries = j.value("num_queries", d.num_queries);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_points = j.value("num_points", d.num_points);
  c.fusion_mlp = j.value("fusion_mlp", d.fusion_mlp);
  c.validate();
}

std::vector<VarMap> as_constants(const FeaturePyramid& p) {
  std::vector<VarMap> out;
  for (const auto& lv : p.levels) out.push_back({lv.height, lv.width, ag::constant(lv.data)});
  return out;
}

FeaturePyramid to_pyramid(const std::vector<VarMap>& maps, const std::vector<int>& strides) {
  FeaturePyramid p;
  p.strides = strides;
  for (const auto& m : maps) p.levels.push_back({m.height, m.width, m.data.value()});
  return p;
}

Matrix upsample_matrix(std::size_t src_h, std::size_t src_w, std::size_t dst_h, std::size_t dst_w) {
  Matrix u(dst_h * dst_w, src_h * src_w);
  auto axis = [](std::size_t dst, std::size_t src_n, std::size_t dst_n, std::size_t& i0,
                 std::size_t& i1, double& f) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) /
                   static_cast<double>(dst_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, src_n - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < dst_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, src_h, dst_h, y0, y1, fy);
    for (std::size_t x = 0; x < dst_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, src_w, dst_w, x0, x1, fx);
      const std::size_t r = y * dst_w + x;
      u(r, y0 * src_w + x0) += (1 - fy) * (1 - fx);
      u(r, y0 * src_w + x1) += (1 - fy) * fx;
      u(r, y1 * src_w + x0) += fy * (1 - fx);
      u(r, y1 * src_w + x1) += fy * fx;
    }
  }
  return u;
}

void DeformableLevel::register_params(ParamSet& set, const std::string& name) const {
  offsets.register_params(set, name + ".offsets");
  attention.register_params(set, name + ".attention");
  value.register_params(set, name + ".value");
  output.register_params(set, name + ".output");
  aggregate.register_params(set, name + ".aggregate");
}

RefineParams RefineParams::init(const std::vector<int>& channels, int latent_dim, int num_points,
                                std::mt19937_64& rng) {
  RefineParams p;
  p.num_points = num_points;
  const auto np = static_cast<std::size_t>(num_points);
  for (int ci : channels) {
    const auto c = static_cast<std::size_t>(ci);
    DeformableLevel lv;
    lv.offsets = Linear::init(c, 2 * np, rng, 0.1);
    // Initial sampling points on a unit ring rotated off the pixel grid.
    for (std::size_t k = 0; k < np; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(np) +
                       std::numbers::pi / 4.0;
      lv.offsets.bias.mutable_value()[2 * k] = std::cos(a);
      lv.offsets.bias.mutable_value()[2 * k + 1] = std::sin(a);
    }
    lv.attention = Linear::init(c, np, rng, 0.1);
    lv.value = Linear::init(c, c, rng);
    lv.output = Linear::init(c, c, rng, 0.5);
    lv.aggregate = Linear::init(c, static_cast<std::size_t>(latent_dim), rng);
    p.levels.push_back(std::move(lv));
  }
  return p;
}

void RefineParams::register_params(ParamSet& set, const std::string& prefix) const {
  for (std::size_t l = 0; l < levels.size(); ++l)
    levels[l].register_params(set, prefix + "level" + std::to_string(l));
}

RefineResult refine_multiscale(const std::vector<VarMap>& pyramid, const RefineParams& params) {
  if (pyramid.size() != params.levels.size()) {
    throw ConfigError("refine_multiscale: pyramid has " + std::to_string(pyramid.size()) +
                      " levels, parameters expect " + std::to_string(params.levels.size()));
  }
  const auto np = static_cast<std::size_t>(params.num_points);
  RefineResult res;
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    const VarMap& in = pyramid[l];
    const DeformableLevel& p = params.levels[l];
    const std::size_t n = in.height * in.width;
    if (p.value.weight.rows() != in.data.cols()) {
      throw ConfigError("refine_multiscale: level " + std::to_string(l) + " has " +
                        std::to_string(in.data.cols()) + " channels, parameters expect " +
                        std::to_string(p.value.weight.rows()));
    }
    Matrix ref(n * np, 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < np; ++k) {
        ref(i * np + k, 0) = static_cast<double>(i % in.width);
        ref(i * np + k, 1) = static_cast<double>(i / in.width);
      }
    ag::Var locs = ag::add(ag::constant(std::move(ref)), ag::reshape(p.offsets(in.data), n * np, 2));
    ag::Var weights = ag::softmax_rows(p.attention(in.data));
    ag::Var samples = ag::bilinear_sample(p.value(in.data), in.height, in.width, locs);
    ag::Var out = ag::add(in.data, p.output(ag::weighted_group_sum(samples, weights)));
    res.refined.push_back({in.height, in.width, out});
  }
  const VarMap& base = res.refined.front();
  ag::Var agg;
  for (std::size_t l = 0; l < res.refined.size(); ++l) {
    const VarMap& lv = res.refined[l];
    ag::Var proj = params.levels[l].aggregate(lv.data);
    if (l > 0) {
      proj = ag::matmul(
          ag::constant(upsample_matrix(lv.height, lv.width, base.height, base.width)), proj);
    }
    agg = agg.valid() ? ag::add(agg, proj) : proj;
  }
  res.aggregated = {base.height, base.width, agg};
  return res;
}

std::pair<FeaturePyramid, FeatureMap> refine_multiscale(const FeaturePyramid& pyramid,
                                                        const RefineParams& params) {
  RefineResult r = refine_multiscale(as_constants(pyramid), params);
  return {to_pyramid(r.refined, pyramid.strides),
          FeatureMap{r.aggregated.height, r.aggregated.width, r.aggregated.data.value()}};
}

void FusionLevel::register_params(ParamSet& set, const std::string& name) const {
  visual.register_params(set, name + ".visual");
  geometric.register_params(set, name + ".geometric");
  gate.register_params(set, name + ".gate");
  mlp.register_params(set, name + ".mlp");
}

FusionParams FusionParams::init(const std::vector<int>& visual_channels,
                                 const std::vector<int>& geometric_channels, int latent_dim,
                                 bool use_mlp, std::mt19937_64& rng) {
  if (visual_channels.size() != geometric_channels.size())
    throw ConfigError("fusion: visual and geometric level counts differ");
  FusionParams p;
  p.latent_dim = latent_dim;
  p.use_mlp = use_mlp;
  const auto cs = static_cast<std::size_t>(latent_dim);
  for (std::size_t l = 0; l < visual_channels.size(); ++l) {
    FusionLevel lv;
    lv.visual = Linear::init(static_cast<std::size_t>(visual_channels[l]), cs, rng);
    lv.geometric = Linear::init(static_cast<std::size_t>(geometric_channels[l]), cs, rng);
    lv.gate = Linear::init(2 * cs, cs, rng);
    lv.mlp = Mlp::init(cs, cs, cs, rng);
    p.levels.push_back(std::move(lv));
  }
  return p;
}

void FusionParams::register_params(ParamSet& set, const std::string& prefix) const {
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string name = prefix + "level" + std::to_string(l);
    levels[l].visual.register_params(set, name + ".visual");
    levels[l].geometric.register_params(set, name + ".geometric");
    levels[l].gate.register_params(set, name + ".gate");
    if (use_mlp) levels[l].mlp.register_params(set, name + ".mlp");
  }
}

std::vector<VarMap> fuse_visual_geometric(const std::vector<VarMap>& refined,
                                          const std::vector<VarMap>& geo,
                                          const FusionParams& params, FusionTrace* trace) {
  if (refined.size() != geo.size())
    throw ShapeError("fuse_visual_geometric: visual has " + std::to_string(refined.size()) +
                     " levels, geometry has " + std::to_string(geo.size()));
  if (refined.size() != params.levels.size())
    throw ConfigError("fuse_visual_geometric: parameters expect " +
                      std::to_string(params.levels.size()) + " levels");
  std::vector<VarMap> out;
  for (std::size_t l = 0; l < refined.size(); ++l) {
    if (refined[l].height != geo[l].height || refined[l].width != geo[l].width) {
      throw ShapeError("fuse_visual_geometric: level " + std::to_string(l) +
                       " misaligned: visual " + std::to_string(refined[l].height) + "x" +
                       std::to_string(refined[l].width) + ", geometry " +
                       std::to_string(geo[l].height) + "x" + std::to_string(geo[l].width));
    }
    const FusionLevel& p = params.levels[l];
    ag::Var v = p.visual(refined[l].data);
    ag::Var g = p.geometric(geo[l].data);
    ag::Var alpha = ag::sigmoid(p.gate(ag::concat_cols(v, g)));
    if (trace) trace->gates.push_back(alpha);
    ag::Var blended = ag::add(v, ag::mul(alpha, g));
    out.push_back({refined[l].height, refined[l].width, params.use_mlp ? p.mlp(blended) : blended});
  }
  return out;
}

FeaturePyramid fuse_visual_geometric(const FeaturePyramid& refined, const FeaturePyramid& geo,
                                     const FusionParams& params) {
  return to_pyramid(fuse_visual_geometric(as_constants(refined), as_constants(geo), params),
                    refined.strides);
}

QuerySet QuerySet::init(int num_queries, int latent_dim, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(num_queries), c = static_cast<std::size_t>(latent_dim);
  return {ag::parameter(random_normal(n, c, 1.0, rng)), ag::parameter(random_normal(n, c, 0.5, rng))};
}

void QuerySet::register_params(ParamSet& set, const std::string& prefix) const {
  set.add(prefix + "vectors", vectors);
  set.add(prefix + "positions", positions);
}

Attention Attention::init(std::size_t dim, std::mt19937_64& rng) {
  return {xavier(dim, dim, rng), xavier(dim, dim, rng), xavier(dim, dim, rng),
          Linear::init(dim, dim, rng, 0.5)};
}

ag::Var Attention::operator()(const ag::Var& q, const ag::Var& k, const ag::Var& v) const {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  ag::Var scores = ag::scale(ag::matmul(ag::matmul(q, query), ag::transpose(ag::matmul(k, key))),
                             inv_sqrt);
  return output(ag::matmul(ag::softmax_rows(scores), ag::matmul(v, value)));
}

void Attention::register_params(ParamSet& set, const std::string& name) const {
  set.add(name + ".query", query);
  set.add(name + ".key", key);
  set.add(name + ".value", value);
  output.register_params(set, name + ".output");
}

void BridgeLayer::register_params(ParamSet& set, const std::string& name) const {
  for (std::size_t l = 0; l < cross.size(); ++l)
    cross[l].register_params(set, name + ".cross" + std::to_string(l));
  self.register_params(set, name + ".self");
  ffn.register_params(set, name + ".ffn");
}

BridgeParams BridgeParams::init(std::size_t num_levels, int latent_dim, int num_layers,
                                std::mt19937_64& rng) {
  BridgeParams p;
  const auto c = static_cast<std::size_t>(latent_dim);
  for (int i = 0; i < num_layers; ++i) {
    BridgeLayer layer;
    for (std::size_t l = 0; l < num_levels; ++l) layer.cross.push_back(Attention::init(c, rng));
    layer.self = Attention::init(c, rng);
    layer.ffn = Mlp::init(c, 2 * c, c, rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void BridgeParams::register_params(ParamSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].register_params(set, prefix + "layer" + std::to_string(i));
}

ag::Var bridge_queries(const std::vector<VarMap>& fused, const QuerySet& queries,
                       const BridgeParams& params) {
  ag::Var q = queries.vectors;
  for (const BridgeLayer& layer : params.layers) {
    if (layer.cross.size() != fused.size())
      throw ConfigError("bridge_queries: layer expects " + std::to_string(layer.cross.size()) +
                        " levels, got " + std::to_string(fused.size()));
    for (std::size_t l = 0; l < fused.size(); ++l) {
      ag::Var qp = ag::add(q, queries.positions);
      q = ag::add(q, layer.cross[l](qp, fused[l].data, fused[l].data));
    }
    ag::Var qp = ag::add(q, queries.positions);
    q = ag::add(q, layer.self(qp, qp, q));
    q = ag::add(q, layer.ffn(q));
  }
  return q;
}

Matrix bridge_queries(const FeaturePyramid& fused, const Matrix& queries, const Matrix& positions,
                      const BridgeParams& params) {
  QuerySet qs{ag::constant(queries), ag::constant(positions)};
  return bridge_queries(as_constants(fused), qs, params).value();
}

}  // namespace maris::gpem
