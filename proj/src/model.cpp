#include "maris/model.hpp"

#include <cmath>

#include "maris/random.hpp"

namespace maris::model {

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"pool", c.pool == saim::PoolMode::kMaskWeighted ? "mask-weighted" : "global-mean"},
       {"init_scale", c.init_scale},
       {"init_bias", c.init_bias}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  HeadConfig d;
  const std::string pool = j.value("pool", std::string("mask-weighted"));
  if (pool == "mask-weighted") c.pool = saim::PoolMode::kMaskWeighted;
  else if (pool == "global-mean") c.pool = saim::PoolMode::kGlobalMean;
  else throw ConfigError("heads.pool must be mask-weighted or global-mean, got '" + pool + "'");
  c.init_scale = j.value("init_scale", d.init_scale);
  c.init_bias = j.value("init_bias", d.init_bias);
  if (!(c.init_scale > 0)) throw ConfigError("heads.init_scale must be > 0");
}

EncodedImage encode_image(const EncoderSet& encoders, const ImageSample& image) {
  EncodedImage e;
  e.height = image.height();
  e.width = image.width();
  e.visual = encoders.visual->encode(image);
  auto [geo, token] = encoders.geometry->encode(image);
  e.geometry = std::move(geo);
  e.token = std::move(token);
  return e;
}

Model Model::init(const EncoderConfig& encoder, const gpem::GpemConfig& gpem,
                  const HeadConfig& heads, std::uint64_t seed) {
  encoder.validate();
  gpem.validate();
  auto rng = stream_rng(seed, "model-init");
  const auto cs = static_cast<std::size_t>(gpem.latent_dim);
  Model m;
  m.refine_ = gpem::RefineParams::init(encoder.channels, gpem.latent_dim, gpem.num_points, rng);
  m.fusion_ = gpem::FusionParams::init(encoder.channels, encoder.channels, gpem.latent_dim,
                                       gpem.fusion_mlp, rng);
  m.queries_ = gpem::QuerySet::init(gpem.num_queries, gpem.latent_dim, rng);
  m.bridge_ = gpem::BridgeParams::init(encoder.levels(), gpem.latent_dim, gpem.num_layers, rng);
  m.token_proj_ = Linear::zero(static_cast<std::size_t>(encoder.token_dim), cs);
  m.mask_embed_ = Mlp::init(cs, cs, cs, rng);
  m.class_proj_ = Linear::init(cs, static_cast<std::size_t>(encoder.embed_dim), rng);
  m.log_scale_ = ag::parameter(Matrix(1, 1, std::log(heads.init_scale)));
  m.bias_ = ag::parameter(Matrix(1, 1, heads.init_bias));
  m.pool_ = heads.pool;

  m.refine_.register_params(m.params_, "refine.");
  m.fusion_.register_params(m.params_, "fusion.");
  m.queries_.register_params(m.params_, "queries.");
  m.bridge_.register_params(m.params_, "bridge.");
  m.token_proj_.register_params(m.params_, "heads.token_proj");
  m.mask_embed_.register_params(m.params_, "heads.mask_embed");
  m.class_proj_.register_params(m.params_, "heads.class_proj");
  m.params_.add("heads.log_scale", m.log_scale_);
  m.params_.add("heads.bias", m.bias_);
  return m;
}

ForwardOutput Model::forward(const EncodedImage& image, const Matrix& class_vectors) const {
  const auto vis = gpem::as_constants(image.visual);
  const auto geo = gpem::as_constants(image.geometry);
  const gpem::RefineResult refined = gpem::refine_multiscale(vis, refine_);
  const auto fused = gpem::fuse_visual_geometric(refined.refined, geo, fusion_);
  const ag::Var q = gpem::bridge_queries(fused, queries_, bridge_);

  const Matrix token(1, image.token.vector.size(), image.token.vector);
  const ag::Var ff = saim::fuse_global(ag::constant(token), refined.aggregated.data, token_proj_);

  ForwardOutput out;
  out.mask_height = refined.aggregated.height;
  out.mask_width = refined.aggregated.width;
  out.mask_logits = saim::predict_masks(q, ff, mask_embed_);
  const ag::Var pooled = saim::pool_features(ff, out.mask_logits, pool_);
  const ag::Var fq = class_proj_(ag::add(pooled, q));
  out.class_logits = saim::cosine_logits(fq, class_vectors, ag::exp(log_scale_), bias_);
  return out;
}

}  // namespace maris::model
