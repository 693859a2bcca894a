#pragma once

// Trainable model: refinement -> fusion -> bridge -> heads, on top of frozen
// encoder outputs.

#include <cstdint>

#include <nlohmann/json.hpp>

#include "maris/encoders.hpp"
#include "maris/gpem.hpp"
#include "maris/params.hpp"
#include "maris/saim.hpp"

namespace maris::model {

struct HeadConfig {
  saim::PoolMode pool = saim::PoolMode::kMaskWeighted;
  double init_scale = 20.0;  // initial logit scale, learned in log space
  double init_bias = -5.0;   // initial logit bias
};

void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

/// Frozen encoder outputs for one image; computed once and reused.
struct EncodedImage {
  std::size_t height = 0;
  std::size_t width = 0;
  FeaturePyramid visual;
  FeaturePyramid geometry;
  GlobalDepthToken token;
};

EncodedImage encode_image(const EncoderSet& encoders, const ImageSample& image);

struct ForwardOutput {
  ag::Var class_logits;  // N_Q x K
  ag::Var mask_logits;   // N_Q x (H0*W0)
  std::size_t mask_height = 0;
  std::size_t mask_width = 0;
};

class Model {
 public:
  static Model init(const EncoderConfig& encoder, const gpem::GpemConfig& gpem,
                    const HeadConfig& heads, std::uint64_t seed);

  /// `class_vectors` is K x D; K may differ from any vocabulary seen before.
  ForwardOutput forward(const EncodedImage& image, const Matrix& class_vectors) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  gpem::RefineParams refine_;
  gpem::FusionParams fusion_;
  gpem::QuerySet queries_;
  gpem::BridgeParams bridge_;
  Linear token_proj_;  // C_g -> C_s, zero at init
  Mlp mask_embed_;     // C_s -> C_s
  Linear class_proj_;  // C_s -> D
  ag::Var log_scale_;
  ag::Var bias_;
  saim::PoolMode pool_ = saim::PoolMode::kMaskWeighted;
  ParamSet params_;
};

}  // namespace maris::model
