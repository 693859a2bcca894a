#pragma once

// Geometric prior enhancement: deformable refinement of the visual pyramid,
// gated visual/geometric fusion per level, and the query bridge.

#include <cstddef>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/autograd.hpp"
#include "maris/encoders.hpp"
#include "maris/params.hpp"

namespace maris::gpem {

struct GpemConfig {
  int latent_dim = 32;   // C_s
  int num_queries = 100;
  int num_layers = 2;
  int num_points = 4;    // deformable sampling points per location
  bool fusion_mlp = true;  // false replaces the fusion MLP with identity (ablation)

  void validate() const;
};

void to_json(nlohmann::json& j, const GpemConfig& c);
void from_json(const nlohmann::json& j, GpemConfig& c);

/// Level of a pyramid inside the autograd graph.
struct VarMap {
  std::size_t height = 0;
  std::size_t width = 0;
  ag::Var data;  // (height*width) x C
};

std::vector<VarMap> as_constants(const FeaturePyramid& p);
FeaturePyramid to_pyramid(const std::vector<VarMap>& maps, const std::vector<int>& strides);

/// Bilinear (half-pixel) interpolation matrix mapping a src grid to a dst grid:
/// (dst_h*dst_w) x (src_h*src_w).
Matrix upsample_matrix(std::size_t src_h, std::size_t src_w, std::size_t dst_h, std::size_t dst_w);

// ---------------------------------------------------------------------------
// Multi-scale refinement

/// Single-head deformable sampling for one level.
struct DeformableLevel {
  Linear offsets;    // C -> 2P, (dx, dy) per point in pixels
  Linear attention;  // C -> P, softmax over points
  Linear value;      // C -> C
  Linear output;     // C -> C
  Linear aggregate;  // C -> C_s, feeds the aggregated map F_m

  void register_params(ParamSet& set, const std::string& name) const;
};

struct RefineParams {
  std::vector<DeformableLevel> levels;
  int num_points = 4;

  static RefineParams init(const std::vector<int>& channels, int latent_dim, int num_points,
                           std::mt19937_64& rng);
  void register_params(ParamSet& set, const std::string& prefix) const;
};

struct RefineResult {
  std::vector<VarMap> refined;
  VarMap aggregated;  // F_m at level-0 resolution x C_s
};

RefineResult refine_multiscale(const std::vector<VarMap>& pyramid, const RefineParams& params);
std::pair<FeaturePyramid, FeatureMap> refine_multiscale(const FeaturePyramid& pyramid,
                                                        const RefineParams& params);

// ---------------------------------------------------------------------------
// Visual-geometric fusion

struct FusionLevel {
  Linear visual;     // C_l -> C_s
  Linear geometric;  // C_l -> C_s
  Linear gate;       // 2 C_s -> C_s
  Mlp mlp;           // C_s -> C_s -> C_s

  void register_params(ParamSet& set, const std::string& name) const;
};

struct FusionParams {
  std::vector<FusionLevel> levels;
  int latent_dim = 0;
  bool use_mlp = true;

  static FusionParams init(const std::vector<int>& visual_channels,
                           const std::vector<int>& geometric_channels, int latent_dim,
                           bool use_mlp, std::mt19937_64& rng);
  void register_params(ParamSet& set, const std::string& prefix) const;
};

/// Per-level gate values alpha, exposed for inspection.
struct FusionTrace {
  std::vector<ag::Var> gates;
};

std::vector<VarMap> fuse_visual_geometric(const std::vector<VarMap>& refined,
                                          const std::vector<VarMap>& geo,
                                          const FusionParams& params, FusionTrace* trace = nullptr);
FeaturePyramid fuse_visual_geometric(const FeaturePyramid& refined, const FeaturePyramid& geo,
                                     const FusionParams& params);

// ---------------------------------------------------------------------------
// Query bridge

struct QuerySet {
  ag::Var vectors;    // N_Q x C_s
  ag::Var positions;  // N_Q x C_s

  static QuerySet init(int num_queries, int latent_dim, std::mt19937_64& rng);
  std::size_t size() const { return vectors.rows(); }
  void register_params(ParamSet& set, const std::string& prefix) const;
};

struct Attention {
  ag::Var query;  // C x C
  ag::Var key;
  ag::Var value;
  Linear output;

  static Attention init(std::size_t dim, std::mt19937_64& rng);
  /// softmax(q Wq (k Wk)^T / sqrt(C)) (v Wv) Wo + bo
  ag::Var operator()(const ag::Var& q, const ag::Var& k, const ag::Var& v) const;
  void register_params(ParamSet& set, const std::string& name) const;
};

struct BridgeLayer {
  std::vector<Attention> cross;  // one per pyramid level
  Attention self;
  Mlp ffn;

  void register_params(ParamSet& set, const std::string& name) const;
};

struct BridgeParams {
  std::vector<BridgeLayer> layers;

  static BridgeParams init(std::size_t num_levels, int latent_dim, int num_layers,
                           std::mt19937_64& rng);
  void register_params(ParamSet& set, const std::string& prefix) const;
};

/// Each layer: cross-attention to every level in order (updates summed into
/// the residual stream), then self-attention, then a feed-forward block.
/// Returns N_Q x C_s.
ag::Var bridge_queries(const std::vector<VarMap>& fused, const QuerySet& queries,
                       const BridgeParams& params);
Matrix bridge_queries(const FeaturePyramid& fused, const Matrix& queries, const Matrix& positions,
                      const BridgeParams& params);

}  // namespace maris::gpem
