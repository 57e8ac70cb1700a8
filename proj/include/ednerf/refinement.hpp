#pragma once

#include <cstdint>
#include <vector>

#include "ednerf/common.hpp"
#include "ednerf/kernels.hpp"

namespace ednerf {

struct RefinementConfig {
  /// Internal channel width of the ResNet and attention blocks.
  int width = 512;
  /// Group-norm groups; must divide width.
  int groups = 32;
  /// Spatial size the layer accepts; anything else is rejected.
  ImageSize size{};
  /// Zero the final projection so the layer starts as the identity.
  bool zero_init_output = true;
};

/// Largest group count <= 32 that divides `width`.
int default_groups(int width);

/// Intermediate activations kept by `Refinement::forward` for the backward pass.
struct RefinementTape {
  struct Res {
    FeatureMap in, n1, s1, c1, n2, s2;
    GroupNormStats st1, st2;
  };
  struct Attn {
    FeatureMap in, h, q, k, v, o;
    GroupNormStats st;
    std::vector<float> probs;
  };
  FeatureMap input, lifted, final_in, final_norm, final_act;
  GroupNormStats final_stats;
  std::vector<Res> res;
  std::vector<Attn> attn;
};

/// Shape-preserving latent correction layer: a 3x3 lift from 4 channels to
/// `width`, four residual blocks interleaved with two full self-attention
/// blocks (res, attn, res, res, attn, res), then norm, SiLU and a 3x3
/// projection back to 4 channels added onto the input.
class Refinement {
 public:
  Refinement(const RefinementConfig& config, std::uint64_t seed);
  Refinement(const RefinementConfig& config, ParameterSet parameters);

  /// Rejects inputs of the wrong shape or with non-finite values.
  LatentImage forward(const LatentImage& z, RefinementTape* tape = nullptr) const;

  /// Accumulates parameter gradients and returns d(loss)/d(input).
  LatentImage backward(const RefinementTape& tape, const LatentImage& grad_out, ParameterSet& grads) const;

  /// Row-stochastic attention matrices (N x N, N = H*W) of both attention
  /// blocks for input `z`.
  std::vector<std::vector<float>> attention_weights(const LatentImage& z) const;

  const RefinementConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  static constexpr int kResBlocks = 4;
  static constexpr int kAttnBlocks = 2;

 private:
  struct ResIdx {
    std::size_t g1, b1, w1, c1, g2, b2, w2, c2;
  };
  struct AttnIdx {
    std::size_t g, b, wq, bq, wk, bk, wv, bv, wo, bo;
  };
  // Position of each block in the forward chain: 'r' residual, 'a' attention.
  static constexpr char kChain[6] = {'r', 'a', 'r', 'r', 'a', 'r'};

  static ParameterSet make_layout(const RefinementConfig& config);
  void bind();
  FeatureMap res_forward(int i, const FeatureMap& x, RefinementTape::Res* t) const;
  FeatureMap attn_forward(int i, const FeatureMap& x, RefinementTape::Attn* t) const;
  FeatureMap res_backward(int i, const RefinementTape::Res& t, const FeatureMap& g, ParameterSet& grads) const;
  FeatureMap attn_backward(int i, const RefinementTape::Attn& t, const FeatureMap& g, ParameterSet& grads) const;
  std::span<const float> p(std::size_t i) const { return params_[i].values; }

  RefinementConfig config_;
  ParameterSet params_;
  std::size_t conv_in_w_ = 0, conv_in_b_ = 0, norm_out_g_ = 0, norm_out_b_ = 0, conv_out_w_ = 0, conv_out_b_ = 0;
  ResIdx res_[kResBlocks]{};
  AttnIdx attn_[kAttnBlocks]{};
};

Refinement init_refinement(const RefinementConfig& config, std::uint64_t seed);
inline LatentImage refine(const Refinement& layer, const LatentImage& z) { return layer.forward(z); }

}  // namespace ednerf
