#pragma once

#include <span>
#include <vector>

#include "ednerf/common.hpp"

namespace ednerf {

/// Channel-first (C x H x W) activation used inside the refinement network.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}
  int pixels() const { return height * width; }
  float* channel(int c) { return data.data() + std::size_t(c) * pixels(); }
  const float* channel(int c) const { return data.data() + std::size_t(c) * pixels(); }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

FeatureMap to_feature_map(const LatentImage& image);
LatentImage to_latent_image(const FeatureMap& map);

struct GroupNormStats {
  std::vector<float> mean;
  std::vector<float> rstd;
};

inline constexpr float kGroupNormEps = 1e-6f;

/// Parallel kernels. Convolutions use zero "same" padding with odd kernel
/// size k; weights are laid out [C_out][C_in][k][k].
namespace kernels {

void conv2d_forward(const FeatureMap& in, std::span<const float> weight, std::span<const float> bias, int k,
                    FeatureMap& out);
/// Accumulates into grad_weight / grad_bias; writes grad_in when non-null.
void conv2d_backward(const FeatureMap& in, std::span<const float> weight, int k, const FeatureMap& grad_out,
                     FeatureMap* grad_in, std::span<float> grad_weight, std::span<float> grad_bias);

void group_norm_forward(const FeatureMap& in, std::span<const float> gamma, std::span<const float> beta, int groups,
                        FeatureMap& out, GroupNormStats& stats);
void group_norm_backward(const FeatureMap& in, std::span<const float> gamma, int groups, const GroupNormStats& stats,
                         const FeatureMap& grad_out, FeatureMap& grad_in, std::span<float> grad_gamma,
                         std::span<float> grad_beta);

void silu_forward(const FeatureMap& in, FeatureMap& out);
/// grad_in = grad_out * silu'(in)
void silu_backward(const FeatureMap& in, const FeatureMap& grad_out, FeatureMap& grad_in);

/// Single-head softmax attention over all pixels of q, k, v (C x N each):
/// probs[i][j] = softmax_j(q_i . k_j * scale), out[:, i] = sum_j probs[i][j] v[:, j].
void attention_forward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                       std::vector<float>& probs, FeatureMap& out);
void attention_backward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                        const std::vector<float>& probs, const FeatureMap& grad_out, FeatureMap& grad_q,
                        FeatureMap& grad_k, FeatureMap& grad_v);

}  // namespace kernels

/// Naive single-threaded loop implementations with identical semantics.
namespace kernels::serial {

void conv2d_forward(const FeatureMap& in, std::span<const float> weight, std::span<const float> bias, int k,
                    FeatureMap& out);
void conv2d_backward(const FeatureMap& in, std::span<const float> weight, int k, const FeatureMap& grad_out,
                     FeatureMap* grad_in, std::span<float> grad_weight, std::span<float> grad_bias);
void group_norm_forward(const FeatureMap& in, std::span<const float> gamma, std::span<const float> beta, int groups,
                        FeatureMap& out, GroupNormStats& stats);
void attention_forward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                       std::vector<float>& probs, FeatureMap& out);
void attention_backward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                        const std::vector<float>& probs, const FeatureMap& grad_out, FeatureMap& grad_q,
                        FeatureMap& grad_k, FeatureMap& grad_v);

}  // namespace kernels::serial

}  // namespace ednerf
