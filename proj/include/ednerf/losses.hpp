#pragma once

#include <span>
#include <vector>

#include "ednerf/common.hpp"
#include "ednerf/guidance.hpp"

namespace ednerf {

struct ReconWeights {
  double lambda_rec = 1.0;
  double lambda_ref = 0.1;
  /// From this iteration on lambda_rec is treated as 0 and only the refined
  /// reconstruction term remains.
  long rec_zero_after = 30000;

  void validate() const;
  double rec_at(long iteration) const { return iteration >= rec_zero_after ? 0.0 : lambda_rec; }
};

struct EditWeights {
  double lambda_im = 0.01;
  double lambda_om = 100.0;
  /// Scale on the masked DDS pathway.
  double lambda_dds = 1.0;
  void validate() const;
};

/// Sum over pixels of ||target - rendered||^2 (flattened, 4 values per pixel).
double loss_rec(std::span<const float> rendered, std::span<const float> target);

/// Same sum; adds scale * d(loss)/d(rendered) into `grad` and returns the loss.
/// Optional per-pixel weights multiply each pixel's squared residual.
double squared_error(std::span<const float> rendered, std::span<const float> target, std::span<float> grad,
                     double scale = 1.0, std::span<const float> pixel_weights = {}, int channels = kLatentChannels);

double loss_ref(const LatentImage& refined, const LatentImage& target);

struct ReconLoss {
  double rec = 0.0;
  double ref = 0.0;
  double total = 0.0;
  LatentImage grad_rendered;
  LatentImage grad_refined;
};

/// lambda_rec L_rec(rendered) + lambda_ref L_ref(refined) against one target
/// view, with lambda_rec switched off from `rec_zero_after` on.
/// `pixel_weights`, when given, scales each pixel's squared residual in both terms.
ReconLoss loss_rtot(const LatentImage& rendered, const LatentImage& refined, const LatentImage& target,
                    const ReconWeights& weights, long iteration, std::span<const float> pixel_weights = {});

/// omega * (eps_hat(add_noise(z, t, eps), y, t) - eps). Treated as the
/// gradient on z; the denoiser is never differentiated.
LatentImage grad_sds(DenoiserClient& denoiser, const NoiseSchedule& schedule, const LatentImage& z,
                     const Prompt& prompt, int t, const LatentImage& eps, double omega);

/// grad_sds(z_edit, y_trg) - grad_sds(z_src, y_src) with one shared (t, eps).
LatentImage grad_dds_3d(DenoiserClient& denoiser, const NoiseSchedule& schedule, const LatentImage& z_src,
                        const LatentImage& z_edit, const Prompt& y_src, const Prompt& y_trg, int t,
                        const LatentImage& eps, double omega);

/// Pixelwise gate shared across channels; pixels outside the mask become exactly zero.
LatentImage grad_masked_dds(const LatentImage& dds_grad, const BinaryMask& mask);

/// Per-pixel weight lambda_im inside the mask and lambda_om outside.
std::vector<float> mask_pixel_weights(const BinaryMask& mask, const EditWeights& weights);

/// lambda_im * (M-restricted L_rtot) + lambda_om * ((1-M)-restricted L_rtot).
ReconLoss loss_masked_rec(const LatentImage& rendered, const LatentImage& refined, const LatentImage& source,
                          const BinaryMask& mask, const EditWeights& edit_weights, const ReconWeights& recon_weights,
                          long iteration);

struct EditInputs {
  const LatentImage& rendered;  // raw field render of view `render_view`
  const LatentImage& refined;   // refinement output for the same render
  const LatentImage& source;    // encoded source latent of view `source_view`
  int render_view = 0;
  int source_view = 0;
  const BinaryMask& mask;
  Prompt source_prompt;
  Prompt target_prompt;
  int t = 1;
  const LatentImage& eps;
  double omega = 1.0;
  EditWeights edit_weights{};
  ReconWeights recon_weights{};
  long iteration = 0;
};

struct EditObjective {
  /// Total gradient on the refined map: masked DDS plus d(L_Mrec)/d(refined).
  LatentImage grad_refined;
  /// d(L_Mrec)/d(rendered).
  LatentImage grad_rendered;
  LatentImage masked_dds;
  double loss_mrec = 0.0;
};

/// Total editing update for one view. Throws if the source latent and the
/// render come from different camera poses.
EditObjective edit_objective(DenoiserClient& denoiser, const NoiseSchedule& schedule, const EditInputs& in);

}  // namespace ednerf
