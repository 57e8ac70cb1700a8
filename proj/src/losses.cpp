#include "ednerf/losses.hpp"

#include <cmath>

namespace ednerf {

void ReconWeights::validate() const {
  if (!(lambda_rec >= 0.0) || !(lambda_ref >= 0.0)) throw InvalidArgument("reconstruction weights must be >= 0");
}

void EditWeights::validate() const {
  if (!(lambda_im >= 0.0) || !(lambda_om >= 0.0) || !(lambda_dds >= 0.0)) throw InvalidArgument("edit weights must be >= 0");
}

double squared_error(std::span<const float> rendered, std::span<const float> target, std::span<float> grad,
                     double scale, std::span<const float> pixel_weights, int channels) {
  if (rendered.size() != target.size()) throw InvalidArgument("loss: rendered/target size mismatch");
  if (!grad.empty() && grad.size() != rendered.size()) throw InvalidArgument("loss: gradient size mismatch");
  if (!pixel_weights.empty() && pixel_weights.size() * channels != rendered.size()) {
    throw InvalidArgument("loss: pixel weight count mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double w = pixel_weights.empty() ? 1.0 : pixel_weights[i / channels];
    const double r = double(rendered[i]) - target[i];
    total += w * r * r;
    if (!grad.empty()) grad[i] += float(2.0 * scale * w * r);
  }
  return total;
}

double loss_rec(std::span<const float> rendered, std::span<const float> target) {
  return squared_error(rendered, target, {});
}

double loss_ref(const LatentImage& refined, const LatentImage& target) {
  if (!refined.same_shape(target)) throw InvalidArgument("loss_ref: shape mismatch");
  return squared_error(refined.values(), target.values(), {});
}

ReconLoss loss_rtot(const LatentImage& rendered, const LatentImage& refined, const LatentImage& target,
                    const ReconWeights& weights, long iteration, std::span<const float> pixel_weights) {
  weights.validate();
  if (!rendered.same_shape(target) || !refined.same_shape(target)) throw InvalidArgument("loss_rtot: shape mismatch");
  ReconLoss out{0.0, 0.0, 0.0, LatentImage(target.size(), target.channels()),
                LatentImage(target.size(), target.channels())};
  const double lrec = weights.rec_at(iteration);
  out.rec = squared_error(rendered.values(), target.values(), out.grad_rendered.values(), lrec, pixel_weights,
                          target.channels());
  out.ref = squared_error(refined.values(), target.values(), out.grad_refined.values(), weights.lambda_ref,
                          pixel_weights, target.channels());
  out.total = lrec * out.rec + weights.lambda_ref * out.ref;
  return out;
}

LatentImage grad_sds(DenoiserClient& denoiser, const NoiseSchedule& schedule, const LatentImage& z,
                     const Prompt& prompt, int t, const LatentImage& eps, double omega) {
  const LatentImage z_t = add_noise(schedule, z, t, eps);
  const LatentImage pred = denoiser.predict_noise(z_t, prompt, t);
  if (!pred.same_shape(z)) throw Error("denoiser returned a noise map of the wrong shape");
  LatentImage out(z.size(), z.channels());
  auto dst = out.values();
  auto ps = pred.values();
  auto es = eps.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = float(omega * (double(ps[i]) - es[i]));
  return out;
}

LatentImage grad_dds_3d(DenoiserClient& denoiser, const NoiseSchedule& schedule, const LatentImage& z_src,
                        const LatentImage& z_edit, const Prompt& y_src, const Prompt& y_trg, int t,
                        const LatentImage& eps, double omega) {
  if (!z_src.same_shape(z_edit)) throw InvalidArgument("grad_dds_3d: source and edited latents differ in shape");
  const std::vector<LatentImage> noisy = {add_noise(schedule, z_edit, t, eps), add_noise(schedule, z_src, t, eps)};
  const std::vector<LatentImage> pred = denoiser.predict_noise_batch(noisy, {y_trg, y_src}, t);
  if (pred.size() != 2 || !pred[0].same_shape(z_src) || !pred[1].same_shape(z_src)) {
    throw Error("denoiser returned noise maps of the wrong shape");
  }
  // (eps_trg - eps) - (eps_src - eps), evaluated in that order so identical
  // terms cancel to exactly zero.
  LatentImage out(z_src.size(), z_src.channels());
  auto dst = out.values();
  auto pt = pred[0].values();
  auto ps = pred[1].values();
  auto es = eps.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double edit_term = omega * (double(pt[i]) - es[i]);
    const double src_term = omega * (double(ps[i]) - es[i]);
    dst[i] = float(edit_term - src_term);
  }
  return out;
}

LatentImage grad_masked_dds(const LatentImage& dds_grad, const BinaryMask& mask) {
  if (dds_grad.size() != mask.size()) throw InvalidArgument("grad_masked_dds: mask size differs from gradient size");
  LatentImage out(dds_grad.size(), dds_grad.channels());
  const int n = mask.size().pixels();
  for (int p = 0; p < n; ++p) {
    if (!mask[std::size_t(p)]) continue;
    auto src = dds_grad.pixel(p);
    auto dst = out.pixel(p);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c];
  }
  return out;
}

std::vector<float> mask_pixel_weights(const BinaryMask& mask, const EditWeights& weights) {
  weights.validate();
  std::vector<float> w(std::size_t(mask.size().pixels()));
  for (std::size_t p = 0; p < w.size(); ++p) w[p] = float(mask[p] ? weights.lambda_im : weights.lambda_om);
  return w;
}

ReconLoss loss_masked_rec(const LatentImage& rendered, const LatentImage& refined, const LatentImage& source,
                          const BinaryMask& mask, const EditWeights& edit_weights, const ReconWeights& recon_weights,
                          long iteration) {
  if (mask.size() != source.size()) throw InvalidArgument("loss_masked_rec: mask size differs from latent size");
  const std::vector<float> w = mask_pixel_weights(mask, edit_weights);
  return loss_rtot(rendered, refined, source, recon_weights, iteration, w);
}

EditObjective edit_objective(DenoiserClient& denoiser, const NoiseSchedule& schedule, const EditInputs& in) {
  if (in.render_view != in.source_view) {
    throw InvalidArgument("edit_objective: source latent is from view " + std::to_string(in.source_view) +
                          " but the render is from view " + std::to_string(in.render_view));
  }
  const LatentImage dds = grad_dds_3d(denoiser, schedule, in.source, in.refined, in.source_prompt, in.target_prompt,
                                      in.t, in.eps, in.omega);
  EditObjective out;
  out.masked_dds = grad_masked_dds(dds, in.mask);
  ReconLoss mrec = loss_masked_rec(in.rendered, in.refined, in.source, in.mask, in.edit_weights, in.recon_weights,
                                   in.iteration);
  out.loss_mrec = mrec.total;
  out.grad_rendered = std::move(mrec.grad_rendered);
  out.grad_refined = std::move(mrec.grad_refined);
  auto g = out.grad_refined.values();
  auto m = out.masked_dds.values();
  const float scale = float(in.edit_weights.lambda_dds);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * m[i];
  return out;
}

}  // namespace ednerf
