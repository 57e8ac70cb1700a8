#pragma once

#include <map>
#include <string>
#include <vector>

#include "ednerf/common.hpp"

namespace ednerf {

/// Cumulative signal coefficients alpha_bar_t for t = 1..T.
class NoiseSchedule {
 public:
  /// beta_t = (linspace(sqrt(beta_start), sqrt(beta_end), T))^2, the usual
  /// latent-diffusion schedule.
  static NoiseSchedule scaled_linear(int timesteps = 1000, double beta_start = 8.5e-4, double beta_end = 1.2e-2);
  /// Takes an explicit strictly decreasing alpha_bar table with entries in (0, 1].
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  int timesteps() const { return int(alpha_bar_.size()); }
  /// 1-based; throws InvalidArgument outside [1, T].
  double alpha_bar(int t) const;

 private:
  std::vector<double> alpha_bar_;
};

/// Opaque prompt handle. Toy clients key on `text`; remote clients send it
/// to the model server, which owns the embedding.
struct Prompt {
  std::string text;
  bool operator==(const Prompt&) const = default;
};

enum class Weighting { constant, one_minus_alpha_bar };

struct GuidanceConfig {
  Prompt source;
  Prompt target;
  int t_min = 20;
  int t_max = 980;
  Weighting omega = Weighting::constant;
  double cfg_scale = 7.5;

  /// Throws unless 1 <= t_min <= t_max <= T.
  void validate(const NoiseSchedule& schedule) const;
};

double omega(const GuidanceConfig& config, const NoiseSchedule& schedule, int t);

/// z_t = sqrt(alpha_bar_t) z + sqrt(1 - alpha_bar_t) eps
LatentImage add_noise(const NoiseSchedule& schedule, const LatentImage& z, int t, const LatentImage& eps);

/// Uniform integer in [t_min, t_max].
int sample_timestep(const GuidanceConfig& config, Rng& rng);

LatentImage sample_noise(ImageSize size, Rng& rng);

/// Noise-prediction model epsilon(z_t, y, t).
class DenoiserClient {
 public:
  virtual ~DenoiserClient() = default;
  virtual LatentImage predict_noise(const LatentImage& z_t, const Prompt& prompt, int t) = 0;
  virtual std::vector<LatentImage> predict_noise_batch(const std::vector<LatentImage>& z_t,
                                                       const std::vector<Prompt>& prompts, int t);
};

/// Exact noise predictor for an isotropic Gaussian data distribution
/// N(mu_y, I) per prompt: eps = (z_t - sqrt(ab) mu_y) / sqrt(1 - ab).
class ToyGaussianDenoiser : public DenoiserClient {
 public:
  ToyGaussianDenoiser(NoiseSchedule schedule, std::map<std::string, Latent4> means);
  LatentImage predict_noise(const LatentImage& z_t, const Prompt& prompt, int t) override;
  const Latent4& mean(const Prompt& prompt) const;
  std::size_t calls() const { return calls_; }

 private:
  NoiseSchedule schedule_;
  std::map<std::string, Latent4> means_;
  std::size_t calls_ = 0;
};

LatentImage toy_predict_noise(const ToyGaussianDenoiser& denoiser, const NoiseSchedule& schedule,
                              const LatentImage& z_t, const Prompt& prompt, int t);

}  // namespace ednerf
