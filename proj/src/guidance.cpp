#include "ednerf/guidance.hpp"

#include <cmath>

namespace ednerf {

NoiseSchedule NoiseSchedule::scaled_linear(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 2) throw InvalidArgument("noise schedule needs at least 2 timesteps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw InvalidArgument("noise schedule needs 0 < beta_start < beta_end < 1");
  }
  std::vector<double> ab(timesteps);
  const double s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < timesteps; ++i) {
    const double s = s0 + (s1 - s0) * double(i) / double(timesteps - 1);
    prod *= 1.0 - s * s;
    ab[i] = prod;
  }
  return NoiseSchedule(std::move(ab));
}

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw InvalidArgument("empty noise schedule");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    if (!(alpha_bar_[i] > 0.0 && alpha_bar_[i] <= 1.0)) throw InvalidArgument("alpha_bar entries must be in (0, 1]");
    if (i > 0 && !(alpha_bar_[i] < alpha_bar_[i - 1])) throw InvalidArgument("alpha_bar must be strictly decreasing");
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 1 || t > timesteps()) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
  }
  return alpha_bar_[std::size_t(t - 1)];
}

void GuidanceConfig::validate(const NoiseSchedule& schedule) const {
  if (!(1 <= t_min && t_min <= t_max && t_max <= schedule.timesteps())) {
    throw InvalidArgument("guidance timestep bounds must satisfy 1 <= t_min <= t_max <= T");
  }
  if (!(cfg_scale >= 0.0)) throw InvalidArgument("guidance scale must be nonnegative");
}

double omega(const GuidanceConfig& config, const NoiseSchedule& schedule, int t) {
  switch (config.omega) {
    case Weighting::constant:
      return 1.0;
    case Weighting::one_minus_alpha_bar:
      return 1.0 - schedule.alpha_bar(t);
  }
  return 1.0;
}

LatentImage add_noise(const NoiseSchedule& schedule, const LatentImage& z, int t, const LatentImage& eps) {
  if (!z.same_shape(eps)) throw InvalidArgument("add_noise: noise shape differs from latent shape");
  const double ab = schedule.alpha_bar(t);
  const float a = float(std::sqrt(ab)), b = float(std::sqrt(1.0 - ab));
  LatentImage out(z.size(), z.channels());
  auto dst = out.values();
  auto zs = z.values();
  auto es = eps.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * zs[i] + b * es[i];
  return out;
}

int sample_timestep(const GuidanceConfig& config, Rng& rng) {
  if (config.t_min > config.t_max) throw InvalidArgument("sample_timestep: t_min > t_max");
  std::uniform_int_distribution<int> dist(config.t_min, config.t_max);
  return dist(rng);
}

LatentImage sample_noise(ImageSize size, Rng& rng) { return random_latent(size, rng, 1.0f); }

std::vector<LatentImage> DenoiserClient::predict_noise_batch(const std::vector<LatentImage>& z_t,
                                                             const std::vector<Prompt>& prompts, int t) {
  if (z_t.size() != prompts.size()) throw InvalidArgument("predict_noise_batch: latent/prompt count mismatch");
  std::vector<LatentImage> out;
  out.reserve(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) out.push_back(predict_noise(z_t[i], prompts[i], t));
  return out;
}

ToyGaussianDenoiser::ToyGaussianDenoiser(NoiseSchedule schedule, std::map<std::string, Latent4> means)
    : schedule_(std::move(schedule)), means_(std::move(means)) {}

const Latent4& ToyGaussianDenoiser::mean(const Prompt& prompt) const {
  auto it = means_.find(prompt.text);
  if (it == means_.end()) throw InvalidArgument("toy denoiser: unknown prompt '" + prompt.text + "'");
  return it->second;
}

LatentImage ToyGaussianDenoiser::predict_noise(const LatentImage& z_t, const Prompt& prompt, int t) {
  ++calls_;
  return toy_predict_noise(*this, schedule_, z_t, prompt, t);
}

LatentImage toy_predict_noise(const ToyGaussianDenoiser& denoiser, const NoiseSchedule& schedule,
                              const LatentImage& z_t, const Prompt& prompt, int t) {
  const Latent4& mu = denoiser.mean(prompt);
  if (z_t.channels() != kLatentChannels) throw InvalidArgument("toy denoiser expects 4-channel latents");
  const double ab = schedule.alpha_bar(t);
  if (ab >= 1.0) throw InvalidArgument("toy denoiser undefined at alpha_bar = 1");
  const double a = std::sqrt(ab), inv = 1.0 / std::sqrt(1.0 - ab);
  LatentImage out(z_t.size());
  const int n = z_t.size().pixels();
  for (int p = 0; p < n; ++p) {
    auto src = z_t.pixel(p);
    auto dst = out.pixel(p);
    for (int c = 0; c < kLatentChannels; ++c) dst[c] = float((double(src[c]) - a * mu[c]) * inv);
  }
  return out;
}

}  // namespace ednerf
