#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ednerf/common.hpp"

namespace ednerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Aabb {
  Vec3 lo = Vec3::Constant(-1.5);
  Vec3 hi = Vec3::Constant(1.5);
  bool contains(const Vec3& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
};

/// Pinhole camera at latent resolution. `rotation` is camera-to-world with
/// camera axes x right, y down, z forward; `translation` is the camera
/// center in world coordinates.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double focal_latent = kLatentSize;
  Eigen::Vector2d principal_point{kLatentSize / 2.0, kLatentSize / 2.0};
  double near = 0.1;
  double far = 10.0;

  /// Throws InvalidArgument unless rotation is orthonormal (within 1e-6) and
  /// right-handed, 0 < near < far, and focal length is positive.
  void validate() const;
};

/// Camera looking from `eye` toward `target`; `up` is the approximate world up.
CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_latent,
                   ImageSize size, double near, double far);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

/// Sinusoidal encoding: for each component x_k, the pairs
/// sin(2^l pi x_k), cos(2^l pi x_k) for l = 0..L-1. With `passthrough` the
/// raw components are prepended.
std::vector<float> positional_encode(std::span<const double> x, int frequencies, bool passthrough = false);
void positional_encode_into(std::span<const double> x, int frequencies, bool passthrough, std::span<float> out);
inline std::size_t positional_encoding_size(std::size_t dims, int frequencies, bool passthrough) {
  return dims * 2 * std::size_t(frequencies) + (passthrough ? dims : 0);
}

struct FieldConfig {
  Aabb bounds;
  int grid_resolution = 64;
  int density_rank = 16;
  int appearance_rank = 16;
  int appearance_dim = 27;
  int hidden_width = 64;
  int position_frequencies = 2;
  int direction_frequencies = 2;
  /// sigma = softplus(raw + density_shift)
  float density_shift = -2.0f;
  float init_scale = 0.1f;
};

struct FieldSample {
  Latent4 latent{};
  float sigma = 0.0f;
};

/// Rank-factorized voxel radiance field (vector-matrix decomposition) with a
/// small decode head. Density is nonnegative through a softplus; the latent
/// output is unbounded.
class LatentRadianceField {
 public:
  LatentRadianceField(const FieldConfig& config, std::uint64_t seed);
  /// Adopts existing parameters (e.g. from a checkpoint); the layout must
  /// match what `config` produces.
  LatentRadianceField(const FieldConfig& config, ParameterSet parameters);

  /// Outside the bounding box the field is empty: (0, 0).
  FieldSample query(const Vec3& x, const Vec3& d) const;

  /// Accumulates d(loss)/d(parameters) into `grads` given the loss gradient
  /// with respect to this query's outputs.
  void query_backward(const Vec3& x, const Vec3& d, const Latent4& grad_latent, float grad_sigma,
                      ParameterSet& grads) const;

  /// False only where a coarse occupancy grid has been built and marks the
  /// containing cell empty. Renderers skip such samples.
  bool occupied(const Vec3& x) const;
  void update_occupancy(int resolution, float sigma_threshold);
  void clear_occupancy() { occupancy_.clear(); occupancy_resolution_ = 0; }

  const FieldConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  std::size_t head_input_dim() const { return head_in_; }

 private:
  struct Indices {
    std::size_t density_plane[3];
    std::size_t density_line[3];
    std::size_t app_plane[3];
    std::size_t app_line[3];
    std::size_t basis, w1, b1, w2, b2;
  };
  struct Cache;

  static ParameterSet make_layout(const FieldConfig& config);
  void bind();
  void forward(const Vec3& x, const Vec3& d, Cache& cache) const;

  FieldConfig config_;
  ParameterSet params_;
  Indices idx_{};
  std::size_t head_in_ = 0;
  int occupancy_resolution_ = 0;
  std::vector<std::uint8_t> occupancy_;
};

struct SamplerConfig {
  int n_samples = 256;
  bool stratified = false;
};

struct RenderedPixel {
  Latent4 latent{};
  double depth = 0.0;
  double opacity = 0.0;
};

/// Per-sample quantities of the discretized compositing along one ray.
struct RayIntegration {
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<float> sigma;
  std::vector<Latent4> latent;
  std::vector<double> transmittance;  // T_i before sample i
  std::vector<double> weight;         // T_i * (1 - exp(-sigma_i * delta_i))
  std::vector<std::uint8_t> active;   // sample was queried (occupied and inside)
};

namespace detail {

template <class Medium>
bool medium_occupied(const Medium& medium, const Vec3& x) {
  if constexpr (requires { medium.occupied(x); }) {
    return medium.occupied(x);
  } else {
    return true;
  }
}

void validate_ray(const Ray& ray, const SamplerConfig& sampler);

}  // namespace detail

/// Sample positions: n equal bins over [t_near, t_far], one sample per bin
/// at the bin center (or jittered when stratified). Each sample stands for
/// its whole bin, so delta_i is the bin width.
template <class Medium>
RayIntegration integrate_ray(const Medium& medium, const Ray& ray, const SamplerConfig& sampler,
                             std::uint64_t seed, std::uint64_t ray_id) {
  detail::validate_ray(ray, sampler);
  const int n = sampler.n_samples;
  RayIntegration out;
  out.t.resize(n);
  out.delta.assign(n, (ray.t_far - ray.t_near) / n);
  out.sigma.assign(n, 0.0f);
  out.latent.assign(n, Latent4{});
  out.transmittance.resize(n);
  out.weight.resize(n);
  out.active.assign(n, 0);
  const double bin = out.delta[0];
  double transmittance = 1.0;
  for (int i = 0; i < n; ++i) {
    const double u = sampler.stratified ? hash_uniform(seed, ray_id, std::uint64_t(i)) : 0.5;
    out.t[i] = ray.t_near + (i + u) * bin;
    const Vec3 x = ray.origin + out.t[i] * ray.direction;
    if (detail::medium_occupied(medium, x)) {
      const FieldSample s = medium.query(x, ray.direction);
      out.sigma[i] = s.sigma;
      out.latent[i] = s.latent;
      out.active[i] = 1;
    }
    const double alpha = 1.0 - std::exp(-double(out.sigma[i]) * bin);
    out.transmittance[i] = transmittance;
    out.weight[i] = transmittance * alpha;
    transmittance *= 1.0 - alpha;
  }
  return out;
}

template <class Medium>
RenderedPixel render_ray(const Medium& medium, const Ray& ray, const SamplerConfig& sampler,
                         std::uint64_t seed = 0, std::uint64_t ray_id = 0) {
  const RayIntegration integ = integrate_ray(medium, ray, sampler, seed, ray_id);
  RenderedPixel px;
  double acc[kLatentChannels] = {0, 0, 0, 0};
  double wsum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < integ.t.size(); ++i) {
    const double w = integ.weight[i];
    for (int c = 0; c < kLatentChannels; ++c) acc[c] += w * integ.latent[i][c];
    wsum += w;
    tsum += w * integ.t[i];
  }
  for (int c = 0; c < kLatentChannels; ++c) px.latent[c] = float(acc[c]);
  px.opacity = wsum;
  px.depth = tsum / std::max(wsum, 1e-10);
  return px;
}

/// Backpropagates d(loss)/d(latent) of one ray into the medium's parameters.
/// Depth receives no gradient.
template <class Medium>
void render_ray_backward(const Medium& medium, const Ray& ray, const SamplerConfig& sampler,
                         std::uint64_t seed, std::uint64_t ray_id, const Latent4& grad_latent,
                         ParameterSet& grads) {
  const RayIntegration integ = integrate_ray(medium, ray, sampler, seed, ray_id);
  const int n = int(integ.t.size());
  // suffix = sum_{j > i} w_j (g . f_j)
  double suffix = 0.0;
  std::vector<double> gf(n);
  for (int i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int c = 0; c < kLatentChannels; ++c) dot += double(grad_latent[c]) * integ.latent[i][c];
    gf[i] = dot;
  }
  for (int i = n - 1; i >= 0; --i) {
    if (integ.active[i]) {
      const double delta = integ.delta[i];
      const double keep = std::exp(-double(integ.sigma[i]) * delta);
      const double grad_sigma = delta * (integ.transmittance[i] * keep * gf[i] - suffix);
      Latent4 grad_f;
      for (int c = 0; c < kLatentChannels; ++c) grad_f[c] = float(integ.weight[i] * grad_latent[c]);
      const Vec3 x = ray.origin + integ.t[i] * ray.direction;
      medium.query_backward(x, ray.direction, grad_f, float(grad_sigma), grads);
    }
    suffix += integ.weight[i] * gf[i];
  }
}

/// Ray through the center of pixel (row, col).
Ray pixel_ray(const CameraPose& pose, int row, int col);

/// Row-major rays through pixel centers: pixel (i, j) -> index i * W + j.
std::vector<Ray> generate_rays(const CameraPose& pose, ImageSize size);

struct RenderOptions {
  ImageSize size{};
  SamplerConfig sampler{};
  int chunk_size = 4096;
  std::uint64_t seed = 0;
};

struct RenderedView {
  LatentImage latent;
  std::vector<float> depth;
  std::vector<float> opacity;
  std::size_t rays_cast = 0;
};

/// Renders a full view, parallel over rays. Results do not depend on the
/// chunk size or thread count.
RenderedView render_view(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options);

/// Backpropagates a full-view latent gradient into `grads`.
void render_view_backward(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options,
                          const LatentImage& grad_latent, ParameterSet& grads);

/// Batched ray rendering; ray k uses jitter stream (seed, k).
std::vector<RenderedPixel> render_rays(const LatentRadianceField& field, std::span<const Ray> rays,
                                       const SamplerConfig& sampler, std::uint64_t seed);
/// `grad_latents` holds 4 values per ray.
void render_rays_backward(const LatentRadianceField& field, std::span<const Ray> rays,
                          const SamplerConfig& sampler, std::uint64_t seed, std::span<const float> grad_latents,
                          ParameterSet& grads);

/// Single-threaded reference implementations kept for testing and benchmarking.
namespace serial {
RenderedView render_view(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options);
void render_view_backward(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options,
                          const LatentImage& grad_latent, ParameterSet& grads);
}  // namespace serial

}  // namespace ednerf
