#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "ednerf/field.hpp"
#include "ednerf/refinement.hpp"

namespace ednerf::testing {

namespace fs = std::filesystem;

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ednerf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Analytic media for render_ray. Both are independent of direction.

struct ConstantMedium {
  float sigma = 1.0f;
  Latent4 color{};
  FieldSample query(const Vec3&, const Vec3&) const { return {color, sigma}; }
};

/// Piecewise constant along z: segment k covers [edges[k], edges[k+1]).
struct SlabMedium {
  std::vector<double> edges;
  std::vector<float> sigma;
  std::vector<Latent4> color;
  FieldSample query(const Vec3& x, const Vec3&) const {
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
      if (x.z() >= edges[k] && x.z() < edges[k + 1]) return {color[k], sigma[k]};
    }
    return {};
  }
};

/// Midpoint-rule quadrature of the continuous compositing integral, with
/// transmittance integrated exactly within each step.
template <class Medium>
Latent4 quadrature(const Medium& m, const Ray& ray, int steps) {
  const double dt = (ray.t_far - ray.t_near) / steps;
  double log_t = 0.0;
  double acc[kLatentChannels] = {0, 0, 0, 0};
  for (int i = 0; i < steps; ++i) {
    const double t = ray.t_near + (i + 0.5) * dt;
    const FieldSample s = m.query(ray.origin + t * ray.direction, ray.direction);
    const double trans = std::exp(log_t - 0.5 * s.sigma * dt);
    for (int c = 0; c < kLatentChannels; ++c) acc[c] += trans * s.sigma * s.latent[c] * dt;
    log_t -= s.sigma * dt;
  }
  Latent4 out;
  for (int c = 0; c < kLatentChannels; ++c) out[c] = float(acc[c]);
  return out;
}

/// Below 10^3 parameters; used for finite-difference checks.
inline FieldConfig tiny_field_config() {
  FieldConfig c;
  c.bounds.lo = Vec3::Constant(-1.0);
  c.bounds.hi = Vec3::Constant(1.0);
  c.grid_resolution = 4;
  c.density_rank = 2;
  c.appearance_rank = 2;
  c.appearance_dim = 3;
  c.hidden_width = 4;
  c.position_frequencies = 1;
  c.direction_frequencies = 1;
  c.density_shift = 0.0f;
  c.init_scale = 0.5f;
  return c;
}

inline RefinementConfig tiny_refinement_config(int size = 8) {
  RefinementConfig c;
  c.width = 4;
  c.groups = 2;
  c.size = {size, size};
  return c;
}

/// Central differences of `loss` over every value of `params`.
inline std::vector<double> finite_difference(ParameterSet& params, const std::function<double()>& loss,
                                             double h = 1e-3) {
  std::vector<double> out;
  for (auto& t : params) {
    for (auto& v : t.values) {
      const float keep = v;
      v = float(keep + h);
      const double up = loss();
      v = float(keep - h);
      const double down = loss();
      v = keep;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

inline std::vector<double> flatten(const ParameterSet& grads) {
  std::vector<double> out;
  for (const auto& t : grads) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

/// Camera on -z looking at the origin.
inline CameraPose front_camera(int size, double distance = 3.0) {
  return look_at(Vec3(0.0, 0.0, -distance), Vec3::Zero(), Vec3(0, -1, 0), 1.2 * size, {size, size}, 1.0,
                 2.0 * distance);
}

}  // namespace ednerf::testing
