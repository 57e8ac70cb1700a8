#include "ednerf/field.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <omp.h>

namespace ednerf {

namespace {

// Plane axes and line axis for each of the three vector-matrix modes.
constexpr int kPlaneA[3] = {0, 0, 1};
constexpr int kPlaneB[3] = {1, 2, 2};
constexpr int kLineAxis[3] = {2, 1, 0};

float softplus(float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); }
float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

struct Lerp {
  int i0;
  float f;
};

Lerp grid_lerp(double coord, int resolution) {
  const double c = std::clamp(coord, 0.0, double(resolution - 1));
  int i0 = std::min(int(std::floor(c)), resolution - 2);
  return {i0, float(c - i0)};
}

bool finite3(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

}  // namespace

void CameraPose::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) throw InvalidArgument("camera pose is not finite");
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6) throw InvalidArgument("camera rotation is not orthonormal");
  if (rotation.determinant() < 0.0) throw InvalidArgument("camera rotation is a reflection");
  if (!(near > 0.0) || !(near < far)) throw InvalidArgument("camera bounds must satisfy 0 < near < far");
  if (!(focal_latent > 0.0) || !std::isfinite(focal_latent)) throw InvalidArgument("focal length must be positive");
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_latent, ImageSize size,
                   double near, double far) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) throw InvalidArgument("look_at: up is parallel to the view direction");
  right.normalize();
  const Vec3 down = forward.cross(right);
  CameraPose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = eye;
  pose.focal_latent = focal_latent;
  pose.principal_point = {size.width / 2.0, size.height / 2.0};
  pose.near = near;
  pose.far = far;
  return pose;
}

void positional_encode_into(std::span<const double> x, int frequencies, bool passthrough, std::span<float> out) {
  if (frequencies < 0) throw InvalidArgument("positional_encode: frequency count must be >= 0");
  if (out.size() != positional_encoding_size(x.size(), frequencies, passthrough)) {
    throw InvalidArgument("positional_encode: output size mismatch");
  }
  std::size_t o = 0;
  if (passthrough) {
    for (double v : x) out[o++] = float(v);
  }
  for (double v : x) {
    double scale = M_PI;
    for (int l = 0; l < frequencies; ++l) {
      out[o++] = float(std::sin(scale * v));
      out[o++] = float(std::cos(scale * v));
      scale *= 2.0;
    }
  }
}

std::vector<float> positional_encode(std::span<const double> x, int frequencies, bool passthrough) {
  if (frequencies < 0) throw InvalidArgument("positional_encode: frequency count must be >= 0");
  std::vector<float> out(positional_encoding_size(x.size(), frequencies, passthrough));
  positional_encode_into(x, frequencies, passthrough, out);
  return out;
}

// ---------------------------------------------------------------------------
// LatentRadianceField

struct LatentRadianceField::Cache {
  // Interpolation stencils per mode.
  Lerp pa[3], pb[3], ln[3];
  // Per-mode, per-rank interpolated plane and line values.
  std::vector<float> dplane, dline, aplane, aline;
  std::vector<float> feat;     // 3 * appearance_rank products
  std::vector<float> head_in;  // [app, gamma(x), d, gamma(d)]
  std::vector<float> hidden_pre;
  float raw = 0.0f;
  bool inside = false;
};

ParameterSet LatentRadianceField::make_layout(const FieldConfig& c) {
  if (c.grid_resolution < 2 || c.density_rank < 1 || c.appearance_rank < 1 || c.appearance_dim < 1 ||
      c.hidden_width < 1 || c.position_frequencies < 0 || c.direction_frequencies < 0) {
    throw InvalidArgument("invalid field configuration");
  }
  if (!((c.bounds.hi - c.bounds.lo).array() > 0.0).all()) throw InvalidArgument("field bounds are empty");
  const int g = c.grid_resolution;
  ParameterSet p;
  for (int m = 0; m < 3; ++m) p.add("density.plane" + std::to_string(m), ParamGroup::density, {c.density_rank, g, g});
  for (int m = 0; m < 3; ++m) p.add("density.line" + std::to_string(m), ParamGroup::density, {c.density_rank, g});
  for (int m = 0; m < 3; ++m)
    p.add("appearance.plane" + std::to_string(m), ParamGroup::appearance, {c.appearance_rank, g, g});
  for (int m = 0; m < 3; ++m) p.add("appearance.line" + std::to_string(m), ParamGroup::appearance, {c.appearance_rank, g});
  const int head_in = c.appearance_dim + int(positional_encoding_size(3, c.position_frequencies, false)) + 3 +
                      int(positional_encoding_size(3, c.direction_frequencies, false));
  p.add("appearance.basis", ParamGroup::network, {c.appearance_dim, 3 * c.appearance_rank});
  p.add("head.w1", ParamGroup::network, {c.hidden_width, head_in});
  p.add("head.b1", ParamGroup::network, {c.hidden_width});
  p.add("head.w2", ParamGroup::network, {kLatentChannels, c.hidden_width});
  p.add("head.b2", ParamGroup::network, {kLatentChannels});
  return p;
}

void LatentRadianceField::bind() {
  for (int m = 0; m < 3; ++m) {
    idx_.density_plane[m] = params_.find("density.plane" + std::to_string(m));
    idx_.density_line[m] = params_.find("density.line" + std::to_string(m));
    idx_.app_plane[m] = params_.find("appearance.plane" + std::to_string(m));
    idx_.app_line[m] = params_.find("appearance.line" + std::to_string(m));
  }
  idx_.basis = params_.find("appearance.basis");
  idx_.w1 = params_.find("head.w1");
  idx_.b1 = params_.find("head.b1");
  idx_.w2 = params_.find("head.w2");
  idx_.b2 = params_.find("head.b2");
  head_in_ = std::size_t(params_[idx_.w1].shape[1]);
}

LatentRadianceField::LatentRadianceField(const FieldConfig& config, std::uint64_t seed)
    : config_(config), params_(make_layout(config)) {
  bind();
  Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& t : params_) {
    float scale = config_.init_scale;
    if (t.name == "appearance.basis") scale = 1.0f / std::sqrt(float(t.shape[1]));
    if (t.name == "head.w1") scale = std::sqrt(2.0f / float(t.shape[1]));
    if (t.name == "head.w2") scale = std::sqrt(1.0f / float(t.shape[1]));
    if (t.name == "head.b1" || t.name == "head.b2") scale = 0.0f;
    for (float& v : t.values) v = scale * normal(rng);
  }
}

LatentRadianceField::LatentRadianceField(const FieldConfig& config, ParameterSet parameters)
    : config_(config), params_(std::move(parameters)) {
  if (!params_.same_layout(make_layout(config))) {
    throw InvalidArgument("field parameters do not match the field configuration");
  }
  bind();
}

void LatentRadianceField::forward(const Vec3& x, const Vec3& d, Cache& cache) const {
  if (!finite3(x) || !finite3(d)) throw InvalidArgument("field query with non-finite coordinates");
  cache.inside = config_.bounds.contains(x);
  if (!cache.inside) return;

  const int g = config_.grid_resolution;
  const int rd = config_.density_rank;
  const int ra = config_.appearance_rank;
  const Vec3 extent = config_.bounds.hi - config_.bounds.lo;
  const Vec3 unit = (x - config_.bounds.lo).cwiseQuotient(extent);
  const Vec3 coord = unit * double(g - 1);

  cache.dplane.resize(3 * rd);
  cache.dline.resize(3 * rd);
  cache.aplane.resize(3 * ra);
  cache.aline.resize(3 * ra);
  cache.feat.resize(3 * ra);

  float raw = 0.0f;
  for (int m = 0; m < 3; ++m) {
    const Lerp a = grid_lerp(coord[kPlaneA[m]], g);
    const Lerp b = grid_lerp(coord[kPlaneB[m]], g);
    const Lerp l = grid_lerp(coord[kLineAxis[m]], g);
    cache.pa[m] = a;
    cache.pb[m] = b;
    cache.ln[m] = l;
    const float w00 = (1 - a.f) * (1 - b.f), w10 = a.f * (1 - b.f), w01 = (1 - a.f) * b.f, w11 = a.f * b.f;
    const std::size_t o00 = std::size_t(a.i0) * g + b.i0;

    const float* dp = params_[idx_.density_plane[m]].values.data();
    const float* dl = params_[idx_.density_line[m]].values.data();
    for (int r = 0; r < rd; ++r) {
      const float* plane = dp + std::size_t(r) * g * g;
      const float pv = w00 * plane[o00] + w10 * plane[o00 + g] + w01 * plane[o00 + 1] + w11 * plane[o00 + g + 1];
      const float* line = dl + std::size_t(r) * g;
      const float lv = (1 - l.f) * line[l.i0] + l.f * line[l.i0 + 1];
      cache.dplane[m * rd + r] = pv;
      cache.dline[m * rd + r] = lv;
      raw += pv * lv;
    }

    const float* ap = params_[idx_.app_plane[m]].values.data();
    const float* al = params_[idx_.app_line[m]].values.data();
    for (int r = 0; r < ra; ++r) {
      const float* plane = ap + std::size_t(r) * g * g;
      const float pv = w00 * plane[o00] + w10 * plane[o00 + g] + w01 * plane[o00 + 1] + w11 * plane[o00 + g + 1];
      const float* line = al + std::size_t(r) * g;
      const float lv = (1 - l.f) * line[l.i0] + l.f * line[l.i0 + 1];
      cache.aplane[m * ra + r] = pv;
      cache.aline[m * ra + r] = lv;
      cache.feat[m * ra + r] = pv * lv;
    }
  }
  cache.raw = raw + config_.density_shift;

  // Appearance vector, then the decode head input.
  const int na = config_.appearance_dim;
  const int nf = 3 * ra;
  cache.head_in.assign(head_in_, 0.0f);
  const float* basis = params_[idx_.basis].values.data();
  for (int i = 0; i < na; ++i) {
    float s = 0.0f;
    for (int k = 0; k < nf; ++k) s += basis[std::size_t(i) * nf + k] * cache.feat[k];
    cache.head_in[i] = s;
  }
  std::size_t o = std::size_t(na);
  const double xn[3] = {2.0 * unit.x() - 1.0, 2.0 * unit.y() - 1.0, 2.0 * unit.z() - 1.0};
  const std::size_t nx = positional_encoding_size(3, config_.position_frequencies, false);
  positional_encode_into(xn, config_.position_frequencies, false, std::span<float>(cache.head_in).subspan(o, nx));
  o += nx;
  const double dv[3] = {d.x(), d.y(), d.z()};
  for (int k = 0; k < 3; ++k) cache.head_in[o++] = float(dv[k]);
  const std::size_t nd = positional_encoding_size(3, config_.direction_frequencies, false);
  positional_encode_into(dv, config_.direction_frequencies, false, std::span<float>(cache.head_in).subspan(o, nd));

  const int h = config_.hidden_width;
  const float* w1 = params_[idx_.w1].values.data();
  const float* b1 = params_[idx_.b1].values.data();
  cache.hidden_pre.resize(h);
  for (int j = 0; j < h; ++j) {
    float s = b1[j];
    const float* row = w1 + std::size_t(j) * head_in_;
    for (std::size_t k = 0; k < head_in_; ++k) s += row[k] * cache.head_in[k];
    cache.hidden_pre[j] = s;
  }
}

FieldSample LatentRadianceField::query(const Vec3& x, const Vec3& d) const {
  thread_local Cache cache;
  forward(x, d, cache);
  FieldSample out;
  if (!cache.inside) return out;
  out.sigma = softplus(cache.raw);
  const int h = config_.hidden_width;
  const float* w2 = params_[idx_.w2].values.data();
  const float* b2 = params_[idx_.b2].values.data();
  for (int c = 0; c < kLatentChannels; ++c) {
    float s = b2[c];
    for (int j = 0; j < h; ++j) s += w2[std::size_t(c) * h + j] * std::max(cache.hidden_pre[j], 0.0f);
    out.latent[c] = s;
  }
  return out;
}

void LatentRadianceField::query_backward(const Vec3& x, const Vec3& d, const Latent4& grad_latent, float grad_sigma,
                                         ParameterSet& grads) const {
  thread_local Cache cache;
  forward(x, d, cache);
  if (!cache.inside) return;

  const int g = config_.grid_resolution;
  const int rd = config_.density_rank;
  const int ra = config_.appearance_rank;
  const int na = config_.appearance_dim;
  const int nf = 3 * ra;
  const int h = config_.hidden_width;

  // Decode head.
  thread_local std::vector<float> grad_hidden, grad_feat;
  grad_hidden.assign(h, 0.0f);
  const float* w2 = params_[idx_.w2].values.data();
  float* gw2 = grads[idx_.w2].values.data();
  float* gb2 = grads[idx_.b2].values.data();
  for (int c = 0; c < kLatentChannels; ++c) {
    const float gc = grad_latent[c];
    if (gc == 0.0f) continue;
    gb2[c] += gc;
    for (int j = 0; j < h; ++j) {
      const float act = std::max(cache.hidden_pre[j], 0.0f);
      gw2[std::size_t(c) * h + j] += gc * act;
      if (cache.hidden_pre[j] > 0.0f) grad_hidden[j] += gc * w2[std::size_t(c) * h + j];
    }
  }
  const float* w1 = params_[idx_.w1].values.data();
  float* gw1 = grads[idx_.w1].values.data();
  float* gb1 = grads[idx_.b1].values.data();
  thread_local std::vector<float> grad_app;
  grad_app.assign(na, 0.0f);
  for (int j = 0; j < h; ++j) {
    const float gj = grad_hidden[j];
    if (gj == 0.0f) continue;
    gb1[j] += gj;
    float* grow = gw1 + std::size_t(j) * head_in_;
    const float* row = w1 + std::size_t(j) * head_in_;
    for (std::size_t k = 0; k < head_in_; ++k) grow[k] += gj * cache.head_in[k];
    for (int k = 0; k < na; ++k) grad_app[k] += gj * row[k];
  }

  // Appearance basis.
  const float* basis = params_[idx_.basis].values.data();
  float* gbasis = grads[idx_.basis].values.data();
  grad_feat.assign(nf, 0.0f);
  for (int i = 0; i < na; ++i) {
    const float gi = grad_app[i];
    if (gi == 0.0f) continue;
    for (int k = 0; k < nf; ++k) {
      gbasis[std::size_t(i) * nf + k] += gi * cache.feat[k];
      grad_feat[k] += gi * basis[std::size_t(i) * nf + k];
    }
  }

  const float grad_raw = grad_sigma * sigmoid(cache.raw);

  for (int m = 0; m < 3; ++m) {
    const Lerp a = cache.pa[m], b = cache.pb[m], l = cache.ln[m];
    const float w00 = (1 - a.f) * (1 - b.f), w10 = a.f * (1 - b.f), w01 = (1 - a.f) * b.f, w11 = a.f * b.f;
    const std::size_t o00 = std::size_t(a.i0) * g + b.i0;

    if (grad_raw != 0.0f) {
      float* gp = grads[idx_.density_plane[m]].values.data();
      float* gl = grads[idx_.density_line[m]].values.data();
      for (int r = 0; r < rd; ++r) {
        const float gpv = grad_raw * cache.dline[m * rd + r];
        const float glv = grad_raw * cache.dplane[m * rd + r];
        float* plane = gp + std::size_t(r) * g * g;
        plane[o00] += gpv * w00;
        plane[o00 + g] += gpv * w10;
        plane[o00 + 1] += gpv * w01;
        plane[o00 + g + 1] += gpv * w11;
        float* line = gl + std::size_t(r) * g;
        line[l.i0] += glv * (1 - l.f);
        line[l.i0 + 1] += glv * l.f;
      }
    }

    float* gp = grads[idx_.app_plane[m]].values.data();
    float* gl = grads[idx_.app_line[m]].values.data();
    for (int r = 0; r < ra; ++r) {
      const float gfk = grad_feat[m * ra + r];
      if (gfk == 0.0f) continue;
      const float gpv = gfk * cache.aline[m * ra + r];
      const float glv = gfk * cache.aplane[m * ra + r];
      float* plane = gp + std::size_t(r) * g * g;
      plane[o00] += gpv * w00;
      plane[o00 + g] += gpv * w10;
      plane[o00 + 1] += gpv * w01;
      plane[o00 + g + 1] += gpv * w11;
      float* line = gl + std::size_t(r) * g;
      line[l.i0] += glv * (1 - l.f);
      line[l.i0 + 1] += glv * l.f;
    }
  }
}

bool LatentRadianceField::occupied(const Vec3& x) const {
  if (occupancy_resolution_ == 0) return true;
  const int n = occupancy_resolution_;
  const Vec3 unit = (x - config_.bounds.lo).cwiseQuotient(config_.bounds.hi - config_.bounds.lo);
  int c[3];
  for (int k = 0; k < 3; ++k) {
    if (!(unit[k] >= 0.0 && unit[k] <= 1.0)) return false;
    c[k] = std::min(int(unit[k] * n), n - 1);
  }
  return occupancy_[(std::size_t(c[0]) * n + c[1]) * n + c[2]] != 0;
}

void LatentRadianceField::update_occupancy(int resolution, float sigma_threshold) {
  if (resolution < 1) throw InvalidArgument("occupancy resolution must be >= 1");
  std::vector<std::uint8_t> grid(std::size_t(resolution) * resolution * resolution, 0);
  const Vec3 extent = config_.bounds.hi - config_.bounds.lo;
  const Vec3 dir = Vec3::UnitZ();
  // Each cell is probed on a 3x3x3 lattice spanning its closed extent.
#pragma omp parallel for schedule(static)
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      for (int k = 0; k < resolution; ++k) {
        float peak = 0.0f;
        for (int s = 0; s < 27; ++s) {
          const double f[3] = {(s % 3) * 0.5, (s / 3 % 3) * 0.5, (s / 9) * 0.5};
          const Vec3 unit((i + f[0]) / resolution, (j + f[1]) / resolution, (k + f[2]) / resolution);
          const Vec3 x = config_.bounds.lo + unit.cwiseProduct(extent);
          peak = std::max(peak, query(x, dir).sigma);
        }
        grid[(std::size_t(i) * resolution + j) * resolution + k] = peak > sigma_threshold ? 1 : 0;
      }
    }
  }
  occupancy_ = std::move(grid);
  occupancy_resolution_ = resolution;
}

// ---------------------------------------------------------------------------
// Rays and views

void detail::validate_ray(const Ray& ray, const SamplerConfig& sampler) {
  if (sampler.n_samples < 2) throw InvalidArgument("render_ray: need at least 2 samples");
  if (!std::isfinite(ray.t_near) || !std::isfinite(ray.t_far) || !(ray.t_near < ray.t_far)) {
    throw InvalidArgument("render_ray: degenerate ray interval (t_near >= t_far)");
  }
  if (!finite3(ray.origin) || !finite3(ray.direction)) throw InvalidArgument("render_ray: non-finite ray");
}

Ray pixel_ray(const CameraPose& pose, int row, int col) {
  const Vec3 cam((col + 0.5 - pose.principal_point.x()) / pose.focal_latent,
                 (row + 0.5 - pose.principal_point.y()) / pose.focal_latent, 1.0);
  Ray r;
  r.origin = pose.translation;
  r.direction = (pose.rotation * cam).normalized();
  r.t_near = pose.near;
  r.t_far = pose.far;
  return r;
}

std::vector<Ray> generate_rays(const CameraPose& pose, ImageSize size) {
  if (size.height < 1 || size.width < 1) throw InvalidArgument("generate_rays: resolution must be >= 1");
  pose.validate();
  std::vector<Ray> rays(std::size_t(size.pixels()));
  for (int i = 0; i < size.height; ++i) {
    for (int j = 0; j < size.width; ++j) rays[std::size_t(i) * size.width + j] = pixel_ray(pose, i, j);
  }
  return rays;
}

namespace {

RenderedView empty_view(ImageSize size) {
  RenderedView v{LatentImage(size), std::vector<float>(size.pixels(), 0.0f),
                 std::vector<float>(size.pixels(), 0.0f), std::size_t(size.pixels())};
  return v;
}

void store_pixel(RenderedView& view, int p, const RenderedPixel& px) {
  auto dst = view.latent.pixel(p);
  for (int c = 0; c < kLatentChannels; ++c) dst[c] = px.latent[c];
  view.depth[p] = float(px.depth);
  view.opacity[p] = float(px.opacity);
}

void check_chunk(int chunk) {
  if (chunk < 1) throw InvalidArgument("render_view: chunk size must be >= 1");
}

}  // namespace

RenderedView render_view(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options) {
  check_chunk(options.chunk_size);
  const std::vector<Ray> rays = generate_rays(pose, options.size);
  RenderedView view = empty_view(options.size);
  const int n = int(rays.size());
  for (int start = 0; start < n; start += options.chunk_size) {
    const int stop = std::min(n, start + options.chunk_size);
#pragma omp parallel for schedule(static)
    for (int p = start; p < stop; ++p) {
      store_pixel(view, p, render_ray(field, rays[p], options.sampler, options.seed, std::uint64_t(p)));
    }
  }
  return view;
}

namespace {

// Runs `body(k, grads)` for k in [0, n) in parallel, each thread accumulating
// into a private buffer that is reduced in thread order afterwards.
template <class Body>
void parallel_accumulate(int n, ParameterSet& grads, Body&& body) {
  const int threads = omp_get_max_threads();
  if (threads <= 1 || n < 2) {
    for (int k = 0; k < n; ++k) body(k, grads);
    return;
  }
  std::vector<ParameterSet> local(threads, grads.zeros_like());
#pragma omp parallel num_threads(threads)
  {
    ParameterSet& mine = local[omp_get_thread_num()];
#pragma omp for schedule(static)
    for (int k = 0; k < n; ++k) body(k, mine);
  }
  for (const auto& l : local) grads.accumulate(l);
}

}  // namespace

void render_view_backward(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options,
                          const LatentImage& grad_latent, ParameterSet& grads) {
  if (grad_latent.size() != options.size || grad_latent.channels() != kLatentChannels) {
    throw InvalidArgument("render_view_backward: gradient shape mismatch");
  }
  const std::vector<Ray> rays = generate_rays(pose, options.size);
  parallel_accumulate(int(rays.size()), grads, [&](int p, ParameterSet& g) {
    Latent4 gl;
    auto src = grad_latent.pixel(p);
    bool any = false;
    for (int c = 0; c < kLatentChannels; ++c) {
      gl[c] = src[c];
      any = any || src[c] != 0.0f;
    }
    if (any) render_ray_backward(field, rays[p], options.sampler, options.seed, std::uint64_t(p), gl, g);
  });
}

std::vector<RenderedPixel> render_rays(const LatentRadianceField& field, std::span<const Ray> rays,
                                       const SamplerConfig& sampler, std::uint64_t seed) {
  std::vector<RenderedPixel> out(rays.size());
  const int n = int(rays.size());
#pragma omp parallel for schedule(static)
  for (int k = 0; k < n; ++k) out[k] = render_ray(field, rays[k], sampler, seed, std::uint64_t(k));
  return out;
}

void render_rays_backward(const LatentRadianceField& field, std::span<const Ray> rays, const SamplerConfig& sampler,
                          std::uint64_t seed, std::span<const float> grad_latents, ParameterSet& grads) {
  if (grad_latents.size() != rays.size() * kLatentChannels) {
    throw InvalidArgument("render_rays_backward: gradient size mismatch");
  }
  parallel_accumulate(int(rays.size()), grads, [&](int k, ParameterSet& g) {
    Latent4 gl;
    for (int c = 0; c < kLatentChannels; ++c) gl[c] = grad_latents[std::size_t(k) * kLatentChannels + c];
    render_ray_backward(field, rays[k], sampler, seed, std::uint64_t(k), gl, g);
  });
}

namespace serial {

RenderedView render_view(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options) {
  const std::vector<Ray> rays = generate_rays(pose, options.size);
  RenderedView view = empty_view(options.size);
  for (std::size_t p = 0; p < rays.size(); ++p) {
    store_pixel(view, int(p), render_ray(field, rays[p], options.sampler, options.seed, p));
  }
  return view;
}

void render_view_backward(const LatentRadianceField& field, const CameraPose& pose, const RenderOptions& options,
                          const LatentImage& grad_latent, ParameterSet& grads) {
  const std::vector<Ray> rays = generate_rays(pose, options.size);
  for (std::size_t p = 0; p < rays.size(); ++p) {
    Latent4 gl;
    auto src = grad_latent.pixel(int(p));
    for (int c = 0; c < kLatentChannels; ++c) gl[c] = src[c];
    render_ray_backward(field, rays[p], options.sampler, options.seed, p, gl, grads);
  }
}

}  // namespace serial

}  // namespace ednerf
