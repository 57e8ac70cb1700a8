#include "ednerf/toy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace ednerf {

namespace {

struct NamedColor {
  const char* name;
  Rgb rgb;
};

constexpr NamedColor kColors[] = {
    {"red", {0.85f, 0.15f, 0.15f}},   {"green", {0.2f, 0.75f, 0.25f}},  {"blue", {0.15f, 0.25f, 0.85f}},
    {"yellow", {0.9f, 0.85f, 0.2f}},  {"orange", {0.95f, 0.55f, 0.1f}}, {"purple", {0.55f, 0.2f, 0.7f}},
    {"white", {0.95f, 0.95f, 0.95f}}, {"black", {0.05f, 0.05f, 0.05f}}, {"gray", {0.5f, 0.5f, 0.5f}},
    {"grey", {0.5f, 0.5f, 0.5f}},
};

constexpr double kDensityOn = 40.0;
constexpr float kHeadGain = 4.0f;
constexpr double kDensityOff = 10.0;

Eigen::Matrix<float, 4, 3> decoder_pinv() {
  const LinearDecoder m = default_linear_decoder();
  return m.transpose() * (m * m.transpose()).inverse();
}

// Ray/box slab test; returns the entry distance if the ray hits within [t0, t1].
std::optional<double> hit_box(const Ray& ray, const Vec3& lo, const Vec3& hi) {
  double t0 = ray.t_near, t1 = ray.t_far;
  for (int k = 0; k < 3; ++k) {
    const double inv = 1.0 / ray.direction[k];
    double a = (lo[k] - ray.origin[k]) * inv, b = (hi[k] - ray.origin[k]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

Vec3 cube_lo(const ToySceneSpec& s) { return Vec3::Constant(-s.cube_half); }
Vec3 cube_hi(const ToySceneSpec& s) { return Vec3::Constant(s.cube_half); }
Vec3 slab_lo(const ToySceneSpec& s) { return {-1.5, -1.5, s.backdrop_z0}; }
Vec3 slab_hi(const ToySceneSpec& s) { return {1.5, 1.5, s.backdrop_z1}; }

CameraPose scale_pose(CameraPose pose, double factor) {
  pose.focal_latent *= factor;
  pose.principal_point *= factor;
  return pose;
}

// Fraction of a grid cell around `x` covered by [a, b], linear across one spacing.
float coverage(double x, double a, double b, double spacing) {
  return float(std::clamp(std::min(x - a, b - x) / spacing + 0.5, 0.0, 1.0));
}

}  // namespace

std::optional<Rgb> color_in_text(const std::string& text) {
  std::string word;
  auto match = [&]() -> std::optional<Rgb> {
    for (const auto& c : kColors) {
      if (word == c.name) return c.rgb;
    }
    return std::nullopt;
  };
  for (char ch : text + " ") {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
      continue;
    }
    if (auto rgb = match()) return rgb;
    word.clear();
  }
  return std::nullopt;
}

Latent4 latent_for_color(const Rgb& rgb) {
  const Eigen::Vector4f z = decoder_pinv() * Eigen::Vector3f(rgb[0], rgb[1], rgb[2]);
  return {z[0], z[1], z[2], z[3]};
}

LatentImage ToyLatentCodec::encode(const RgbImage& image) {
  if (image.height % 8 != 0 || image.width % 8 != 0 || image.height == 0 || image.width == 0) {
    throw InvalidArgument("toy codec: image size must be a positive multiple of 8");
  }
  ++encode_calls_;
  const auto pinv = decoder_pinv();
  LatentImage out(image.height / 8, image.width / 8);
  for (int i = 0; i < out.height(); ++i) {
    for (int j = 0; j < out.width(); ++j) {
      Eigen::Vector3f mean = Eigen::Vector3f::Zero();
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          for (int c = 0; c < 3; ++c) mean[c] += image.at(8 * i + y, 8 * j + x, c);
      const Eigen::Vector4f z = pinv * (mean / 64.0f);
      for (int c = 0; c < kLatentChannels; ++c) out.at(i, j, c) = z[c];
    }
  }
  return out;
}

RgbImage ToyLatentCodec::decode(const LatentImage& latent) {
  return upsample_nearest(linear_decode_preview(latent, default_linear_decoder()), 8);
}

BinaryMask ToySegmenter::segment(const RgbImage& image, const std::string& prompt) {
  BinaryMask mask(image.height, image.width);
  const auto color = color_in_text(prompt);
  if (!color) return mask;
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      float diff = 0.0f;
      for (int c = 0; c < 3; ++c) diff = std::max(diff, std::abs(image.at(i, j, c) - (*color)[c]));
      mask.set(i, j, diff <= tolerance_);
    }
  }
  return mask;
}

namespace {

std::vector<float> color_embedding(const Rgb& rgb) {
  std::vector<float> v = {rgb[0] - 0.5f, rgb[1] - 0.5f, rgb[2] - 0.5f, 0.5f};
  float n = 0.0f;
  for (float x : v) n += x * x;
  n = std::sqrt(n);
  for (float& x : v) x /= n;
  return v;
}

}  // namespace

std::vector<float> ToyEmbedder::embed_image(const RgbImage& image) {
  if (image.data.empty()) throw InvalidArgument("toy embedder: empty image");
  double sum[3] = {0, 0, 0};
  for (std::size_t k = 0; k < image.data.size(); ++k) sum[k % 3] += image.data[k];
  const double n = double(image.data.size() / 3);
  return color_embedding({float(sum[0] / n), float(sum[1] / n), float(sum[2] / n)});
}

std::vector<float> ToyEmbedder::embed_text(const std::string& text) {
  return color_embedding(color_in_text(text).value_or(Rgb{0.5f, 0.5f, 0.5f}));
}

ToyGaussianDenoiser make_toy_denoiser(const NoiseSchedule& schedule, const std::vector<Prompt>& prompts) {
  std::map<std::string, Latent4> means;
  for (const auto& p : prompts) {
    const auto color = color_in_text(p.text);
    if (!color) throw InvalidArgument("toy denoiser: prompt '" + p.text + "' names no known color");
    means[p.text] = latent_for_color(*color);
  }
  return ToyGaussianDenoiser(schedule, std::move(means));
}

// ---------------------------------------------------------------------------

std::vector<CameraPose> toy_poses(const ToySceneSpec& spec) {
  if (spec.views < 1) throw InvalidArgument("toy scene needs at least one view");
  std::vector<CameraPose> poses;
  const double spread = spec.spread_degrees * M_PI / 180.0;
  for (int k = 0; k < spec.views; ++k) {
    const double theta = spec.views == 1 ? 0.0 : -spread + 2.0 * spread * k / (spec.views - 1);
    const Vec3 eye(spec.radius * std::sin(theta), -0.4, -spec.radius * std::cos(theta));
    poses.push_back(look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), spec.focal_ratio * spec.latent_size,
                            {spec.latent_size, spec.latent_size}, spec.near, spec.far));
  }
  return poses;
}

RgbImage render_toy_image(const ToySceneSpec& spec, const CameraPose& pose, int size) {
  const CameraPose p = scale_pose(pose, double(size) / spec.latent_size);
  RgbImage img(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const Ray ray = pixel_ray(p, i, j);
      const auto tc = hit_box(ray, cube_lo(spec), cube_hi(spec));
      const auto tb = hit_box(ray, slab_lo(spec), slab_hi(spec));
      const Rgb* color = nullptr;
      if (tc && (!tb || *tc <= *tb)) {
        color = &spec.cube_color;
      } else if (tb) {
        color = &spec.backdrop_color;
      }
      if (!color) continue;
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = (*color)[c];
    }
  }
  return img;
}

BinaryMask toy_cube_mask(const ToySceneSpec& spec, const CameraPose& pose, ImageSize size) {
  const CameraPose p = scale_pose(pose, double(size.width) / spec.latent_size);
  BinaryMask mask(size.height, size.width);
  for (int i = 0; i < size.height; ++i)
    for (int j = 0; j < size.width; ++j) mask.set(i, j, hit_box(pixel_ray(p, i, j), cube_lo(spec), cube_hi(spec)).has_value());
  return mask;
}

void write_toy_scene(const fs::path& dir, const ToySceneSpec& spec) {
  if (spec.image_size % spec.latent_size != 0) throw InvalidArgument("toy scene: image size must be a multiple of the latent size");
  const auto poses = toy_poses(spec);
  std::vector<PoseRow> rows;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu.png", k);
    write_png(dir / "images" / name, render_toy_image(spec, poses[k], spec.image_size));
    rows.push_back(llff_row_from_pose(poses[k], spec.image_size, spec.latent_size));
  }
  write_pose_rows(dir / "poses_bounds.npy", rows);
}

LatentRadianceField make_toy_field(const FieldConfig& config, const ToySceneSpec& spec, const Latent4& cube,
                                   const Latent4& backdrop) {
  if (config.density_rank < 3 || config.appearance_rank < 2 || config.appearance_dim < 2 || config.hidden_width < 2) {
    throw InvalidArgument("make_toy_field: configuration too small for the toy scene");
  }
  LatentRadianceField field(config, 0);
  ParameterSet& p = field.parameters();
  for (auto& t : p) std::fill(t.values.begin(), t.values.end(), 0.0f);

  const int g = config.grid_resolution;
  const Vec3 lo = config.bounds.lo, hi = config.bounds.hi;
  auto node = [&](int axis, int k) { return lo[axis] + k * (hi[axis] - lo[axis]) / (g - 1); };
  auto spacing = [&](int axis) { return (hi[axis] - lo[axis]) / (g - 1); };
  const double h = spec.cube_half;
  // Colour reaches past the blurred density edge so surfaces are shaded at full strength.
  auto pad = [&](int axis) { return 2.0 * spacing(axis); };

  auto& dplane = p[p.find("density.plane0")].values;
  auto& dline = p[p.find("density.line0")].values;
  auto& aplane = p[p.find("appearance.plane0")].values;
  auto& aline = p[p.find("appearance.line0")].values;
  const std::size_t gg = std::size_t(g) * g;
  for (int a = 0; a < g; ++a) {
    for (int b = 0; b < g; ++b) {
      const float cov = coverage(node(0, a), -h, h, spacing(0)) * coverage(node(1, b), -h, h, spacing(1));
      const float wide = coverage(node(0, a), -h - pad(0), h + pad(0), spacing(0)) *
                         coverage(node(1, b), -h - pad(1), h + pad(1), spacing(1));
      const std::size_t o = std::size_t(a) * g + b;
      dplane[o] = cov;
      dplane[gg + o] = 1.0f;
      dplane[2 * gg + o] = 1.0f;
      aplane[o] = wide;
      aplane[gg + o] = 1.0f;
    }
  }
  for (int k = 0; k < g; ++k) {
    const float cz = coverage(node(2, k), -h, h, spacing(2));
    const float sz = coverage(node(2, k), spec.backdrop_z0, spec.backdrop_z1, spacing(2));
    dline[k] = float(kDensityOn) * cz;
    dline[g + k] = float(kDensityOn) * sz;
    dline[2 * g + k] = -float(kDensityOff);
    aline[k] = coverage(node(2, k), -h - pad(2), h + pad(2), spacing(2));
    aline[g + k] = coverage(node(2, k), spec.backdrop_z0 - pad(2), spec.backdrop_z1 + pad(2), spacing(2));
  }

  auto& basis = p[p.find("appearance.basis")];
  const int nf = basis.shape[1];
  basis.values[0] = 1.0f;
  basis.values[std::size_t(nf) + 1] = 1.0f;
  auto& w1 = p[p.find("head.w1")];
  const int nin = w1.shape[1];
  // Hidden units sit well above the ReLU kink so editing cannot switch them off early.
  w1.values[0] = kHeadGain;
  w1.values[std::size_t(nin) + 1] = kHeadGain;
  auto& w2 = p[p.find("head.w2")];
  const int hw = w2.shape[1];
  for (int c = 0; c < kLatentChannels; ++c) {
    w2.values[std::size_t(c) * hw] = cube[c] / kHeadGain;
    w2.values[std::size_t(c) * hw + 1] = backdrop[c] / kHeadGain;
  }
  return field;
}

SceneDataset make_toy_latent_scene(const LatentRadianceField& field, const ToySceneSpec& spec,
                                   const RenderOptions& options) {
  if (options.size != ImageSize{spec.latent_size, spec.latent_size}) {
    throw InvalidArgument("make_toy_latent_scene: render size must equal the scene's latent size");
  }
  SceneDataset ds;
  ds.name = "toy";
  ds.bounds = field.config().bounds;
  ds.latent_size = options.size;
  for (const auto& pose : toy_poses(spec)) {
    ds.views.push_back({fs::path(), pose});
    ds.latents.emplace_back(render_view(field, pose, options).latent);
    ds.masks.emplace_back(toy_cube_mask(spec, pose, options.size));
  }
  return ds;
}

}  // namespace ednerf
