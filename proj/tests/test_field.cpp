#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ednerf/field.hpp"
#include "ednerf/losses.hpp"
#include "ednerf/toy.hpp"
#include "ednerf/trainer.hpp"
#include "support.hpp"

using namespace ednerf;
using namespace ednerf::testing;

namespace {

Ray axis_ray(double t_near, double t_far) {
  Ray r;
  r.origin = Vec3::Zero();
  r.direction = Vec3::UnitZ();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

Ray random_ray(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 d(n(rng), n(rng), n(rng));
  d.normalize();
  Ray r;
  r.origin = -2.0 * d + 0.3 * Vec3(n(rng), n(rng), n(rng));
  r.direction = d;
  r.t_near = 0.5;
  r.t_far = 3.5;
  return r;
}

}  // namespace

TEST(PositionalEncode, ZeroInputGivesSinZeroCosOne) {
  const std::vector<double> x{0.0, 0.0, 0.0};
  const auto e = positional_encode(x, 2);
  ASSERT_EQ(e.size(), 12u);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    EXPECT_EQ(e[i], 0.0f);
    EXPECT_EQ(e[i + 1], 1.0f);
  }
}

TEST(PositionalEncode, HalfAtOneFrequency) {
  const std::vector<double> x{0.5};
  const auto e = positional_encode(x, 1);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_NEAR(e[0], 1.0, 1e-7);
  EXPECT_NEAR(e[1], 0.0, 1e-7);
}

TEST(PositionalEncode, MatchesScalarTrig) {
  const std::vector<double> x{0.3, -0.7};
  const auto e = positional_encode(x, 4, true);
  ASSERT_EQ(e.size(), positional_encoding_size(2, 4, true));
  EXPECT_FLOAT_EQ(e[0], 0.3f);
  EXPECT_FLOAT_EQ(e[1], -0.7f);
  std::size_t o = 2;
  for (double v : x) {
    for (int l = 0; l < 4; ++l) {
      const double a = std::pow(2.0, l) * M_PI * v;
      EXPECT_NEAR(e[o++], std::sin(a), 1e-6);
      EXPECT_NEAR(e[o++], std::cos(a), 1e-6);
    }
  }
}

TEST(PositionalEncode, NegativeFrequencyRejected) {
  const std::vector<double> x{0.1};
  EXPECT_THROW(positional_encode(x, -1), InvalidArgument);
}

TEST(FieldQuery, OutsideBoxIsEmpty) {
  const LatentRadianceField f(tiny_field_config(), 3);
  const FieldSample s = f.query(Vec3(1.5, 0, 0), Vec3::UnitZ());
  EXPECT_EQ(s.sigma, 0.0f);
  for (float v : s.latent) EXPECT_EQ(v, 0.0f);
}

TEST(FieldQuery, PureAndFinite) {
  const LatentRadianceField f(tiny_field_config(), 3);
  const Vec3 x(0.2, -0.1, 0.4), d = Vec3(1, 2, 3).normalized();
  const FieldSample a = f.query(x, d), b = f.query(x, d);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_GE(a.sigma, 0.0f);
  for (float v : a.latent) EXPECT_TRUE(std::isfinite(v));
}

TEST(FieldQuery, FreshFieldSigmaNearInitialization) {
  FieldConfig c = tiny_field_config();
  c.init_scale = 0.01f;
  c.density_shift = -2.0f;
  const LatentRadianceField f(c, 9);
  const double expected = std::log1p(std::exp(-2.0));
  for (double z : {-0.5, 0.0, 0.5}) {
    EXPECT_NEAR(f.query(Vec3(0.1, 0.2, z), Vec3::UnitZ()).sigma, expected, 0.02);
  }
}

TEST(FieldQuery, NonFiniteRejected) {
  const LatentRadianceField f(tiny_field_config(), 3);
  EXPECT_THROW(f.query(Vec3(NAN, 0, 0), Vec3::UnitZ()), InvalidArgument);
}

TEST(RenderRay, TransparentMediumIsZero) {
  const ConstantMedium m{0.0f, {1, 2, 3, 4}};
  const RenderedPixel px = render_ray(m, axis_ray(0, 2), {64, false});
  for (float v : px.latent) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(px.opacity, 0.0);
}

TEST(RenderRay, HomogeneousMatchesClosedForm) {
  const float s = 1.3f;
  const Latent4 c{0.7f, -1.2f, 2.0f, 0.1f};
  const ConstantMedium m{s, c};
  const RenderedPixel px = render_ray(m, axis_ray(0.5, 2.5), {256, false});
  const double cover = 1.0 - std::exp(-double(s) * 2.0);
  for (int k = 0; k < kLatentChannels; ++k) {
    EXPECT_LT(std::abs(px.latent[k] - c[k] * cover), 1e-3 * std::abs(c[k] * cover));
  }
  EXPECT_NEAR(px.opacity, cover, 1e-9);
}

TEST(RenderRay, PiecewiseMatchesQuadrature) {
  SlabMedium m;
  m.edges = {0.5, 1.0, 1.5, 2.0};
  m.sigma = {0.8f, 3.0f, 0.4f};
  m.color = {Latent4{1, 0, -1, 2}, Latent4{-0.5f, 1.5f, 0.2f, 0.3f}, Latent4{2, 2, 2, -2}};
  const Ray r = axis_ray(0.0, 2.0);
  const RenderedPixel px = render_ray(m, r, {256, false});
  const Latent4 ref = quadrature(m, r, 10000);
  for (int k = 0; k < kLatentChannels; ++k) EXPECT_NEAR(px.latent[k], ref[k], 1e-3 * std::abs(ref[k]));
}

TEST(RenderRay, DegenerateRayRejected) {
  const ConstantMedium m;
  EXPECT_THROW(render_ray(m, axis_ray(1.0, 1.0), {16, false}), InvalidArgument);
  EXPECT_THROW(render_ray(m, axis_ray(0.0, 1.0), {1, false}), InvalidArgument);
}

TEST(RenderRay, WeightsAreSubStochasticProperty) {
  Rng rng(11);
  FieldConfig c = tiny_field_config();
  for (int trial = 0; trial < 200; ++trial) {
    c.density_shift = float(trial % 7) - 2.0f;
    c.init_scale = 0.2f + 0.3f * (trial % 5);
    const LatentRadianceField f(c, std::uint64_t(trial));
    const RayIntegration integ = integrate_ray(f, random_ray(rng), {48, trial % 2 == 0}, trial, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < integ.weight.size(); ++i) {
      ASSERT_GE(integ.weight[i], 0.0);
      sum += integ.weight[i];
      if (i > 0) {
        ASSERT_LE(integ.transmittance[i], integ.transmittance[i - 1]);
      }
    }
    ASSERT_LE(sum, 1.0 + 1e-6);
  }
}

TEST(RenderRay, ConvergesUnderRefinement) {
  FieldConfig c = tiny_field_config();
  c.grid_resolution = 8;
  const LatentRadianceField f(c, 5);
  const Ray r = axis_ray(0.0, 2.0);
  Ray shifted = r;
  shifted.origin = Vec3(0.1, -0.2, -1.0);
  auto channel0 = [&](int n) { return double(render_ray(f, shifted, {n, false}).latent[0]); };
  const double z128 = channel0(128), z256 = channel0(256), z512 = channel0(512);
  const double prev = std::abs(z256 - z128), next = std::abs(z512 - z256);
  EXPECT_LT(next, 2.0 * prev);
  EXPECT_LT(next, prev);
}

TEST(RenderRay, GradientMatchesFiniteDifferences) {
  LatentRadianceField f(tiny_field_config(), 21);
  ASSERT_LE(f.parameters().total_values(), 1000u);
  Ray r;
  r.origin = Vec3(0.15, -0.1, -2.0);
  r.direction = Vec3(0.05, 0.02, 1.0).normalized();
  r.t_near = 0.5;
  r.t_far = 3.5;
  const SamplerConfig sampler{24, false};
  const Latent4 target{0.3f, -0.2f, 0.1f, 0.5f};
  auto loss = [&] {
    const RenderedPixel px = render_ray(f, r, sampler);
    double s = 0;
    for (int c = 0; c < kLatentChannels; ++c) s += std::pow(double(px.latent[c]) - target[c], 2);
    return s;
  };
  const RenderedPixel px = render_ray(f, r, sampler);
  Latent4 g;
  for (int c = 0; c < kLatentChannels; ++c) g[c] = 2.0f * (px.latent[c] - target[c]);
  ParameterSet grads = f.parameters().zeros_like();
  render_ray_backward(f, r, sampler, 0, 0, g, grads);
  const auto numeric = finite_difference(f.parameters(), loss);
  EXPECT_GT(cosine_similarity(flatten(grads), numeric), 0.999);
}

TEST(GenerateRays, CountAndLayout) {
  const CameraPose pose = front_camera(64);
  const auto rays = generate_rays(pose, {64, 64});
  ASSERT_EQ(rays.size(), 4096u);
  for (const Ray& r : rays) EXPECT_NEAR(r.direction.norm(), 1.0, 1e-6);
  for (int k : {0, 65, 777, 2048, 4095}) {
    const Ray p = pixel_ray(pose, k / 64, k % 64);
    EXPECT_EQ(rays[k].direction, p.direction);
  }
}

TEST(GenerateRays, CenterPixelAlongOpticalAxis) {
  CameraPose pose;
  pose.focal_latent = 3.0;
  pose.principal_point = {1.5, 1.5};
  const auto rays = generate_rays(pose, {3, 3});
  EXPECT_NEAR((rays[4].direction - Vec3::UnitZ()).norm(), 0.0, 1e-12);
  pose.principal_point = {0.5, 0.5};
  const auto one = generate_rays(pose, {1, 1});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR((one[0].direction - Vec3::UnitZ()).norm(), 0.0, 1e-12);
}

TEST(GenerateRays, InvalidPoseRejected) {
  CameraPose pose;
  pose.rotation(0, 0) = 2.0;
  EXPECT_THROW(generate_rays(pose, {4, 4}), InvalidArgument);
  CameraPose flat;
  flat.near = 2.0;
  flat.far = 1.0;
  EXPECT_THROW(flat.validate(), InvalidArgument);
}

TEST(RenderView, ChunkingDoesNotChangeValues) {
  FieldConfig c = tiny_field_config();
  c.bounds.lo = Vec3::Constant(-1.5);
  c.bounds.hi = Vec3::Constant(1.5);
  const LatentRadianceField f(c, 4);
  RenderOptions o;
  o.size = {64, 64};
  o.sampler = {16, true};
  o.seed = 3;
  o.chunk_size = 512;
  const RenderedView a = render_view(f, front_camera(64), o);
  o.chunk_size = 4096;
  const RenderedView b = render_view(f, front_camera(64), o);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.rays_cast, 4096u);
}

TEST(RenderView, TransparentFieldRendersZero) {
  FieldConfig c = tiny_field_config();
  c.density_shift = -200.0f;
  LatentRadianceField f(c, 1);
  for (auto& t : f.parameters()) std::fill(t.values.begin(), t.values.end(), 0.0f);
  RenderOptions o;
  o.size = {8, 8};
  o.sampler = {16, false};
  const RenderedView v = render_view(f, front_camera(8), o);
  for (float x : v.latent.values()) EXPECT_EQ(x, 0.0f);
  for (float x : v.opacity) EXPECT_EQ(x, 0.0f);
}

TEST(RenderView, AssemblesPerPixelRaysRowMajor) {
  const LatentRadianceField f(tiny_field_config(), 8);
  RenderOptions o;
  o.size = {6, 5};
  o.sampler = {20, true};
  o.seed = 17;
  const CameraPose pose = look_at(Vec3(0.3, 0.2, -3), Vec3::Zero(), Vec3(0, -1, 0), 6.0, o.size, 1.0, 5.0);
  const RenderedView v = render_view(f, pose, o);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) {
      const int p = i * 5 + j;
      const RenderedPixel px = render_ray(f, pixel_ray(pose, i, j), o.sampler, o.seed, std::uint64_t(p));
      for (int c = 0; c < kLatentChannels; ++c) EXPECT_EQ(v.latent.at(i, j, c), px.latent[c]);
    }
  }
}

TEST(RenderView, ParallelMatchesSerialReference) {
  FieldConfig c = tiny_field_config();
  c.grid_resolution = 8;
  const LatentRadianceField f(c, 12);
  RenderOptions o;
  o.size = {16, 16};
  o.sampler = {24, true};
  o.seed = 2;
  const CameraPose pose = front_camera(16);
  const RenderedView par = render_view(f, pose, o), ser = serial::render_view(f, pose, o);
  EXPECT_EQ(par.latent, ser.latent);
  Rng rng(1);
  const LatentImage g = random_latent(o.size, rng);
  ParameterSet gp = f.parameters().zeros_like(), gs = f.parameters().zeros_like();
  render_view_backward(f, pose, o, g, gp);
  serial::render_view_backward(f, pose, o, g, gs);
  const auto a = flatten(gp), b = flatten(gs);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-4 * (1.0 + std::abs(b[i])));
}

TEST(RenderView, RayCountIsSixtyFourTimesBelowRgb) {
  FieldConfig c = tiny_field_config();
  const LatentRadianceField f(c, 1);
  RenderOptions o;
  o.size = {kLatentSize, kLatentSize};
  o.sampler = {2, false};
  const RenderedView v = render_view(f, front_camera(kLatentSize), o);
  EXPECT_EQ(v.rays_cast, 4096u);
  EXPECT_EQ(generate_rays(front_camera(kImageSize), {kImageSize, kImageSize}).size(), 262144u);
  EXPECT_EQ(262144u / v.rays_cast, 64u);
}

TEST(RenderView, OccupancySkipKeepsOccupiedSamples) {
  FieldConfig c = tiny_field_config();
  const LatentRadianceField f(c, 6);
  LatentRadianceField g = f;
  g.update_occupancy(8, 0.0f);
  RenderOptions o;
  o.size = {8, 8};
  o.sampler = {16, false};
  EXPECT_EQ(render_view(f, front_camera(8), o).latent, render_view(g, front_camera(8), o).latent);
}

TEST(RenderView, OverfitSingleViewWithinTolerance) {
  ToySceneSpec spec;
  spec.views = 1;
  spec.latent_size = 16;
  FieldConfig fc;
  fc.grid_resolution = 24;
  fc.density_rank = 4;
  fc.appearance_rank = 4;
  fc.appearance_dim = 8;
  fc.hidden_width = 16;
  RenderOptions o;
  o.size = {16, 16};
  o.sampler = {24, false};
  const auto truth = make_toy_field(fc, spec, latent_for_color(spec.cube_color), latent_for_color(spec.backdrop_color));
  const SceneDataset ds = make_toy_latent_scene(truth, spec, o);

  RefinementConfig rc;
  rc.width = 4;
  rc.groups = 2;
  rc.size = o.size;
  TrainState st(LatentRadianceField(fc, 3), Refinement(rc, 4), 5);
  ReconTrainConfig cfg;
  cfg.steps = 600;
  cfg.ray_batch = 256;
  cfg.sampler = o.sampler;
  cfg.lr_network = 5e-3;
  cfg.lr_refinement = 0.0;
  cfg.weights.lambda_ref = 0.0;
  cfg.log_every = 0;
  cfg.checkpoint_every = 0;
  train_reconstruction(st, ds, cfg);
  const LatentImage z = render_view(st.field, ds.views[0].pose, o).latent;
  const double rmse = std::sqrt(loss_rec(z.values(), ds.latents[0]->values()) / double(z.numel()));
  EXPECT_LT(rmse, 0.05);
}
