#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "ednerf/evaluation.hpp"
#include "ednerf/toy.hpp"
#include "support.hpp"

using namespace ednerf;
using namespace ednerf::testing;

namespace {

std::vector<float> unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  for (float& x : v) x = float(x / std::sqrt(n));
  return v;
}

// Images are looked up by the value of their first pixel.
class TableEmbedder : public EmbedderClient {
 public:
  std::map<float, std::vector<float>> images;
  std::map<std::string, std::vector<float>> texts;
  std::vector<float> embed_image(const RgbImage& image) override { return images.at(image.data[0]); }
  std::vector<float> embed_text(const std::string& text) override { return texts.at(text); }
};

RgbImage tagged(float tag) {
  RgbImage img(2, 2, 0.5f);
  img.data[0] = tag;
  return img;
}

TableEmbedder aligned() {
  TableEmbedder e;
  e.texts["src"] = unit({1, 0, 0});
  e.texts["trg"] = unit({0, 1, 0});
  e.images[0.1f] = unit({1, 0, 0});
  e.images[0.2f] = unit({0, 1, 0});
  e.images[0.3f] = unit({1, 0, 1});
  e.images[0.4f] = unit({0, 1, 2});
  return e;
}

}  // namespace

TEST(DirectionalScore, UnchangedImagesScoreZero) {
  TableEmbedder e = aligned();
  EXPECT_EQ(directional_score({tagged(0.1f)}, {tagged(0.1f)}, "src", "trg", e), 0.0);
}

TEST(DirectionalScore, ParallelDirectionsScoreOne) {
  TableEmbedder e = aligned();
  EXPECT_NEAR(directional_score({tagged(0.1f)}, {tagged(0.2f)}, "src", "trg", e), 1.0, 1e-6);
  EXPECT_NEAR(directional_score({tagged(0.2f)}, {tagged(0.1f)}, "src", "trg", e), -1.0, 1e-6);
}

TEST(DirectionalScore, MatchesCosineOracle) {
  TableEmbedder e = aligned();
  const auto a = e.images[0.3f], b = e.images[0.4f], s = e.texts["src"], t = e.texts["trg"];
  double dot = 0, ni = 0, nt = 0;
  for (int k = 0; k < 3; ++k) {
    const double di = b[k] - a[k], dt = t[k] - s[k];
    dot += di * dt;
    ni += di * di;
    nt += dt * dt;
  }
  EXPECT_NEAR(directional_score({tagged(0.3f)}, {tagged(0.4f)}, "src", "trg", e), dot / std::sqrt(ni * nt), 1e-6);
}

TEST(DirectionalScore, ConcatenationIsWeightedMean) {
  TableEmbedder e = aligned();
  const std::vector<RgbImage> s1 = {tagged(0.1f), tagged(0.3f)}, e1 = {tagged(0.2f), tagged(0.4f)};
  const std::vector<RgbImage> s2 = {tagged(0.4f)}, e2 = {tagged(0.1f)};
  std::vector<RgbImage> s = s1, ed = e1;
  s.insert(s.end(), s2.begin(), s2.end());
  ed.insert(ed.end(), e2.begin(), e2.end());
  const double whole = directional_score(s, ed, "src", "trg", e);
  const double parts =
      (2 * directional_score(s1, e1, "src", "trg", e) + directional_score(s2, e2, "src", "trg", e)) / 3.0;
  EXPECT_NEAR(whole, parts, 1e-9);
}

TEST(DirectionalScore, RejectsEmptyAndUnpaired) {
  TableEmbedder e = aligned();
  EXPECT_THROW(directional_score({}, {}, "src", "trg", e), InvalidArgument);
  EXPECT_THROW(directional_score({tagged(0.1f)}, {}, "src", "trg", e), InvalidArgument);
}

TEST(Cosine, ScaleInvariantAndDegenerate) {
  Rng rng(1);
  std::normal_distribution<float> n;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> a(6), b(6), as(6), bs(6);
    const float ka = 0.1f + std::abs(n(rng)) * 5, kb = 0.1f + std::abs(n(rng)) * 5;
    for (int k = 0; k < 6; ++k) {
      a[k] = n(rng);
      b[k] = n(rng);
      as[k] = ka * a[k];
      bs[k] = kb * b[k];
    }
    EXPECT_NEAR(cosine(as, bs), cosine(a, b), 1e-5);
    EXPECT_LE(std::abs(cosine(a, b)), 1.0 + 1e-9);
  }
  const std::vector<float> zero(3, 0.0f), one{1, 0, 0};
  EXPECT_EQ(cosine(zero, one), 0.0);
}

TEST(Psnr, Examples) {
  const RgbImage a(4, 4, 0.0f), b(4, 4, 1.0f), c(4, 4, 0.1f);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(a, b), 0.0, 1e-9);
  EXPECT_NEAR(psnr(a, c), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, RgbImage(4, 5)), InvalidArgument);
}

TEST(InterpolatePath, EndpointsAndCount) {
  const CameraPose p0 = look_at(Vec3(-1, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 60, {64, 64}, 0.5, 6);
  const CameraPose p1 = look_at(Vec3(0, 0.3, -3), Vec3::Zero(), Vec3(0, -1, 0), 64, {64, 64}, 0.5, 6);
  const CameraPose p2 = look_at(Vec3(1, 0, -3), Vec3::Zero(), Vec3(0, -1, 0), 68, {64, 64}, 0.5, 6);
  const auto path = interpolate_path({p0, p1, p2});
  ASSERT_EQ(path.size(), 20u);
  EXPECT_TRUE(path.front().rotation.isApprox(p0.rotation, 1e-9));
  EXPECT_TRUE(path.back().translation.isApprox(p2.translation, 1e-9));
  EXPECT_NEAR(path.back().focal_latent, 68, 1e-9);
  for (const auto& p : path) EXPECT_NO_THROW(p.validate());
  const auto single = interpolate_path({p1}, 5);
  ASSERT_EQ(single.size(), 5u);
  for (const auto& p : single) EXPECT_TRUE(p.translation.isApprox(p1.translation));
  EXPECT_THROW(interpolate_path({}, 3), InvalidArgument);
}

TEST(Report, RoundTrip) {
  TempDir dir;
  const std::vector<EvalReport> entries = {{"directional_score", 0.25, 20, "a red cube", "a blue cube"},
                                           {"psnr", std::numeric_limits<double>::infinity(), 3, "", ""}};
  write_report(dir / "reports" / "eval.jsonl", entries);
  const auto back = read_report(dir / "reports" / "eval.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].metric, "directional_score");
  EXPECT_EQ(back[0].value, 0.25);
  EXPECT_EQ(back[0].n_views, 20);
  EXPECT_EQ(back[0].target_prompt, "a blue cube");
  EXPECT_EQ(back[1].value, std::numeric_limits<double>::infinity());
}

TEST(ToyEmbedder, UnitVectorsAndColorDirection) {
  ToyEmbedder e;
  for (const auto& v : {e.embed_text("a red cube"), e.embed_text("a blue cube"), e.embed_image(RgbImage(3, 3, 0.7f))}) {
    double n = 0;
    for (float x : v) n += double(x) * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
  RgbImage red(4, 4), blue(4, 4);
  for (int p = 0; p < 16; ++p) {
    red.data[std::size_t(p) * 3] = 0.9f;
    blue.data[std::size_t(p) * 3 + 2] = 0.9f;
  }
  EXPECT_GT(directional_score({red}, {blue}, "a red cube", "a blue cube", e), 0.9);
}
