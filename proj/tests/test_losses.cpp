#include <gtest/gtest.h>

#include <cmath>

#include "ednerf/losses.hpp"
#include "ednerf/refinement.hpp"
#include "support.hpp"

using namespace ednerf;
using namespace ednerf::testing;

namespace {

LatentImage constant(const Latent4& v, ImageSize size) {
  LatentImage z(size);
  for (int p = 0; p < size.pixels(); ++p) std::copy(v.begin(), v.end(), z.pixel(p).begin());
  return z;
}

BinaryMask checkerboard(ImageSize size) {
  BinaryMask m(size.height, size.width);
  for (int i = 0; i < size.height; ++i) {
    for (int j = 0; j < size.width; ++j) m.set(i, j, (i + j) % 2 == 0);
  }
  return m;
}

// Naive oracle: sum over pixels of weight(p) * sum_c (a - b)^2.
double weighted_sq(const LatentImage& a, const LatentImage& b, const std::function<double(int, int)>& weight) {
  double s = 0;
  for (int i = 0; i < a.height(); ++i) {
    for (int j = 0; j < a.width(); ++j) {
      for (int c = 0; c < a.channels(); ++c) {
        const double d = double(a.at(i, j, c)) - b.at(i, j, c);
        s += weight(i, j) * d * d;
      }
    }
  }
  return s;
}

double ratio(const NoiseSchedule& s, int t) { return std::sqrt(s.alpha_bar(t)) / std::sqrt(1.0 - s.alpha_bar(t)); }

const Latent4 kSrc{0.2f, -0.4f, 0.1f, 0.0f};
const Latent4 kTrg{-0.3f, 0.5f, 0.1f, 0.6f};

}  // namespace

TEST(LossRec, Examples) {
  const std::vector<float> ones(12, 1.0f), zeros(12, 0.0f);
  EXPECT_DOUBLE_EQ(loss_rec(ones, zeros), 12.0);
  EXPECT_DOUBLE_EQ(loss_rec(ones, ones), 0.0);
  Rng rng(1);
  const LatentImage a = random_latent({3, 3}, rng), b = random_latent({3, 3}, rng);
  LatentImage twice = b;
  for (std::size_t i = 0; i < twice.numel(); ++i) twice.values()[i] = b.values()[i] + 2 * (a.values()[i] - b.values()[i]);
  EXPECT_NEAR(loss_rec(twice.values(), b.values()), 4 * loss_rec(a.values(), b.values()), 1e-4);
  EXPECT_THROW(loss_rec(ones, std::vector<float>(8)), InvalidArgument);
}

TEST(LossRef, MatchesOracleAndIdentity) {
  Rng rng(2);
  const LatentImage z = random_latent({6, 5}, rng), zr = random_latent({6, 5}, rng);
  const double oracle = weighted_sq(zr, z, [](int, int) { return 1.0; });
  EXPECT_NEAR(loss_ref(zr, z), oracle, 1e-6 * oracle);
  EXPECT_DOUBLE_EQ(loss_ref(zr, z), loss_rec(zr.values(), z.values()));
  const Refinement identity(tiny_refinement_config(8), 1);
  const LatentImage z8 = random_latent({8, 8}, rng);
  EXPECT_EQ(loss_ref(refine(identity, z8), z8), 0.0);
}

TEST(LossRtot, WeightsAndSwitchOff) {
  const ReconWeights w;
  EXPECT_DOUBLE_EQ(w.lambda_rec, 1.0);
  EXPECT_DOUBLE_EQ(w.lambda_ref, 0.1);
  EXPECT_EQ(w.rec_zero_after, 30000);

  Rng rng(3);
  const LatentImage zhat = random_latent({4, 4}, rng), ztil = random_latent({4, 4}, rng), z = random_latent({4, 4}, rng);
  const double lrec = loss_rec(zhat.values(), z.values()), lref = loss_ref(ztil, z);
  EXPECT_NEAR(loss_rtot(zhat, ztil, z, w, 0).total, lrec + 0.1 * lref, 1e-5);
  EXPECT_NEAR(loss_rtot(zhat, ztil, z, w, 30000).total, 0.1 * lref, 1e-5);
  EXPECT_NEAR(loss_rtot(zhat, ztil, z, w, 29999).total, lrec + 0.1 * lref, 1e-5);
  ReconWeights no_ref = w;
  no_ref.lambda_ref = 0.0;
  EXPECT_NEAR(loss_rtot(zhat, ztil, z, no_ref, 0).total, lrec, 1e-5);
  ReconWeights bad = w;
  bad.lambda_rec = -1;
  EXPECT_THROW(loss_rtot(zhat, ztil, z, bad, 0), InvalidArgument);
}

TEST(LossRtot, GradientsAreResiduals) {
  Rng rng(4);
  const LatentImage zhat = random_latent({3, 3}, rng), ztil = random_latent({3, 3}, rng), z = random_latent({3, 3}, rng);
  const ReconLoss l = loss_rtot(zhat, ztil, z, ReconWeights{}, 0);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    EXPECT_NEAR(l.grad_rendered.values()[i], 2.0 * (zhat.values()[i] - z.values()[i]), 1e-5);
    EXPECT_NEAR(l.grad_refined.values()[i], 0.2 * (ztil.values()[i] - z.values()[i]), 1e-5);
  }
}

TEST(LossRtot, NonNegativeAndConvex) {
  Rng rng(5);
  const ReconWeights w;
  for (int trial = 0; trial < 100; ++trial) {
    const LatentImage z = random_latent({3, 3}, rng);
    const LatentImage a1 = random_latent({3, 3}, rng), b1 = random_latent({3, 3}, rng);
    const LatentImage a2 = random_latent({3, 3}, rng), b2 = random_latent({3, 3}, rng);
    LatentImage am(a1.size()), bm(b1.size());
    for (std::size_t i = 0; i < am.numel(); ++i) {
      am.values()[i] = 0.5f * (a1.values()[i] + a2.values()[i]);
      bm.values()[i] = 0.5f * (b1.values()[i] + b2.values()[i]);
    }
    const double l1 = loss_rtot(a1, b1, z, w, 0).total, l2 = loss_rtot(a2, b2, z, w, 0).total;
    const double lm = loss_rtot(am, bm, z, w, 0).total;
    EXPECT_GE(l1, 0.0);
    EXPECT_LE(lm, 0.5 * (l1 + l2) + 1e-5);
  }
}

TEST(GradSds, Examples) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"y", kTrg}, {"zero", Latent4{}}});
  Rng rng(6);
  const ImageSize size{4, 4};
  const LatentImage eps = random_latent(size, rng);
  const LatentImage at_mean = grad_sds(d, s, constant(kTrg, size), {"y"}, 500, eps, 1.0);
  for (float v : at_mean.values()) EXPECT_NEAR(v, 0.0f, 1e-4);
  const LatentImage off = grad_sds(d, s, random_latent(size, rng), {"y"}, 500, eps, 0.0);
  for (float v : off.values()) EXPECT_EQ(v, 0.0f);

  const float c = 0.7f;
  const int t = 250;
  const LatentImage g = grad_sds(d, s, LatentImage(size, kLatentChannels, c), {"zero"}, t, LatentImage(size), 2.0);
  for (float v : g.values()) EXPECT_NEAR(v, 2.0 * ratio(s, t) * c, 1e-4);
}

TEST(GradSds, ZeroMeanAtFixedPoint) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"y", kTrg}});
  Rng rng(7);
  const ImageSize size{8, 8};
  const LatentImage z = constant(kTrg, size);
  double sum = 0;
  const int n = 200;
  for (int k = 0; k < n; ++k) {
    const LatentImage g = grad_sds(d, s, z, {"y"}, 300, sample_noise(size, rng), 1.0);
    for (float v : g.values()) sum += v;
  }
  // exact cancellation for the toy model; only float rounding remains
  EXPECT_NEAR(sum / (n * z.numel()), 0.0, 1e-5);
}

TEST(GradDds, IdenticalInputsGiveZero) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(8);
  const LatentImage z = random_latent({4, 4}, rng), eps = random_latent({4, 4}, rng);
  const LatentImage g = grad_dds_3d(d, s, z, z, {"src"}, {"src"}, 400, eps, 1.0);
  for (float v : g.values()) EXPECT_EQ(v, 0.0f);
}

TEST(GradDds, ClosedForm) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(9);
  const ImageSize size{4, 4};
  const LatentImage zs = random_latent(size, rng), ze = random_latent(size, rng), eps = random_latent(size, rng);
  const int t = 600;
  const double w = 0.5, r = ratio(s, t);
  const LatentImage g = grad_dds_3d(d, s, zs, ze, {"src"}, {"trg"}, t, eps, w);
  for (int p = 0; p < size.pixels(); ++p) {
    for (int c = 0; c < kLatentChannels; ++c) {
      const double expected = w * r * (ze.pixel(p)[c] - zs.pixel(p)[c] - (kTrg[c] - kSrc[c]));
      EXPECT_NEAR(g.pixel(p)[c], expected, 1e-4);
    }
  }
  // z_edit = z_src: constant map -w sqrt(ab) (mu_trg - mu_src) / sqrt(1 - ab)
  const LatentImage same = grad_dds_3d(d, s, zs, zs, {"src"}, {"trg"}, t, eps, w);
  for (int p = 0; p < size.pixels(); ++p) {
    for (int c = 0; c < kLatentChannels; ++c) EXPECT_NEAR(same.pixel(p)[c], -w * r * (kTrg[c] - kSrc[c]), 1e-4);
  }
}

TEST(GradDds, InvariantToNoise) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(10);
  const ImageSize size{4, 4};
  const LatentImage z = random_latent(size, rng), other = random_latent(size, rng);
  const LatentImage ref = grad_dds_3d(d, s, z, z, {"src"}, {"trg"}, 700, random_latent(size, rng), 1.0);
  const LatentImage ref_same_mu = grad_dds_3d(d, s, z, other, {"src"}, {"src"}, 700, random_latent(size, rng), 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const LatentImage eps = random_latent(size, rng, 3.0f);
    const LatentImage g = grad_dds_3d(d, s, z, z, {"src"}, {"trg"}, 700, eps, 1.0);
    const LatentImage h = grad_dds_3d(d, s, z, other, {"src"}, {"src"}, 700, eps, 1.0);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ASSERT_NEAR(g.values()[i], ref.values()[i], 1e-4);
      ASSERT_NEAR(h.values()[i], ref_same_mu.values()[i], 1e-4);
    }
  }
}

TEST(GradMaskedDds, Support) {
  Rng rng(11);
  const ImageSize size{5, 5};
  const LatentImage g = random_latent(size, rng);
  EXPECT_EQ(grad_masked_dds(g, BinaryMask(5, 5, 1)), g);
  const LatentImage none = grad_masked_dds(g, BinaryMask(5, 5, 0));
  for (float v : none.values()) EXPECT_EQ(v, 0.0f);
  const BinaryMask m = checkerboard(size);
  const LatentImage out = grad_masked_dds(g, m);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int c = 0; c < kLatentChannels; ++c) {
        if (m.at(i, j)) {
          EXPECT_EQ(out.at(i, j, c), g.at(i, j, c));
        } else {
          EXPECT_EQ(out.at(i, j, c), 0.0f);
        }
      }
    }
  }
  EXPECT_THROW(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), InvalidArgument);
  EXPECT_THROW(grad_masked_dds(g, BinaryMask(4, 5, 1)), InvalidArgument);
}

TEST(LossMaskedRec, DefaultsFromTheMethod) {
  const EditWeights w;
  EXPECT_DOUBLE_EQ(w.lambda_om, 100.0);
  EXPECT_DOUBLE_EQ(w.lambda_im, 0.01);
}

TEST(LossMaskedRec, MatchesOracle) {
  Rng rng(12);
  const ImageSize size{6, 6};
  const LatentImage zhat = random_latent(size, rng), ztil = random_latent(size, rng), z = random_latent(size, rng);
  const EditWeights ew;
  const ReconWeights rw;
  const double rtot = loss_rtot(zhat, ztil, z, rw, 0).total;
  EXPECT_NEAR(loss_masked_rec(zhat, ztil, z, BinaryMask(6, 6, 1), ew, rw, 0).total, 0.01 * rtot, 1e-6 * rtot);
  EXPECT_NEAR(loss_masked_rec(zhat, ztil, z, BinaryMask(6, 6, 0), ew, rw, 0).total, 100.0 * rtot, 1e-5 * rtot);

  const BinaryMask m = checkerboard(size);
  auto weight = [&](int i, int j) { return m.at(i, j) ? 0.01 : 100.0; };
  const double oracle = weighted_sq(zhat, z, weight) + 0.1 * weighted_sq(ztil, z, weight);
  EXPECT_NEAR(loss_masked_rec(zhat, ztil, z, m, ew, rw, 0).total, oracle, 1e-5 * oracle);
  const double late = 0.1 * weighted_sq(ztil, z, weight);
  EXPECT_NEAR(loss_masked_rec(zhat, ztil, z, m, ew, rw, 30000).total, late, 1e-5 * late);
}

TEST(EditObjective, PoseMismatchRejected) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  const ImageSize size{4, 4};
  const LatentImage z(size), eps(size);
  const BinaryMask m(4, 4, 1);
  EditInputs in{z, z, z, 0, 1, m, {"src"}, {"trg"}, 100, eps};
  EXPECT_THROW(edit_objective(d, s, in), InvalidArgument);
}

TEST(EditObjective, EmptyMaskAtSourceIsStationary) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(13);
  const ImageSize size{4, 4};
  const LatentImage z = random_latent(size, rng), eps = random_latent(size, rng);
  const BinaryMask m(4, 4, 0);
  const EditObjective o = edit_objective(d, s, {z, z, z, 2, 2, m, {"src"}, {"trg"}, 300, eps});
  for (float v : o.grad_refined.values()) EXPECT_EQ(v, 0.0f);
  for (float v : o.grad_rendered.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(o.loss_mrec, 0.0);
}

TEST(EditObjective, ZeroReconWeightsLeaveOnlyMaskedDds) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(14);
  const ImageSize size{4, 4};
  const LatentImage zhat = random_latent(size, rng), ztil = random_latent(size, rng), z = random_latent(size, rng);
  const LatentImage eps = random_latent(size, rng);
  const BinaryMask m = checkerboard(size);
  EditInputs in{zhat, ztil, z, 0, 0, m, {"src"}, {"trg"}, 300, eps};
  in.edit_weights.lambda_im = 0.0;
  in.edit_weights.lambda_om = 0.0;
  const EditObjective o = edit_objective(d, s, in);
  const LatentImage expected = grad_masked_dds(grad_dds_3d(d, s, z, ztil, {"src"}, {"trg"}, 300, eps, 1.0), m);
  EXPECT_EQ(o.grad_refined, expected);
  for (float v : o.grad_rendered.values()) EXPECT_EQ(v, 0.0f);
}

TEST(EditObjective, OutsideMaskOnlyReconstructionActs) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(15);
  const ImageSize size{4, 4};
  const LatentImage z = random_latent(size, rng), eps = random_latent(size, rng);
  const BinaryMask m = checkerboard(size);
  // refined equals source outside the mask, so the only outside gradient would come from DDS
  LatentImage ztil = z;
  for (int p = 0; p < size.pixels(); ++p) {
    if (m[p]) ztil.pixel(p)[0] += 1.0f;
  }
  const EditObjective o = edit_objective(d, s, {z, ztil, z, 0, 0, m, {"src"}, {"trg"}, 300, eps});
  for (int p = 0; p < size.pixels(); ++p) {
    if (m[p]) continue;
    for (int c = 0; c < kLatentChannels; ++c) EXPECT_EQ(o.grad_refined.pixel(p)[c], 0.0f);
  }
}

TEST(EditObjective, OneStepMovesMaskedPixelsTowardTarget) {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  ToyGaussianDenoiser d(s, {{"src", kSrc}, {"trg", kTrg}});
  Rng rng(16);
  const ImageSize size{4, 4};
  const LatentImage z = constant(kSrc, size), eps = random_latent(size, rng);
  const BinaryMask m = checkerboard(size);
  const int t = 500;
  const EditObjective o = edit_objective(d, s, {z, z, z, 0, 0, m, {"src"}, {"trg"}, t, eps});
  const double lr = 0.1;
  LatentImage next = z;
  for (std::size_t i = 0; i < next.numel(); ++i) next.values()[i] -= float(lr * o.grad_refined.values()[i]);
  const double r = ratio(s, t);
  for (int p = 0; p < size.pixels(); ++p) {
    double before = 0, after = 0;
    for (int c = 0; c < kLatentChannels; ++c) {
      before += std::pow(z.pixel(p)[c] - kTrg[c], 2);
      after += std::pow(next.pixel(p)[c] - kTrg[c], 2);
      // closed form: the step is lr * r * (mu_trg - mu_src) inside the mask, nothing outside
      const double step = m[p] ? lr * r * (kTrg[c] - kSrc[c]) : 0.0;
      EXPECT_NEAR(next.pixel(p)[c] - z.pixel(p)[c], step, 1e-5);
    }
    if (m[p]) {
      EXPECT_LT(after, before);
    } else {
      EXPECT_EQ(after, before);
    }
  }
}
