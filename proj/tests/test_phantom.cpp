#include <gtest/gtest.h>

#include <ktsecret/metrics.hpp>
#include <ktsecret/phantom.hpp>

#include "oracles.hpp"

using namespace ktsecret;

namespace {

PhantomSpec small_spec(std::uint64_t seed = 7) {
  PhantomSpec s;
  s.h = s.w = 32;
  s.t = 16;
  s.dt = 60.0 / 16.0;
  s.seed = seed;
  return s;
}

std::vector<double> region_curve(const PhantomTruth& p, int label) {
  const std::size_t hw = p.region_labels.size();
  for (std::size_t px = 0; px < hw; ++px)
    if (static_cast<int>(p.region_labels[px]) == label) {
      std::vector<double> c;
      for (std::size_t t = 0; t < p.ref_images.dim(0); ++t) c.push_back(p.ref_images[t * hw + px].real());
      return c;
    }
  return {};
}

}  // namespace

TEST(GammaVariate, ZeroBeforeArrivalAndPeakAtScale) {
  const std::vector<double> t{0.0, 2.0, 5.0, 13.0, 20.0};
  const auto c = gamma_variate_aif(t, 5.0, 2.0, 4.0, 3.0);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[2], 0.0);
  EXPECT_NEAR(c[3], 3.0, 1e-14);  // t0 + alpha * beta
  EXPECT_LT(c[4], 3.0);
}

TEST(GammaVariate, IntegralMatchesQuadrature) {
  auto f = [](double t) {
    const double tau = t - 5.0;
    return tau <= 0 ? 0.0 : std::pow(tau / 8.0, 2.0) * std::exp(2.0 - tau / 4.0);
  };
  // Oracle sanity: over a long window it reaches e^a (ab)^-a Gamma(a + 1) b^(a + 1) = 2 e^2.
  EXPECT_NEAR(oracle::trapezoid(f, 0.0, 200.0, 400000), 2.0 * std::exp(2.0), 1e-6);
  const double ref = oracle::trapezoid(f, 0.0, 60.0, 200000);
  const auto axis = time_axis(241, 0.25);
  const auto c = gamma_variate_aif(axis, 5.0, 2.0, 4.0, 1.0);
  EXPECT_NEAR(cumulative_trapezoid(c, axis).back(), ref, 1e-3 * ref);
}

TEST(GammaVariate, RejectsBadInput) {
  const std::vector<double> t{0.0, 1.0, 1.0};
  EXPECT_THROW(gamma_variate_aif(t, 0.0, 2.0, 1.0, 1.0), Error);
  const std::vector<double> ok{0.0, 1.0};
  EXPECT_THROW(gamma_variate_aif(ok, 0.0, 0.0, 1.0, 1.0), Error);
  EXPECT_THROW(gamma_variate_aif(ok, 0.0, 2.0, -1.0, 1.0), Error);
}

TEST(Synthesize, DeterministicForSeed) {
  const auto a = synthesize(small_spec(7));
  const auto b = synthesize(small_spec(7));
  EXPECT_EQ(a.ref_images, b.ref_images);
  EXPECT_EQ(a.ktrans_map, b.ktrans_map);
  EXPECT_EQ(a.aif, b.aif);
  const auto c = synthesize(small_spec(8));
  EXPECT_NE(a.ref_images, c.ref_images);
}

TEST(Synthesize, NormalizedJointlyToUnitRange) {
  const auto p = synthesize(small_spec());
  double lo = 1e9, hi = -1e9;
  for (const auto& v : p.ref_images.data()) {
    EXPECT_EQ(v.imag(), 0.0);
    lo = std::min(lo, v.real());
    hi = std::max(hi, v.real());
  }
  EXPECT_DOUBLE_EQ(lo, 0.0);
  EXPECT_DOUBLE_EQ(hi, 1.0);
  for (double a : p.aif) EXPECT_GE(a, 0.0);
}

TEST(Synthesize, KineticsZeroOutsideTissue) {
  const auto p = synthesize(small_spec());
  for (std::size_t px = 0; px < p.region_labels.size(); ++px)
    if (p.region_labels[px] < static_cast<double>(kFirstTissue)) {
      EXPECT_EQ(p.ktrans_map[px], 0.0);
      EXPECT_EQ(p.vp_map[px], 0.0);
    } else {
      EXPECT_GT(p.ktrans_map[px], 0.0);
    }
}

TEST(Synthesize, StaticRegionIsFlat) {
  const auto p = synthesize(small_spec());
  const auto c = region_curve(p, kBody);
  ASSERT_FALSE(c.empty());
  for (double v : c) EXPECT_EQ(v, c[0]);
}

TEST(Synthesize, BloodPoolFollowsAif) {
  const auto p = synthesize(small_spec());
  for (int label : {kLeftVentricle, kRightVentricle}) {
    const auto c = region_curve(p, label);
    ASSERT_FALSE(c.empty());
    for (std::size_t t = 0; t < c.size(); ++t) EXPECT_NEAR((c[t] - c[0]) / p.signal_scale, p.aif[t], 1e-12);
  }
}

TEST(Synthesize, TissueCurvesArePatlakLinear) {
  const auto p = synthesize(small_spec());
  const auto integral = oracle::cumtrapz(p.aif, p.dt / 60.0);
  const std::size_t hw = p.region_labels.size();
  for (std::size_t px = 0; px < hw; ++px) {
    if (p.region_labels[px] < static_cast<double>(kFirstTissue)) continue;
    for (std::size_t t = 0; t < p.aif.size(); ++t) {
      const double conc = (p.ref_images[t * hw + px].real() - p.ref_images[px].real()) / p.signal_scale;
      EXPECT_NEAR(conc, p.ktrans_map[px] * integral[t] + p.vp_map[px] * p.aif[t], 1e-12);
    }
  }
}

TEST(Synthesize, RejectsInvalidSpecs) {
  auto s = small_spec();
  s.t = 4;
  EXPECT_THROW(synthesize(s), Error);
  s = small_spec();
  s.h = 8;
  s.w = 8;
  s.n_tissue_regions = 200;
  EXPECT_THROW(synthesize(s), Error);
  s = small_spec();
  s.ktrans_range = {0.5, 0.1};
  EXPECT_THROW(synthesize(s), Error);
}

TEST(Preprocess, UnchangedAtTargetUpToNormalization) {
  const auto p = synthesize(small_spec());
  const auto out = preprocess(p.ref_images, 16, 32);
  EXPECT_LT(oracle::rel_err(out, p.ref_images), 1e-14);
}

TEST(Preprocess, DoublingFramesKeepsOriginalsAtEvenIndices) {
  const CTensor s = oracle::random_series({30, 4, 4}, 1);
  const auto up = interpolate_frames(s, 60);
  ASSERT_EQ(up.dim(0), 60u);
  for (std::size_t j = 0; j < 30; ++j)
    for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(up[(2 * j) * 16 + p], s[j * 16 + p]);
  for (std::size_t p = 0; p < 16; ++p) EXPECT_LT(std::abs(up[16 + p] - 0.5 * (s[p] + s[16 + p])), 1e-15);
}

TEST(Preprocess, KspacePadPreservesEnergy) {
  const CTensor s = oracle::random_series({2, 32, 32}, 2);
  const auto padded = kspace_pad(s, 64, 64);
  ASSERT_EQ(padded.dim(1), 64u);
  EXPECT_LT(oracle::rel_err(norm2(padded.data()), norm2(s.data())), 1e-10);
}

TEST(Preprocess, NormalizationIsMonotoneAffine) {
  const auto p = synthesize(small_spec());
  CTensor scaled = p.ref_images;
  for (auto& v : scaled.vec()) v = 3.0 * v + 0.5;
  const auto n = normalize_series(scaled);
  EXPECT_LT(oracle::rel_err(n, p.ref_images), 1e-14);
}

TEST(Preprocess, Errors) {
  const CTensor s = oracle::random_series({8, 4, 4}, 1);
  EXPECT_THROW(preprocess(s, 4, 4), Error);
  EXPECT_THROW(preprocess(s, 8, 6), DimensionError);
}

TEST(Corrupt, NoiselessFullMaskRecoversReference) {
  const auto p = synthesize(small_spec());
  const auto mask = make_radial_mask(16, 32, 32, 1.0, 0);
  EXPECT_LT(oracle::rel_err(adjoint(corrupt(p, mask, 0.0, 0)), p.ref_images), 1e-12);
}

TEST(Corrupt, SeededNoiseIsReproducibleAndMasked) {
  const auto p = synthesize(small_spec());
  const auto mask = make_radial_mask(16, 32, 32, 6.0, 1);
  const auto a = corrupt(p, mask, 0.05, 11), b = corrupt(p, mask, 0.05, 11), c = corrupt(p, mask, 0.05, 12);
  EXPECT_EQ(a.samples(), b.samples());
  EXPECT_NE(a.samples(), c.samples());
  for (std::size_t i = 0; i < a.samples().size(); ++i)
    if (mask.bits()[i] == 0.0) {
      EXPECT_EQ(a.samples()[i], cplx(0.0));
    }
}

TEST(Corrupt, ZeroFilledBaselineAtR10) {
  // Regression value from the first run (seed 7 phantom, mask seed 3).
  const auto p = synthesize(small_spec());
  const auto mask = make_radial_mask(16, 32, 32, 10.0, 3);
  const double v = psnr(adjoint(corrupt(p, mask, 0.0, 0)), p.ref_images);
  EXPECT_NEAR(v, 17.2403, 1e-3);
}

TEST(Split, SixtySixteenTwentyFour) {
  const auto s = split_indices(25, 3);
  EXPECT_EQ(s.train.size(), 15u);
  EXPECT_EQ(s.validation.size(), 4u);
  EXPECT_EQ(s.test.size(), 6u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(all[i], i);
}
