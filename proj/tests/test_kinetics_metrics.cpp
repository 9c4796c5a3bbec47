#include <gtest/gtest.h>

#include <ktsecret/metrics.hpp>
#include <ktsecret/phantom.hpp>

#include "oracles.hpp"

using namespace ktsecret;

namespace {

std::vector<double> test_aif(std::size_t t, double dt) {
  return gamma_variate_aif(time_axis(t, dt), 0.1 * dt * static_cast<double>(t), 2.0,
                           dt * static_cast<double>(t) / 14.0, 4.0);
}

// Brute-force SSIM: explicit 2-D window with mirrored indices, one pixel at a time.
double ssim_bruteforce(const std::vector<double>& a, const std::vector<double>& b, long h, long w, int win,
                       double sigma, double range) {
  const int r = win / 2;
  auto mirror = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  double wsum = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) wsum += std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double k = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) / wsum;
          const long i = mirror(y + dy, h) * w + mirror(x + dx, w);
          ma += k * a[i];
          mb += k * b[i];
          saa += k * a[i] * a[i];
          sbb += k * b[i] * b[i];
          sab += k * a[i] * b[i];
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / static_cast<double>(h * w);
}

}  // namespace

TEST(Trapezoid, MatchesIndependentSum) {
  const auto y = oracle::random_vector(17, 1);
  const auto ref = oracle::cumtrapz(y, 0.5);
  const auto got = cumulative_trapezoid(y, time_axis(17, 0.5));
  for (std::size_t k = 0; k < y.size(); ++k) EXPECT_NEAR(got[k], ref[k], 1e-14);
}

TEST(Trapezoid, PatlakIntegralUsesMinutes) {
  const auto aif = test_aif(16, 3.75);
  const auto ref = oracle::cumtrapz(aif, 3.75 / 60.0);
  const auto got = patlak_integral(aif, 3.75);
  for (std::size_t k = 0; k < aif.size(); ++k) EXPECT_NEAR(got[k], ref[k], 1e-14);
}

TEST(PatlakFit, RecoversExactCurves) {
  const std::size_t T = 16;
  const double dt = 3.75;
  const auto aif = test_aif(T, dt);
  const auto integral = oracle::cumtrapz(aif, dt / 60.0);
  CTensor series({T, 2, 3});
  RTensor roi({2, 3});
  const double kt[] = {0.1, 0.25, 0.4, 0.55, 0.6, 0.33};
  const double vp[] = {0.02, 0.05, 0.1, 0.15, 0.07, 0.12};
  for (std::size_t p = 0; p < 6; ++p) {
    roi[p] = 1.0;
    for (std::size_t k = 0; k < T; ++k) series[k * 6 + p] = kt[p] * integral[k] + vp[p] * aif[k];
  }
  const auto fit = patlak_fit(series, aif, dt, roi);
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_NEAR(fit.ktrans[p], kt[p], 1e-8);
    EXPECT_NEAR(fit.vp[p], vp[p], 1e-8);
    EXPECT_NEAR(fit.fit_r2[p], 1.0, 1e-12);
    EXPECT_EQ(fit.mask_roi[p], 1.0);
  }
}

TEST(PatlakFit, PhantomRoundTrip) {
  PhantomSpec spec;
  spec.t = 16;
  spec.dt = 3.75;
  spec.seed = 21;
  const auto p = synthesize(spec);
  const auto conc = intensity_to_concentration(p.ref_images, p.aif, p.signal_scale);
  const auto fit = patlak_fit(conc, p.aif, p.dt, p.tissue_roi());
  const auto roi = p.tissue_roi();
  for (std::size_t px = 0; px < roi.size(); ++px) {
    if (roi[px] == 0.0) continue;
    EXPECT_NEAR(fit.ktrans[px], p.ktrans_map[px], 1e-8);
    EXPECT_NEAR(fit.vp[px], p.vp_map[px], 1e-8);
  }
  EXPECT_LT(roi_nrmse(fit.ktrans, p.ktrans_map, roi), 1e-8);
}

TEST(PatlakFit, SingularDesignIsExcluded) {
  // Only one frame clears the 5% threshold.
  std::vector<double> aif(8, 0.0);
  aif[7] = 1.0;
  CTensor series({8, 1, 2});
  RTensor roi({1, 2});
  roi[0] = roi[1] = 1.0;
  const auto fit = patlak_fit(series, aif, 1.0, roi);
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_TRUE(std::isnan(fit.ktrans[p]));
    EXPECT_EQ(fit.mask_roi[p], 0.0);
  }
}

TEST(PatlakFit, Errors) {
  const auto aif = test_aif(8, 7.5);
  RTensor roi({2, 2});
  EXPECT_THROW(patlak_fit(CTensor({7, 2, 2}), aif, 7.5, roi), DimensionError);
  EXPECT_THROW(patlak_fit(CTensor({8, 2, 2}), std::vector<double>(8, 0.0), 7.5, roi), Error);
  EXPECT_THROW(patlak_fit(CTensor({8, 2, 2}), aif, 7.5, RTensor({3, 2})), DimensionError);
}

TEST(Concentration, SubtractsPreArrivalBaseline) {
  std::vector<double> aif{0.0, 0.0, 1.0, 2.0};
  CTensor s({4, 1, 1});
  s[0] = 0.30;
  s[1] = 0.32;
  s[2] = 0.5;
  s[3] = 0.7;
  const auto c = intensity_to_concentration(s, aif, 0.1);
  EXPECT_NEAR(c[0].real(), -0.1, 1e-12);
  EXPECT_NEAR(c[1].real(), 0.1, 1e-12);
  EXPECT_NEAR(c[3].real(), 3.9, 1e-12);
}

TEST(RoiNrmse, MatchesHandComputation) {
  RTensor est({1, 3}, {1.0, 2.5, 100.0}), truth({1, 3}, {1.0, 2.0, 3.0}), roi({1, 3}, {1.0, 1.0, 0.0});
  EXPECT_NEAR(roi_nrmse(est, truth, roi), 0.5 / std::sqrt(5.0), 1e-15);
}

TEST(Psnr, KnownOffset) {
  CTensor ref({2, 4, 4}), x({2, 4, 4});
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = 1.0;
    x[i] = 1.1;
  }
  EXPECT_NEAR(psnr(x, ref), 20.0, 1e-10);
  for (double v : psnr_frames(x, ref)) EXPECT_NEAR(v, 20.0, 1e-10);
  EXPECT_TRUE(std::isinf(psnr(ref, ref)));
}

TEST(Psnr, UsesMagnitudes) {
  const CTensor ref = oracle::random_series({2, 4, 4}, 1);
  CTensor rotated = ref;
  for (auto& v : rotated.vec()) v *= std::polar(1.0, 0.7);
  EXPECT_GT(psnr(rotated, ref), 250.0);
  EXPECT_NEAR(nrmse(rotated, ref), 0.0, 1e-15);
}

TEST(Nrmse, MatchesDirectFormula) {
  const CTensor ref = oracle::random_series({3, 4, 4}, 2);
  const CTensor x = oracle::random_series({3, 4, 4}, 3);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += std::pow(std::abs(x[i]) - std::abs(ref[i]), 2);
    den += std::norm(ref[i]);
  }
  EXPECT_NEAR(nrmse(x, ref), std::sqrt(num / den), 1e-14);
}

TEST(Ssim, IdenticalIsOne) {
  const CTensor ref = oracle::random_series({2, 16, 16}, 4);
  EXPECT_NEAR(ssim(ref, ref), 1.0, 1e-12);
}

TEST(Ssim, MatchesBruteForce) {
  const CTensor a = oracle::random_series({1, 12, 10}, 5);
  const CTensor b = oracle::random_series({1, 12, 10}, 6);
  std::vector<double> ma(a.size()), mb(b.size());
  double range = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[i] = std::abs(a[i]);
    mb[i] = std::abs(b[i]);
    range = std::max(range, mb[i]);
  }
  EXPECT_NEAR(ssim(a, b), ssim_bruteforce(ma, mb, 12, 10, 11, 1.5, range), 1e-12);
  SsimOptions o;
  o.window = 7;
  o.sigma = 1.0;
  o.range = 2.0;
  EXPECT_NEAR(ssim(a, b, o), ssim_bruteforce(ma, mb, 12, 10, 7, 1.0, 2.0), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  const CTensor a = oracle::random_series({2, 16, 16}, 7);
  const CTensor b = oracle::random_series({2, 16, 16}, 8);
  SsimOptions o;
  o.range = 4.0;
  const double ab = ssim(a, b, o), ba = ssim(b, a, o);
  EXPECT_NEAR(ab, ba, 1e-12);
  EXPECT_LT(ab, 1.0);
  EXPECT_GT(ab, -1.0);
}

TEST(Evaluate, ReportIsConsistent) {
  const CTensor ref = oracle::random_series({3, 8, 8}, 9);
  const CTensor x = oracle::random_series({3, 8, 8}, 10);
  const auto r = evaluate(x, ref);
  ASSERT_EQ(r.psnr.size(), 3u);
  EXPECT_NEAR(r.psnr_mean, (r.psnr[0] + r.psnr[1] + r.psnr[2]) / 3.0, 1e-12);
  EXPECT_NEAR(r.psnr_series, psnr(x, ref), 1e-12);
  EXPECT_NEAR(r.ssim_mean, ssim(x, ref), 1e-12);
}

TEST(Metrics, ShapeMismatch) {
  EXPECT_THROW(psnr(CTensor({2, 4, 4}), CTensor({2, 4, 8})), DimensionError);
  EXPECT_THROW(ssim(CTensor({4, 4}), CTensor({4, 4})), DimensionError);
}
