#ifndef KTSECRET_PHANTOM_HPP
#define KTSECRET_PHANTOM_HPP

#include <array>
#include <cstdint>
#include <random>

#include "encoding.hpp"
#include "kinetics.hpp"

namespace ktsecret {

struct PhantomSpec {
  std::size_t h = 32, w = 32, t = 8;
  double dt = 7.5;  // seconds per frame
  std::size_t n_tissue_regions = 4;
  std::array<double, 2> ktrans_range{0.1, 0.6};  // 1/min
  std::array<double, 2> vp_range{0.02, 0.15};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (t < 8) throw Error("phantom needs at least 8 frames");
    if (!is_pow2(h) || !is_pow2(w)) throw DimensionError("phantom dimensions must be powers of two");
    if (!(dt > 0.0)) throw Error("frame interval must be positive");
    if (n_tissue_regions < 1) throw Error("phantom needs at least one tissue region");
    for (const auto& r : {ktrans_range, vp_range})
      if (!(r[0] > 0.0 && r[1] >= r[0])) throw Error("parameter ranges must be positive and ordered");
    if (!(noise_sigma >= 0.0)) throw Error("noise sigma must be >= 0");
  }
};

/// Region labels written into PhantomTruth::region_labels.
enum RegionLabel : int { kAir = 0, kBody = 1, kLeftVentricle = 2, kRightVentricle = 3, kFirstTissue = 4 };

struct PhantomTruth {
  DynamicImage ref_images;  // noiseless, normalized to [0,1] over the series
  RTensor ktrans_map;       // 1/min, zero outside tissue
  RTensor vp_map;
  std::vector<double> aif;  // mM per frame
  RTensor region_labels;
  double dt = 1.0;
  double signal_scale = 1.0;  // normalized intensity per mM

  RTensor tissue_roi() const {
    RTensor roi(region_labels.shape());
    for (std::size_t p = 0; p < roi.size(); ++p) roi[p] = region_labels[p] >= static_cast<double>(kFirstTissue) ? 1.0 : 0.0;
    return roi;
  }
};

/// Gamma-variate AIF normalized so that its peak equals `scale` at t0 + alpha*beta.
inline std::vector<double> gamma_variate_aif(std::span<const double> t_axis, double t0, double alpha, double beta,
                                             double scale) {
  if (!(alpha > 0.0 && beta > 0.0 && scale > 0.0)) throw Error("gamma variate parameters must be positive");
  for (std::size_t i = 1; i < t_axis.size(); ++i)
    if (!(t_axis[i] > t_axis[i - 1])) throw Error("time axis must be strictly increasing");
  std::vector<double> c(t_axis.size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double tau = t_axis[i] - t0;
    if (tau <= 0.0) continue;
    c[i] = scale * std::pow(tau / (alpha * beta), alpha) * std::exp(alpha - tau / beta);
  }
  return c;
}

namespace detail {

struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
  bool inside(double h, double w) const { return cy - ry >= 0 && cy + ry <= h - 1 && cx - rx >= 0 && cx + rx <= w - 1; }
};

}  // namespace detail

/// Builds a short-axis-like phantom: body, two blood pools carrying the AIF,
/// and a myocardial ring split into angular sectors with Patlak kinetics.
inline PhantomTruth synthesize(const PhantomSpec& spec) {
  spec.validate();
  const double H = static_cast<double>(spec.h), W = static_cast<double>(spec.w);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto jitter = [&](double scale) { return (2.0 * unit(rng) - 1.0) * scale; };

  const double s = std::min(H, W);
  const detail::Ellipse body{H / 2 + jitter(0.01 * H), W / 2 + jitter(0.01 * W), 0.40 * H, 0.44 * W};
  const double lv_cy = 0.5 * H + jitter(0.02 * H), lv_cx = 0.58 * W + jitter(0.02 * W);
  const double lv_r = (0.11 + jitter(0.01)) * s;
  const double myo_r = lv_r + (0.07 + jitter(0.005)) * s;
  const detail::Ellipse lv{lv_cy, lv_cx, lv_r, lv_r};
  const detail::Ellipse myo{lv_cy, lv_cx, myo_r, myo_r};
  const detail::Ellipse rv{lv_cy + jitter(0.02 * H), 0.29 * W + jitter(0.01 * W), (0.14 + jitter(0.01)) * H,
                           (0.07 + jitter(0.005)) * W};
  for (const auto& e : {body, myo, rv})
    if (!e.inside(H, W)) throw Error("phantom regions overflow the image");

  const std::size_t n_reg = spec.n_tissue_regions;
  std::vector<double> kt(n_reg), vp(n_reg);
  for (std::size_t r = 0; r < n_reg; ++r) {
    kt[r] = spec.ktrans_range[0] + unit(rng) * (spec.ktrans_range[1] - spec.ktrans_range[0]);
    vp[r] = spec.vp_range[0] + unit(rng) * (spec.vp_range[1] - spec.vp_range[0]);
  }
  const double phase0 = unit(rng) * 2.0 * std::numbers::pi;

  PhantomTruth out;
  out.dt = spec.dt;
  out.region_labels = RTensor({spec.h, spec.w});
  out.ktrans_map = RTensor({spec.h, spec.w});
  out.vp_map = RTensor({spec.h, spec.w});
  std::vector<std::size_t> region_pixels(n_reg, 0);
  for (std::size_t y = 0; y < spec.h; ++y)
    for (std::size_t x = 0; x < spec.w; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      int label = kAir;
      if (body.contains(fy, fx)) label = kBody;
      if (rv.contains(fy, fx)) label = kRightVentricle;
      if (myo.contains(fy, fx)) {
        double ang = std::atan2(fy - lv_cy, fx - lv_cx) + phase0;
        ang = std::fmod(ang + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
        const auto sector = std::min(n_reg - 1, static_cast<std::size_t>(ang / (2.0 * std::numbers::pi) * n_reg));
        label = kFirstTissue + static_cast<int>(sector);
        out.ktrans_map(y, x) = kt[sector];
        out.vp_map(y, x) = vp[sector];
        ++region_pixels[sector];
      }
      if (lv.contains(fy, fx)) {
        label = kLeftVentricle;
        out.ktrans_map(y, x) = out.vp_map(y, x) = 0.0;
      }
      out.region_labels(y, x) = label;
    }
  for (std::size_t r = 0; r < n_reg; ++r) {
    std::size_t n = 0;
    for (double l : out.region_labels.data()) n += l == static_cast<double>(kFirstTissue + r);
    if (n == 0) throw Error("phantom regions overflow the image: empty tissue region");
  }

  const double duration = static_cast<double>(spec.t) * spec.dt;
  const auto taxis = time_axis(spec.t, spec.dt);
  out.aif = gamma_variate_aif(taxis, 0.08 * duration + jitter(0.01 * duration), 2.0,
                              duration / 14.0 * (1.0 + jitter(0.1)), 4.0 + jitter(0.5));

  const double kappa = 0.12;  // intensity per mM before normalization
  const std::array<double, 5> baseline{0.0, 0.30, 0.25, 0.25, 0.35};
  std::vector<std::vector<double>> tissue(n_reg);
  for (std::size_t r = 0; r < n_reg; ++r) tissue[r] = patlak_curve(out.aif, spec.dt, kt[r], vp[r]);

  DynamicImage img({spec.t, spec.h, spec.w});
  const std::size_t hw = spec.h * spec.w;
  for (std::size_t k = 0; k < spec.t; ++k)
    for (std::size_t p = 0; p < hw; ++p) {
      const int label = static_cast<int>(out.region_labels[p]);
      double v;
      if (label >= kFirstTissue)
        v = baseline[4] + kappa * tissue[static_cast<std::size_t>(label - kFirstTissue)][k];
      else if (label == kLeftVentricle || label == kRightVentricle)
        v = baseline[static_cast<std::size_t>(label)] + kappa * out.aif[k];
      else
        v = baseline[static_cast<std::size_t>(label)];
      img[k * hw + p] = v;
    }

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : img.data()) {
    lo = std::min(lo, v.real());
    hi = std::max(hi, v.real());
  }
  for (auto& v : img.vec()) v = (v.real() - lo) / (hi - lo);
  out.signal_scale = kappa / (hi - lo);
  out.ref_images = std::move(img);
  return out;
}

/// Maps min to 0 and max to 1 over the whole series (magnitudes; phase kept).
inline DynamicImage normalize_series(DynamicImage s) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (const auto& v : s.data()) {
    lo = std::min(lo, std::abs(v));
    hi = std::max(hi, std::abs(v));
  }
  if (!(hi > lo)) {
    for (auto& v : s.vec()) v = 0.0;
    return s;
  }
  for (auto& v : s.vec()) {
    const double m = std::abs(v);
    v = m > 0.0 ? v * ((m - lo) / (hi - lo) / m) : cplx(0.0);
  }
  return s;
}

/// Linear interpolation in time; source frame j lands at index j*target_t/T.
inline DynamicImage interpolate_frames(const DynamicImage& s, std::size_t target_t) {
  const std::size_t T = s.dim(0), hw = s.dim(1) * s.dim(2);
  if (target_t < T) throw Error("temporal downsampling is not supported");
  DynamicImage out({target_t, s.dim(1), s.dim(2)});
  const double ratio = static_cast<double>(T) / static_cast<double>(target_t);
  for (std::size_t k = 0; k < target_t; ++k) {
    const double src = std::min(static_cast<double>(k) * ratio, static_cast<double>(T - 1));
    const auto j = static_cast<std::size_t>(std::floor(src));
    const double f = src - static_cast<double>(j);
    const std::size_t j1 = std::min(j + 1, T - 1);
    for (std::size_t p = 0; p < hw; ++p) out[k * hw + p] = (1.0 - f) * s[j * hw + p] + f * s[j1 * hw + p];
  }
  return out;
}

/// Zero-pads each frame's spectrum to target_h x target_w (energy preserving).
inline DynamicImage kspace_pad(const DynamicImage& s, std::size_t target_h, std::size_t target_w) {
  const std::size_t T = s.dim(0), h = s.dim(1), w = s.dim(2);
  if (!is_pow2(target_h) || !is_pow2(target_w)) throw DimensionError("target dimensions must be powers of two");
  if (target_h < h || target_w < w) throw Error("k-space padding cannot shrink the image");
  const CTensor k = dft2_frames(s, Direction::forward);
  CTensor padded({T, target_h, target_w});
  auto map = [](std::size_t i, std::size_t n, std::size_t big) { return i < n / 2 ? i : big - n + i; };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        padded(t, map(y, h, target_h), map(x, w, target_w)) = k(t, y, x);
  return dft2_frames(std::move(padded), Direction::inverse);
}

/// Temporal interpolation, k-space zero padding, then series-wide [0,1] normalization.
inline DynamicImage preprocess(const DynamicImage& series, std::size_t target_t, std::size_t target_hw) {
  if (series.ndim() != 3) throw DimensionError("expected a T x H x W series");
  if (!is_pow2(target_hw)) throw DimensionError("target size must be a power of two");
  DynamicImage s = interpolate_frames(series, target_t);
  if (s.dim(1) != target_hw || s.dim(2) != target_hw) s = kspace_pad(s, target_hw, target_hw);
  return normalize_series(std::move(s));
}

/// Retrospective undersampling of the reference series with complex Gaussian
/// noise (std noise_sigma * max |DC row|) on sampled entries only.
inline KtData corrupt(const PhantomTruth& truth, const SamplingMask& mask, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw Error("noise sigma must be >= 0");
  CTensor k = dft2_frames(truth.ref_images, Direction::forward);
  if (k.shape() != mask.bits().shape()) throw DimensionError("phantom and mask shapes differ");
  if (noise_sigma > 0.0) {
    const std::size_t T = k.dim(0), W = k.dim(2);
    double dc = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t x = 0; x < W; ++x) dc = std::max(dc, std::abs(k(t, 0, x)));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise_sigma * dc / std::sqrt(2.0));
    const auto bits = mask.bits().data();
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double re = n(rng), im = n(rng);
      if (bits[i] != 0.0) k[i] += cplx(re, im);
    }
  }
  return KtData(std::move(k), mask);
}

/// Deterministic 60/16/24 train/validation/test split of `n` indices.
struct Split {
  std::vector<std::size_t> train, validation, test;
};
inline Split split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(0.60 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::lround(0.16 * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
  s.validation.assign(idx.begin() + static_cast<long>(n_train),
                      idx.begin() + static_cast<long>(std::min(n, n_train + n_val)));
  s.test.assign(idx.begin() + static_cast<long>(std::min(n, n_train + n_val)), idx.end());
  return s;
}

}  // namespace ktsecret

#endif
