#ifndef KTSECRET_METRICS_HPP
#define KTSECRET_METRICS_HPP

#include <optional>
#include <vector>

#include "numerics.hpp"

namespace ktsecret {

// All metrics compare magnitude images.

namespace detail {

inline void check_pair(const CTensor& x, const CTensor& ref) {
  if (x.shape() != ref.shape()) throw DimensionError("metric inputs differ in shape");
  if (ref.ndim() != 3) throw DimensionError("metrics expect T x H x W series");
}

inline double max_abs(const CTensor& a) {
  double m = 0;
  for (const auto& v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double sq_err(const CTensor& x, const CTensor& ref, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double d = std::abs(x[i]) - std::abs(ref[i]);
    s += d * d;
  }
  return s;
}

inline double psnr_from(double peak, double mse) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace detail

/// 10 log10(peak^2 / MSE), peak = max |ref| over the series. +inf when identical.
inline double psnr(const CTensor& x, const CTensor& ref) {
  detail::check_pair(x, ref);
  const double peak = detail::max_abs(ref);
  if (!(peak > 0.0)) throw Error("PSNR reference has zero peak");
  return detail::psnr_from(peak, detail::sq_err(x, ref, 0, x.size()) / static_cast<double>(x.size()));
}

/// Per-frame PSNR using the series peak of `ref`.
inline std::vector<double> psnr_frames(const CTensor& x, const CTensor& ref) {
  detail::check_pair(x, ref);
  const double peak = detail::max_abs(ref);
  if (!(peak > 0.0)) throw Error("PSNR reference has zero peak");
  const std::size_t hw = ref.dim(1) * ref.dim(2);
  std::vector<double> out(ref.dim(0));
  for (std::size_t t = 0; t < out.size(); ++t)
    out[t] = detail::psnr_from(peak, detail::sq_err(x, ref, t * hw, (t + 1) * hw) / static_cast<double>(hw));
  return out;
}

/// ||x - ref|| / ||ref|| over the whole series.
inline double nrmse(const CTensor& x, const CTensor& ref) {
  detail::check_pair(x, ref);
  double den = 0;
  for (const auto& v : ref.data()) den += std::norm(v);
  if (!(den > 0.0)) throw Error("NRMSE reference is zero");
  return std::sqrt(detail::sq_err(x, ref, 0, x.size()) / den);
}

inline std::vector<double> nrmse_frames(const CTensor& x, const CTensor& ref) {
  detail::check_pair(x, ref);
  const std::size_t hw = ref.dim(1) * ref.dim(2);
  std::vector<double> out(ref.dim(0));
  for (std::size_t t = 0; t < out.size(); ++t) {
    double den = 0;
    for (std::size_t i = t * hw; i < (t + 1) * hw; ++i) den += std::norm(ref[i]);
    out[t] = den > 0.0 ? std::sqrt(detail::sq_err(x, ref, t * hw, (t + 1) * hw) / den)
                       : std::numeric_limits<double>::infinity();
  }
  return out;
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range; defaults to max |ref| over the series.
  std::optional<double> range;
};

namespace detail {

// Separable Gaussian filter with mirrored borders; output has the input size.
inline std::vector<double> gaussian_filter(std::span<const double> img, std::size_t h, std::size_t w,
                                           const std::vector<double>& kernel) {
  const long r = static_cast<long>(kernel.size() / 2);
  auto mirror = [](long i, long n) {
    if (n == 1) return 0L;
    const long period = 2 * n;
    i = ((i % period) + period) % period;
    return i < n ? i : period - 1 - i;
  };
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (long k = -r; k <= r; ++k)
        s += kernel[k + r] * img[y * w + mirror(static_cast<long>(x) + k, static_cast<long>(w))];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (long k = -r; k <= r; ++k)
        s += kernel[k + r] * tmp[mirror(static_cast<long>(y) + k, static_cast<long>(h)) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

inline double ssim_frame(std::span<const double> a, std::span<const double> b, std::size_t h, std::size_t w,
                         const SsimOptions& o, double range) {
  std::vector<double> kernel(static_cast<std::size_t>(o.window));
  const int r = o.window / 2;
  double ksum = 0;
  for (int i = -r; i <= r; ++i) ksum += kernel[i + r] = std::exp(-0.5 * i * i / (o.sigma * o.sigma));
  for (auto& k : kernel) k /= ksum;

  std::vector<double> aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = gaussian_filter(a, h, w, kernel);
  const auto mu_b = gaussian_filter(b, h, w, kernel);
  const auto e_aa = gaussian_filter(aa, h, w, kernel);
  const auto e_bb = gaussian_filter(bb, h, w, kernel);
  const auto e_ab = gaussian_filter(ab, h, w, kernel);
  const double c1 = (o.k1 * range) * (o.k1 * range);
  const double c2 = (o.k2 * range) * (o.k2 * range);
  double total = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(h * w);
}

}  // namespace detail

/// Per-frame SSIM (Gaussian window, mirrored borders, mean over pixels).
inline std::vector<double> ssim_frames(const CTensor& x, const CTensor& ref, const SsimOptions& opts = {}) {
  detail::check_pair(x, ref);
  const double range = opts.range.value_or(detail::max_abs(ref));
  if (!(range > 0.0)) throw Error("SSIM dynamic range must be positive");
  const std::size_t T = ref.dim(0), H = ref.dim(1), W = ref.dim(2);
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> a(H * W), b(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      a[i] = std::abs(x[t * H * W + i]);
      b[i] = std::abs(ref[t * H * W + i]);
    }
    out[t] = detail::ssim_frame(a, b, H, W, opts, range);
  }
  return out;
}

/// Mean of per-frame SSIM.
inline double ssim(const CTensor& x, const CTensor& ref, const SsimOptions& opts = {}) {
  const auto f = ssim_frames(x, ref, opts);
  return std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

struct MetricsReport {
  std::vector<double> psnr, ssim, nrmse;  // per frame
  double psnr_mean = 0, ssim_mean = 0, nrmse_mean = 0;
  double psnr_series = 0, nrmse_series = 0;
};

inline MetricsReport evaluate(const CTensor& x, const CTensor& ref) {
  MetricsReport r;
  r.psnr = psnr_frames(x, ref);
  r.ssim = ssim_frames(x, ref);
  r.nrmse = nrmse_frames(x, ref);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.psnr_mean = mean(r.psnr);
  r.ssim_mean = mean(r.ssim);
  r.nrmse_mean = mean(r.nrmse);
  r.psnr_series = psnr(x, ref);
  r.nrmse_series = nrmse(x, ref);
  return r;
}

}  // namespace ktsecret

#endif
