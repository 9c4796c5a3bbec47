#ifndef KTSECRET_KINETICS_HPP
#define KTSECRET_KINETICS_HPP

#include <vector>

#include "numerics.hpp"

namespace ktsecret {

/// Running trapezoidal integral of `y` over `x`; result[0] == 0.
inline std::vector<double> cumulative_trapezoid(std::span<const double> y, std::span<const double> x) {
  if (y.size() != x.size()) throw DimensionError("integrand and axis lengths differ");
  std::vector<double> out(y.size(), 0.0);
  for (std::size_t k = 1; k < y.size(); ++k) out[k] = out[k - 1] + 0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
  return out;
}

/// Frame times in seconds for a uniformly sampled series.
inline std::vector<double> time_axis(std::size_t t, double dt) {
  std::vector<double> ax(t);
  for (std::size_t i = 0; i < t; ++i) ax[i] = static_cast<double>(i) * dt;
  return ax;
}

/// Patlak regressor: integral of the AIF in mM*min, with frame times in seconds.
inline std::vector<double> patlak_integral(std::span<const double> aif, double dt) {
  auto ax = time_axis(aif.size(), dt);
  for (auto& v : ax) v /= 60.0;
  return cumulative_trapezoid(aif, ax);
}

/// Tissue concentration C_t(t) = ktrans * int C_p + vp * C_p(t).
inline std::vector<double> patlak_curve(std::span<const double> aif, double dt, double ktrans, double vp) {
  const auto integral = patlak_integral(aif, dt);
  std::vector<double> c(aif.size());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = ktrans * integral[k] + vp * aif[k];
  return c;
}

struct PatlakMap {
  RTensor ktrans;  // 1/min
  RTensor vp;
  RTensor fit_r2;
  RTensor mask_roi;  // 1 where a fit was made and is valid
};

/// Least-squares Patlak fit per ROI pixel.
///
/// `series` holds concentrations (real part is used). Frames are fitted
/// only where the AIF exceeds 5% of its peak. A singular design leaves the
/// pixel NaN and drops it from `mask_roi`.
inline PatlakMap patlak_fit(const CTensor& series, std::span<const double> aif, double dt, const RTensor& roi) {
  if (series.ndim() != 3) throw DimensionError("expected a T x H x W series");
  const std::size_t T = series.dim(0), H = series.dim(1), W = series.dim(2);
  if (T < 3) throw DimensionError("Patlak fit needs at least three frames");
  if (aif.size() != T) throw DimensionError("AIF length does not match frame count");
  if (roi.shape() != std::vector<std::size_t>{H, W}) throw DimensionError("ROI shape does not match image");
  const double peak = *std::max_element(aif.begin(), aif.end());
  if (!(peak > 0.0)) throw Error("AIF is identically zero");

  const auto integral = patlak_integral(aif, dt);
  std::vector<std::size_t> frames;
  for (std::size_t k = 0; k < T; ++k)
    if (aif[k] > 0.05 * peak) frames.push_back(k);

  double s11 = 0, s12 = 0, s22 = 0;
  for (auto k : frames) {
    s11 += integral[k] * integral[k];
    s12 += integral[k] * aif[k];
    s22 += aif[k] * aif[k];
  }
  const double det = s11 * s22 - s12 * s12;
  const bool singular = frames.size() < 2 || !(std::abs(det) > 1e-12 * s11 * s22);

  PatlakMap out{RTensor({H, W}), RTensor({H, W}), RTensor({H, W}), RTensor({H, W})};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t p = 0; p < H * W; ++p) {
    if (roi[p] == 0.0) continue;
    if (singular) {
      out.ktrans[p] = out.vp[p] = out.fit_r2[p] = nan;
      continue;
    }
    double b1 = 0, b2 = 0, mean = 0;
    for (auto k : frames) {
      const double c = series[k * H * W + p].real();
      b1 += integral[k] * c;
      b2 += aif[k] * c;
      mean += c;
    }
    mean /= static_cast<double>(frames.size());
    const double kt = (s22 * b1 - s12 * b2) / det;
    const double vp = (s11 * b2 - s12 * b1) / det;
    double ss_res = 0, ss_tot = 0;
    for (auto k : frames) {
      const double c = series[k * H * W + p].real();
      const double r = c - kt * integral[k] - vp * aif[k];
      ss_res += r * r;
      ss_tot += (c - mean) * (c - mean);
    }
    double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res <= 1e-24 ? 1.0 : 0.0);
    out.ktrans[p] = kt;
    out.vp[p] = vp;
    out.fit_r2[p] = std::clamp(r2, 0.0, 1.0);
    out.mask_roi[p] = 1.0;
  }
  return out;
}

/// Converts an intensity series to concentration: subtracts the mean
/// magnitude of pre-arrival frames (AIF == 0; frame 0 if there are none)
/// and divides by the intensity-per-mM scale.
inline CTensor intensity_to_concentration(const CTensor& series, std::span<const double> aif, double signal_scale) {
  if (series.ndim() != 3 || series.dim(0) != aif.size()) throw DimensionError("series and AIF lengths differ");
  if (!(signal_scale > 0.0)) throw Error("signal scale must be positive");
  const std::size_t T = series.dim(0), hw = series.dim(1) * series.dim(2);
  std::vector<std::size_t> base;
  for (std::size_t k = 0; k < T; ++k)
    if (aif[k] == 0.0) base.push_back(k);
  if (base.empty()) base.push_back(0);
  CTensor out(series.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double b = 0;
    for (auto k : base) b += std::abs(series[k * hw + p]);
    b /= static_cast<double>(base.size());
    for (std::size_t k = 0; k < T; ++k) out[k * hw + p] = (std::abs(series[k * hw + p]) - b) / signal_scale;
  }
  return out;
}

/// ||estimate - truth|| / ||truth|| over ROI pixels that carry a valid fit.
inline double roi_nrmse(const RTensor& estimate, const RTensor& truth, const RTensor& roi) {
  double num = 0, den = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (roi[p] == 0.0 || !std::isfinite(estimate[p])) continue;
    num += (estimate[p] - truth[p]) * (estimate[p] - truth[p]);
    den += truth[p] * truth[p];
  }
  if (!(den > 0.0)) throw Error("ROI reference is zero");
  return std::sqrt(num / den);
}

}  // namespace ktsecret

#endif
