#ifndef KTSECRET_ENCODING_HPP
#define KTSECRET_ENCODING_HPP

#include <cstdint>
#include <random>

#include "numerics.hpp"

namespace ktsecret {

inline constexpr double kGoldenAngleDeg = 111.246117975;

/// Binary (k,t) sampling pattern stored in unshifted DFT layout (DC at [t,0,0]).
class SamplingMask {
public:
  SamplingMask() = default;
  SamplingMask(RTensor bits, double accel_nominal) : bits_(std::move(bits)), accel_(accel_nominal) {
    if (bits_.ndim() != 3) throw DimensionError("sampling mask must be T x H x W");
    for (double b : bits_.data())
      if (b != 0.0 && b != 1.0) throw Error("sampling mask entries must be 0 or 1");
  }

  std::size_t t() const { return bits_.dim(0); }
  std::size_t h() const { return bits_.dim(1); }
  std::size_t w() const { return bits_.dim(2); }
  const RTensor& bits() const { return bits_; }
  double accel_nominal() const { return accel_; }

  std::size_t ones() const {
    std::size_t n = 0;
    for (double b : bits_.data()) n += b != 0.0;
    return n;
  }
  double achieved_accel() const {
    const auto n = ones();
    return n == 0 ? std::numeric_limits<double>::infinity()
                  : static_cast<double>(bits_.size()) / static_cast<double>(n);
  }

  /// x := x * mask, elementwise; x must match the mask shape.
  void apply(std::span<cplx> x) const {
    const auto b = bits_.data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (b[i] == 0.0) x[i] = 0.0;
  }

private:
  RTensor bits_;
  double accel_ = 1.0;
};

/// Undersampled (k,t)-space data; zero wherever the mask is zero.
class KtData {
public:
  KtData() = default;
  KtData(CTensor samples, SamplingMask mask) : samples_(std::move(samples)), mask_(std::move(mask)) {
    if (samples_.shape() != mask_.bits().shape()) throw DimensionError("k-space data and mask shapes differ");
    mask_.apply(samples_.data());
  }
  const CTensor& samples() const { return samples_; }
  const SamplingMask& mask() const { return mask_; }

private:
  CTensor samples_;
  SamplingMask mask_;
};

namespace detail {

inline std::size_t wrap_index(long centered, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((centered % m) + m) % m);
}

// Rasterizes one diametral spoke through DC: one pixel per step along the major axis.
inline void rasterize_spoke(std::span<double> frame, std::size_t h, std::size_t w, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  if (std::abs(c) >= std::abs(s)) {
    const long half = static_cast<long>(w / 2);
    for (long kx = -half; kx < half; ++kx) {
      const double ky = static_cast<double>(kx) * s / c;
      const long iy = static_cast<long>(std::floor(ky + 0.5));
      if (iy < -static_cast<long>(h / 2) || iy >= static_cast<long>(h / 2)) continue;
      frame[wrap_index(iy, h) * w + wrap_index(kx, w)] = 1.0;
    }
  } else {
    const long half = static_cast<long>(h / 2);
    for (long ky = -half; ky < half; ++ky) {
      const double kx = static_cast<double>(ky) * c / s;
      const long ix = static_cast<long>(std::floor(kx + 0.5));
      if (ix < -static_cast<long>(w / 2) || ix >= static_cast<long>(w / 2)) continue;
      frame[wrap_index(ky, h) * w + wrap_index(ix, w)] = 1.0;
    }
  }
}

inline RTensor radial_bits(std::size_t t, std::size_t h, std::size_t w, std::size_t spokes, double offset_deg) {
  RTensor bits({t, h, w});
  auto all = bits.data();
  for (std::size_t f = 0; f < t; ++f) {
    auto frame = all.subspan(f * h * w, h * w);
    const double base = offset_deg + static_cast<double>(f) * kGoldenAngleDeg;
    for (std::size_t j = 0; j < spokes; ++j) {
      const double deg = base + 180.0 * static_cast<double>(j) / static_cast<double>(spokes);
      rasterize_spoke(frame, h, w, deg * std::numbers::pi / 180.0);
    }
    frame[0] = 1.0;
  }
  return bits;
}

}  // namespace detail

/// Nominal spoke count per frame for acceleration `accel`.
inline long nominal_spokes(std::size_t h, std::size_t w, double accel) {
  return std::lround(static_cast<double>(std::max(h, w)) * std::numbers::pi / 2.0 / accel);
}

/// Golden-angle radial (k,t) mask rasterized on the Cartesian grid.
///
/// The nominal spoke count caps the search; the count actually used is the
/// one whose rasterized mask has achieved acceleration closest to `accel`.
inline SamplingMask make_radial_mask(std::size_t t, std::size_t h, std::size_t w, double accel, std::uint64_t seed) {
  if (!(accel >= 1.0)) throw Error("acceleration must be >= 1");
  if (t < 1 || !is_pow2(h) || !is_pow2(w)) throw DimensionError("mask dimensions must be powers of two");
  const long cap = nominal_spokes(h, w, accel);
  if (cap < 1) throw Error("acceleration unachievable");
  if (accel == 1.0) {
    RTensor full({t, h, w});
    std::fill(full.vec().begin(), full.vec().end(), 1.0);
    return SamplingMask(std::move(full), 1.0);
  }

  std::mt19937_64 rng(seed);
  const double offset = std::uniform_real_distribution<double>(0.0, 180.0)(rng);

  RTensor best;
  double best_err = std::numeric_limits<double>::infinity();
  for (long n = 1; n <= cap; ++n) {
    RTensor bits = detail::radial_bits(t, h, w, static_cast<std::size_t>(n), offset);
    const SamplingMask m(bits, accel);
    const double err = std::abs(m.achieved_accel() - accel);
    if (err < best_err) {
      best_err = err;
      best = std::move(bits);
    }
    if (m.achieved_accel() < accel) break;
  }
  return SamplingMask(std::move(best), accel);
}

/// E s = A F s, frame by frame.
inline KtData encode(const DynamicImage& s, const SamplingMask& mask) {
  if (s.shape() != mask.bits().shape()) throw DimensionError("image and mask shapes differ");
  return KtData(dft2_frames(s, Direction::forward), mask);
}

/// E^H d; for measured data this is the zero-filled reconstruction.
inline DynamicImage adjoint(const KtData& d) {
  CTensor k = d.samples();
  d.mask().apply(k.data());
  return dft2_frames(std::move(k), Direction::inverse);
}

/// (E^H E + lambda I) s.
inline DynamicImage normal_op(const DynamicImage& s, const SamplingMask& mask, double lambda) {
  if (!(lambda >= 0.0)) throw Error("normal_op requires lambda >= 0");
  DynamicImage out = adjoint(encode(s, mask));
  if (lambda != 0.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * s[i];
  return out;
}

}  // namespace ktsecret

#endif
