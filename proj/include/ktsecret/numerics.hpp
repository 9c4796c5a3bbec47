#ifndef KTSECRET_NUMERICS_HPP
#define KTSECRET_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ktsecret {

using cplx = std::complex<double>;

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline bool is_finite(double v) { return std::isfinite(v); }
inline bool is_finite(const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); }

/// Dense row-major tensor. Constructors reject non-finite values.
template <class T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), T{}) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw DimensionError("tensor data length does not match shape");
    for (const auto& v : data_)
      if (!is_finite(v)) throw Error("tensor constructed with non-finite value");
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](const T& v) { return is_finite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  template <class S>
  Tensor& operator*=(S a) {
    for (auto& v : data_) v *= a;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  template <class S>
  friend Tensor operator*(S s, Tensor a) { return a *= s; }

  bool operator==(const Tensor& o) const = default;

private:
  void check_shape(const Tensor& o) const {
    if (shape_ != o.shape_) throw DimensionError("tensor shape mismatch");
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using CTensor = Tensor<cplx>;
using RTensor = Tensor<double>;

/// Complex T x H x W image series.
using DynamicImage = CTensor;

/// Real part of the Hermitian inner product, the one used for real-valued
/// gradients of complex variables.
inline double inner_re(std::span<const cplx> a, std::span<const cplx> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  return s;
}

inline cplx inner(std::span<const cplx> a, std::span<const cplx> b) {
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline double norm2_sq(std::span<const cplx> a) {
  double s = 0.0;
  for (const auto& v : a) s += std::norm(v);
  return s;
}
inline double norm2(std::span<const cplx> a) { return std::sqrt(norm2_sq(a)); }

inline double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

/// Number of worker threads, capped by KTSECRET_THREADS when set.
inline unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KTSECRET_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

/// Runs fn(i) for i in [0, n). Each index must write disjoint output.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t nt = std::min<std::size_t>(worker_threads(), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += nt) fn(i);
    });
  for (auto& th : pool) th.join();
}

enum class Direction { forward, inverse };

namespace detail {

// In-place radix-2 FFT over n elements with the given stride. No scaling.
inline void fft1d(cplx* x, std::size_t n, std::size_t stride, Direction dir, std::vector<cplx>& buf) {
  buf.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i * stride];
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  const double sign = dir == Direction::forward ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        // recompute periodically to bound drift on long transforms
        if ((k & 31) == 0) w = std::polar(1.0, ang * static_cast<double>(k));
        const cplx u = buf[i + k];
        const cplx v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = buf[i];
}

}  // namespace detail

/// Unitary 2-D DFT of an h x w block, in place.
inline void dft2_inplace(std::span<cplx> x, std::size_t h, std::size_t w, Direction dir) {
  if (!is_pow2(h) || !is_pow2(w)) throw DimensionError("dft2 requires power-of-two dimensions");
  if (x.size() != h * w) throw DimensionError("dft2 block size mismatch");
  std::vector<cplx> buf;
  for (std::size_t r = 0; r < h; ++r) detail::fft1d(x.data() + r * w, w, 1, dir, buf);
  for (std::size_t c = 0; c < w; ++c) detail::fft1d(x.data() + c, h, w, dir, buf);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (auto& v : x) v *= scale;
}

/// One h x w image; both sides must be powers of two.
class Frame {
public:
  Frame(std::size_t h, std::size_t w) : Frame(CTensor({h, w})) {}
  explicit Frame(CTensor data) : data_(std::move(data)) {
    if (data_.ndim() != 2) throw DimensionError("frame must be two-dimensional");
    if (!is_pow2(data_.dim(0)) || !is_pow2(data_.dim(1)))
      throw DimensionError("frame dimensions must be powers of two");
  }
  std::size_t h() const { return data_.dim(0); }
  std::size_t w() const { return data_.dim(1); }
  CTensor& tensor() { return data_; }
  const CTensor& tensor() const { return data_; }

private:
  CTensor data_;
};

inline Frame dft2(const Frame& x, Direction dir) {
  Frame out = x;
  dft2_inplace(out.tensor().data(), x.h(), x.w(), dir);
  return out;
}

/// Applies dft2 to every frame of a T x H x W series.
inline CTensor dft2_frames(CTensor s, Direction dir) {
  if (s.ndim() != 3) throw DimensionError("expected a T x H x W series");
  const std::size_t h = s.dim(1), w = s.dim(2);
  if (!is_pow2(h) || !is_pow2(w)) throw DimensionError("dft2 requires power-of-two dimensions");
  auto all = s.data();
  parallel_for(s.dim(0), [&](std::size_t t) { dft2_inplace(all.subspan(t * h * w, h * w), h, w, dir); });
  return s;
}

namespace detail {
inline void check_series(const CTensor& s) {
  if (s.ndim() != 3) throw DimensionError("expected a T x H x W series");
  if (s.dim(0) < 1 || s.dim(1) < 2 || s.dim(2) < 2) throw DimensionError("series too small for differences");
}
}  // namespace detail

/// Periodic forward differences along H (component 0) and W (component 1).
inline CTensor grad_spatial(const CTensor& s) {
  detail::check_series(s);
  const std::size_t T = s.dim(0), H = s.dim(1), W = s.dim(2);
  CTensor g({2, T, H, W});
  const std::size_t n = T * H * W;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const cplx v = s(t, y, x);
        const std::size_t i = (t * H + y) * W + x;
        g[i] = s(t, (y + 1) % H, x) - v;
        g[n + i] = s(t, y, (x + 1) % W) - v;
      }
  return g;
}

/// Adjoint of grad_spatial (negative divergence).
inline CTensor grad_spatial_adjoint(const CTensor& g) {
  if (g.ndim() != 4 || g.dim(0) != 2) throw DimensionError("expected a 2 x T x H x W gradient field");
  const std::size_t T = g.dim(1), H = g.dim(2), W = g.dim(3);
  const std::size_t n = T * H * W;
  CTensor s({T, H, W});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = (t * H + y) * W + x;
        const std::size_t up = (t * H + (y + H - 1) % H) * W + x;
        const std::size_t left = (t * H + y) * W + (x + W - 1) % W;
        s[i] = (g[up] - g[i]) + (g[n + left] - g[n + i]);
      }
  return s;
}

/// Periodic forward difference along T.
inline CTensor grad_temporal(const CTensor& s) {
  detail::check_series(s);
  const std::size_t T = s.dim(0), hw = s.dim(1) * s.dim(2);
  CTensor g(s.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t tn = (t + 1) % T;
    for (std::size_t p = 0; p < hw; ++p) g[t * hw + p] = s[tn * hw + p] - s[t * hw + p];
  }
  return g;
}

inline CTensor grad_temporal_adjoint(const CTensor& g) {
  detail::check_series(g);
  const std::size_t T = g.dim(0), hw = g.dim(1) * g.dim(2);
  CTensor s(g.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t tp = (t + T - 1) % T;
    for (std::size_t p = 0; p < hw; ++p) s[t * hw + p] = g[tp * hw + p] - g[t * hw + p];
  }
  return s;
}

}  // namespace ktsecret

#endif
