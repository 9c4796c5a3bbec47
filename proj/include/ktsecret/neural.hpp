#ifndef KTSECRET_NEURAL_HPP
#define KTSECRET_NEURAL_HPP

#include <cstdint>
#include <random>
#include <string>

#include "numerics.hpp"

namespace ktsecret {

/// Encoder-decoder with skip connections. Complex frames enter as 2*T real
/// channels (re, im interleaved per frame); the temporal mean of the input is
/// added back to every output frame.
struct NetConfig {
  std::size_t frames = 8;
  std::size_t depth_levels = 2;
  std::size_t base_channels = 16;

  std::size_t in_channels() const { return 2 * frames; }
  std::size_t out_channels() const { return 2 * frames; }
  std::size_t divisor() const { return std::size_t{1} << depth_levels; }
  bool operator==(const NetConfig&) const = default;
};

enum class LayerKind { conv, down, up };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::down: return "down";
    case LayerKind::up: return "up";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t in_ch = 0, out_ch = 0, kernel = 0;
  bool relu = false;
  std::size_t offset = 0;  // start of this layer's weights in the flat vector

  std::size_t weight_count() const { return out_ch * in_ch * kernel * kernel; }
  std::size_t param_count() const { return kind == LayerKind::conv ? weight_count() + out_ch : 0; }
  bool operator==(const LayerSpec&) const = default;
};

/// Layer sequence for a configuration, with flat-vector offsets assigned.
inline std::vector<LayerSpec> build_layers(const NetConfig& cfg) {
  if (cfg.frames < 1 || cfg.depth_levels < 1 || cfg.base_channels < 1) throw Error("invalid network configuration");
  std::vector<LayerSpec> L;
  auto conv = [&](std::size_t in, std::size_t out, std::size_t k, bool relu) {
    L.push_back({LayerKind::conv, in, out, k, relu, 0});
  };
  std::vector<std::size_t> ch(cfg.depth_levels + 1);
  for (std::size_t l = 0; l <= cfg.depth_levels; ++l) ch[l] = cfg.base_channels << l;

  std::size_t cur = cfg.in_channels();
  for (std::size_t l = 0; l < cfg.depth_levels; ++l) {
    conv(cur, ch[l], 3, true);
    conv(ch[l], ch[l], 3, true);
    L.push_back({LayerKind::down, ch[l], ch[l], 0, false, 0});
    cur = ch[l];
  }
  conv(cur, ch[cfg.depth_levels], 3, true);
  conv(ch[cfg.depth_levels], ch[cfg.depth_levels], 3, true);
  for (std::size_t l = cfg.depth_levels; l-- > 0;) {
    L.push_back({LayerKind::up, ch[l + 1], ch[l + 1] + ch[l], 0, false, 0});
    conv(ch[l + 1] + ch[l], ch[l], 3, true);
    conv(ch[l], ch[l], 3, false);
  }
  conv(ch[0], cfg.out_channels(), 1, false);

  std::size_t off = 0;
  for (auto& s : L) {
    s.offset = off;
    off += s.param_count();
  }
  return L;
}

class NetworkParams {
public:
  NetworkParams() = default;
  NetworkParams(NetConfig cfg, std::vector<double> flat) : cfg_(cfg), layers_(build_layers(cfg)), flat_(std::move(flat)) {
    if (flat_.size() != count()) throw DimensionError("parameter vector length does not match architecture");
    for (double v : flat_)
      if (!std::isfinite(v)) throw Error("non-finite network parameter");
  }

  /// He-uniform weights, zero biases.
  static NetworkParams init(const NetConfig& cfg, std::uint64_t seed) {
    NetworkParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    for (const auto& l : p.layers_) {
      if (l.kind != LayerKind::conv) continue;
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in_ch * l.kernel * l.kernel));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (std::size_t i = 0; i < l.weight_count(); ++i) p.flat_[l.offset + i] = u(rng);
    }
    return p;
  }

  static NetworkParams zeros(const NetConfig& cfg) {
    NetworkParams p;
    p.cfg_ = cfg;
    p.layers_ = build_layers(cfg);
    p.flat_.assign(p.count(), 0.0);
    return p;
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }
  std::size_t size() const { return flat_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

  bool operator==(const NetworkParams&) const = default;

private:
  NetConfig cfg_;
  std::vector<LayerSpec> layers_;
  std::vector<double> flat_;
};

/// Real multichannel activation, C x H x W.
struct Activation {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;
  Activation() = default;
  Activation(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double* plane(std::size_t ch) { return v.data() + ch * h * w; }
  const double* plane(std::size_t ch) const { return v.data() + ch * h * w; }
};

namespace nn {

inline Activation conv_forward(const Activation& in, const LayerSpec& l, std::span<const double> theta) {
  const std::size_t H = in.h, W = in.w, k = l.kernel;
  const long pad = static_cast<long>(k / 2);
  Activation out(l.out_ch, H, W);
  const double* wt = theta.data() + l.offset;
  const double* bias = wt + l.weight_count();
  parallel_for(l.out_ch, [&](std::size_t o) {
    double* op = out.plane(o);
    std::fill(op, op + H * W, bias[o]);
    for (std::size_t i = 0; i < l.in_ch; ++i) {
      const double* ip = in.plane(i);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wt[((o * l.in_ch + i) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, static_cast<long>(H) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
          for (long y = y0; y < y1; ++y) {
            double* orow = op + y * W;
            const double* irow = ip + (y + dy) * static_cast<long>(W) + dx;
            for (long x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
    }
  });
  return out;
}

// Accumulates parameter gradients into grad_theta and returns dL/d(input).
inline Activation conv_backward(const Activation& in, const Activation& g, const LayerSpec& l,
                                std::span<const double> theta, std::span<double> grad_theta, bool need_input_grad) {
  const std::size_t H = in.h, W = in.w, k = l.kernel;
  const long pad = static_cast<long>(k / 2);
  const double* wt = theta.data() + l.offset;
  double* gw = grad_theta.data() + l.offset;
  double* gb = gw + l.weight_count();

  parallel_for(l.out_ch, [&](std::size_t o) {
    const double* gp = g.plane(o);
    double sb = 0;
    for (std::size_t p = 0; p < H * W; ++p) sb += gp[p];
    gb[o] += sb;
    for (std::size_t i = 0; i < l.in_ch; ++i) {
      const double* ip = in.plane(i);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, static_cast<long>(H) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
          double s = 0;
          for (long y = y0; y < y1; ++y) {
            const double* grow = gp + y * W;
            const double* irow = ip + (y + dy) * static_cast<long>(W) + dx;
            for (long x = x0; x < x1; ++x) s += grow[x] * irow[x];
          }
          gw[((o * l.in_ch + i) * k + ky) * k + kx] += s;
        }
    }
  });

  Activation gin;
  if (!need_input_grad) return gin;
  gin = Activation(l.in_ch, H, W);
  parallel_for(l.in_ch, [&](std::size_t i) {
    double* gi = gin.plane(i);
    for (std::size_t o = 0; o < l.out_ch; ++o) {
      const double* gp = g.plane(o);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wt[((o * l.in_ch + i) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, static_cast<long>(H) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
          for (long y = y0; y < y1; ++y) {
            const double* grow = gp + y * W;
            double* irow = gi + (y + dy) * static_cast<long>(W) + dx;
            for (long x = x0; x < x1; ++x) irow[x] += wv * grow[x];
          }
        }
    }
  });
  return gin;
}

inline Activation avg_pool(const Activation& in) {
  Activation out(in.c, in.h / 2, in.w / 2);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) {
        const double* p = in.plane(c);
        out.plane(c)[y * out.w + x] =
            0.25 * (p[2 * y * in.w + 2 * x] + p[2 * y * in.w + 2 * x + 1] + p[(2 * y + 1) * in.w + 2 * x] +
                    p[(2 * y + 1) * in.w + 2 * x + 1]);
      }
  return out;
}

inline Activation avg_pool_backward(const Activation& g) {
  Activation out(g.c, g.h * 2, g.w * 2);
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out.plane(c)[y * out.w + x] = 0.25 * g.plane(c)[(y / 2) * g.w + x / 2];
  return out;
}

// Nearest-neighbour 2x upsample of `low`, followed by the channels of `skip`.
inline Activation upsample_concat(const Activation& low, const Activation& skip) {
  Activation out(low.c + skip.c, skip.h, skip.w);
  for (std::size_t c = 0; c < low.c; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out.plane(c)[y * out.w + x] = low.plane(c)[(y / 2) * low.w + x / 2];
  std::copy(skip.v.begin(), skip.v.end(), out.v.begin() + static_cast<long>(low.c * out.h * out.w));
  return out;
}

}  // namespace nn

/// Intermediate values kept by net_forward for net_backward.
struct NetCache {
  NetConfig cfg;
  std::size_t param_count = 0;
  std::vector<Activation> inputs;   // input to each layer
  std::vector<Activation> outputs;  // output of each layer (after ReLU)
  std::size_t frames = 0, h = 0, w = 0;
};

struct NetOutput {
  DynamicImage image;
  NetCache cache;
};

inline Activation pack_channels(const DynamicImage& s) {
  const std::size_t T = s.dim(0), hw = s.dim(1) * s.dim(2);
  Activation a(2 * T, s.dim(1), s.dim(2));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < hw; ++p) {
      a.v[(2 * t) * hw + p] = s[t * hw + p].real();
      a.v[(2 * t + 1) * hw + p] = s[t * hw + p].imag();
    }
  return a;
}

inline DynamicImage unpack_channels(const Activation& a) {
  const std::size_t T = a.c / 2, hw = a.h * a.w;
  DynamicImage s({T, a.h, a.w});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < hw; ++p) s[t * hw + p] = cplx(a.v[(2 * t) * hw + p], a.v[(2 * t + 1) * hw + p]);
  return s;
}

/// Temporal mean of a series, broadcast back to every frame.
inline DynamicImage temporal_average(const DynamicImage& s) {
  const std::size_t T = s.dim(0), hw = s.dim(1) * s.dim(2);
  DynamicImage out(s.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    cplx m{};
    for (std::size_t t = 0; t < T; ++t) m += s[t * hw + p];
    m /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) out[t * hw + p] = m;
  }
  return out;
}

inline NetOutput net_forward(const DynamicImage& s_u, const NetworkParams& theta) {
  const NetConfig& cfg = theta.config();
  if (s_u.ndim() != 3 || s_u.dim(0) != cfg.frames) throw DimensionError("input frame count does not match network");
  if (s_u.dim(1) % cfg.divisor() != 0 || s_u.dim(2) % cfg.divisor() != 0)
    throw DimensionError("image size must be divisible by 2^depth_levels");

  NetOutput res;
  NetCache& c = res.cache;
  c.cfg = cfg;
  c.param_count = theta.size();
  c.frames = s_u.dim(0);
  c.h = s_u.dim(1);
  c.w = s_u.dim(2);
  const auto& layers = theta.layers();
  c.inputs.reserve(layers.size());
  c.outputs.reserve(layers.size());

  Activation act = pack_channels(s_u);
  std::vector<const Activation*> skips;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    c.inputs.push_back(std::move(act));
    const Activation& in = c.inputs.back();
    switch (l.kind) {
      case LayerKind::conv:
        act = nn::conv_forward(in, l, theta.flat());
        if (l.relu)
          for (auto& v : act.v) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::down:
        skips.push_back(&in);
        act = nn::avg_pool(in);
        break;
      case LayerKind::up:
        act = nn::upsample_concat(in, *skips.back());
        skips.pop_back();
        break;
    }
    c.outputs.push_back(act);
  }
  res.image = unpack_channels(act);
  res.image += temporal_average(s_u);
  return res;
}

struct NetGradients {
  std::vector<double> theta;  // same layout as NetworkParams::flat
  DynamicImage input;
};

/// Reverse-mode pass through the cached forward computation. `grad_out`
/// carries dL/dRe in its real part and dL/dIm in its imaginary part; the
/// returned input gradient uses the same packing.
inline NetGradients net_backward(const DynamicImage& grad_out, const NetCache& cache, const NetworkParams& theta,
                                 bool need_input_grad = true) {
  if (cache.param_count != theta.size() || !(cache.cfg == theta.config()) ||
      cache.inputs.size() != theta.layers().size())
    throw Error("network cache does not match parameters");
  if (grad_out.shape() != std::vector<std::size_t>{cache.frames, cache.h, cache.w})
    throw DimensionError("output gradient shape does not match forward pass");

  NetGradients res;
  res.theta.assign(theta.size(), 0.0);
  const auto& layers = theta.layers();

  Activation g = pack_channels(grad_out);
  std::vector<Activation> skip_grads;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    const Activation& in = cache.inputs[li];
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.relu) {
          const auto& out = cache.outputs[li].v;
          for (std::size_t i = 0; i < g.v.size(); ++i)
            if (!(out[i] > 0.0)) g.v[i] = 0.0;
        }
        const bool need = li > 0 || need_input_grad;
        g = nn::conv_backward(in, g, l, theta.flat(), res.theta, need);
        break;
      }
      case LayerKind::up: {
        const std::size_t low_c = in.c, hw = g.h * g.w;
        Activation skip(g.c - low_c, g.h, g.w);
        std::copy(g.v.begin() + static_cast<long>(low_c * hw), g.v.end(), skip.v.begin());
        Activation low(low_c, in.h, in.w);
        for (std::size_t ch = 0; ch < low_c; ++ch)
          for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t x = 0; x < g.w; ++x) low.plane(ch)[(y / 2) * low.w + x / 2] += g.plane(ch)[y * g.w + x];
        skip_grads.push_back(std::move(skip));
        g = std::move(low);
        break;
      }
      case LayerKind::down: {
        Activation up = nn::avg_pool_backward(g);
        const Activation& sg = skip_grads.back();
        for (std::size_t i = 0; i < up.v.size(); ++i) up.v[i] += sg.v[i];
        skip_grads.pop_back();
        g = std::move(up);
        break;
      }
    }
  }

  if (need_input_grad) {
    res.input = unpack_channels(g);
    res.input += temporal_average(grad_out);
  }
  return res;
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(std::span<double> theta, std::span<const double> grad, AdamState& state,
                      const AdamOptions& opt = {}) {
  if (grad.size() != theta.size()) throw DimensionError("gradient and parameter lengths differ");
  if (state.m.empty()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
  }
  if (state.m.size() != theta.size()) throw DimensionError("optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mh = state.m[i] / c1, vh = state.v[i] / c2;
    theta[i] -= opt.lr * mh / (std::sqrt(vh) + opt.eps);
  }
}

}  // namespace ktsecret

#endif
