#ifndef KTSECRET_LEARN_RECON_HPP
#define KTSECRET_LEARN_RECON_HPP

#include <chrono>
#include <concepts>
#include <ranges>

#include "encoding.hpp"
#include "neural.hpp"

namespace ktsecret {

// ---------------------------------------------------------------------------
// Data consistency: (E^H E + lambda I) s = E^H d_u + lambda z
// ---------------------------------------------------------------------------

struct CgOptions {
  std::size_t max_iters = 10;
  double tol = 1e-6;
};

struct CgResult {
  DynamicImage image;
  double residual = 0;  // ||N s - rhs|| / ||rhs||
  std::size_t iterations = 0;
  bool converged = false;
};

/// Conjugate gradient on the normal operator of `mask` with weight `lambda`.
inline CgResult cg_normal_solve(const DynamicImage& rhs, const SamplingMask& mask, double lambda,
                                const CgOptions& opt) {
  CgResult res{DynamicImage(rhs.shape()), 0.0, 0, false};
  DynamicImage& x = res.image;
  const double rhs_norm = norm2(rhs.data());
  if (rhs_norm == 0.0) {
    res.converged = true;
    return res;
  }
  DynamicImage r = rhs;
  DynamicImage p = r;
  double rr = norm2_sq(r.data());
  res.residual = std::sqrt(rr) / rhs_norm;
  DynamicImage best = x;
  double best_res = res.residual;
  for (std::size_t it = 0; it < opt.max_iters && res.residual >= opt.tol; ++it) {
    const DynamicImage ap = normal_op(p, mask, lambda);
    const double alpha = rr / inner_re(p.data(), ap.data());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_new = norm2_sq(r.data());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + (rr_new / rr) * p[i];
    rr = rr_new;
    res.iterations = it + 1;
    // the recurrence drifts; report the true residual
    const DynamicImage nx = normal_op(x, mask, lambda);
    double e = 0;
    for (std::size_t i = 0; i < nx.size(); ++i) e += std::norm(nx[i] - rhs[i]);
    res.residual = std::sqrt(e) / rhs_norm;
    if (res.residual < best_res) {
      best_res = res.residual;
      best = x;
    }
  }
  res.converged = best_res < opt.tol;
  res.residual = best_res;
  res.image = std::move(best);
  return res;
}

/// s = (E^H E + lambda I)^{-1} (E^H d_u + lambda z).
inline CgResult dc_solve(const DynamicImage& z, const KtData& d, double lambda, const CgOptions& opt = {}) {
  if (!(lambda > 0.0)) throw Error("data-consistency weight must be positive");
  if (z.shape() != d.samples().shape()) throw DimensionError("denoised image and data shapes differ");
  DynamicImage rhs = adjoint(d);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += lambda * z[i];
  return cg_normal_solve(rhs, d.mask(), lambda, opt);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Measured data only; the self-supervised path accepts nothing else.
struct SelfSupervisedSample {
  KtData data;
};

/// Measured data plus a fully sampled target, for supervised training.
struct SupervisedSample {
  KtData data;
  DynamicImage target;
};

template <class S>
concept MeasuredSample = requires(const S& s) {
  { s.data } -> std::convertible_to<const KtData&>;
};

template <class S>
concept TargetedSample = MeasuredSample<S> && requires(const S& s) {
  { s.target } -> std::convertible_to<const DynamicImage&>;
};

struct TrainLog {
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // empty entries (NaN) when no validation set
  std::vector<double> seconds;
  std::size_t best_epoch = 0;
};

struct DivergenceError : Error {
  using Error::Error;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (batch == 0 || batch >= n) return {order};
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(std::min(n, i + batch)));
  return out;
}

inline NetConfig net_for(NetConfig net, const KtData& d) {
  net.frames = d.samples().dim(0);
  return net;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Self-supervised reconstruction: min_theta || d_u - A F C(s_u | theta) ||^2
// ---------------------------------------------------------------------------

struct SecretConfig {
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::size_t batch = 0;  // 0: full batch
  std::uint64_t seed = 0;
  NetConfig net{};

  void validate() const {
    if (epochs < 1 || !(lr > 0.0)) throw Error("epochs and learning rate must be positive");
  }
};

struct LossGrad {
  double loss = 0;
  std::vector<double> grad;
};

/// Loss on sampled entries and its parameter gradient, for one measurement.
inline LossGrad secret_loss_grad(const KtData& d, const NetworkParams& theta, bool want_grad = true) {
  const DynamicImage s_u = adjoint(d);
  NetOutput fwd = net_forward(s_u, theta);
  CTensor r = encode(fwd.image, d.mask()).samples();
  r -= d.samples();
  LossGrad out;
  out.loss = norm2_sq(r.data());
  if (!want_grad) return out;
  DynamicImage g = adjoint(KtData(std::move(r), d.mask()));
  g *= 2.0;
  out.grad = net_backward(g, fwd.cache, theta, false).theta;
  return out;
}

struct TrainResult {
  NetworkParams params;
  TrainLog log;
};

/// Trains the reconstruction network from undersampled data alone.
///
/// With a non-empty validation range, the returned parameters are those of
/// the epoch with the lowest validation loss.
template <std::ranges::random_access_range Train, std::ranges::random_access_range Val = std::vector<SelfSupervisedSample>>
  requires MeasuredSample<std::ranges::range_value_t<Train>> && MeasuredSample<std::ranges::range_value_t<Val>>
TrainResult secret_train(const Train& train, const SecretConfig& cfg, const Val& validation = {}) {
  cfg.validate();
  const std::size_t n = std::ranges::size(train);
  if (n == 0) throw Error("training set is empty");
  const NetConfig net = detail::net_for(cfg.net, train[0].data);

  TrainResult res{NetworkParams::init(net, cfg.seed), {}};
  NetworkParams& theta = res.params;
  NetworkParams best = theta;
  double best_val = std::numeric_limits<double>::infinity();
  AdamState adam;
  const AdamOptions opt{cfg.lr};
  std::mt19937_64 rng(cfg.seed ^ 0x5ec7e7ULL);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    for (const auto& batch : detail::epoch_batches(n, cfg.batch, rng)) {
      std::vector<double> grad(theta.size(), 0.0);
      for (auto i : batch) {
        const auto lg = secret_loss_grad(train[i].data, theta);
        epoch_loss += lg.loss;
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += lg.grad[j];
      }
      if (!std::isfinite(epoch_loss)) throw DivergenceError("self-supervised training diverged (loss is not finite)");
      adam_step(theta.flat(), grad, adam, opt);
    }
    double val = std::numeric_limits<double>::quiet_NaN();
    if (std::ranges::size(validation) > 0) {
      val = 0;
      for (const auto& s : validation) val += secret_loss_grad(s.data, theta, false).loss;
      if (val < best_val) {
        best_val = val;
        best = theta;
        res.log.best_epoch = epoch;
      }
    } else {
      res.log.best_epoch = epoch;
    }
    res.log.train_loss.push_back(epoch_loss);
    res.log.val_loss.push_back(val);
    res.log.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  if (std::ranges::size(validation) > 0) theta = std::move(best);
  return res;
}

struct InferResult {
  DynamicImage image;
  double seconds = 0;
};

/// Zero-filled image through the trained network, single pass.
inline InferResult secret_infer(const KtData& d, const NetworkParams& theta) {
  const auto t0 = std::chrono::steady_clock::now();
  if (d.samples().ndim() != 3 || d.samples().dim(0) != theta.config().frames)
    throw DimensionError("data frame count does not match the network");
  InferResult r{net_forward(adjoint(d), theta).image, 0};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Supervised unrolled reconstruction (shared-weight denoiser + CG data consistency)
// ---------------------------------------------------------------------------

struct ModlConfig {
  std::size_t K = 1;
  double lambda = 0.05;
  std::size_t cg_iters = 10;
  double cg_tol = 1e-6;
  std::size_t epochs = 20;
  std::size_t batch = 0;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  NetConfig net{};

  CgOptions cg() const { return {cg_iters, cg_tol}; }
  void validate() const {
    if (K < 1) throw Error("MoDL needs at least one unrolled iteration");
    if (!(lambda > 0.0)) throw Error("MoDL lambda must be positive");
    if (epochs < 1 || !(lr > 0.0)) throw Error("epochs and learning rate must be positive");
  }
};

struct ModlTrace {
  std::vector<NetCache> caches;
  std::vector<double> dc_residuals;
  bool converged = true;
};

struct ModlOutput {
  DynamicImage image;
  ModlTrace trace;
};

/// s_0 = s_u; z_k = C(s_k); s_{k+1} = DC(z_k). Returns s_K.
inline ModlOutput modl_forward(const DynamicImage& s_u, const KtData& d, const NetworkParams& theta,
                               const ModlConfig& cfg) {
  cfg.validate();
  ModlOutput out{s_u, {}};
  for (std::size_t k = 0; k < cfg.K; ++k) {
    NetOutput z = net_forward(out.image, theta);
    CgResult dc = dc_solve(z.image, d, cfg.lambda, cfg.cg());
    out.trace.caches.push_back(std::move(z.cache));
    out.trace.dc_residuals.push_back(dc.residual);
    out.trace.converged = out.trace.converged && dc.converged;
    out.image = std::move(dc.image);
  }
  return out;
}

/// Parameter gradient of a loss on s_K given dL/ds_K. The data-consistency
/// block is differentiated implicitly: dL/dz = lambda (E^H E + lambda I)^{-1} dL/ds.
inline std::vector<double> modl_backward(const DynamicImage& grad_out, const ModlTrace& trace, const KtData& d,
                                         const NetworkParams& theta, const ModlConfig& cfg) {
  std::vector<double> grad(theta.size(), 0.0);
  DynamicImage g = grad_out;
  for (std::size_t k = trace.caches.size(); k-- > 0;) {
    CgResult gz = cg_normal_solve(g, d.mask(), cfg.lambda, cfg.cg());
    gz.image *= cfg.lambda;
    NetGradients ng = net_backward(gz.image, trace.caches[k], theta, k > 0);
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += ng.theta[j];
    if (k > 0) g = std::move(ng.input);
  }
  return grad;
}

/// sum || s_K - t ||^2 for one sample and its parameter gradient.
inline LossGrad modl_loss_grad(const KtData& d, const DynamicImage& target, const NetworkParams& theta,
                               const ModlConfig& cfg, bool want_grad = true) {
  ModlOutput fwd = modl_forward(adjoint(d), d, theta, cfg);
  DynamicImage diff = fwd.image;
  diff -= target;
  LossGrad out;
  out.loss = norm2_sq(diff.data());
  if (!want_grad) return out;
  diff *= 2.0;
  out.grad = modl_backward(diff, fwd.trace, d, theta, cfg);
  return out;
}

template <std::ranges::random_access_range Train, std::ranges::random_access_range Val = std::vector<SupervisedSample>>
  requires TargetedSample<std::ranges::range_value_t<Train>> && TargetedSample<std::ranges::range_value_t<Val>>
TrainResult modl_train(const Train& train, const ModlConfig& cfg, const Val& validation = {}) {
  cfg.validate();
  const std::size_t n = std::ranges::size(train);
  if (n == 0) throw Error("training set is empty");
  const NetConfig net = detail::net_for(cfg.net, train[0].data);

  TrainResult res{NetworkParams::init(net, cfg.seed), {}};
  NetworkParams& theta = res.params;
  NetworkParams best = theta;
  double best_val = std::numeric_limits<double>::infinity();
  AdamState adam;
  const AdamOptions opt{cfg.lr};
  std::mt19937_64 rng(cfg.seed ^ 0x30d1ULL);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    for (const auto& batch : detail::epoch_batches(n, cfg.batch, rng)) {
      std::vector<double> grad(theta.size(), 0.0);
      for (auto i : batch) {
        const auto lg = modl_loss_grad(train[i].data, train[i].target, theta, cfg);
        epoch_loss += lg.loss;
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += lg.grad[j];
      }
      if (!std::isfinite(epoch_loss)) throw DivergenceError("supervised training diverged (loss is not finite)");
      adam_step(theta.flat(), grad, adam, opt);
    }
    double val = std::numeric_limits<double>::quiet_NaN();
    if (std::ranges::size(validation) > 0) {
      val = 0;
      for (const auto& s : validation) val += modl_loss_grad(s.data, s.target, theta, cfg, false).loss;
      if (val < best_val) {
        best_val = val;
        best = theta;
        res.log.best_epoch = epoch;
      }
    } else {
      res.log.best_epoch = epoch;
    }
    res.log.train_loss.push_back(epoch_loss);
    res.log.val_loss.push_back(val);
    res.log.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  if (std::ranges::size(validation) > 0) theta = std::move(best);
  return res;
}

inline InferResult modl_infer(const KtData& d, const NetworkParams& theta, const ModlConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  InferResult r{modl_forward(adjoint(d), d, theta, cfg).image, 0};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace ktsecret

#endif
