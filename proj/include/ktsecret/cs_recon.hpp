#ifndef KTSECRET_CS_RECON_HPP
#define KTSECRET_CS_RECON_HPP

#include <functional>

#include "encoding.hpp"

namespace ktsecret {

struct CsConfig {
  double lambda1 = 1e-3;  // spatial TV weight
  double lambda2 = 5e-3;  // temporal TV weight
  std::size_t max_iters = 100;
  double smooth_eps = 1e-6;
  double tol = 1e-6;  // relative objective change

  void validate() const {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) throw Error("TV weights must be >= 0");
    if (!(smooth_eps > 0.0)) throw Error("smoothing epsilon must be positive");
    if (!(tol >= 0.0)) throw Error("tolerance must be >= 0");
  }
};

struct ConvergenceLog {
  std::vector<double> objective;  // entry 0 is the initial objective
  std::size_t iterations = 0;
  bool line_search_failed = false;
};

namespace detail {

inline double smoothed_l1(std::span<const cplx> g, double eps) {
  double s = 0;
  for (const auto& v : g) s += std::sqrt(std::norm(v) + eps);
  return s;
}

// g / sqrt(|g|^2 + eps), elementwise
inline CTensor smoothed_l1_grad(CTensor g, double eps) {
  for (auto& v : g.vec()) v /= std::sqrt(std::norm(v) + eps);
  return g;
}

}  // namespace detail

/// ||d_u - E s||^2 + lambda1 * sum sqrt(|D_s s|^2 + eps) + lambda2 * sum sqrt(|D_t s|^2 + eps).
inline double cs_objective(const DynamicImage& s, const KtData& d, const CsConfig& cfg) {
  cfg.validate();
  const KtData es = encode(s, d.mask());
  double data = 0;
  for (std::size_t i = 0; i < es.samples().size(); ++i) data += std::norm(d.samples()[i] - es.samples()[i]);
  double reg = 0;
  if (cfg.lambda1 != 0.0) reg += cfg.lambda1 * detail::smoothed_l1(grad_spatial(s).data(), cfg.smooth_eps);
  if (cfg.lambda2 != 0.0) reg += cfg.lambda2 * detail::smoothed_l1(grad_temporal(s).data(), cfg.smooth_eps);
  return data + reg;
}

/// Gradient with respect to (Re s, Im s), packed as a complex tensor.
inline DynamicImage cs_gradient(const DynamicImage& s, const KtData& d, const CsConfig& cfg) {
  CTensor r = encode(s, d.mask()).samples();
  r -= d.samples();
  DynamicImage g = adjoint(KtData(std::move(r), d.mask()));
  g *= 2.0;
  if (cfg.lambda1 != 0.0) {
    auto gs = grad_spatial_adjoint(detail::smoothed_l1_grad(grad_spatial(s), cfg.smooth_eps));
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.lambda1 * gs[i];
  }
  if (cfg.lambda2 != 0.0) {
    auto gt = grad_temporal_adjoint(detail::smoothed_l1_grad(grad_temporal(s), cfg.smooth_eps));
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.lambda2 * gt[i];
  }
  return g;
}

using CsObserver = std::function<void(std::size_t iteration, double objective)>;

struct CsResult {
  DynamicImage image;
  ConvergenceLog log;
};

/// Fletcher-Reeves nonlinear CG with Armijo backtracking (c = 1e-4, shrink 0.5),
/// started from the zero-filled image.
inline CsResult cs_reconstruct(const KtData& d, const CsConfig& cfg, const CsObserver& observer = {}) {
  cfg.validate();
  constexpr double armijo_c = 1e-4;
  constexpr double shrink = 0.5;
  constexpr int max_backtracks = 50;

  CsResult res{adjoint(d), {}};
  DynamicImage& x = res.image;
  const SamplingMask& mask = d.mask();

  // Line-search evaluation reuses E x, E p and the difference images: every
  // term of the objective is evaluated along x + a p without new transforms.
  auto eval_along = [&](const CTensor& ex, const CTensor& ep, const CTensor& sx, const CTensor& sp,
                        const CTensor& tx, const CTensor& tp, double a) {
    double data = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) data += std::norm(d.samples()[i] - ex[i] - a * ep[i]);
    double reg_s = 0, reg_t = 0;
    if (cfg.lambda1 != 0.0)
      for (std::size_t i = 0; i < sx.size(); ++i) reg_s += std::sqrt(std::norm(sx[i] + a * sp[i]) + cfg.smooth_eps);
    if (cfg.lambda2 != 0.0)
      for (std::size_t i = 0; i < tx.size(); ++i) reg_t += std::sqrt(std::norm(tx[i] + a * tp[i]) + cfg.smooth_eps);
    return data + cfg.lambda1 * reg_s + cfg.lambda2 * reg_t;
  };

  double f = cs_objective(x, d, cfg);
  res.log.objective.push_back(f);
  if (observer) observer(0, f);

  DynamicImage g = cs_gradient(x, d, cfg);
  DynamicImage p = g;
  p *= -1.0;
  double gg = norm2_sq(g.data());
  double step = 1.0;

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    if (gg == 0.0) break;
    double slope = inner_re(g.data(), p.data());
    if (!(slope < 0.0)) {
      p = g;
      p *= -1.0;
      slope = -gg;
    }
    const CTensor ex = encode(x, mask).samples();
    const CTensor ep = encode(p, mask).samples();
    const CTensor sx = cfg.lambda1 != 0.0 ? grad_spatial(x) : CTensor{};
    const CTensor sp = cfg.lambda1 != 0.0 ? grad_spatial(p) : CTensor{};
    const CTensor tx = cfg.lambda2 != 0.0 ? grad_temporal(x) : CTensor{};
    const CTensor tp = cfg.lambda2 != 0.0 ? grad_temporal(p) : CTensor{};

    double a = std::min(1e6, 2.0 * step);
    double f_new = eval_along(ex, ep, sx, sp, tx, tp, a);
    int backtracks = 0;
    while (!(f_new <= f + armijo_c * a * slope)) {
      if (++backtracks > max_backtracks) break;
      a *= shrink;
      f_new = eval_along(ex, ep, sx, sp, tx, tp, a);
    }
    if (backtracks > max_backtracks) {
      res.log.line_search_failed = true;
      break;
    }
    step = a;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * p[i];
    const double f_old = f;
    f = f_new;
    res.log.objective.push_back(f);
    res.log.iterations = it;
    if (observer) observer(it, f);

    DynamicImage g_new = cs_gradient(x, d, cfg);
    const double gg_new = norm2_sq(g_new.data());
    const double beta = gg_new / gg;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = -g_new[i] + beta * p[i];
    g = std::move(g_new);
    gg = gg_new;
    if (std::abs(f_old - f) <= cfg.tol * std::max(std::abs(f_old), 1e-300)) break;
  }
  return res;
}

}  // namespace ktsecret

#endif
