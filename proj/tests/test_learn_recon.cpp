#include <gtest/gtest.h>

#include <ktsecret/learn_recon.hpp>
#include <ktsecret/metrics.hpp>
#include <ktsecret/phantom.hpp>

#include "oracles.hpp"

using namespace ktsecret;

namespace {

NetConfig tiny(std::size_t frames = 2) { return {frames, 2, 4}; }

KtData measured(std::uint64_t seed, std::size_t t = 2, double accel = 3.0) {
  const auto mask = make_radial_mask(t, 8, 8, accel, seed);
  return KtData(oracle::random_series({t, 8, 8}, seed + 100), mask);
}

template <class S>
concept HasTarget = requires(const S& s) { s.target; };

}  // namespace

static_assert(!HasTarget<SelfSupervisedSample>, "self-supervised samples must not carry a reference");
static_assert(HasTarget<SupervisedSample>);
static_assert(MeasuredSample<SelfSupervisedSample> && !TargetedSample<SelfSupervisedSample>);

TEST(DcSolve, FullMaskClosedForm) {
  // Full sampling: E^H E = I, so s = (E^H d + lambda z) / (1 + lambda).
  const CTensor x = oracle::random_series({2, 8, 8}, 1);
  const CTensor z = oracle::random_series({2, 8, 8}, 2);
  const KtData d = encode(x, make_radial_mask(2, 8, 8, 1.0, 0));
  const auto r = dc_solve(z, d, 0.5);
  CTensor expect(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) expect[i] = (x[i] + 0.5 * z[i]) / 1.5;
  EXPECT_LT(oracle::rel_err(r.image, expect), 1e-12);
  EXPECT_TRUE(r.converged);
}

TEST(DcSolve, UndersampledMatchesPerEntrySolve) {
  // In k-space the system is diagonal: (m + lambda) k_s = m k_d + lambda k_z.
  const KtData d = measured(3);
  const CTensor z = oracle::random_series({2, 8, 8}, 4);
  const double lam = 0.2;
  const auto r = dc_solve(z, d, lam, {50, 1e-12});
  const auto kz = dft2_frames(z, Direction::forward);
  CTensor ks(z.shape());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double m = d.mask().bits()[i];
    ks[i] = (m * d.samples()[i] + lam * kz[i]) / (m + lam);
  }
  EXPECT_LT(oracle::rel_err(r.image, dft2_frames(ks, Direction::inverse)), 1e-10);
  EXPECT_LT(r.residual, 1e-12);
}

TEST(DcSolve, Errors) {
  const KtData d = measured(5);
  EXPECT_THROW(dc_solve(CTensor({2, 8, 8}), d, 0.0), Error);
  EXPECT_THROW(dc_solve(CTensor({3, 8, 8}), d, 0.1), DimensionError);
}

TEST(Modl, SingleIterationWithZeroNetwork) {
  // theta = 0 makes the denoiser the temporal average, so s_1 = DC(avg(s_u)).
  const KtData d = measured(6);
  const auto theta = NetworkParams::zeros(tiny());
  ModlConfig cfg;
  cfg.cg_iters = 50;
  cfg.cg_tol = 1e-12;
  const auto s_u = adjoint(d);
  const auto out = modl_forward(s_u, d, theta, cfg);
  const auto expect = dc_solve(temporal_average(s_u), d, cfg.lambda, cfg.cg()).image;
  EXPECT_LT(oracle::rel_err(out.image, expect), 1e-12);
  EXPECT_EQ(out.trace.caches.size(), 1u);
}

TEST(Modl, MoreUnrollsChangeTheOutput) {
  const KtData d = measured(7);
  const auto theta = NetworkParams::init(tiny(), 1);
  ModlConfig one, ten;
  ten.K = 10;
  const auto a = modl_forward(adjoint(d), d, theta, one).image;
  const auto b = modl_forward(adjoint(d), d, theta, ten).image;
  EXPECT_GT(oracle::rel_err(a, b), 1e-6);
}

TEST(Modl, ImplicitGradientMatchesFiniteDifferences) {
  for (std::size_t K : {1u, 2u}) {
    const KtData d = measured(8 + K);
    const CTensor target = oracle::random_series({2, 8, 8}, 20 + K);
    const auto theta = NetworkParams::init(tiny(), K);
    ModlConfig cfg;
    cfg.K = K;
    cfg.cg_iters = 100;
    cfg.cg_tol = 1e-13;
    const auto lg = modl_loss_grad(d, target, theta, cfg);
    const auto dir = oracle::random_vector(theta.size(), 40 + K);
    const double h = 1e-6;
    NetworkParams tp = theta, tm = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      tp.flat()[i] += h * dir[i];
      tm.flat()[i] -= h * dir[i];
    }
    const double fd =
        (modl_loss_grad(d, target, tp, cfg, false).loss - modl_loss_grad(d, target, tm, cfg, false).loss) / (2 * h);
    double an = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) an += lg.grad[i] * dir[i];
    EXPECT_LT(oracle::rel_err(an, fd), 1e-4) << "K=" << K;
  }
}

TEST(Secret, LossMatchesDirectComputation) {
  const KtData d = measured(9);
  const auto theta = NetworkParams::init(tiny(), 3);
  const auto out = net_forward(adjoint(d), theta).image;
  double ref = 0;
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<cplx> frame(out.vec().begin() + static_cast<long>(t * 64), out.vec().begin() + static_cast<long>((t + 1) * 64));
    const auto k = oracle::naive_dft2(frame, 8, 8, false);
    for (std::size_t i = 0; i < 64; ++i)
      if (d.mask().bits()[t * 64 + i] != 0.0) ref += std::norm(d.samples()[t * 64 + i] - k[i]);
  }
  EXPECT_LT(oracle::rel_err(secret_loss_grad(d, theta, false).loss, ref), 1e-12);
}

TEST(Secret, GradientMatchesFiniteDifferences) {
  const KtData d = measured(10);
  const auto theta = NetworkParams::init(tiny(), 4);
  const auto lg = secret_loss_grad(d, theta);
  const auto dir = oracle::random_vector(theta.size(), 50);
  const double h = 1e-6;
  NetworkParams tp = theta, tm = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    tp.flat()[i] += h * dir[i];
    tm.flat()[i] -= h * dir[i];
  }
  const double fd = (secret_loss_grad(d, tp, false).loss - secret_loss_grad(d, tm, false).loss) / (2 * h);
  double an = 0;
  for (std::size_t i = 0; i < dir.size(); ++i) an += lg.grad[i] * dir[i];
  EXPECT_LT(oracle::rel_err(an, fd), 1e-6);
}

TEST(Secret, TrainingReducesLossAndIsDeterministic) {
  PhantomSpec spec;
  spec.t = 8;
  std::vector<SelfSupervisedSample> train;
  for (std::uint64_t i = 0; i < 2; ++i) {
    spec.seed = i;
    train.push_back({corrupt(synthesize(spec), make_radial_mask(8, 32, 32, 4.0, i + 10), 0.0, 0)});
  }
  SecretConfig cfg;
  cfg.epochs = 15;
  cfg.lr = 1e-3;
  cfg.batch = 1;
  cfg.net = {8, 2, 4};
  const auto a = secret_train(train, cfg);
  const auto b = secret_train(train, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.log.train_loss, b.log.train_loss);
  EXPECT_LT(a.log.train_loss.back(), a.log.train_loss.front());
}

TEST(Secret, ValidationSelectsBestEpoch) {
  const std::vector<SelfSupervisedSample> train{{measured(11)}}, val{{measured(12)}};
  SecretConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 1e-2;
  cfg.net = tiny();
  const auto r = secret_train(train, cfg, val);
  ASSERT_EQ(r.log.val_loss.size(), 6u);
  const auto best = std::min_element(r.log.val_loss.begin(), r.log.val_loss.end()) - r.log.val_loss.begin();
  EXPECT_EQ(r.log.best_epoch, static_cast<std::size_t>(best));
  EXPECT_NEAR(secret_loss_grad(val[0].data, r.params, false).loss, r.log.val_loss[r.log.best_epoch], 1e-9);
}

TEST(Secret, InferenceIsDeterministicAndFast) {
  PhantomSpec spec;
  spec.seed = 3;
  const auto p = synthesize(spec);
  const auto d = corrupt(p, make_radial_mask(8, 32, 32, 6.0, 1), 0.0, 0);
  const auto theta = NetworkParams::init(NetConfig{8, 2, 16}, 9);
  const auto a = secret_infer(d, theta), b = secret_infer(d, theta);
  EXPECT_EQ(a.image, b.image);
  EXPECT_LT(a.seconds, 1.0);
  EXPECT_THROW(secret_infer(measured(1), theta), DimensionError);
}

TEST(Secret, RejectsEmptyTrainingSet) {
  EXPECT_THROW(secret_train(std::vector<SelfSupervisedSample>{}, SecretConfig{}), Error);
}

TEST(Modl, TrainingReducesLoss) {
  std::vector<SupervisedSample> train;
  PhantomSpec spec;
  for (std::uint64_t i = 0; i < 2; ++i) {
    spec.seed = i;
    const auto p = synthesize(spec);
    train.push_back({corrupt(p, make_radial_mask(8, 32, 32, 4.0, i), 0.0, 0), p.ref_images});
  }
  ModlConfig cfg;
  cfg.epochs = 8;
  cfg.lr = 1e-3;
  cfg.batch = 1;
  cfg.net = {8, 2, 4};
  const auto r = modl_train(train, cfg);
  EXPECT_LT(r.log.train_loss.back(), r.log.train_loss.front());
  const auto inf = modl_infer(train[0].data, r.params, cfg);
  EXPECT_GT(psnr(inf.image, train[0].target), 0.0);
}

TEST(Batches, PartitionEveryEpoch) {
  std::mt19937_64 rng(1);
  const auto b = detail::epoch_batches(7, 3, rng);
  ASSERT_EQ(b.size(), 3u);
  std::vector<std::size_t> all;
  for (const auto& x : b) all.insert(all.end(), x.begin(), x.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(detail::epoch_batches(7, 0, rng).size(), 1u);
}
