#ifndef KTSECRET_PIPELINE_HPP
#define KTSECRET_PIPELINE_HPP

#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "cs_recon.hpp"
#include "io.hpp"
#include "kinetics.hpp"
#include "learn_recon.hpp"
#include "metrics.hpp"
#include "phantom.hpp"

namespace ktsecret {

struct ConfigError : Error {
  using Error::Error;
};

enum class Method { zf, cs, modl, secret };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::zf: return "zf";
    case Method::cs: return "cs";
    case Method::modl: return "modl";
    case Method::secret: return "secret";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "zf") return Method::zf;
  if (s == "cs") return Method::cs;
  if (s == "modl") return Method::modl;
  if (s == "secret") return Method::secret;
  throw ConfigError("unknown method '" + s + "' (expected zf, cs, modl or secret)");
}

/// Parsed pipeline configuration. Unknown keys are rejected at every level.
struct RunConfig {
  std::uint64_t seed = 0;
  PhantomSpec phantom{};
  std::vector<double> accels{10.0};
  std::uint64_t mask_seed = 0;
  std::vector<Method> methods{Method::zf};
  CsConfig cs{};
  ModlConfig modl{};
  SecretConfig secret{};
  std::size_t train_phantoms = 6;
  std::string output_dir;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read_opt;
  detail::reject_unknown(j, {"seed", "phantom", "mask", "method", "method-params", "output-dir"}, "config");
  RunConfig c;
  read_opt(j, "seed", c.seed);
  read_opt(j, "output-dir", c.output_dir);

  c.phantom.seed = c.seed;
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    detail::reject_unknown(p, {"h", "w", "t", "dt", "n_tissue_regions", "ktrans_range", "vp_range", "noise_sigma", "seed"},
                           "phantom");
    read_opt(p, "h", c.phantom.h);
    read_opt(p, "w", c.phantom.w);
    read_opt(p, "t", c.phantom.t);
    c.phantom.dt = 60.0 / static_cast<double>(c.phantom.t);
    read_opt(p, "dt", c.phantom.dt);
    read_opt(p, "n_tissue_regions", c.phantom.n_tissue_regions);
    read_opt(p, "ktrans_range", c.phantom.ktrans_range);
    read_opt(p, "vp_range", c.phantom.vp_range);
    read_opt(p, "noise_sigma", c.phantom.noise_sigma);
    read_opt(p, "seed", c.phantom.seed);
  } else {
    c.phantom.dt = 60.0 / static_cast<double>(c.phantom.t);
  }
  try {
    c.phantom.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("phantom: ") + e.what());
  }

  c.mask_seed = c.seed + 1;
  if (j.contains("mask")) {
    const auto& m = j.at("mask");
    detail::reject_unknown(m, {"accel", "seed"}, "mask");
    if (m.contains("accel")) {
      if (m.at("accel").is_array())
        read_opt(m, "accel", c.accels);
      else
        c.accels = {m.at("accel").get<double>()};
    }
    read_opt(m, "seed", c.mask_seed);
  }
  if (c.accels.empty()) throw ConfigError("mask.accel must not be empty");
  for (double r : c.accels)
    if (!(r >= 1.0)) throw ConfigError("mask.accel values must be >= 1");

  if (!j.contains("method")) throw ConfigError("config requires 'method'");
  const auto& mj = j.at("method");
  c.methods.clear();
  if (mj.is_array())
    for (const auto& m : mj) c.methods.push_back(parse_method(m.get<std::string>()));
  else
    c.methods.push_back(parse_method(mj.get<std::string>()));
  if (c.methods.empty()) throw ConfigError("method list must not be empty");

  c.cs.max_iters = 100;
  c.modl.seed = c.secret.seed = c.seed;
  c.modl.batch = c.secret.batch = 1;
  if (j.contains("method-params")) {
    const auto& mp = j.at("method-params");
    detail::reject_unknown(mp, {"cs", "modl", "secret", "train_phantoms", "base_channels"}, "method-params");
    read_opt(mp, "train_phantoms", c.train_phantoms);
    if (mp.contains("base_channels")) c.modl.net.base_channels = c.secret.net.base_channels = mp.at("base_channels").get<std::size_t>();
    if (mp.contains("cs")) {
      const auto& p = mp.at("cs");
      detail::reject_unknown(p, {"l1", "l2", "iters", "tol", "eps"}, "method-params.cs");
      read_opt(p, "l1", c.cs.lambda1);
      read_opt(p, "l2", c.cs.lambda2);
      read_opt(p, "iters", c.cs.max_iters);
      read_opt(p, "tol", c.cs.tol);
      read_opt(p, "eps", c.cs.smooth_eps);
    }
    if (mp.contains("modl")) {
      const auto& p = mp.at("modl");
      detail::reject_unknown(p, {"K", "lambda", "epochs", "lr", "batch", "cg_iters", "cg_tol"}, "method-params.modl");
      read_opt(p, "K", c.modl.K);
      read_opt(p, "lambda", c.modl.lambda);
      read_opt(p, "epochs", c.modl.epochs);
      read_opt(p, "lr", c.modl.lr);
      read_opt(p, "batch", c.modl.batch);
      read_opt(p, "cg_iters", c.modl.cg_iters);
      read_opt(p, "cg_tol", c.modl.cg_tol);
    }
    if (mp.contains("secret")) {
      const auto& p = mp.at("secret");
      detail::reject_unknown(p, {"epochs", "lr", "batch"}, "method-params.secret");
      read_opt(p, "epochs", c.secret.epochs);
      read_opt(p, "lr", c.secret.lr);
      read_opt(p, "batch", c.secret.batch);
    }
  }
  try {
    c.cs.validate();
    c.modl.validate();
    c.secret.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("method-params: ") + e.what());
  }
  if (c.train_phantoms < 1) throw ConfigError("train_phantoms must be >= 1");
  return c;
}

inline nlohmann::json phantom_sidecar(const PhantomSpec& s, const PhantomTruth& t) {
  return {{"h", s.h},
          {"w", s.w},
          {"t", s.t},
          {"dt", s.dt},
          {"n_tissue_regions", s.n_tissue_regions},
          {"ktrans_range", s.ktrans_range},
          {"vp_range", s.vp_range},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"signal_scale", t.signal_scale}};
}

/// Writes a phantom directory: ref.ktsr, ktrans.ktsr, vp.ktsr, aif.ktsr, labels.ktsr, phantom.json.
inline void save_phantom(const std::filesystem::path& dir, const PhantomSpec& spec, const PhantomTruth& t) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "ref.ktsr", t.ref_images);
  save_tensor(dir / "ktrans.ktsr", t.ktrans_map);
  save_tensor(dir / "vp.ktsr", t.vp_map);
  save_tensor(dir / "aif.ktsr", RTensor({t.aif.size()}, t.aif));
  save_tensor(dir / "labels.ktsr", t.region_labels);
  std::ofstream(dir / "phantom.json") << phantom_sidecar(spec, t).dump(2) << "\n";
}

inline PhantomTruth load_phantom(const std::filesystem::path& dir) {
  std::ifstream f(dir / "phantom.json");
  if (!f) throw Error("cannot open " + (dir / "phantom.json").string());
  const auto j = nlohmann::json::parse(f);
  PhantomTruth t;
  t.ref_images = load_complex(dir / "ref.ktsr");
  t.ktrans_map = load_real(dir / "ktrans.ktsr");
  t.vp_map = load_real(dir / "vp.ktsr");
  t.aif = load_real(dir / "aif.ktsr").vec();
  t.region_labels = load_real(dir / "labels.ktsr");
  t.dt = j.at("dt").get<double>();
  t.signal_scale = j.at("signal_scale").get<double>();
  return t;
}

/// K^Trans / v_p maps of an intensity series over the phantom's tissue ROI.
inline PatlakMap quantify(const CTensor& series, const PhantomTruth& truth) {
  const CTensor conc = intensity_to_concentration(series, truth.aif, truth.signal_scale);
  return patlak_fit(conc, truth.aif, truth.dt, truth.tissue_roi());
}

inline std::string accel_tag(double r) {
  std::ostringstream s;
  s << "R" << r;
  return s.str();
}

inline const char* kMetricsHeader = "method,accel,phantom_id,frame,psnr,ssim,nrmse";

namespace detail {

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

// Panel rows: reference | zero-filled | method | 5 x |error|, one row per frame.
inline GrayImage comparison_panel(const CTensor& ref, const CTensor& zf, const CTensor& rec,
                                  const std::vector<std::size_t>& frames) {
  std::vector<GrayImage> rows;
  for (auto t : frames) {
    CTensor err = rec;
    err -= ref;
    GrayImage e = frame_magnitude(err, t, 5.0);
    rows.push_back(hstack({frame_magnitude(ref, t), frame_magnitude(zf, t), frame_magnitude(rec, t), e}));
  }
  return vstack(rows);
}

inline std::vector<std::size_t> panel_frames(const std::vector<double>& aif) {
  const std::size_t T = aif.size();
  const auto peak = static_cast<std::size_t>(std::max_element(aif.begin(), aif.end()) - aif.begin());
  std::vector<std::size_t> f{peak, std::min(T - 1, peak + (T - peak) / 2), T - 1};
  f.erase(std::unique(f.begin(), f.end()), f.end());
  return f;
}

}  // namespace detail

/// Files written by run_pipeline, relative to the output directory.
inline std::vector<std::string> pipeline_files(const RunConfig& c) {
  std::vector<std::string> f{"config.json",        "phantom/ref.ktsr",    "phantom/ktrans.ktsr",
                             "phantom/vp.ktsr",    "phantom/aif.ktsr",    "phantom/labels.ktsr",
                             "phantom/phantom.json", "ktrans_reference.ktsr", "ktrans_reference.pgm",
                             "metrics.csv",        "metrics_per_frame.csv", "convergence.csv",
                             "kinetics.csv"};
  for (double r : c.accels) {
    const auto tag = accel_tag(r);
    f.push_back("mask_" + tag + ".ktsr");
    f.push_back("kdata_" + tag + ".ktsr");
    for (auto m : c.methods) {
      const auto base = to_string(m) + "_" + tag;
      f.push_back("recon_" + base + ".ktsr");
      f.push_back("ktrans_" + base + ".ktsr");
      f.push_back("panel_" + base + ".pgm");
      f.push_back("ktrans_" + base + ".pgm");
      if (m == Method::modl || m == Method::secret) {
        f.push_back("model_" + base + ".json");
        f.push_back("model_" + base + ".ktsr");
        f.push_back("trainlog_" + base + ".csv");
      }
    }
  }
  std::sort(f.begin(), f.end());
  return f;
}

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  return {{"seed", c.seed},
          {"phantom",
           {{"h", c.phantom.h},
            {"w", c.phantom.w},
            {"t", c.phantom.t},
            {"dt", c.phantom.dt},
            {"n_tissue_regions", c.phantom.n_tissue_regions},
            {"ktrans_range", c.phantom.ktrans_range},
            {"vp_range", c.phantom.vp_range},
            {"noise_sigma", c.phantom.noise_sigma},
            {"seed", c.phantom.seed}}},
          {"mask", {{"accel", c.accels}, {"seed", c.mask_seed}}},
          {"method", methods},
          {"method-params",
           {{"train_phantoms", c.train_phantoms},
            {"base_channels", c.secret.net.base_channels},
            {"cs", {{"l1", c.cs.lambda1}, {"l2", c.cs.lambda2}, {"iters", c.cs.max_iters}, {"tol", c.cs.tol}, {"eps", c.cs.smooth_eps}}},
            {"modl",
             {{"K", c.modl.K},
              {"lambda", c.modl.lambda},
              {"epochs", c.modl.epochs},
              {"lr", c.modl.lr},
              {"batch", c.modl.batch},
              {"cg_iters", c.modl.cg_iters},
              {"cg_tol", c.modl.cg_tol}}},
            {"secret", {{"epochs", c.secret.epochs}, {"lr", c.secret.lr}, {"batch", c.secret.batch}}}}},
          {"output-dir", c.output_dir}};
}

/// Training phantoms for the learned methods: distinct seeds from the test phantom.
inline PhantomTruth training_phantom(const RunConfig& c, std::size_t i) {
  PhantomSpec s = c.phantom;
  s.seed = c.phantom.seed + 1000 + i;
  return synthesize(s);
}

/// phantom -> mask -> corrupt -> reconstruct -> evaluate -> quantify, for every
/// acceleration and method. Throws on failure; artifacts written so far remain.
inline void run_pipeline(const RunConfig& c, std::ostream& log = std::clog) {
  namespace fs = std::filesystem;
  if (c.output_dir.empty()) throw ConfigError("output-dir is required");
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  std::ofstream(out / "config.json") << config_json(c).dump(2) << "\n";

  const PhantomTruth truth = synthesize(c.phantom);
  save_phantom(out / "phantom", c.phantom, truth);
  const RTensor roi = truth.tissue_roi();
  const PatlakMap ref_map = quantify(truth.ref_images, truth);
  double kt_max = 0;
  for (double v : truth.ktrans_map.data()) kt_max = std::max(kt_max, v);
  save_tensor(out / "ktrans_reference.ktsr", ref_map.ktrans);
  write_pgm(out / "ktrans_reference.pgm", map_image(ref_map.ktrans, kt_max));

  std::ofstream metrics(out / "metrics.csv"), per_frame(out / "metrics_per_frame.csv");
  std::ofstream conv(out / "convergence.csv"), kin(out / "kinetics.csv");
  metrics << kMetricsHeader << "\n";
  per_frame << kMetricsHeader << "\n";
  conv << "method,accel,iteration,value\n";
  kin << "method,accel,phantom_id,ktrans_nrmse\n";
  kin << "reference,1,0," << detail::fmt(roi_nrmse(ref_map.ktrans, truth.ktrans_map, roi)) << "\n";
  const auto frames = detail::panel_frames(truth.aif);

  for (std::size_t ri = 0; ri < c.accels.size(); ++ri) {
    const double R = c.accels[ri];
    const auto tag = accel_tag(R);
    const SamplingMask mask = make_radial_mask(c.phantom.t, c.phantom.h, c.phantom.w, R, c.mask_seed);
    save_tensor(out / ("mask_" + tag + ".ktsr"), mask.bits());
    const KtData d = corrupt(truth, mask, c.phantom.noise_sigma, c.seed + 17);
    save_tensor(out / ("kdata_" + tag + ".ktsr"), d.samples());
    const DynamicImage zf = adjoint(d);
    log << tag << ": achieved acceleration " << mask.achieved_accel() << "\n";

    for (auto m : c.methods) {
      const auto name = to_string(m);
      const auto base = name + "_" + tag;
      DynamicImage rec;
      switch (m) {
        case Method::zf: rec = zf; break;
        case Method::cs: {
          auto r = cs_reconstruct(d, c.cs);
          for (std::size_t i = 0; i < r.log.objective.size(); ++i)
            conv << name << "," << R << "," << i << "," << detail::fmt(r.log.objective[i]) << "\n";
          if (r.log.line_search_failed) log << "warning: CS line search failed at " << tag << "\n";
          rec = std::move(r.image);
          break;
        }
        case Method::secret:
        case Method::modl: {
          std::vector<SupervisedSample> sup;
          std::vector<SelfSupervisedSample> self;
          for (std::size_t i = 0; i < c.train_phantoms; ++i) {
            const PhantomTruth tp = training_phantom(c, i);
            const SamplingMask tm = make_radial_mask(c.phantom.t, c.phantom.h, c.phantom.w, R, c.mask_seed + 101 + i);
            KtData td = corrupt(tp, tm, c.phantom.noise_sigma, c.seed + 31 + i);
            if (m == Method::modl)
              sup.push_back({std::move(td), tp.ref_images});
            else
              self.push_back({std::move(td)});
          }
          TrainResult tr = m == Method::modl ? modl_train(sup, c.modl) : secret_train(self, c.secret);
          for (std::size_t e = 0; e < tr.log.train_loss.size(); ++e)
            conv << name << "," << R << "," << e << "," << detail::fmt(tr.log.train_loss[e]) << "\n";
          write_train_log(out / ("trainlog_" + base + ".csv"), tr.log);
          save_model(out / ("model_" + base), ModelFile{name, tr.params, c.modl});
          rec = m == Method::modl ? modl_infer(d, tr.params, c.modl).image : secret_infer(d, tr.params).image;
          break;
        }
      }
      if (!rec.all_finite()) throw Error(name + " reconstruction produced non-finite values");
      save_tensor(out / ("recon_" + base + ".ktsr"), rec);

      const MetricsReport rep = evaluate(rec, truth.ref_images);
      metrics << name << "," << R << ",0,mean," << detail::fmt(rep.psnr_mean) << "," << detail::fmt(rep.ssim_mean)
              << "," << detail::fmt(rep.nrmse_mean) << "\n";
      for (std::size_t t = 0; t < rep.psnr.size(); ++t)
        per_frame << name << "," << R << ",0," << t << "," << detail::fmt(rep.psnr[t]) << ","
                  << detail::fmt(rep.ssim[t]) << "," << detail::fmt(rep.nrmse[t]) << "\n";

      const PatlakMap map = quantify(rec, truth);
      save_tensor(out / ("ktrans_" + base + ".ktsr"), map.ktrans);
      write_pgm(out / ("ktrans_" + base + ".pgm"),
                hstack({map_image(ref_map.ktrans, kt_max), map_image(map.ktrans, kt_max)}));
      kin << name << "," << R << ",0," << detail::fmt(roi_nrmse(map.ktrans, truth.ktrans_map, roi)) << "\n";
      write_pgm(out / ("panel_" + base + ".pgm"), detail::comparison_panel(truth.ref_images, zf, rec, frames));
      log << tag << " " << name << ": PSNR " << detail::fmt(rep.psnr_mean) << " dB, SSIM " << detail::fmt(rep.ssim_mean)
          << ", NRMSE " << detail::fmt(rep.nrmse_mean) << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// x-t profiles
// ---------------------------------------------------------------------------

/// One panel per series: row `row` of every frame, x down the panel and time
/// across it. Panels share a grey scale and are placed side by side.
struct Profile {
  GrayImage strip;
  std::vector<RTensor> raw;  // per input: T x W magnitudes
};

inline Profile extract_profiles(const std::vector<CTensor>& series, std::size_t row) {
  if (series.empty()) throw Error("profile needs at least one series");
  for (const auto& s : series) {
    if (s.ndim() != 3 || s.shape() != series[0].shape()) throw DimensionError("profile inputs must share a T x H x W shape");
    if (row >= s.dim(1)) throw DimensionError("profile row out of range");
  }
  const std::size_t T = series[0].dim(0), W = series[0].dim(2);
  Profile p;
  double vmax = 0;
  for (const auto& s : series) {
    RTensor r({T, W});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t x = 0; x < W; ++x) vmax = std::max(vmax, r(t, x) = std::abs(s(t, row, x)));
    p.raw.push_back(std::move(r));
  }
  std::vector<GrayImage> panels;
  for (const auto& r : p.raw) {
    GrayImage g{W, T, std::vector<double>(W * T)};
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t t = 0; t < T; ++t) g.v[x * T + t] = vmax > 0 ? r(t, x) / vmax : 0.0;
    panels.push_back(std::move(g));
  }
  p.strip = hstack(panels);
  return p;
}

inline void write_profile_csv(const std::filesystem::path& path, const Profile& p,
                              const std::vector<std::string>& names) {
  std::ofstream f(path);
  f << "input,frame,x,value\n";
  f.precision(17);
  for (std::size_t i = 0; i < p.raw.size(); ++i)
    for (std::size_t t = 0; t < p.raw[i].dim(0); ++t)
      for (std::size_t x = 0; x < p.raw[i].dim(1); ++x) f << names[i] << "," << t << "," << x << "," << p.raw[i](t, x) << "\n";
}

}  // namespace ktsecret

#endif
