// ktsecret command-line tool: phantom generation, undersampling, reconstruction
// (zero-filled, CS, MoDL, SECRET), quantification and evaluation.

#include <CLI11.hpp>

#include <ktsecret/ktsecret.hpp>

namespace fs = std::filesystem;
using namespace ktsecret;

namespace {

struct Paths {
  std::vector<std::string> kdata, mask, target, val_kdata, val_mask;
};

std::vector<KtData> load_kdata(const std::vector<std::string>& kdata, const std::vector<std::string>& masks) {
  if (kdata.size() != masks.size()) throw Error("each --kdata needs a matching --mask");
  std::vector<KtData> out;
  for (std::size_t i = 0; i < kdata.size(); ++i) out.emplace_back(load_complex(kdata[i]), load_mask(masks[i]));
  return out;
}

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Random seed (the command is deterministic given it)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ktsecret: self-supervised and model-based reconstruction of undersampled dynamic (k,t)-space data"};
  app.require_subcommand(1);
  // --h is the image height, so help is long-form only.
  app.set_help_flag("--help", "Print this help message and exit");
  std::uint64_t seed = 0;

  // phantom
  PhantomSpec pspec;
  std::string phantom_out;
  auto* c_phantom = app.add_subcommand("phantom", "Synthesize a contrast-enhanced dynamic phantom");
  c_phantom->add_option("--out", phantom_out, "Output directory")->required();
  c_phantom->add_option("--h", pspec.h, "Height (power of two)")->capture_default_str();
  c_phantom->add_option("--w", pspec.w, "Width (power of two)")->capture_default_str();
  c_phantom->add_option("--t", pspec.t, "Frames (>= 8)")->capture_default_str();
  double phantom_dt = 0;
  c_phantom->add_option("--dt", phantom_dt, "Seconds per frame (default 60/t)");
  c_phantom->add_option("--regions", pspec.n_tissue_regions, "Tissue regions")->capture_default_str();
  c_phantom->add_option("--noise", pspec.noise_sigma, "Relative noise std recorded in the sidecar")->capture_default_str();
  add_seed(c_phantom, seed);

  // mask
  std::size_t mt = 8, mh = 32, mw = 32;
  double accel = 10;
  std::string mask_out;
  auto* c_mask = app.add_subcommand("mask", "Generate a golden-angle radial (k,t) sampling mask");
  c_mask->add_option("--out", mask_out, "Output container")->required();
  c_mask->add_option("--t", mt, "Frames")->capture_default_str();
  c_mask->add_option("--h", mh, "Height")->capture_default_str();
  c_mask->add_option("--w", mw, "Width")->capture_default_str();
  c_mask->add_option("--accel", accel, "Acceleration factor R")->capture_default_str();
  add_seed(c_mask, seed);

  // corrupt
  std::string phantom_dir, mask_path, out_path;
  double noise = 0;
  auto* c_corrupt = app.add_subcommand("corrupt", "Undersample a phantom (with optional k-space noise)");
  c_corrupt->add_option("--phantom", phantom_dir, "Phantom directory")->required();
  c_corrupt->add_option("--mask", mask_path, "Mask container")->required();
  c_corrupt->add_option("--noise", noise, "Noise std relative to the DC row maximum")->capture_default_str();
  c_corrupt->add_option("--out", out_path, "Output k-space container")->required();
  add_seed(c_corrupt, seed);

  // recon-zf
  std::string kdata_path;
  auto* c_zf = app.add_subcommand("recon-zf", "Zero-filled reconstruction");
  c_zf->add_option("--kdata", kdata_path, "k-space container")->required();
  c_zf->add_option("--mask", mask_path, "Mask container")->required();
  c_zf->add_option("--out", out_path, "Output image container")->required();
  add_seed(c_zf, seed);

  // recon-cs
  CsConfig cs;
  std::string log_path;
  auto* c_cs = app.add_subcommand("recon-cs", "Spatio-temporal TV compressed-sensing reconstruction");
  c_cs->add_option("--kdata", kdata_path, "k-space container")->required();
  c_cs->add_option("--mask", mask_path, "Mask container")->required();
  c_cs->add_option("--out", out_path, "Output image container")->required();
  c_cs->add_option("--l1", cs.lambda1, "Spatial TV weight")->capture_default_str();
  c_cs->add_option("--l2", cs.lambda2, "Temporal TV weight")->capture_default_str();
  c_cs->add_option("--iters", cs.max_iters, "Maximum iterations")->capture_default_str();
  c_cs->add_option("--tol", cs.tol, "Relative objective change tolerance")->capture_default_str();
  c_cs->add_option("--eps", cs.smooth_eps, "TV smoothing epsilon")->capture_default_str();
  c_cs->add_option("--log", log_path, "Convergence CSV");
  add_seed(c_cs, seed);

  // train-secret / train-modl
  Paths tp;
  SecretConfig scfg;
  scfg.batch = 1;
  ModlConfig mcfg;
  mcfg.batch = 1;
  std::size_t base_channels = 16;
  std::string model_out;
  auto* c_ts = app.add_subcommand("train-secret", "Self-supervised training from undersampled data only");
  c_ts->add_option("--kdata", tp.kdata, "Training k-space containers")->required();
  c_ts->add_option("--mask", tp.mask, "Masks matching --kdata")->required();
  c_ts->add_option("--val-kdata", tp.val_kdata, "Validation k-space containers");
  c_ts->add_option("--val-mask", tp.val_mask, "Masks matching --val-kdata");
  c_ts->add_option("--epochs", scfg.epochs, "Epochs")->capture_default_str();
  c_ts->add_option("--lr", scfg.lr, "Adam learning rate")->capture_default_str();
  c_ts->add_option("--batch", scfg.batch, "Samples per update (0: full batch)")->capture_default_str();
  c_ts->add_option("--base-channels", base_channels, "Channels of the first network level")->capture_default_str();
  c_ts->add_option("--out", model_out, "Model prefix (writes .json and .ktsr)")->required();
  c_ts->add_option("--log", log_path, "Training log CSV");
  add_seed(c_ts, seed);

  auto* c_tm = app.add_subcommand("train-modl", "Supervised training of the unrolled model-based network");
  c_tm->add_option("--kdata", tp.kdata, "Training k-space containers")->required();
  c_tm->add_option("--mask", tp.mask, "Masks matching --kdata")->required();
  c_tm->add_option("--target", tp.target, "Fully sampled targets matching --kdata")->required();
  c_tm->add_option("--K", mcfg.K, "Unrolled iterations")->capture_default_str();
  c_tm->add_option("--lambda", mcfg.lambda, "Data-consistency weight")->capture_default_str();
  c_tm->add_option("--epochs", mcfg.epochs, "Epochs")->capture_default_str();
  c_tm->add_option("--lr", mcfg.lr, "Adam learning rate")->capture_default_str();
  c_tm->add_option("--batch", mcfg.batch, "Samples per update (0: full batch)")->capture_default_str();
  c_tm->add_option("--base-channels", base_channels, "Channels of the first network level")->capture_default_str();
  c_tm->add_option("--out", model_out, "Model prefix (writes .json and .ktsr)")->required();
  c_tm->add_option("--log", log_path, "Training log CSV");
  add_seed(c_tm, seed);

  // recon-nn
  std::string model_path;
  std::size_t override_k = 0;
  double override_lambda = 0;
  auto* c_nn = app.add_subcommand("recon-nn", "Reconstruct with a trained network (SECRET or MoDL)");
  c_nn->add_option("--model", model_path, "Model prefix")->required();
  c_nn->add_option("--kdata", kdata_path, "k-space container")->required();
  c_nn->add_option("--mask", mask_path, "Mask container")->required();
  c_nn->add_option("--out", out_path, "Output image container")->required();
  c_nn->add_option("--K", override_k, "Override unrolled iterations (MoDL)");
  c_nn->add_option("--lambda", override_lambda, "Override data-consistency weight (MoDL)");
  add_seed(c_nn, seed);

  // quantify
  std::string series_path, out_prefix;
  auto* c_q = app.add_subcommand("quantify", "Patlak K^Trans / v_p maps from an intensity series");
  c_q->add_option("--series", series_path, "Image series container")->required();
  c_q->add_option("--phantom", phantom_dir, "Phantom directory (AIF, frame interval, signal scale, ROI)")->required();
  c_q->add_option("--out", out_prefix, "Output prefix")->required();
  add_seed(c_q, seed);

  // evaluate
  std::string ref_path, method_name = "unknown", phantom_id = "0", csv_path;
  bool per_frame = false;
  auto* c_ev = app.add_subcommand("evaluate", "PSNR / SSIM / NRMSE of a reconstruction against a reference");
  c_ev->add_option("--recon", series_path, "Reconstruction container")->required();
  c_ev->add_option("--ref", ref_path, "Reference container")->required();
  c_ev->add_option("--method", method_name, "Method label")->capture_default_str();
  c_ev->add_option("--accel", accel, "Acceleration label")->capture_default_str();
  c_ev->add_option("--phantom-id", phantom_id, "Phantom label")->capture_default_str();
  c_ev->add_option("--csv", csv_path, "Append rows to this CSV (stdout when absent)");
  c_ev->add_flag("--per-frame", per_frame, "Emit one row per frame instead of the frame mean");
  add_seed(c_ev, seed);

  // profile
  std::vector<std::string> inputs;
  std::size_t row = 0;
  auto* c_pr = app.add_subcommand("profile", "x-t profile strips of one image row across frames");
  c_pr->add_option("--input", inputs, "Series containers (two or more)")->required()->expected(2, -1);
  c_pr->add_option("--row", row, "Image row")->required();
  c_pr->add_option("--out", out_path, "Output PGM")->required();
  c_pr->add_option("--csv", csv_path, "Raw profile CSV (default: <out>.csv)");
  add_seed(c_pr, seed);

  // pipeline
  std::string config_path, out_dir;
  bool seed_given = false;
  auto* c_pl = app.add_subcommand("pipeline", "End-to-end run from a JSON configuration");
  c_pl->add_option("--config", config_path, "Run configuration JSON")->required();
  c_pl->add_option("--out", out_dir, "Override output-dir");
  c_pl->add_option("--seed", seed, "Override the configuration seed")->each([&](const std::string&) { seed_given = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_phantom) {
      pspec.seed = seed;
      pspec.dt = phantom_dt > 0 ? phantom_dt : 60.0 / static_cast<double>(pspec.t);
      save_phantom(phantom_out, pspec, synthesize(pspec));
    } else if (*c_mask) {
      const auto m = make_radial_mask(mt, mh, mw, accel, seed);
      save_tensor(mask_out, m.bits());
      std::cout << "achieved acceleration " << m.achieved_accel() << "\n";
    } else if (*c_corrupt) {
      save_tensor(out_path, corrupt(load_phantom(phantom_dir), load_mask(mask_path), noise, seed).samples());
    } else if (*c_zf) {
      save_tensor(out_path, adjoint(KtData(load_complex(kdata_path), load_mask(mask_path))));
    } else if (*c_cs) {
      auto r = cs_reconstruct(KtData(load_complex(kdata_path), load_mask(mask_path)), cs);
      save_tensor(out_path, r.image);
      if (!log_path.empty()) {
        std::ofstream f(log_path);
        f << "iteration,objective\n";
        f.precision(17);
        for (std::size_t i = 0; i < r.log.objective.size(); ++i) f << i << "," << r.log.objective[i] << "\n";
      }
      if (r.log.line_search_failed) std::cerr << "warning: line search failed; returning the current iterate\n";
    } else if (*c_ts) {
      scfg.seed = seed;
      scfg.net.base_channels = base_channels;
      std::vector<SelfSupervisedSample> train, val;
      for (auto& d : load_kdata(tp.kdata, tp.mask)) train.push_back({std::move(d)});
      for (auto& d : load_kdata(tp.val_kdata, tp.val_mask)) val.push_back({std::move(d)});
      auto r = secret_train(train, scfg, val);
      save_model(model_out, ModelFile{"secret", r.params, {}});
      if (!log_path.empty()) write_train_log(log_path, r.log);
      std::cout << "loss " << r.log.train_loss.front() << " -> " << r.log.train_loss.back() << "\n";
    } else if (*c_tm) {
      mcfg.seed = seed;
      mcfg.net.base_channels = base_channels;
      if (tp.target.size() != tp.kdata.size()) throw Error("each --kdata needs a matching --target");
      std::vector<SupervisedSample> train;
      auto kd = load_kdata(tp.kdata, tp.mask);
      for (std::size_t i = 0; i < kd.size(); ++i) train.push_back({std::move(kd[i]), load_complex(tp.target[i])});
      auto r = modl_train(train, mcfg);
      save_model(model_out, ModelFile{"modl", r.params, mcfg});
      if (!log_path.empty()) write_train_log(log_path, r.log);
      std::cout << "loss " << r.log.train_loss.front() << " -> " << r.log.train_loss.back() << "\n";
    } else if (*c_nn) {
      const KtData d(load_complex(kdata_path), load_mask(mask_path));
      ModelFile m = load_model(model_path);
      InferResult r;
      if (m.kind == "modl") {
        if (override_k > 0) m.modl.K = override_k;
        if (override_lambda > 0) m.modl.lambda = override_lambda;
        r = modl_infer(d, m.params, m.modl);
      } else {
        r = secret_infer(d, m.params);
      }
      save_tensor(out_path, r.image);
      std::cerr << "inference " << r.seconds << " s\n";
    } else if (*c_q) {
      const PhantomTruth truth = load_phantom(phantom_dir);
      const PatlakMap map = quantify(load_complex(series_path), truth);
      save_tensor(out_prefix + "_ktrans.ktsr", map.ktrans);
      save_tensor(out_prefix + "_vp.ktsr", map.vp);
      save_tensor(out_prefix + "_r2.ktsr", map.fit_r2);
      double kt_max = 0;
      for (double v : truth.ktrans_map.data()) kt_max = std::max(kt_max, v);
      write_pgm(out_prefix + "_ktrans.pgm", map_image(map.ktrans, kt_max));
      std::cout << "ktrans_nrmse " << roi_nrmse(map.ktrans, truth.ktrans_map, truth.tissue_roi()) << "\n";
    } else if (*c_ev) {
      const MetricsReport rep = evaluate(load_complex(series_path), load_complex(ref_path));
      std::ostringstream rows;
      auto fmt = [](double v) { return std::isinf(v) ? std::string(v > 0 ? "inf" : "-inf") : std::to_string(v); };
      if (per_frame)
        for (std::size_t t = 0; t < rep.psnr.size(); ++t)
          rows << method_name << "," << accel << "," << phantom_id << "," << t << "," << fmt(rep.psnr[t]) << ","
               << fmt(rep.ssim[t]) << "," << fmt(rep.nrmse[t]) << "\n";
      else
        rows << method_name << "," << accel << "," << phantom_id << ",mean," << fmt(rep.psnr_mean) << ","
             << fmt(rep.ssim_mean) << "," << fmt(rep.nrmse_mean) << "\n";
      if (csv_path.empty()) {
        std::cout << kMetricsHeader << "\n" << rows.str();
      } else {
        const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
        std::ofstream f(csv_path, std::ios::app);
        if (fresh) f << kMetricsHeader << "\n";
        f << rows.str();
      }
    } else if (*c_pr) {
      std::vector<CTensor> series;
      for (const auto& p : inputs) series.push_back(load_complex(p));
      const Profile prof = extract_profiles(series, row);
      write_pgm(out_path, prof.strip);
      write_profile_csv(csv_path.empty() ? out_path + ".csv" : csv_path, prof, inputs);
    } else if (*c_pl) {
      std::ifstream f(config_path);
      if (!f) throw Error("cannot open " + config_path);
      RunConfig cfg = parse_run_config(nlohmann::json::parse(f));
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (seed_given) {
        nlohmann::json j = config_json(cfg);
        j["seed"] = seed;
        j["phantom"]["seed"] = seed;
        j["mask"]["seed"] = seed + 1;
        cfg = parse_run_config(j);
      }
      run_pipeline(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
