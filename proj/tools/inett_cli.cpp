#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "inett/config.hpp"
#include "inett/metrics.hpp"
#include "inett/phantom.hpp"
#include "inett/solvers.hpp"
#include "inett/training.hpp"
#include "inett/unet.hpp"

namespace fs = std::filesystem;
using namespace inett;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::string zero_pad5(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

UnetConfig unet_config(const AppConfig& cfg) {
  UnetConfig u;
  u.height = cfg.geometry.n;
  u.width = cfg.geometry.n;
  u.levels = cfg.unet.levels;
  u.base_channels = cfg.unet.base_channels;
  u.channel_mult = cfg.unet.channel_mult;
  u.bn_eps = cfg.unet.bn_eps;
  u.a = cfg.unet.a;
  u.p = cfg.unet.p;
  u.q = cfg.unet.q;
  return u;
}

ProjectionOperator projector(const AppConfig& cfg) {
  return build_projector(cfg.geometry.n, cfg.geometry.n_det, cfg.geometry.n_views);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- gen-phantoms ----

int cmd_gen_phantoms(std::size_t n, std::size_t count, std::uint64_t seed,
                     const std::string& out_dir, std::size_t k_min, std::size_t k_max) {
  fs::create_directories(out_dir);
  std::ofstream manifest(out_dir + "/manifest.csv");
  if (!manifest) throw Error("cannot open for writing: " + out_dir + "/manifest.csv");
  manifest << "index,file,seed\n";
  Rng seeder(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = seeder.raw();
    Tensor img = random_phantom(n, k_min, k_max, s);
    const std::string file = "phantom_" + zero_pad5(i) + ".nimg";
    save_nimg(out_dir + "/" + file, img);
    manifest << i << "," << file << "," << s << "\n";
  }
  return 0;
}

// ---- build-dataset ----

int cmd_build_dataset(const std::string& phantom_dir, const std::string& config_path,
                      std::size_t n1, std::size_t n2, double noise_max,
                      std::uint64_t seed, const std::string& out_dir) {
  AppConfig cfg = config_path.empty() ? AppConfig{} : load_config(config_path);
  auto rows = read_csv(phantom_dir + "/manifest.csv");
  std::vector<Tensor> phantoms;
  for (std::size_t r = 1; r < rows.size(); ++r)
    phantoms.push_back(load_nimg(phantom_dir + "/" + rows[r][1]));
  if (phantoms.size() != n1 + n2)
    throw Error("dataset: phantom count " + std::to_string(phantoms.size()) +
                " != n1 + n2 = " + std::to_string(n1 + n2));
  ProjectionOperator op = projector(cfg);
  Dataset ds = build_dataset(phantoms, op, n1, n2, 0.0, noise_max, seed,
                             cfg.training.art_rounds);
  fs::create_directories(out_dir);
  std::ofstream manifest(out_dir + "/manifest.csv");
  if (!manifest) throw Error("cannot open for writing: " + out_dir + "/manifest.csv");
  manifest << "index,kind,split,z,r,noise_level\n";
  auto split_of = [&](std::size_t i) {
    for (std::size_t j : ds.val_idx)
      if (j == i) return "val";
    for (std::size_t j : ds.test_idx)
      if (j == i) return "test";
    return "train";
  };
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    const std::string z = "z_" + zero_pad5(i) + ".nimg";
    const std::string r = "r_" + zero_pad5(i) + ".nimg";
    save_nimg(out_dir + "/" + z, s.z);
    save_nimg(out_dir + "/" + r, s.r);
    manifest << i << "," << (s.kind == SampleKind::Artifact ? "artifact" : "clean") << ","
             << split_of(i) << "," << z << "," << r << "," << s.noise_level << "\n";
  }
  save_config(out_dir + "/config.resolved", cfg);
  return 0;
}

Dataset load_dataset(const std::string& dir) {
  auto rows = read_csv(dir + "/manifest.csv");
  Dataset ds;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 6) throw ParseError("dataset manifest: malformed row " + std::to_string(r));
    Sample s;
    s.kind = row[1] == "artifact" ? SampleKind::Artifact : SampleKind::Clean;
    s.z = load_nimg(dir + "/" + row[3]);
    s.r = load_nimg(dir + "/" + row[4]);
    s.noise_level = std::stod(row[5]);
    const std::size_t idx = ds.samples.size();
    if (row[2] == "val")
      ds.val_idx.push_back(idx);
    else if (row[2] == "test")
      ds.test_idx.push_back(idx);
    else
      ds.train_idx.push_back(idx);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---- train ----

int cmd_train(const std::string& dataset_dir, const std::string& config_path,
              std::size_t epochs_override, bool convex, bool unconstrained,
              std::uint64_t seed, const std::string& out_ckpt,
              const std::string& history_path, bool verbose) {
  AppConfig cfg = config_path.empty() ? AppConfig{} : load_config(config_path);
  if (epochs_override > 0) cfg.training.epochs = epochs_override;
  Dataset ds = load_dataset(dataset_dir);

  UnetBuild ub = convex ? build_convex_unet(unet_config(cfg), seed)
                        : build_unet(unet_config(cfg), seed);
  if (unconstrained) ub.plan.nonneg.clear();

  TrainOptions opt;
  opt.epochs = cfg.training.epochs;
  opt.batch_size = cfg.training.batch;
  opt.lr = cfg.training.lr;
  opt.lambda = cfg.training.lambda;
  opt.seed = seed + 1;
  opt.verbose = verbose;
  TrainHistory hist = train(ub.net, ub.params, ub.plan, ds, opt);
  ub.params = finalize_bn(ub.net, std::move(ub.params), ds);

  save_nckpt(out_ckpt, ub.params);
  save_config(out_ckpt + ".config", cfg);
  const std::string hpath = history_path.empty() ? out_ckpt + ".history.csv" : history_path;
  std::ofstream hs(hpath);
  if (!hs) throw Error("cannot open for writing: " + hpath);
  hs << "epoch,batch,train_loss,val_loss\n";
  for (const auto& b : hist.batches)
    hs << b.epoch << "," << b.batch << "," << std::setprecision(17) << b.train_loss << ","
       << hist.val_loss[b.epoch - 1] << "\n";
  return 0;
}

// ---- reconstruct ----

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history) {
  std::ofstream hs(path);
  if (!hs) throw Error("cannot open for writing: " + path);
  hs << "n,alpha_n,residual_Y,R_value,inner_iters,bregman_step\n";
  hs << std::setprecision(17);
  for (const auto& h : history)
    hs << h.n << "," << h.alpha << "," << h.residual_Y << "," << h.R_value << ","
       << h.inner_iters << "," << h.bregman_step << "\n";
}

int cmd_reconstruct(const std::string& method, const std::string& sinogram_path,
                    double delta, bool have_delta, const std::string& ckpt_path,
                    double alpha, bool have_alpha, double tau,
                    const std::string& config_path, const std::string& out,
                    const std::string& history_path, const std::string& out_pgm) {
  AppConfig cfg = config_path.empty() ? AppConfig{} : load_config(config_path);
  if (tau > 0.0) cfg.solver.tau = tau;
  ProjectionOperator op = projector(cfg);
  Sinogram y{load_nimg(sinogram_path)};
  if (y.data.ndim() != 2 || y.data.dim(0) != op.n_detectors() ||
      y.data.dim(1) != op.n_views())
    throw Error("sinogram " + sinogram_path + " has shape " + y.data.shape_str() +
                ", expected " + std::to_string(op.n_detectors()) + " x " +
                std::to_string(op.n_views()));

  InnerGDConfig inner;
  inner.step = cfg.solver.inner_step;
  inner.max_iters = cfg.solver.inner_iters;
  inner.grad_tol = cfg.solver.inner_tol;

  SolveResult res;
  if (method == "inett") {
    ParamSet params = load_nckpt(ckpt_path);
    UnetBuild ub = build_convex_unet(unet_config(cfg));
    Regularizer R = make_uniformly_convex(ub.net, params, cfg.unet.a, cfg.unet.p,
                                          cfg.unet.q);
    InettConfig ic{cfg.solver.tau, cfg.solver.n_max, inner};
    res = inett_solve(op, R, y, delta, ic);
  } else if (method == "nett") {
    ParamSet params = load_nckpt(ckpt_path);
    UnetBuild ub = build_unet(unet_config(cfg));
    NettConfig nc{alpha, inner};
    res = nett_solve(op, ub.net, params, y, nc);
  } else if (method == "sit") {
    SitConfig sc{cfg.solver.tau, cfg.solver.n_max, cfg.solver.cg_tol};
    res = sit_solve(op, y, delta, sc);
  } else {
    res = art_solve(op, y, cfg.solver.art_rounds);
  }

  save_nimg(out, res.x);
  save_config(out + ".config", cfg);
  if (!history_path.empty()) write_history_csv(history_path, res.history);
  if (!out_pgm.empty()) save_pgm(out_pgm, res.x);
  if (res.status == SolveStatus::MaxIterations) {
    std::cerr << method << ": discrepancy rule did not fire within "
              << cfg.solver.n_max << " outer iterations (residual_Y = "
              << res.residual_Y << ")\n";
    return kExitNumerical;
  }
  return 0;
}

// ---- project (forward model helper) ----

int cmd_project(const std::string& image_path, const std::string& config_path,
                double noise, std::uint64_t seed, const std::string& out) {
  AppConfig cfg = config_path.empty() ? AppConfig{} : load_config(config_path);
  ProjectionOperator op = projector(cfg);
  Tensor x = load_image(image_path);
  Sinogram y = apply(op, x);
  if (noise > 0.0) y = add_noise(op, y, noise, seed);
  else y.delta = 0.0;
  save_nimg(out, y.data);
  std::ofstream meta(out + ".delta");
  meta << std::setprecision(17) << y.delta << "\n";
  std::cout << "delta = " << std::setprecision(17) << y.delta << "\n";
  return 0;
}

// ---- evaluate ----

int cmd_evaluate(const std::vector<std::string>& recons, const std::string& truth_path,
                 const std::string& out_table) {
  Tensor truth = load_image(truth_path);
  std::ostringstream csv;
  csv << "method,psnr,ssim\n";
  std::printf("%-24s %10s %10s\n", "method", "PSNR", "SSIM");
  for (const std::string& path : recons) {
    Tensor x = load_image(path);
    const double p = psnr(x, truth);
    const double s = ssim(x, truth);
    std::string name = fs::path(path).stem().string();
    csv << name << "," << std::setprecision(17) << p << "," << s << "\n";
    std::printf("%-24s %10.4f %10.6f\n", name.c_str(), p, s);
  }
  if (!out_table.empty()) {
    std::ofstream os(out_table);
    if (!os) throw Error("cannot open for writing: " + out_table);
    os << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterated network Tikhonov CT reconstruction toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (0 = default)");

  // gen-phantoms
  auto* gen = app.add_subcommand("gen-phantoms", "generate random ellipse phantoms");
  std::size_t gp_n = 64, gp_count = 260, gp_kmin = 3, gp_kmax = 8;
  std::uint64_t gp_seed = 1;
  std::string gp_out = "phantoms";
  gen->add_option("--n", gp_n, "image side length");
  gen->add_option("--count", gp_count, "number of phantoms");
  gen->add_option("--seed", gp_seed, "master seed");
  gen->add_option("--out-dir", gp_out, "output directory")->required();
  gen->add_option("--k-min", gp_kmin, "min ellipses per phantom");
  gen->add_option("--k-max", gp_kmax, "max ellipses per phantom");

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "build training pairs from phantoms");
  std::string bd_phantoms, bd_cfg, bd_out;
  std::size_t bd_n1 = 130, bd_n2 = 130;
  double bd_noise = 0.10;
  std::uint64_t bd_seed = 1;
  bd->add_option("--phantoms", bd_phantoms, "phantom directory")->required();
  bd->add_option("--geometry", bd_cfg, "config file with the [geometry] section");
  bd->add_option("--n1", bd_n1, "artifact sample count");
  bd->add_option("--n2", bd_n2, "clean sample count");
  bd->add_option("--noise-max", bd_noise, "max relative noise level");
  bd->add_option("--seed", bd_seed, "seed");
  bd->add_option("--out", bd_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the residual network");
  std::string tr_ds, tr_cfg, tr_ckpt, tr_hist;
  std::size_t tr_epochs = 0;
  std::uint64_t tr_seed = 1;
  bool tr_convex = false, tr_unconstrained = false, tr_verbose = false;
  tr->add_option("--dataset", tr_ds, "dataset directory")->required();
  tr->add_option("--config", tr_cfg, "config file");
  tr->add_option("--epochs", tr_epochs, "override epoch count");
  tr->add_option("--seed", tr_seed, "seed");
  tr->add_option("--out-checkpoint", tr_ckpt, "checkpoint path")->required();
  tr->add_option("--history", tr_hist, "training history CSV path");
  tr->add_flag("--convex", tr_convex, "train with the nonnegativity projection");
  tr->add_flag("--unconstrained", tr_unconstrained, "train without any constraint");
  tr->add_flag("--verbose", tr_verbose, "log per-epoch losses");

  // project
  auto* pj = app.add_subcommand("project", "forward-project an image to a sinogram");
  std::string pj_img, pj_cfg, pj_out;
  double pj_noise = 0.0;
  std::uint64_t pj_seed = 1;
  pj->add_option("--image", pj_img, "input image (NIMG or PGM)")->required();
  pj->add_option("--config", pj_cfg, "config file");
  pj->add_option("--noise", pj_noise, "relative noise level");
  pj->add_option("--seed", pj_seed, "noise seed");
  pj->add_option("--out", pj_out, "output sinogram NIMG")->required();

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "reconstruct an image from a sinogram");
  std::string rc_method, rc_sino, rc_ckpt, rc_cfg, rc_out, rc_hist, rc_pgm;
  double rc_delta = 0.0, rc_alpha = 0.0, rc_tau = 0.0;
  rc->add_option("--method", rc_method, "inett | nett | sit | art")
      ->required()
      ->check(CLI::IsMember({"inett", "nett", "sit", "art"}));
  rc->add_option("--sinogram", rc_sino, "sinogram NIMG")->required();
  auto* rc_delta_opt = rc->add_option("--delta", rc_delta, "noise level bound");
  rc->add_option("--checkpoint", rc_ckpt, "network checkpoint (inett/nett)");
  auto* rc_alpha_opt = rc->add_option("--alpha", rc_alpha, "fixed weight (nett)");
  rc->add_option("--tau", rc_tau, "discrepancy factor");
  rc->add_option("--config", rc_cfg, "config file");
  rc->add_option("--out", rc_out, "output image NIMG")->required();
  rc->add_option("--history", rc_hist, "iteration history CSV");
  rc->add_option("--out-pgm", rc_pgm, "also export a PGM preview");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "PSNR/SSIM table for reconstructions");
  std::vector<std::string> ev_recons;
  std::string ev_truth, ev_table;
  ev->add_option("--recon", ev_recons, "reconstruction file(s)")->required();
  ev->add_option("--truth", ev_truth, "ground-truth image")->required();
  ev->add_option("--out-table", ev_table, "output CSV table");

  // export
  auto* ex = app.add_subcommand("export", "convert NIMG to PGM");
  std::string ex_in, ex_out;
  ex->add_option("--in", ex_in, "input NIMG")->required();
  ex->add_option("--out", ex_out, "output PGM")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;  // --help exits 0, any parse failure 1
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  try {
    if (*gen) return cmd_gen_phantoms(gp_n, gp_count, gp_seed, gp_out, gp_kmin, gp_kmax);
    if (*bd)
      return cmd_build_dataset(bd_phantoms, bd_cfg, bd_n1, bd_n2, bd_noise, bd_seed,
                               bd_out);
    if (*tr) {
      if (tr_convex == tr_unconstrained) {
        std::cerr << "train: pass exactly one of --convex or --unconstrained\n";
        return kExitUsage;
      }
      return cmd_train(tr_ds, tr_cfg, tr_epochs, tr_convex, tr_unconstrained, tr_seed,
                       tr_ckpt, tr_hist, tr_verbose);
    }
    if (*pj) return cmd_project(pj_img, pj_cfg, pj_noise, pj_seed, pj_out);
    if (*rc) {
      if ((rc_method == "inett" || rc_method == "sit") && rc_delta_opt->count() == 0) {
        std::cerr << "reconstruct: --delta is required for " << rc_method << "\n";
        return kExitUsage;
      }
      if (rc_method == "nett" && rc_alpha_opt->count() == 0) {
        std::cerr << "reconstruct: --alpha is required for nett "
                     "(try 0.001, 0.01, 0.05 or 0.1)\n";
        return kExitUsage;
      }
      if ((rc_method == "inett" || rc_method == "nett") && rc_ckpt.empty()) {
        std::cerr << "reconstruct: --checkpoint is required for " << rc_method << "\n";
        return kExitUsage;
      }
      return cmd_reconstruct(rc_method, rc_sino, rc_delta, rc_delta_opt->count() > 0,
                             rc_ckpt, rc_alpha, rc_alpha_opt->count() > 0, rc_tau,
                             rc_cfg, rc_out, rc_hist, rc_pgm);
    }
    if (*ev) return cmd_evaluate(ev_recons, ev_truth, ev_table);
    if (*ex) {
      save_pgm(ex_out, load_image(ex_in));
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
