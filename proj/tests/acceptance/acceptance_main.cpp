// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. The toy-scale functional criteria (5-7, 10) train real
// models on synthetic scenes and take the bulk of the runtime; smaller
// property suites run first.
//
// Flags (for scaled-down manual runs; defaults are the accepted settings):
//   --only 1,2,9        run a subset of criteria
//   --frames N          training frames          (default 500)
//   --eval-frames N     held-out eval frames     (default 200)
//   --stage1-epochs N   pretext epochs           (default 3)
//   --stage2-epochs N   classifier epochs        (default 4)
//   --pairs N           eval pairs per side      (default 100)
//   --cka-samples N     CKA batch per condition  (default 256)
//   --points N          LiDAR points per frame   (default 40000)
//   --artifacts DIR     output directory         (default acceptance_artifacts)

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core/cka.hpp"
#include "core/evaluation.hpp"
#include "core/training.hpp"

using namespace miscal;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::set<int> only;
  int frames = 500;
  int eval_frames = 200;
  int stage1_epochs = 3;
  int stage2_epochs = 4;
  int pairs = 100;
  int cka_samples = 256;
  int points = 70000;
  std::string artifacts = "acceptance_artifacts";
};

struct Outcome {
  int criterion;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Outcome> g_outcomes;

void report(int criterion, bool pass, const std::string& detail, double seconds) {
  g_outcomes.push_back({criterion, pass, detail, seconds});
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << criterion << ": " << detail
            << "  (" << std::fixed << std::setprecision(1) << seconds << " s)\n"
            << std::defaultfloat << std::setprecision(6);
  std::cout.flush();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// criterion 1: geometry oracle suite

CalibrationSet random_calib(Rng& rng) {
  CalibrationSet calib;
  calib.width = 640;
  calib.height = 400;
  calib.projection.setZero();
  calib.projection(0, 0) = rng.uniform(250.0, 420.0);
  calib.projection(1, 1) = rng.uniform(250.0, 420.0);
  calib.projection(0, 1) = rng.uniform(-3.0, 3.0);
  calib.projection(0, 2) = rng.uniform(280.0, 360.0);
  calib.projection(1, 2) = rng.uniform(170.0, 230.0);
  calib.projection(2, 2) = 1.0;
  calib.projection(0, 3) = rng.uniform(-40.0, 40.0);
  calib.projection(1, 3) = rng.uniform(-4.0, 4.0);
  calib.projection(2, 3) = rng.uniform(-0.005, 0.005);
  calib.rect_rotation = euler_to_rotation(rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                                          rng.uniform(-0.04, 0.04));
  Eigen::Matrix3d base;
  base << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  calib.extrinsic.rotation = base * euler_to_rotation(rng.uniform(-0.08, 0.08),
                                                      rng.uniform(-0.08, 0.08),
                                                      rng.uniform(-0.08, 0.08));
  calib.extrinsic.translation =
      Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.05), rng.uniform(-0.4, -0.05));
  return calib;
}

void criterion_1() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;
  Rng rng(0xC1);

  // principal ray cases
  CalibrationSet simple;
  simple.width = 100;
  simple.height = 80;
  simple.projection << 100, 0, 50, 0, 0, 100, 40, 0, 0, 0, 1, 0;
  PointCloud probe;
  probe.points = {{0, 0, 10}, {1, 0, 10}, {0, 0, -5}};
  const ProjectionResult pr = project(probe, simple);
  if (pr.points.size() != 2 || std::abs(pr.points[0].u - 50.0) > 1e-12 ||
      std::abs(pr.points[0].v - 40.0) > 1e-12 || std::abs(pr.points[1].u - 60.0) > 1e-12) {
    pass = false;
    why << "principal-ray example failed; ";
  }

  // round trip at 1e-6 m over random calibrations
  double worst_rt = 0.0;
  for (int t = 0; t < 40 && pass; ++t) {
    const CalibrationSet calib = random_calib(rng);
    PointCloud cloud;
    for (int i = 0; i < 400; ++i)
      cloud.points.push_back(Eigen::Vector3f(static_cast<float>(rng.uniform(3.0, 60.0)),
                                             static_cast<float>(rng.uniform(-15.0, 15.0)),
                                             static_cast<float>(rng.uniform(-4.0, 4.0))));
    const ProjectionResult res = project(cloud, calib);
    for (const ProjectedPoint& p : res.points) {
      const Eigen::Vector3d rec = unproject(p.u, p.v, p.depth, calib);
      const double err =
          (rec - cloud.points[static_cast<std::size_t>(p.point_index)].cast<double>()).norm();
      worst_rt = std::max(worst_rt, err);
    }
  }
  if (worst_rt > 1e-6) {
    pass = false;
    why << "round-trip worst " << worst_rt << " m; ";
  }

  // rigid invariance at 1e-9
  double worst_rigid = 0.0;
  for (int t = 0; t < 20 && pass; ++t) {
    const CalibrationSet calib = random_calib(rng);
    const Eigen::Matrix3d q = euler_to_rotation(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                                                rng.uniform(-3.0, 3.0));
    CalibrationSet adjusted = calib;
    adjusted.extrinsic.rotation = calib.extrinsic.rotation * q.transpose();
    const Eigen::Matrix<double, 3, 4> chain_a = calib.full_chain();
    const Eigen::Matrix<double, 3, 4> chain_b = adjusted.full_chain();
    for (int i = 0; i < 300; ++i) {
      const Eigen::Vector3d x(rng.uniform(2.0, 50.0), rng.uniform(-15.0, 15.0),
                              rng.uniform(-4.0, 4.0));
      const Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
      const Eigen::Vector3d xq = q * x;
      const Eigen::Vector4d xqh(xq.x(), xq.y(), xq.z(), 1.0);
      worst_rigid = std::max(worst_rigid, (chain_a * xh - chain_b * xqh).cwiseAbs().maxCoeff());
    }
  }
  if (worst_rigid > 1e-9) {
    pass = false;
    why << "rigid invariance worst " << worst_rigid << "; ";
  }

  const double secs = seconds_since(t0);
  if (secs >= 10.0) {
    pass = false;
    why << "runtime " << secs << " s >= 10 s; ";
  }
  std::ostringstream detail;
  detail << "geometry oracles (round-trip worst " << worst_rt << " m, rigid worst " << worst_rigid
         << ")";
  if (!pass) detail << " -- " << why.str();
  report(1, pass, detail.str(), secs);
}

// ---------------------------------------------------------------------------
// criterion 2: perturbation correctness, 10k samples per config

void criterion_2() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;

  for (const ErrorRangeConfig& cfg : builtin_error_configs()) {
    for (int i = 0; i < 10000; ++i) {
      const Perturbation p = sample_perturbation(cfg, mix_seed(0xC2, cfg.label, i));
      for (double r : p.rot_errors_deg) {
        const double mag = std::abs(r);
        const bool ok = (cfg.rot_range[0] == 0.0 && cfg.rot_range[1] == 0.0)
                            ? (r == 0.0)
                            : (mag >= cfg.rot_range[0] && mag <= cfg.rot_range[1]);
        if (!ok) {
          pass = false;
          why << cfg.name << " rotation out of band; ";
          break;
        }
      }
      for (int k = 0; k < 3; ++k) {
        const double mag = std::abs(p.trans_error[k]);
        const bool ok = (cfg.trans_range[0] == 0.0 && cfg.trans_range[1] == 0.0)
                            ? (p.trans_error[k] == 0.0)
                            : (mag >= cfg.trans_range[0] && mag <= cfg.trans_range[1]);
        if (!ok) {
          pass = false;
          why << cfg.name << " translation out of band; ";
          break;
        }
      }
      if (p.label != cfg.label) {
        pass = false;
        why << cfg.name << " label drift; ";
      }
      if (!pass) break;
    }
    if (!pass) break;
  }

  // margin gap: 10k calibrated vs 10k miscalibrated samples never overlap
  if (pass) {
    const ErrorRangeConfig& cal = find_error_config(builtin_error_configs(), "Calibrated");
    const ErrorRangeConfig& mis = find_error_config(builtin_error_configs(), "Miscalibrated");
    double cal_max_t = 0.0, cal_max_r = 0.0, mis_min_t = 1e9, mis_min_r = 1e9;
    for (int i = 0; i < 10000; ++i) {
      const Perturbation a = sample_perturbation(cal, mix_seed(0x2CA, i));
      const Perturbation b = sample_perturbation(mis, mix_seed(0x2CB, i));
      for (int k = 0; k < 3; ++k) {
        cal_max_t = std::max(cal_max_t, std::abs(a.trans_error[k]));
        cal_max_r = std::max(cal_max_r, std::abs(a.rot_errors_deg[k]));
        mis_min_t = std::min(mis_min_t, std::abs(b.trans_error[k]));
        mis_min_r = std::min(mis_min_r, std::abs(b.rot_errors_deg[k]));
      }
    }
    if (!(cal_max_t < mis_min_t && cal_max_r < mis_min_r) || !(cal_max_t <= 0.02) ||
        !(mis_min_t >= 0.04) || !(cal_max_r <= 0.3) || !(mis_min_r >= 0.5)) {
      pass = false;
      why << "margin gap violated (cal_max_t " << cal_max_t << ", mis_min_t " << mis_min_t
          << ", cal_max_r " << cal_max_r << ", mis_min_r " << mis_min_r << "); ";
    }
  }

  // zero-perturbation bitwise identity
  if (pass) {
    ErrorRangeConfig zero{"zero", {0.0, 0.0}, {0.0, 0.0}, 0};
    Rng rng(0xC2F);
    CalibrationSet calib = random_calib(rng);
    const Perturbation p = sample_perturbation(zero, 5);
    const CalibrationSet out = apply_extrinsic(calib, p);
    if (std::memcmp(out.extrinsic.rotation.data(), calib.extrinsic.rotation.data(),
                    9 * sizeof(double)) != 0 ||
        std::memcmp(out.extrinsic.translation.data(), calib.extrinsic.translation.data(),
                    3 * sizeof(double)) != 0) {
      pass = false;
      why << "zero perturbation not bitwise identity; ";
    }
  }

  const double secs = seconds_since(t0);
  if (secs >= 30.0) {
    pass = false;
    why << "runtime " << secs << " s >= 30 s; ";
  }
  std::string detail = "perturbation bands, margin gap and zero identity over 10k samples/config";
  if (!pass) detail += " -- " + why.str();
  report(2, pass, detail, secs);
}

// ---------------------------------------------------------------------------
// criterion 3: contrastive-loss oracle

double oracle_contrastive(const nn::Tensor& ei, const nn::Tensor& el, const std::vector<int>& y,
                          double margin) {
  const int n = ei.dim(0), c = ei.dim(1), h = ei.dim(2), w = ei.dim(3);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int hh = 0; hh < h; ++hh)
      for (int ww = 0; ww < w; ++ww) {
        double d2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t at = ((static_cast<std::size_t>(i) * c + ch) * h + hh) * w + ww;
          const double d = static_cast<double>(ei.data[at]) - el.data[at];
          d2 += d * d;
        }
        if (y[static_cast<std::size_t>(i)] == 0)
          total += d2;
        else {
          const double gap = margin - std::sqrt(d2);
          if (gap > 0.0) total += gap * gap;
        }
      }
  return total / (static_cast<double>(n) * h * w);
}

void criterion_3() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;
  Rng rng(0xC3);

  // three analytic cases, exact
  nn::Tensor e({2, 3, 2, 2});
  for (float& v : e.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  if (contrastive_loss(e, e, {0, 0}, 4.0, false).loss != 0.0) {
    pass = false;
    why << "y=0/D=0 not exactly 0; ";
  }
  if (contrastive_loss(e, e, {1, 1}, 4.0, false).loss != 16.0) {
    pass = false;
    why << "y=1/D=0/m=4 not exactly 16; ";
  }
  nn::Tensor far = e;
  for (float& v : far.data) v += 8.0f;
  if (contrastive_loss(e, far, {1, 1}, 4.0, false).loss != 0.0) {
    pass = false;
    why << "y=1/D>=m not exactly 0; ";
  }

  // 50 random batches against the quadruple-loop oracle
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    const int c = 1 + static_cast<int>(rng.uniform_int(6));
    const int h = 1 + static_cast<int>(rng.uniform_int(5));
    const int w = 1 + static_cast<int>(rng.uniform_int(5));
    nn::Tensor ei({n, c, h, w}), el({n, c, h, w});
    for (float& v : ei.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (float& v : el.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.uniform_int(2)));
    const double margin = rng.uniform(0.5, 5.0);
    const double got = contrastive_loss(ei, el, y, margin, false).loss;
    const double want = oracle_contrastive(ei, el, y, margin);
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  if (worst > 1e-6) {
    pass = false;
    why << "oracle mismatch " << worst << " > 1e-6; ";
  }

  // analytic vs finite-difference gradients away from the hinge
  nn::Tensor ei({2, 4, 3, 3}), el({2, 4, 3, 3});
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    auto snap = [&rng]() {
      return static_cast<float>(static_cast<int>(rng.uniform_int(257)) - 128) / 128.0f;
    };
    for (float& v : ei.data) v = snap();
    for (float& v : el.data) v = snap();
    placed = true;
    for (int i = 0; i < 2 && placed; ++i)
      for (int p = 0; p < 9 && placed; ++p) {
        double d2 = 0.0;
        for (int c = 0; c < 4; ++c) {
          const std::size_t at = (static_cast<std::size_t>(i) * 4 + c) * 9 + p;
          d2 += (static_cast<double>(ei.data[at]) - el.data[at]) *
                (static_cast<double>(ei.data[at]) - el.data[at]);
        }
        const double dist = std::sqrt(d2);
        if (std::abs(dist - 4.0) < 0.4 || dist < 0.05) placed = false;
      }
  }
  double worst_grad = 0.0;
  if (placed) {
    const std::vector<int> labels = {0, 1};
    const ContrastiveResult res = contrastive_loss(ei, el, labels, 4.0, true);
    const float h = 1.0f / 256.0f;
    for (std::size_t probe = 0; probe < ei.numel(); probe += 5) {
      nn::Tensor ep = ei, em = ei;
      ep.data[probe] += h;
      em.data[probe] -= h;
      const double fd = (contrastive_loss(ep, el, labels, 4.0, false).loss -
                         contrastive_loss(em, el, labels, 4.0, false).loss) /
                        (2.0 * h);
      const double denom = std::max(std::abs(fd), 1e-3);
      worst_grad = std::max(worst_grad, std::abs(res.grad_img.data[probe] - fd) / denom);
    }
    if (worst_grad > 1e-4) {
      pass = false;
      why << "gradient mismatch " << worst_grad << " > 1e-4; ";
    }
  } else {
    pass = false;
    why << "could not place embeddings away from the hinge; ";
  }

  const double secs = seconds_since(t0);
  if (secs >= 60.0) {
    pass = false;
    why << "runtime >= 60 s; ";
  }
  std::ostringstream detail;
  detail << "contrastive loss: analytic cases exact, oracle worst " << worst << ", grad worst "
         << worst_grad;
  if (!pass) detail << " -- " << why.str();
  report(3, pass, detail.str(), secs);
}

// ---------------------------------------------------------------------------
// criterion 4: CKA property suite

void criterion_4() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;
  Rng rng(0xC4);

  nn::Tensor x({50, 32});
  for (float& v : x.data) v = static_cast<float>(rng.normal());
  if (std::abs(linear_cka(x, x) - 1.0) > 1e-9) {
    pass = false;
    why << "identity != 1; ";
  }

  // orthogonal invariance via a random Householder-QR rotation
  {
    Eigen::MatrixXd g(32, 32);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) g(i, j) = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Eigen::MatrixXd xm(50, 32);
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 32; ++j) xm(i, j) = x.data[static_cast<std::size_t>(i) * 32 + j];
    const Eigen::MatrixXd y = xm * q;
    nn::Tensor rotated({50, 32});
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 32; ++j)
        rotated.data[static_cast<std::size_t>(i) * 32 + j] = static_cast<float>(y(i, j));
    if (std::abs(linear_cka(x, rotated) - 1.0) > 1e-6) {
      pass = false;
      why << "orthogonal invariance; ";
    }
    nn::Tensor scaled = x;
    for (float& v : scaled.data) v *= 2.5f;
    if (std::abs(linear_cka(x, scaled) - 1.0) > 1e-6) {
      pass = false;
      why << "scale invariance; ";
    }
  }

  // symmetry at 1e-9
  double worst_sym = 0.0;
  for (int t = 0; t < 20; ++t) {
    nn::Tensor a({40, 20}), b({40, 28});
    for (float& v : a.data) v = static_cast<float>(rng.normal());
    for (float& v : b.data) v = static_cast<float>(rng.normal());
    worst_sym = std::max(worst_sym, std::abs(linear_cka(a, b) - linear_cka(b, a)));
  }
  if (worst_sym > 1e-9) {
    pass = false;
    why << "symmetry worst " << worst_sym << "; ";
  }

  // independent-random baseline: 100 seeds at 100 x 64
  double worst_baseline = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r2(mix_seed(0xC4BA5E, seed));
    nn::Tensor a({100, 64}), b({100, 64});
    for (float& v : a.data) v = static_cast<float>(r2.normal());
    for (float& v : b.data) v = static_cast<float>(r2.normal());
    worst_baseline = std::max(worst_baseline, linear_cka(a, b));
  }
  if (worst_baseline >= 0.2) {
    pass = false;
    why << "random baseline " << worst_baseline << " >= 0.2; ";
  }

  const double secs = seconds_since(t0);
  if (secs >= 60.0) {
    pass = false;
    why << "runtime >= 60 s; ";
  }
  std::ostringstream detail;
  detail << "CKA properties (symmetry worst " << worst_sym << ", random baseline max "
         << worst_baseline << ")";
  if (!pass) detail << " -- " << why.str();
  report(4, pass, detail.str(), secs);
}

// ---------------------------------------------------------------------------
// criteria 5-7, 10: toy-scale functional reproduction

struct ToyRun {
  TrainResult pretext;
  TrainResult classifier;
  DetectorModel model;
  double train_seconds = 0.0;
};

TrainConfig toy_config(const Options& opt, EncoderVariant variant, int epochs,
                       std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.micro_batch = 8;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.variant = variant;
  cfg.input_width = 512;
  cfg.input_height = 256;
  cfg.val_fraction = 0.05;
  return cfg;
}

ToyRun run_toy_protocol(const Options& opt, const FrameStore& store, EncoderVariant variant,
                        const std::string& tag) {
  const auto t0 = Clock::now();
  ToyRun run;
  const fs::path base = fs::path(opt.artifacts) / tag;
  TrainConfig pre_cfg = toy_config(opt, variant, opt.stage1_epochs, 0xA11CE);
  run.pretext = train_pretext(store, pre_cfg, (base / "pretext").string());
  TrainConfig cls_cfg = toy_config(opt, variant, opt.stage2_epochs, 0xB0B);
  run.classifier = train_classifier(run.pretext.final_checkpoint, store, cls_cfg,
                                    (base / "classifier").string());
  run.model = load_model(run.classifier.best_checkpoint);
  run.train_seconds = seconds_since(t0);
  std::cout << "  [" << tag << "] stage-1 loss";
  for (const EpochLog& log : run.pretext.log) std::cout << ' ' << log.train_loss;
  std::cout << " | stage-2 val acc";
  for (const EpochLog& log : run.classifier.log) std::cout << ' ' << log.val_metric;
  std::cout << " | " << run.train_seconds << " s\n";
  std::cout.flush();
  return run;
}

MetricsEntry eval_on(const DetectorModel& model, const FrameStore& eval_store,
                     const std::string& config, int pairs, std::uint64_t seed) {
  EvalOptions opts;
  opts.pairs_per_side = pairs;
  opts.seed = seed;
  opts.input_width = model.input_width;
  opts.input_height = model.input_height;
  return evaluate_config(model, eval_store, config, builtin_error_configs(), opts);
}

std::string fmt_metrics(const MetricsEntry& e) {
  std::ostringstream os;
  os << e.config << ": acc " << 100.0 * e.accuracy << "%, prec "
     << (e.precision_defined ? std::to_string(100.0 * e.precision) + "%" : "undef") << ", recall "
     << (e.recall_defined ? std::to_string(100.0 * e.recall) + "%" : "undef");
  return os.str();
}

double deepest_pair_mean(const CKAMatrix& grid) {
  // mean over the 2x2 block of the deepest stage's blocks on both axes
  const std::size_t ni = grid.img_layers.size(), nj = grid.lidar_layers.size();
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = ni - 2; i < ni; ++i)
    for (std::size_t j = nj - 2; j < nj; ++j) {
      sum += grid.at(i, j);
      ++count;
    }
  return sum / count;
}

CKAMatrix cka_for_condition(const DetectorModel& model, const FrameStore& store,
                            const std::string& config_name, int n_samples, std::uint64_t seed) {
  const ErrorRangeConfig& cfg = find_error_config(builtin_error_configs(), config_name);
  std::vector<SamplePair> samples;
  samples.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i)
    samples.push_back(make_sample(store.frame(i % store.size()), cfg,
                                  mix_seed(seed, 0xCCA, static_cast<std::uint64_t>(i)),
                                  model.input_width, model.input_height));
  Batch batch = stack_samples(samples);
  samples.clear();
  ActivationTrace ti = capture(*model.image_encoder, batch.images, {}, 8);
  ActivationTrace tl = capture(*model.lidar_encoder, batch.depths, {}, 8);
  return cka_grid(ti, tl);
}

void criteria_5_6_7_10(const Options& opt, bool run5, bool run6, bool run7, bool run10) {
  FrameStore train_store = FrameStore::synthetic(opt.frames, 512, 256, opt.points, 0x5EED);
  FrameStore eval_store = FrameStore::synthetic(opt.eval_frames, 512, 256, opt.points, 0xE7A1);

  // ---- criterion 5 ----
  const auto t5 = Clock::now();
  ToyRun small = run_toy_protocol(opt, train_store, EncoderVariant::resnet18_small, "small");
  MetricsEntry rot_easy = eval_on(small.model, eval_store, "Rot easy", opt.pairs, 0xE5A);
  MetricsEntry trans_easy = eval_on(small.model, eval_store, "Trans easy", opt.pairs, 0xE5B);
  const double secs5 = seconds_since(t5);
  if (run5) {
    const bool pass = rot_easy.accuracy >= 0.9 && rot_easy.precision_defined &&
                      rot_easy.precision >= 0.9 && trans_easy.accuracy >= 0.9 &&
                      trans_easy.precision_defined && trans_easy.precision >= 0.9 &&
                      secs5 <= 3.0 * 3600.0;
    report(5, pass, "toy reproduction -- " + fmt_metrics(rot_easy) + "; " + fmt_metrics(trans_easy),
           secs5);
    std::vector<MetricsEntry> entries{rot_easy, trans_easy};
    write_metrics_csv((fs::path(opt.artifacts) / "criterion5_metrics.csv").string(), entries);
  }

  // ---- criterion 6 ----
  if (run6) {
    const auto t6 = Clock::now();
    const CKAMatrix grid_cal =
        cka_for_condition(small.model, eval_store, "Calibrated", opt.cka_samples, 0x6CA);
    const CKAMatrix grid_mis =
        cka_for_condition(small.model, eval_store, "Miscalibrated", opt.cka_samples, 0x6CB);
    write_cka_csv((fs::path(opt.artifacts) / "cka_calibrated.csv").string(), grid_cal);
    write_cka_csv((fs::path(opt.artifacts) / "cka_miscalibrated.csv").string(), grid_mis);
    render_cka_heatmap((fs::path(opt.artifacts) / "cka_calibrated.png").string(), grid_cal,
                       "CKA (calibrated inputs)");
    render_cka_heatmap((fs::path(opt.artifacts) / "cka_miscalibrated.png").string(), grid_mis,
                       "CKA (miscalibrated inputs)");
    const double mean_cal = deepest_pair_mean(grid_cal);
    const double mean_mis = deepest_pair_mean(grid_mis);
    const bool pass = mean_cal > mean_mis && (mean_cal - mean_mis) >= 0.05;
    std::ostringstream detail;
    detail << "deepest-layer CKA calibrated " << mean_cal << " vs miscalibrated " << mean_mis
           << " (margin " << mean_cal - mean_mis << ")";
    report(6, pass, detail.str(), seconds_since(t6));
  }

  // ---- criterion 10 ----
  if (run10) {
    const auto t10 = Clock::now();
    const MetricsEntry intrinsic =
        eval_on(small.model, eval_store, "Intrinsic hard", opt.pairs, 0x10A);
    const bool pass = intrinsic.recall_defined && intrinsic.recall >= 0.6 &&
                      intrinsic.precision_defined && intrinsic.precision >= 0.9;
    // measured values are reported regardless of pass/fail for audit
    report(10, pass, "intrinsic-error generalization -- " + fmt_metrics(intrinsic),
           seconds_since(t10));
    std::vector<MetricsEntry> entries{intrinsic};
    write_metrics_csv((fs::path(opt.artifacts) / "criterion10_metrics.csv").string(), entries);
  }

  // ---- criterion 7 ----
  if (run7) {
    const auto t7 = Clock::now();
    ToyRun all = run_toy_protocol(opt, train_store, EncoderVariant::resnet18_all, "all");
    const MetricsEntry rot_hard_small =
        eval_on(small.model, eval_store, "Rot hard", opt.pairs, 0x7A);
    const MetricsEntry rot_hard_all = eval_on(all.model, eval_store, "Rot hard", opt.pairs, 0x7A);
    const BenchResult bench_small = bench_model(small.model, 2, 10);
    const BenchResult bench_all = bench_model(all.model, 2, 10);
    const bool pass = rot_hard_all.accuracy <= rot_hard_small.accuracy &&
                      bench_all.median_ms > bench_small.median_ms &&
                      bench_all.params.total() > bench_small.params.total();
    std::ostringstream detail;
    detail << "ablation -- Rot hard acc small " << 100.0 * rot_hard_small.accuracy << "% vs all "
           << 100.0 * rot_hard_all.accuracy << "%; latency " << bench_small.median_ms << " vs "
           << bench_all.median_ms << " ms; params " << bench_small.params.total() << " vs "
           << bench_all.params.total();
    report(7, pass, detail.str(), seconds_since(t7));
    write_bench_csv((fs::path(opt.artifacts) / "bench_small.csv").string(), bench_small);
    write_bench_csv((fs::path(opt.artifacts) / "bench_all.csv").string(), bench_all);
  }
}

// ---------------------------------------------------------------------------
// criterion 8: freezing and determinism

void criterion_8(const Options& opt) {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;

  const FrameStore store = FrameStore::synthetic(16, 96, 64, 2500, 0xC8);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.micro_batch = 4;
  cfg.epochs = 3;
  cfg.seed = 88;
  cfg.input_width = 96;
  cfg.input_height = 64;
  cfg.val_fraction = 0.0;

  const fs::path base = fs::path(opt.artifacts) / "criterion8";
  fs::remove_all(base);

  // same-seed determinism
  const TrainResult a = train_pretext(store, cfg, (base / "run_a").string());
  const TrainResult b = train_pretext(store, cfg, (base / "run_b").string());
  for (std::size_t i = 0; i < a.log.size(); ++i)
    if (a.log[i].train_loss != b.log[i].train_loss) {
      pass = false;
      why << "loss curves differ at epoch " << i << "; ";
    }

  // resume determinism within 1e-5
  TrainConfig part = cfg;
  part.epochs = 2;
  (void)train_pretext(store, part, (base / "run_part").string());
  TrainConfig full = cfg;
  const TrainResult resumed = train_pretext(store, full, (base / "run_part").string(),
                                            (base / "run_part" / "resume_state.mckpt").string());
  if (resumed.log.size() != 1 ||
      std::abs(resumed.log[0].train_loss - a.log[2].train_loss) >= 1e-5) {
    pass = false;
    why << "resume mismatch (" << resumed.log[0].train_loss << " vs " << a.log[2].train_loss
        << "); ";
  }

  // freezing: stage 2 leaves encoder tensors bitwise unchanged
  TrainConfig cls = cfg;
  cls.epochs = 2;
  const TrainResult stage2 =
      train_classifier(a.final_checkpoint, store, cls, (base / "run_cls").string());
  const Checkpoint enc = load_checkpoint(a.final_checkpoint);
  const Checkpoint post = load_checkpoint(stage2.final_checkpoint);
  for (const auto& [name, tensor] : enc.tensors) {
    const nn::Tensor* other = post.find(name);
    if (!other || other->data != tensor.data) {
      pass = false;
      why << "encoder tensor changed: " << name << "; ";
      break;
    }
  }

  std::string detail = "freezing and determinism (same-seed curves equal, resume within 1e-5)";
  if (!pass) detail += " -- " + why.str();
  report(8, pass, detail, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// criterion 9: metrics arithmetic

void criterion_9() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;

  const MetricsEntry e1 = compute_metrics({9, 1, 8, 2}, "hand", 0.5);
  if (std::abs(e1.accuracy - 0.85) > 1e-12 || std::abs(e1.precision - 0.9) > 1e-12 ||
      std::abs(e1.recall - 9.0 / 11.0) > 1e-12) {
    pass = false;
    why << "hand-counted example; ";
  }
  const MetricsEntry e2 = compute_metrics({0, 0, 10, 0}, "hand", 0.5);
  if (e2.precision_defined || e2.accuracy != 1.0) {
    pass = false;
    why << "undefined-precision case; ";
  }
  const MetricsEntry e3 = compute_metrics({5, 0, 7, 0}, "hand", 0.5);
  if (e3.accuracy != 1.0 || e3.precision != 1.0 || e3.recall != 1.0) {
    pass = false;
    why << "perfect case; ";
  }

  Rng rng(0xC9);
  std::vector<double> probs;
  std::vector<int> labels;
  for (int i = 0; i < 2000; ++i) {
    probs.push_back(rng.uniform());
    labels.push_back(static_cast<int>(rng.uniform_int(2)));
  }
  double prev_recall = 2.0;
  std::int64_t prev_fp = 1LL << 40;
  for (int k = 0; k <= 10; ++k) {
    const ConfusionCounts c = counts_at_threshold(probs, labels, k / 10.0);
    const MetricsEntry e = compute_metrics(c, "sweep", k / 10.0);
    if (e.recall_defined) {
      if (e.recall > prev_recall + 1e-12) {
        pass = false;
        why << "recall increased at threshold " << k / 10.0 << "; ";
      }
      prev_recall = e.recall;
    }
    if (c.fp > prev_fp) {
      pass = false;
      why << "fp increased at threshold " << k / 10.0 << "; ";
    }
    prev_fp = c.fp;
  }

  std::string detail = "metrics arithmetic and 11-threshold monotonicity sweep";
  if (!pass) detail += " -- " + why.str();
  report(9, pass, detail, seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() -> std::string { return (i + 1 < argc) ? argv[++i] : ""; };
    if (arg == "--only") {
      std::stringstream ss(next());
      std::string tok;
      while (std::getline(ss, tok, ',')) opt.only.insert(std::stoi(tok));
    } else if (arg == "--frames") opt.frames = std::stoi(next());
    else if (arg == "--eval-frames") opt.eval_frames = std::stoi(next());
    else if (arg == "--stage1-epochs") opt.stage1_epochs = std::stoi(next());
    else if (arg == "--stage2-epochs") opt.stage2_epochs = std::stoi(next());
    else if (arg == "--pairs") opt.pairs = std::stoi(next());
    else if (arg == "--cka-samples") opt.cka_samples = std::stoi(next());
    else if (arg == "--points") opt.points = std::stoi(next());
    else if (arg == "--artifacts") opt.artifacts = next();
    else {
      std::cerr << "unknown flag: " << arg << "\n";
      return 2;
    }
  }
  fs::create_directories(opt.artifacts);

  auto wanted = [&opt](int n) { return opt.only.empty() || opt.only.count(n) > 0; };

  const auto t0 = Clock::now();
  if (wanted(1)) criterion_1();
  if (wanted(2)) criterion_2();
  if (wanted(3)) criterion_3();
  if (wanted(4)) criterion_4();
  if (wanted(9)) criterion_9();
  if (wanted(8)) criterion_8(opt);
  if (wanted(5) || wanted(6) || wanted(7) || wanted(10))
    criteria_5_6_7_10(opt, wanted(5), wanted(6), wanted(7), wanted(10));

  int failures = 0;
  for (const Outcome& o : g_outcomes)
    if (!o.pass) ++failures;
  std::cout << "----\n"
            << g_outcomes.size() - failures << "/" << g_outcomes.size()
            << " criteria passed, total " << seconds_since(t0) << " s\n";
  return failures == 0 ? 0 : 1;
}
