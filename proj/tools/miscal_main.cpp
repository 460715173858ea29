// miscal - command-line front end for the miscalibration detection toolkit.
// Every subcommand writes a run manifest into its output directory before any
// work starts and marks it completed afterwards.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "miscal/miscal.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;

int status_to_exit(miscal_status s) { return s == MISCAL_OK ? kExitOk : static_cast<int>(s); }

void fail(miscal_status s, const std::string& context) {
  std::cerr << "error: " << context << ": " << miscal_last_error() << '\n';
}

std::string iso_now() {
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

struct Manifest {
  fs::path path;
  json doc;
  std::clock_t cpu_start = 0;
  std::time_t wall_start = 0;

  void begin(const std::string& command, const json& config, std::uint64_t seed,
             const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
             const std::string& out_dir) {
    fs::create_directories(out_dir);
    path = fs::path(out_dir) / "run_manifest.json";
    doc["command"] = command;
    doc["config"] = config;
    doc["seed"] = seed;
    doc["inputs"] = inputs;
    doc["outputs"] = outputs;
    doc["version"] = miscal_version();
    doc["started_at"] = iso_now();
    doc["completed"] = false;
    wall_start = std::time(nullptr);
    write();
  }

  void complete() {
    doc["completed"] = true;
    doc["completed_at"] = iso_now();
    doc["wall_clock_seconds"] = static_cast<double>(std::time(nullptr) - wall_start);
    write();
  }

  void write() const {
    std::ofstream f(path);
    f << doc.dump(2) << '\n';
  }
};

struct DatasetArgs {
  std::string kitti_root;
  std::string sequences = "00";
  std::string holdout;  // reserved test sequence for training commands
  int max_frames = 0;
  int synthetic = 0;
  int synth_points = 40000;
  int width = 512;
  int height = 256;
  std::uint64_t data_seed = 1;

  void attach(CLI::App* cmd, bool training_command = false) {
    cmd->add_option("--kitti-root", kitti_root,
                    "KITTI odometry root (env MISCAL_DATA_ROOT overrides)");
    cmd->add_option("--sequences", sequences, "comma-separated KITTI sequences");
    cmd->add_option("--max-frames", max_frames, "cap frames per sequence (0 = all)");
    cmd->add_option("--synthetic", synthetic, "use N synthetic frames instead of KITTI");
    cmd->add_option("--synth-points", synth_points, "LiDAR points per synthetic frame");
    cmd->add_option("--width", width, "network input width");
    cmd->add_option("--height", height, "network input height");
    cmd->add_option("--data-seed", data_seed, "seed for synthetic scene generation");
    if (training_command) {
      holdout = "00";
      cmd->add_option("--test-sequence", holdout,
                      "KITTI sequence reserved for testing; training refuses it");
    }
  }

  miscal_status open_store(miscal_dataset** out, std::string* input_desc) const {
    if (synthetic > 0) {
      *input_desc = "synthetic:" + std::to_string(synthetic);
      return miscal_dataset_open_synthetic(synthetic, width, height, synth_points, data_seed, out);
    }
    std::string root = kitti_root;
    if (const char* env = std::getenv("MISCAL_DATA_ROOT"); env && env[0]) root = env;
    if (root.empty()) {
      std::cerr << "error: no dataset given (use --synthetic N or --kitti-root/MISCAL_DATA_ROOT)\n";
      return MISCAL_ERR_USAGE;
    }
    *input_desc = root + " [" + sequences + "]";
    return miscal_dataset_open_kitti(root.c_str(), sequences.c_str(), max_frames,
                                     holdout.empty() ? nullptr : holdout.c_str(), out);
  }

  json to_json() const {
    return json{{"kitti_root", kitti_root}, {"sequences", sequences},
                {"max_frames", max_frames}, {"synthetic", synthetic},
                {"synth_points", synth_points}, {"width", width},
                {"height", height},          {"data_seed", data_seed}};
  }
};

struct TrainArgs {
  miscal_train_options opts;
  std::string variant = "resnet18_small";
  std::string error_config_file;
  std::string resume_from;

  TrainArgs() { miscal_train_options_init(&opts); }

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", opts.epochs, "training epochs");
    cmd->add_option("--batch-size", opts.batch_size, "logical batch size (balanced)");
    cmd->add_option("--micro-batch", opts.micro_batch, "gradient accumulation slice");
    cmd->add_option("--lr", opts.lr_initial, "initial learning rate");
    cmd->add_option("--lr-after-drop", opts.lr_after_drop, "learning rate after the drop epoch");
    cmd->add_option("--lr-drop-epoch", opts.lr_drop_epoch, "epoch at which the rate drops");
    cmd->add_option("--weight-decay", opts.weight_decay, "decoupled weight decay");
    cmd->add_option("--margin", opts.margin, "contrastive margin m");
    cmd->add_option("--val-fraction", opts.val_fraction, "held-out validation fraction");
    cmd->add_option("--seed", opts.seed, "training seed");
    cmd->add_option("--variant", variant, "resnet18_small | resnet18_all");
    cmd->add_option("--error-config", error_config_file, "error band config file");
    cmd->add_option("--resume", resume_from, "resume from resume_state.mckpt");
  }

  void finalize(const DatasetArgs& data) {
    opts.variant = variant.c_str();
    opts.error_config_file = error_config_file.empty() ? nullptr : error_config_file.c_str();
    opts.resume_from = resume_from.empty() ? nullptr : resume_from.c_str();
    opts.input_width = data.width;
    opts.input_height = data.height;
  }

  json to_json() const {
    return json{{"epochs", opts.epochs},
                {"batch_size", opts.batch_size},
                {"micro_batch", opts.micro_batch},
                {"lr_initial", opts.lr_initial},
                {"lr_after_drop", opts.lr_after_drop},
                {"lr_drop_epoch", opts.lr_drop_epoch},
                {"weight_decay", opts.weight_decay},
                {"margin", opts.margin},
                {"val_fraction", opts.val_fraction},
                {"seed", opts.seed},
                {"variant", variant},
                {"error_config_file", error_config_file},
                {"resume_from", resume_from}};
  }
};

struct DatasetHandle {
  miscal_dataset* ds = nullptr;
  ~DatasetHandle() { miscal_dataset_close(ds); }
};

struct ModelHandle {
  miscal_model* model = nullptr;
  ~ModelHandle() { miscal_model_close(model); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera miscalibration detection toolkit"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* cmd_generate = app.add_subcommand("generate", "materialize a labeled dataset");
  DatasetArgs gen_data;
  gen_data.attach(cmd_generate);
  std::string gen_configs = "Calibrated,Miscalibrated";
  std::string gen_error_config, gen_out = "out/generated";
  std::uint64_t gen_seed = 0;
  cmd_generate->add_option("--configs", gen_configs, "comma-separated config names");
  cmd_generate->add_option("--error-config", gen_error_config, "error band config file");
  cmd_generate->add_option("--out", gen_out, "output directory");
  cmd_generate->add_option("--seed", gen_seed, "sampling seed");

  // ---- train-pretext ----
  auto* cmd_pretext = app.add_subcommand("train-pretext", "stage 1: contrastive encoder training");
  DatasetArgs pre_data;
  pre_data.attach(cmd_pretext, true);
  TrainArgs pre_train;
  pre_train.attach(cmd_pretext);
  std::string pre_out = "out/pretext";
  cmd_pretext->add_option("--out", pre_out, "run directory");

  // ---- train-classifier ----
  auto* cmd_classifier =
      app.add_subcommand("train-classifier", "stage 2: classifier head on frozen encoders");
  DatasetArgs cls_data;
  cls_data.attach(cmd_classifier, true);
  TrainArgs cls_train;
  cls_train.attach(cmd_classifier);
  std::string cls_encoder, cls_out = "out/classifier";
  cmd_classifier->add_option("--encoder", cls_encoder, "stage-1 encoder checkpoint")->required();
  cmd_classifier->add_option("--out", cls_out, "run directory");

  // ---- evaluate ----
  auto* cmd_evaluate = app.add_subcommand("evaluate", "metrics across test configurations");
  DatasetArgs eval_data;
  eval_data.attach(cmd_evaluate);
  std::string eval_ckpt, eval_configs = "Miscalibrated,Unseen,Rot easy,Rot hard,Trans easy,Trans hard";
  std::string eval_error_config, eval_out = "out/evaluation";
  double eval_threshold = 0.5;
  int eval_pairs = 100;
  std::uint64_t eval_seed = 7;
  cmd_evaluate->add_option("--checkpoint", eval_ckpt, "stage-2 checkpoint")->required();
  cmd_evaluate->add_option("--configs", eval_configs, "comma-separated config names");
  cmd_evaluate->add_option("--error-config", eval_error_config, "error band config file");
  cmd_evaluate->add_option("--threshold", eval_threshold, "decision threshold");
  cmd_evaluate->add_option("--pairs", eval_pairs, "positives and negatives per config");
  cmd_evaluate->add_option("--seed", eval_seed, "evaluation seed");
  cmd_evaluate->add_option("--out", eval_out, "output directory");

  // ---- cka ----
  auto* cmd_cka = app.add_subcommand("cka", "layer-by-layer CKA between the two encoders");
  DatasetArgs cka_data;
  cka_data.attach(cmd_cka);
  std::string cka_ckpt, cka_condition = "calibrated", cka_out = "out/cka";
  int cka_samples = 256;
  std::uint64_t cka_seed = 11;
  cmd_cka->add_option("--checkpoint", cka_ckpt, "model checkpoint")->required();
  cmd_cka->add_option("--condition", cka_condition, "calibrated | miscalibrated");
  cmd_cka->add_option("--samples", cka_samples, "activation batch size");
  cmd_cka->add_option("--seed", cka_seed, "sampling seed");
  cmd_cka->add_option("--out", cka_out, "output directory");

  // ---- bench ----
  auto* cmd_bench = app.add_subcommand("bench", "inference latency and model size");
  std::string bench_ckpt, bench_out = "out/bench";
  int bench_warmup = 5, bench_iters = 30;
  cmd_bench->add_option("--checkpoint", bench_ckpt, "model checkpoint")->required();
  cmd_bench->add_option("--warmup", bench_warmup, "warm-up iterations");
  cmd_bench->add_option("--iters", bench_iters, "timed iterations");
  cmd_bench->add_option("--out", bench_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (cmd_generate->parsed()) {
    Manifest manifest;
    manifest.begin("generate",
                   json{{"configs", gen_configs},
                        {"error_config", gen_error_config},
                        {"data", gen_data.to_json()}},
                   gen_seed, {gen_data.kitti_root}, {gen_out}, gen_out);
    DatasetHandle ds;
    std::string input_desc;
    miscal_status s = gen_data.open_store(&ds.ds, &input_desc);
    if (s != MISCAL_OK) {
      fail(s, "opening dataset");
      return status_to_exit(s);
    }
    s = miscal_generate(ds.ds, gen_configs.c_str(),
                        gen_error_config.empty() ? nullptr : gen_error_config.c_str(),
                        gen_data.width, gen_data.height, gen_seed, gen_out.c_str());
    if (s != MISCAL_OK) {
      fail(s, "generate");
      return status_to_exit(s);
    }
    manifest.complete();
    std::cout << "generated " << miscal_dataset_frame_count(ds.ds) << " pairs per config under "
              << gen_out << '\n';
    return kExitOk;
  }

  if (cmd_pretext->parsed()) {
    pre_train.finalize(pre_data);
    Manifest manifest;
    manifest.begin("train-pretext",
                   json{{"train", pre_train.to_json()}, {"data", pre_data.to_json()}},
                   pre_train.opts.seed, {pre_data.kitti_root}, {pre_out}, pre_out);
    DatasetHandle ds;
    std::string input_desc;
    miscal_status s = pre_data.open_store(&ds.ds, &input_desc);
    if (s != MISCAL_OK) {
      fail(s, "opening dataset");
      return status_to_exit(s);
    }
    char ckpt[4096] = {0};
    s = miscal_train_pretext(ds.ds, &pre_train.opts, pre_out.c_str(), ckpt, sizeof(ckpt));
    if (s != MISCAL_OK) {
      fail(s, "train-pretext");
      return status_to_exit(s);
    }
    manifest.doc["outputs"].push_back(std::string(ckpt));
    manifest.complete();
    std::cout << "encoder checkpoint: " << ckpt << '\n';
    return kExitOk;
  }

  if (cmd_classifier->parsed()) {
    cls_train.finalize(cls_data);
    Manifest manifest;
    manifest.begin("train-classifier",
                   json{{"train", cls_train.to_json()},
                        {"encoder", cls_encoder},
                        {"data", cls_data.to_json()}},
                   cls_train.opts.seed, {cls_encoder}, {cls_out}, cls_out);
    DatasetHandle ds;
    std::string input_desc;
    miscal_status s = cls_data.open_store(&ds.ds, &input_desc);
    if (s != MISCAL_OK) {
      fail(s, "opening dataset");
      return status_to_exit(s);
    }
    char ckpt[4096] = {0};
    s = miscal_train_classifier(ds.ds, cls_encoder.c_str(), &cls_train.opts, cls_out.c_str(), ckpt,
                                sizeof(ckpt));
    if (s != MISCAL_OK) {
      fail(s, "train-classifier");
      return status_to_exit(s);
    }
    manifest.doc["outputs"].push_back(std::string(ckpt));
    manifest.complete();
    std::cout << "classifier checkpoint: " << ckpt << '\n';
    return kExitOk;
  }

  if (cmd_evaluate->parsed()) {
    Manifest manifest;
    manifest.begin("evaluate",
                   json{{"checkpoint", eval_ckpt},
                        {"configs", eval_configs},
                        {"threshold", eval_threshold},
                        {"pairs", eval_pairs},
                        {"data", eval_data.to_json()}},
                   eval_seed, {eval_ckpt}, {eval_out}, eval_out);
    ModelHandle model;
    miscal_status s = miscal_model_open(eval_ckpt.c_str(), &model.model);
    if (s != MISCAL_OK) {
      fail(s, "opening checkpoint");
      return status_to_exit(s);
    }
    DatasetHandle ds;
    std::string input_desc;
    s = eval_data.open_store(&ds.ds, &input_desc);
    if (s != MISCAL_OK) {
      fail(s, "opening dataset");
      return status_to_exit(s);
    }
    s = miscal_evaluate(model.model, ds.ds, eval_configs.c_str(),
                        eval_error_config.empty() ? nullptr : eval_error_config.c_str(),
                        eval_threshold, eval_pairs, eval_seed, eval_out.c_str());
    if (s != MISCAL_OK) {
      fail(s, "evaluate");
      return status_to_exit(s);
    }
    manifest.complete();
    std::ifstream table(fs::path(eval_out) / "metrics.txt");
    std::cout << table.rdbuf();
    return kExitOk;
  }

  if (cmd_cka->parsed()) {
    Manifest manifest;
    manifest.begin("cka",
                   json{{"checkpoint", cka_ckpt},
                        {"condition", cka_condition},
                        {"samples", cka_samples},
                        {"data", cka_data.to_json()}},
                   cka_seed, {cka_ckpt}, {cka_out}, cka_out);
    ModelHandle model;
    miscal_status s = miscal_model_open(cka_ckpt.c_str(), &model.model);
    if (s != MISCAL_OK) {
      fail(s, "opening checkpoint");
      return status_to_exit(s);
    }
    DatasetHandle ds;
    std::string input_desc;
    s = cka_data.open_store(&ds.ds, &input_desc);
    if (s != MISCAL_OK) {
      fail(s, "opening dataset");
      return status_to_exit(s);
    }
    s = miscal_cka(model.model, ds.ds, cka_condition.c_str(), cka_samples, cka_seed,
                   cka_out.c_str());
    if (s != MISCAL_OK) {
      fail(s, "cka");
      return status_to_exit(s);
    }
    manifest.complete();
    std::cout << "CKA grid written to " << cka_out << '\n';
    return kExitOk;
  }

  if (cmd_bench->parsed()) {
    Manifest manifest;
    manifest.begin("bench",
                   json{{"checkpoint", bench_ckpt}, {"warmup", bench_warmup}, {"iters", bench_iters}},
                   0, {bench_ckpt}, {bench_out}, bench_out);
    ModelHandle model;
    miscal_status s = miscal_model_open(bench_ckpt.c_str(), &model.model);
    if (s != MISCAL_OK) {
      fail(s, "opening checkpoint");
      return status_to_exit(s);
    }
    const std::string csv = (fs::path(bench_out) / "bench.csv").string();
    s = miscal_bench(model.model, bench_warmup, bench_iters, csv.c_str());
    if (s != MISCAL_OK) {
      fail(s, "bench");
      return status_to_exit(s);
    }
    manifest.complete();
    std::ifstream in(csv);
    std::cout << in.rdbuf();
    return kExitOk;
  }

  return kExitUsage;
}
