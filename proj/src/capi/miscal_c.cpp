#include "miscal/miscal.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "core/cka.hpp"
#include "core/dataset.hpp"
#include "core/evaluation.hpp"
#include "core/kitti.hpp"
#include "core/training.hpp"

namespace fs = std::filesystem;

struct miscal_dataset {
  miscal::FrameStore store;
};

struct miscal_model {
  miscal::DetectorModel model;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

miscal_status classify_exception(const std::exception& e) {
  set_error(e.what());
  if (dynamic_cast<const miscal::NumericError*>(&e)) return MISCAL_ERR_NUMERIC;
  if (dynamic_cast<const miscal::FileNotFoundError*>(&e) ||
      dynamic_cast<const miscal::ParseError*>(&e))
    return MISCAL_ERR_DATA;
  if (dynamic_cast<const std::invalid_argument*>(&e) ||
      dynamic_cast<const std::out_of_range*>(&e))
    return MISCAL_ERR_USAGE;
  if (dynamic_cast<const std::runtime_error*>(&e)) return MISCAL_ERR_DATA;
  return MISCAL_ERR_INTERNAL;
}

template <typename Fn>
miscal_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return classify_exception(e);
  } catch (...) {
    set_error("unknown failure");
    return MISCAL_ERR_INTERNAL;
  }
}

std::vector<std::string> split_csv(const char* csv) {
  std::vector<std::string> out;
  if (!csv) return out;
  std::string s(csv);
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    std::string tok = s.substr(start, comma - start);
    const auto b = tok.find_first_not_of(" \t");
    const auto e = tok.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
    start = comma + 1;
  }
  return out;
}

miscal::TrainConfig to_train_config(const miscal_train_options& o) {
  miscal::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.micro_batch = o.micro_batch;
  cfg.lr_initial = o.lr_initial;
  cfg.lr_after_drop = o.lr_after_drop;
  cfg.lr_drop_epoch = o.lr_drop_epoch;
  cfg.weight_decay = o.weight_decay;
  cfg.margin = o.margin;
  cfg.val_fraction = o.val_fraction;
  cfg.seed = o.seed;
  cfg.input_width = o.input_width;
  cfg.input_height = o.input_height;
  if (o.variant) {
    const auto v = miscal::parse_variant(o.variant);
    if (!v) throw std::invalid_argument(std::string("unknown variant: ") + o.variant);
    cfg.variant = *v;
  }
  if (o.error_config_file && o.error_config_file[0])
    cfg.config_registry = miscal::load_error_configs(o.error_config_file);
  return cfg;
}

void copy_path(const std::string& path, char* out, size_t cap) {
  if (!out || cap == 0) return;
  const std::size_t n = std::min(path.size(), cap - 1);
  std::memcpy(out, path.data(), n);
  out[n] = '\0';
}

}  // namespace

extern "C" {

const char* miscal_version(void) { return "0.1.0"; }

const char* miscal_last_error(void) { return g_last_error.c_str(); }

miscal_status miscal_dataset_open_synthetic(int n_frames, int width, int height,
                                            int points_per_frame, uint64_t seed,
                                            miscal_dataset** out) {
  return guarded([&]() {
    if (!out) {
      set_error("out pointer is null");
      return MISCAL_ERR_USAGE;
    }
    auto ds = std::make_unique<miscal_dataset>();
    ds->store = miscal::FrameStore::synthetic(n_frames, width, height, points_per_frame, seed);
    *out = ds.release();
    return MISCAL_OK;
  });
}

miscal_status miscal_dataset_open_kitti(const char* root, const char* sequences,
                                        int max_frames_per_seq, const char* holdout_sequence,
                                        miscal_dataset** out) {
  return guarded([&]() {
    if (!out || !root) {
      set_error("root/out pointer is null");
      return MISCAL_ERR_USAGE;
    }
    const std::vector<std::string> seqs = split_csv(sequences);
    if (seqs.empty()) {
      set_error("no sequences given");
      return MISCAL_ERR_USAGE;
    }
    auto ds = std::make_unique<miscal_dataset>();
    ds->store = miscal::FrameStore::kitti(root, seqs, max_frames_per_seq,
                                          holdout_sequence ? holdout_sequence : "");
    *out = ds.release();
    return MISCAL_OK;
  });
}

int miscal_dataset_frame_count(const miscal_dataset* ds) { return ds ? ds->store.size() : 0; }

void miscal_dataset_close(miscal_dataset* ds) { delete ds; }

miscal_status miscal_generate(const miscal_dataset* ds, const char* configs_csv,
                              const char* error_config_file, int input_width, int input_height,
                              uint64_t seed, const char* out_dir) {
  return guarded([&]() {
    if (!ds || !configs_csv || !out_dir) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    const std::vector<miscal::ErrorRangeConfig> registry =
        (error_config_file && error_config_file[0])
            ? miscal::load_error_configs(error_config_file)
            : miscal::builtin_error_configs();
    const std::vector<std::string> names = split_csv(configs_csv);
    if (names.empty()) {
      set_error("no config names given");
      return MISCAL_ERR_USAGE;
    }
    // resolve every name before producing any output
    std::vector<const miscal::ErrorRangeConfig*> configs;
    for (const std::string& n : names) configs.push_back(&miscal::find_error_config(registry, n));
    for (const miscal::ErrorRangeConfig* cfg : configs)
      miscal::export_split(ds->store, *cfg, out_dir, seed, input_width, input_height);
    return MISCAL_OK;
  });
}

void miscal_train_options_init(miscal_train_options* opts) {
  if (!opts) return;
  opts->epochs = 50;
  opts->batch_size = 64;
  opts->micro_batch = 8;
  opts->lr_initial = 1e-3;
  opts->lr_after_drop = 1e-4;
  opts->lr_drop_epoch = 30;
  opts->weight_decay = 0.05;
  opts->margin = 4.0;
  opts->val_fraction = 0.05;
  opts->seed = 0;
  opts->input_width = miscal::kDefaultInputWidth;
  opts->input_height = miscal::kDefaultInputHeight;
  opts->variant = "resnet18_small";
  opts->error_config_file = nullptr;
  opts->resume_from = nullptr;
}

miscal_status miscal_train_pretext(const miscal_dataset* ds, const miscal_train_options* opts,
                                   const char* run_dir, char* checkpoint_path_out, size_t cap) {
  return guarded([&]() {
    if (!ds || !opts || !run_dir) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    const miscal::TrainConfig cfg = to_train_config(*opts);
    const miscal::TrainResult res = miscal::train_pretext(
        ds->store, cfg, run_dir, opts->resume_from ? opts->resume_from : "");
    copy_path(res.final_checkpoint, checkpoint_path_out, cap);
    return MISCAL_OK;
  });
}

miscal_status miscal_train_classifier(const miscal_dataset* ds, const char* encoder_checkpoint,
                                      const miscal_train_options* opts, const char* run_dir,
                                      char* checkpoint_path_out, size_t cap) {
  return guarded([&]() {
    if (!ds || !opts || !run_dir || !encoder_checkpoint) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    const miscal::TrainConfig cfg = to_train_config(*opts);
    const miscal::TrainResult res = miscal::train_classifier(
        encoder_checkpoint, ds->store, cfg, run_dir, opts->resume_from ? opts->resume_from : "");
    copy_path(res.best_checkpoint, checkpoint_path_out, cap);
    return MISCAL_OK;
  });
}

miscal_status miscal_model_open(const char* checkpoint_path, miscal_model** out) {
  return guarded([&]() {
    if (!out || !checkpoint_path) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    auto m = std::make_unique<miscal_model>();
    m->model = miscal::load_model(checkpoint_path);
    *out = m.release();
    return MISCAL_OK;
  });
}

void miscal_model_close(miscal_model* model) { delete model; }

int64_t miscal_model_parameter_count(const miscal_model* model) {
  return model ? model->model.count_parameters().total() : 0;
}

miscal_status miscal_evaluate(const miscal_model* model, const miscal_dataset* ds,
                              const char* configs_csv, const char* error_config_file,
                              double threshold, int pairs_per_config, uint64_t seed,
                              const char* out_dir) {
  return guarded([&]() {
    if (!model || !ds || !configs_csv || !out_dir) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    const std::vector<miscal::ErrorRangeConfig> registry =
        (error_config_file && error_config_file[0])
            ? miscal::load_error_configs(error_config_file)
            : miscal::builtin_error_configs();
    const std::vector<std::string> names = split_csv(configs_csv);
    if (names.empty()) {
      set_error("no config names given");
      return MISCAL_ERR_USAGE;
    }
    // validate all names before any work
    for (const std::string& n : names)
      if (!miscal::parse_intrinsic_difficulty(n)) miscal::find_error_config(registry, n);

    miscal::EvalOptions eopts;
    eopts.threshold = threshold;
    eopts.pairs_per_side = pairs_per_config;
    eopts.seed = seed;
    eopts.input_width = model->model.input_width;
    eopts.input_height = model->model.input_height;

    std::vector<miscal::MetricsEntry> entries;
    for (const std::string& n : names)
      entries.push_back(miscal::evaluate_config(model->model, ds->store, n, registry, eopts));

    fs::create_directories(out_dir);
    miscal::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), entries);
    std::ofstream table(fs::path(out_dir) / "metrics.txt");
    table << miscal::format_metrics_table(entries);
    return MISCAL_OK;
  });
}

miscal_status miscal_cka(const miscal_model* model, const miscal_dataset* ds,
                         const char* condition, int n_samples, uint64_t seed,
                         const char* out_dir) {
  return guarded([&]() {
    if (!model || !ds || !condition || !out_dir) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    const std::string cond(condition);
    std::string config_name;
    if (cond == "calibrated") config_name = "Calibrated";
    else if (cond == "miscalibrated") config_name = "Miscalibrated";
    else {
      set_error("condition must be 'calibrated' or 'miscalibrated'");
      return MISCAL_ERR_USAGE;
    }
    const auto& registry = miscal::builtin_error_configs();
    const miscal::ErrorRangeConfig& cfg = miscal::find_error_config(registry, config_name);

    const miscal::DetectorModel& m = model->model;
    std::vector<miscal::SamplePair> samples;
    samples.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
      const miscal::Frame& frame = ds->store.frame(i % ds->store.size());
      samples.push_back(miscal::make_sample(
          frame, cfg, miscal::mix_seed(seed, 0xCCA, static_cast<std::uint64_t>(i)), m.input_width,
          m.input_height));
    }
    miscal::Batch batch = miscal::stack_samples(samples);
    samples.clear();

    miscal::ActivationTrace trace_img = miscal::capture(*m.image_encoder, batch.images, {}, 8);
    miscal::ActivationTrace trace_lid = miscal::capture(*m.lidar_encoder, batch.depths, {}, 8);
    const miscal::CKAMatrix grid = miscal::cka_grid(trace_img, trace_lid);

    fs::create_directories(out_dir);
    miscal::write_cka_csv((fs::path(out_dir) / ("cka_" + cond + ".csv")).string(), grid);
    miscal::render_cka_heatmap((fs::path(out_dir) / ("cka_" + cond + ".png")).string(), grid,
                               "CKA (" + cond + " inputs)");
    return MISCAL_OK;
  });
}

miscal_status miscal_bench(const miscal_model* model, int warmup, int iters,
                           const char* out_csv) {
  return guarded([&]() {
    if (!model || !out_csv) {
      set_error("null argument");
      return MISCAL_ERR_USAGE;
    }
    if (warmup < 0 || iters <= 0) {
      set_error("warmup must be >= 0 and iters > 0");
      return MISCAL_ERR_USAGE;
    }
    const miscal::BenchResult r = miscal::bench_model(model->model, warmup, iters);
    miscal::write_bench_csv(out_csv, r);
    return MISCAL_OK;
  });
}

}  // extern "C"
