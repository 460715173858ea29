#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace miscal {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Metrics for one test configuration. Ratios whose denominator is zero are
/// flagged undefined instead of producing NaN.
struct MetricsEntry {
  std::string config;
  double threshold = 0.5;
  ConfusionCounts counts;
  double accuracy = 0.0;
  double precision = 0.0;
  bool precision_defined = false;
  double recall = 0.0;
  bool recall_defined = false;
};

MetricsEntry compute_metrics(const ConfusionCounts& counts, const std::string& config,
                             double threshold);

/// Predicted positive iff prob >= threshold.
ConfusionCounts counts_at_threshold(const std::vector<double>& probs,
                                    const std::vector<int>& labels, double threshold);

struct EvalOptions {
  double threshold = 0.5;
  int pairs_per_side = 100;  // positives and negatives each
  std::uint64_t seed = 0;
  int input_width = kDefaultInputWidth;
  int input_height = kDefaultInputHeight;
  int micro_batch = 8;
  std::string negative_config = "Noise";
};

/// Evaluates one named configuration: positives sampled from `config_name`
/// (a Table-2 band or an intrinsic difficulty band), negatives from the
/// Noise band. Deterministic given the seed.
MetricsEntry evaluate_config(const DetectorModel& model, const FrameStore& store,
                             const std::string& config_name,
                             const std::vector<ErrorRangeConfig>& registry,
                             const EvalOptions& opts);

void write_metrics_csv(const std::string& path, const std::vector<MetricsEntry>& entries);
std::string format_metrics_table(const std::vector<MetricsEntry>& entries);

struct BenchResult {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  int warmup = 0;
  int iters = 0;
  ParameterCounts params;
  std::string hardware;
};

/// Times single-pair forward passes (encoders + head) after warm-up.
BenchResult bench_model(const DetectorModel& model, int warmup, int iters);

void write_bench_csv(const std::string& path, const BenchResult& result);
std::string format_bench_report(const BenchResult& result);

}  // namespace miscal
