#include "core/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace miscal {

MetricsEntry compute_metrics(const ConfusionCounts& counts, const std::string& config,
                             double threshold) {
  MetricsEntry e;
  e.config = config;
  e.threshold = threshold;
  e.counts = counts;
  const std::int64_t total = counts.total();
  e.accuracy = total ? static_cast<double>(counts.tp + counts.tn) / static_cast<double>(total) : 0.0;
  if (counts.tp + counts.fp > 0) {
    e.precision_defined = true;
    e.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  }
  if (counts.tp + counts.fn > 0) {
    e.recall_defined = true;
    e.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  }
  return e;
}

ConfusionCounts counts_at_threshold(const std::vector<double>& probs,
                                    const std::vector<int>& labels, double threshold) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("counts_at_threshold: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int pred = probs[i] >= threshold ? 1 : 0;
    if (pred == 1 && labels[i] == 1) ++c.tp;
    else if (pred == 1 && labels[i] == 0) ++c.fp;
    else if (pred == 0 && labels[i] == 0) ++c.tn;
    else ++c.fn;
  }
  return c;
}

namespace {

Perturbation positive_perturbation(const std::string& config_name,
                                   const std::vector<ErrorRangeConfig>& registry,
                                   const Frame& frame, std::uint64_t seed) {
  if (const auto difficulty = parse_intrinsic_difficulty(config_name))
    return sample_intrinsic_perturbation(*difficulty, frame.calib.fu(), seed);
  const ErrorRangeConfig& cfg = find_error_config(registry, config_name);
  return sample_perturbation(cfg, seed);
}

}  // namespace

MetricsEntry evaluate_config(const DetectorModel& model, const FrameStore& store,
                             const std::string& config_name,
                             const std::vector<ErrorRangeConfig>& registry,
                             const EvalOptions& opts) {
  if (!parse_intrinsic_difficulty(config_name))
    find_error_config(registry, config_name);  // throws for unknown names
  const ErrorRangeConfig& negative = find_error_config(registry, opts.negative_config);

  std::vector<SamplePair> pending;
  pending.reserve(static_cast<std::size_t>(opts.micro_batch));
  std::vector<double> probs;
  std::vector<int> labels;
  auto flush = [&]() {
    if (pending.empty()) return;
    Batch b = stack_samples(pending);
    const std::vector<double> p = model.classify(b.images, b.depths);
    probs.insert(probs.end(), p.begin(), p.end());
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    pending.clear();
  };

  for (int i = 0; i < opts.pairs_per_side; ++i) {
    const Frame& frame = store.frame(i % store.size());
    const Perturbation pos = positive_perturbation(
        config_name, registry, frame, mix_seed(opts.seed, 0x905, static_cast<std::uint64_t>(i)));
    pending.push_back(make_sample_with(frame, pos, opts.input_width, opts.input_height));
    if (static_cast<int>(pending.size()) == opts.micro_batch) flush();

    const Perturbation neg =
        sample_perturbation(negative, mix_seed(opts.seed, 0x9E6, static_cast<std::uint64_t>(i)));
    pending.push_back(make_sample_with(frame, neg, opts.input_width, opts.input_height));
    if (static_cast<int>(pending.size()) == opts.micro_batch) flush();
  }
  flush();

  return compute_metrics(counts_at_threshold(probs, labels, opts.threshold), config_name,
                         opts.threshold);
}

namespace {
std::string ratio_or_undef(double v, bool defined) {
  if (!defined) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}
}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write metrics csv: " + path);
  f << "config,threshold,samples,tp,fp,tn,fn,accuracy,precision,recall\n";
  for (const MetricsEntry& e : entries) {
    f << e.config << ',' << e.threshold << ',' << e.counts.total() << ',' << e.counts.tp << ','
      << e.counts.fp << ',' << e.counts.tn << ',' << e.counts.fn << ',' << e.accuracy << ','
      << (e.precision_defined ? std::to_string(e.precision) : "undefined") << ','
      << (e.recall_defined ? std::to_string(e.recall) : "undefined") << '\n';
  }
}

std::string format_metrics_table(const std::vector<MetricsEntry>& entries) {
  auto pct = [](double v, bool defined) -> std::string {
    if (!defined) return "   undef";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%7.2f%%", 100.0 * v);
    return buf;
  };
  std::ostringstream os;
  os << "Config            Accuracy  Precision    Recall  Samples\n";
  os << "----------------  --------  ---------  --------  -------\n";
  for (const MetricsEntry& e : entries) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-16s  %s  %s   %s  %7lld\n", e.config.c_str(),
                  pct(e.accuracy, true).c_str(), pct(e.precision, e.precision_defined).c_str(),
                  pct(e.recall, e.recall_defined).c_str(),
                  static_cast<long long>(e.counts.total()));
    os << line;
  }
  return os.str();
}

BenchResult bench_model(const DetectorModel& model, int warmup, int iters) {
  BenchResult r;
  r.warmup = warmup;
  r.iters = iters;
  r.params = model.count_parameters();

  nn::Tensor image({1, 3, model.input_height, model.input_width});
  nn::Tensor depth({1, 1, model.input_height, model.input_width});
  Rng rng(0xBE9C4);
  for (float& v : image.data) v = static_cast<float>(rng.uniform());
  for (float& v : depth.data) v = (rng.uniform() < 0.25) ? static_cast<float>(rng.uniform()) : 0.0f;

  for (int i = 0; i < warmup; ++i) (void)model.classify(image, depth);

  std::vector<double> times_ms;
  times_ms.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.classify(image, depth);
    const auto t1 = std::chrono::steady_clock::now();
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = times_ms;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double t : times_ms) sum += t;
  r.mean_ms = times_ms.empty() ? 0.0 : sum / static_cast<double>(times_ms.size());
  if (!sorted.empty()) {
    r.median_ms = sorted[sorted.size() / 2];
    std::size_t p95 = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
    if (p95 >= sorted.size()) p95 = sorted.size() - 1;
    r.p95_ms = sorted[p95];
  }

  std::string cpu = "unknown cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  r.hardware = cpu + " (" + std::to_string(std::thread::hardware_concurrency()) + " hw threads)";
  return r;
}

void write_bench_csv(const std::string& path, const BenchResult& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write bench csv: " + path);
  f << "# hardware: " << r.hardware << "\n";
  f << "# warmup: " << r.warmup << ", iters: " << r.iters << "\n";
  f << "mean_ms,median_ms,p95_ms,params_total,params_image_encoder,params_lidar_encoder,params_head\n";
  f << r.mean_ms << ',' << r.median_ms << ',' << r.p95_ms << ',' << r.params.total() << ','
    << r.params.image_encoder << ',' << r.params.lidar_encoder << ',' << r.params.head << '\n';
}

std::string format_bench_report(const BenchResult& r) {
  std::ostringstream os;
  os << "hardware: " << r.hardware << '\n'
     << "latency per pair: mean " << r.mean_ms << " ms, median " << r.median_ms << " ms, p95 "
     << r.p95_ms << " ms (" << r.iters << " iters, " << r.warmup << " warmup)\n"
     << "parameters: total " << r.params.total() << " (image encoder " << r.params.image_encoder
     << ", lidar encoder " << r.params.lidar_encoder << ", head " << r.params.head << ")\n";
  return os.str();
}

}  // namespace miscal
