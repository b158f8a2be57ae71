#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sfi/dataio.hpp"
#include "sfi/metrics.hpp"
#include "sfi/model.hpp"

namespace sfi {

/// Every news item of a corpus encoded once in eval mode with frozen params.
class NewsCache {
 public:
  NewsCache(const SfiModel& model, const data::Corpus& corpus, std::size_t threads = 1);

  std::size_t size() const { return items_.size(); }
  const EncodedNews& at(std::size_t index) const;

 private:
  std::vector<EncodedNews> items_;
};

// Pads or truncates `history` to max_history and assembles it from the cache.
EncodedHistory cached_history(const SfiModel& model, const NewsCache& cache, std::span<const std::size_t> history);

std::vector<double> score_impression(const SfiModel& model, const NewsCache& cache,
                                     const data::IndexedImpression& impression);

std::vector<ImpressionResult> predict(const SfiModel& model, const NewsCache& cache,
                                      std::span<const data::IndexedImpression> impressions, std::size_t threads = 1);

struct BenchOptions {
  double warmup_seconds = 5.0;
  double duration_seconds = 30.0;
  std::size_t threads = 1;
};

struct BenchReport {
  SelectionMode mode = SelectionMode::kLearned;
  std::size_t k = 0;
  std::size_t batch = 0;  // candidates per iteration
  std::size_t threads = 1;
  std::size_t iterations = 0;
  double measured_seconds = 0.0;
  double iterations_per_second = 0.0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  std::uint64_t interactor_flops_per_iteration = 0;
  MetricSummary metrics;

  std::string label() const;  // "SFI(5)" or "Recent(5)"
  std::string to_json() const;
};

// Times batch_predict candidate scorings per iteration against histories
// assembled from the cache up front. Throws ConfigError when the measured
// duration is shorter than the warmup.
BenchReport run_benchmark(const SfiModel& model, const NewsCache& cache,
                          std::span<const data::IndexedImpression> impressions, const BenchOptions& options);

// Interactor FLOPs for scoring one candidate against a full history.
std::uint64_t interactor_flops(const SfiModel& model, const NewsCache& cache, const data::IndexedImpression& impression);

struct PositionStat {
  std::size_t position = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

// Raw informativeness by history position, over clicked candidates (all
// candidates when unlabeled). One row per history slot.
std::vector<PositionStat> informativeness_profile(const SfiModel& model, const NewsCache& cache,
                                                  std::span<const data::IndexedImpression> impressions);
void write_profile_csv(std::ostream& out, std::span<const PositionStat> profile);
void write_profile_svg(std::ostream& out, std::span<const PositionStat> profile);

}  // namespace sfi
