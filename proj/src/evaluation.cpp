#include "sfi/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sfi/errors.hpp"

namespace sfi {

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

NewsCache::NewsCache(const SfiModel& model, const data::Corpus& corpus, std::size_t threads) : items_(corpus.size()) {
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    nn::Graph graph(false);
    items_[i] = model.encode(graph, corpus, i, Mode::kEval);
  });
}

const EncodedNews& NewsCache::at(std::size_t index) const {
  if (index >= items_.size()) throw IndexError("news cache index " + std::to_string(index) + " out of range");
  return items_[index];
}

EncodedHistory cached_history(const SfiModel& model, const NewsCache& cache, std::span<const std::size_t> history) {
  const std::size_t m = model.config().max_history;
  std::vector<std::size_t> slots(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(std::min(m, history.size())));
  std::vector<EncodedNews> items;
  items.reserve(slots.size());
  for (std::size_t idx : slots) items.push_back(idx == 0 ? EncodedNews{} : cache.at(idx));
  nn::Graph graph(false);
  return model.assemble_history(graph, slots, std::move(items));
}

std::vector<double> score_impression(const SfiModel& model, const NewsCache& cache,
                                     const data::IndexedImpression& impression) {
  const EncodedHistory history = cached_history(model, cache, impression.history);
  std::vector<double> scores;
  scores.reserve(impression.candidates.size());
  for (std::size_t c : impression.candidates) {
    nn::Graph graph(false);
    scores.push_back(model.score(graph, history, cache.at(c)).score.item());
  }
  return scores;
}

std::vector<ImpressionResult> predict(const SfiModel& model, const NewsCache& cache,
                                      std::span<const data::IndexedImpression> impressions, std::size_t threads) {
  std::vector<ImpressionResult> out(impressions.size());
  parallel_for(impressions.size(), threads, [&](std::size_t i) {
    out[i].impression_id = impressions[i].impression_id;
    out[i].scores = score_impression(model, cache, impressions[i]);
    out[i].labels = impressions[i].labels;
  });
  return out;
}

std::string BenchReport::label() const {
  return (mode == SelectionMode::kLearned ? "SFI(" : "Recent(") + std::to_string(k) + ")";
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = label();
  j["k"] = k;
  j["batch"] = batch;
  j["threads"] = threads;
  j["iterations"] = iterations;
  j["measured_seconds"] = measured_seconds;
  j["iterations_per_second"] = iterations_per_second;
  j["mean_ms"] = mean_ms;
  j["p50_ms"] = p50_ms;
  j["p95_ms"] = p95_ms;
  j["interactor_flops_per_iteration"] = interactor_flops_per_iteration;
  j["metrics"] = nlohmann::ordered_json::parse(metrics.to_json());
  return j.dump(2);
}

std::uint64_t interactor_flops(const SfiModel& model, const NewsCache& cache, const data::IndexedImpression& impression) {
  if (impression.candidates.empty()) throw DegenerateInputError("interactor_flops: impression has no candidates");
  const EncodedHistory history = cached_history(model, cache, impression.history);
  nn::Graph graph(false);
  model.score(graph, history, cache.at(impression.candidates.front()));
  return graph.flops().interactor();
}

BenchReport run_benchmark(const SfiModel& model, const NewsCache& cache,
                          std::span<const data::IndexedImpression> impressions, const BenchOptions& options) {
  if (options.duration_seconds < options.warmup_seconds) {
    throw ConfigError("benchmark duration must not be shorter than the warmup");
  }
  if (impressions.empty()) throw DegenerateInputError("benchmark needs at least one impression");
  const std::size_t batch = model.config().batch_predict;

  std::vector<EncodedHistory> histories;
  std::vector<std::pair<std::size_t, std::size_t>> work;  // (history, candidate)
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    histories.push_back(cached_history(model, cache, impressions[i].history));
    for (std::size_t c : impressions[i].candidates) work.emplace_back(i, c);
  }
  if (work.empty()) throw DegenerateInputError("benchmark workload has no candidates");

  BenchReport report;
  report.mode = model.config().selection;
  report.k = model.config().select_k;
  report.batch = batch;
  report.threads = std::max<std::size_t>(1, options.threads);

  std::size_t cursor = 0;
  double sink = 0.0;
  std::uint64_t flops = 0;
  const auto iteration = [&] {
    std::vector<double> out(batch);
    std::vector<std::uint64_t> iter_flops(batch);
    const std::size_t start = cursor;
    parallel_for(batch, report.threads, [&](std::size_t b) {
      const auto& [h, c] = work[(start + b) % work.size()];
      nn::Graph graph(false);
      out[b] = model.score(graph, histories[h], cache.at(c)).score.item();
      iter_flops[b] = graph.flops().interactor();
    });
    cursor = (start + batch) % work.size();
    for (double v : out) sink += v;
    flops = 0;
    for (auto f : iter_flops) flops += f;
  };

  using clock = std::chrono::steady_clock;
  const auto seconds_since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
  const auto warm_start = clock::now();
  while (seconds_since(warm_start) < options.warmup_seconds) iteration();
  std::vector<double> times;
  const auto start = clock::now();
  while (seconds_since(start) < options.duration_seconds) {
    const auto t0 = clock::now();
    iteration();
    times.push_back(seconds_since(t0) * 1000.0);
  }
  report.measured_seconds = seconds_since(start);
  report.iterations = times.size();
  report.iterations_per_second = static_cast<double>(times.size()) / report.measured_seconds;
  report.interactor_flops_per_iteration = flops;
  if (!times.empty()) {
    double total = 0.0;
    for (double t : times) total += t;
    report.mean_ms = total / static_cast<double>(times.size());
    std::sort(times.begin(), times.end());
    report.p50_ms = times[times.size() / 2];
    report.p95_ms = times[std::min(times.size() - 1, times.size() * 95 / 100)];
  }
  if (!std::isfinite(sink)) throw NumericError("benchmark produced non-finite scores");

  const auto results = predict(model, cache, impressions, 1);
  report.metrics = summarize(results);
  return report;
}

std::vector<PositionStat> informativeness_profile(const SfiModel& model, const NewsCache& cache,
                                                  std::span<const data::IndexedImpression> impressions) {
  if (model.config().selection != SelectionMode::kLearned) {
    throw ConfigError("informativeness profile needs the learned selector");
  }
  const std::size_t m = model.config().max_history;
  std::vector<double> sum(m, 0.0), sq(m, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (const auto& imp : impressions) {
    const EncodedHistory history = cached_history(model, cache, imp.history);
    const bool labeled = std::any_of(imp.labels.begin(), imp.labels.end(), [](int l) { return l > 0; });
    for (std::size_t c = 0; c < imp.candidates.size(); ++c) {
      if (labeled && imp.labels[c] <= 0) continue;
      const EncodedNews& cand = cache.at(imp.candidates[c]);
      nn::Graph graph(false);
      const nn::Tensor s =
          informativeness(graph, model.params().selector, history.coarse, cand.coarse, history.valid);
      for (std::size_t i = 0; i < m; ++i) {
        if (!history.valid[i]) continue;
        sum[i] += s.at(i);
        sq[i] += s.at(i) * s.at(i);
        ++count[i];
      }
    }
  }
  std::vector<PositionStat> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    out[i].position = i;
    out[i].count = count[i];
    if (count[i] == 0) continue;
    const double n = static_cast<double>(count[i]);
    out[i].mean = sum[i] / n;
    out[i].stddev = std::sqrt(std::max(0.0, sq[i] / n - out[i].mean * out[i].mean));
  }
  return out;
}

void write_profile_csv(std::ostream& out, std::span<const PositionStat> profile) {
  out << "position,count,mean,std\n";
  out << std::setprecision(10);
  for (const auto& p : profile) out << p.position << ',' << p.count << ',' << p.mean << ',' << p.stddev << '\n';
}

void write_profile_svg(std::ostream& out, std::span<const PositionStat> profile) {
  const double width = 640, height = 360, left = 60, right = 20, top = 20, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double lo = -1.0, hi = 1.0;
  for (const auto& p : profile) {
    if (p.count == 0) continue;
    lo = std::min(lo, p.mean - p.stddev);
    hi = std::max(hi, p.mean + p.stddev);
  }
  const std::size_t n = std::max<std::size_t>(profile.size(), 1);
  const auto x_of = [&](std::size_t i) { return left + plot_w * (static_cast<double>(i) + 0.5) / static_cast<double>(n); };
  const auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << y_of(0.0) << "\" x2=\"" << left + plot_w << "\" y2=\"" << y_of(0.0)
      << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
  for (double v : {lo, 0.0, hi}) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << y_of(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  std::string path;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const auto& p = profile[i];
    if (p.count == 0) continue;
    const double x = x_of(i);
    out << "<line x1=\"" << x << "\" y1=\"" << y_of(p.mean - p.stddev) << "\" x2=\"" << x << "\" y2=\""
        << y_of(p.mean + p.stddev) << "\" stroke=\"#9ecae1\"/>\n";
    std::ostringstream pt;
    pt << std::fixed << std::setprecision(2) << (path.empty() ? "M" : " L") << x << ' ' << y_of(p.mean);
    path += pt.str();
  }
  if (!path.empty()) out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#3182bd\" stroke-width=\"2\"/>\n";
  const std::size_t step = std::max<std::size_t>(1, n / 10);
  for (std::size_t i = 0; i < profile.size(); i += step) {
    out << "<text x=\"" << x_of(i) << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
        << i << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">history position (0 = most recent)</text>\n";
  out << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << top + plot_h / 2 << ")\">informativeness (mean +- std)</text>\n";
  out << "</svg>\n";
}

}  // namespace sfi
