#include "sfi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "sfi/errors.hpp"

namespace sfi {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("metric: scores and labels differ in length");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] > 0) ++pos;
    else ++neg;
  }
  if (pos == 0 || neg == 0) throw DegenerateInputError("auc needs at least one positive and one negative");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] <= 0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] > 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<std::size_t> ranking_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> ranks(std::span<const double> scores) {
  const auto order = ranking_order(scores);
  std::vector<std::size_t> r(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) r[order[pos]] = pos + 1;
  return r;
}

double mrr(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto r = ranks(scores);
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] <= 0) continue;
    total += 1.0 / static_cast<double>(r[i]);
    ++pos;
  }
  if (pos == 0) throw DegenerateInputError("mrr needs at least one positive");
  return total / static_cast<double>(pos);
}

double ndcg_at(std::span<const double> scores, std::span<const int> labels, std::size_t k) {
  check_lengths(scores, labels);
  if (k == 0) throw ConfigError("ndcg cutoff must be positive");
  const auto gain = [](int label) { return std::exp2(static_cast<double>(std::max(label, 0))) - 1.0; };
  const auto order = ranking_order(scores);
  std::vector<int> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, best = 0.0;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
    const double discount = std::log2(static_cast<double>(r) + 2.0);
    dcg += gain(labels[order[r]]) / discount;
    best += gain(ideal[r]) / discount;
  }
  if (best == 0.0) throw DegenerateInputError("ndcg needs at least one positive");
  return dcg / best;
}

std::string MetricSummary::to_json() const {
  nlohmann::ordered_json j;
  j["auc"] = auc;
  j["mrr"] = mrr;
  j["ndcg5"] = ndcg5;
  j["ndcg10"] = ndcg10;
  j["n_impressions"] = n_impressions;
  j["n_skipped"] = n_skipped;
  return j.dump(2);
}

MetricSummary summarize(std::span<const ImpressionResult> results) {
  MetricSummary s;
  for (const auto& r : results) {
    check_lengths(r.scores, r.labels);
    const bool has_pos = std::any_of(r.labels.begin(), r.labels.end(), [](int l) { return l > 0; });
    const bool has_neg = std::any_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; });
    const bool unlabeled = std::any_of(r.labels.begin(), r.labels.end(), [](int l) { return l < 0; });
    if (!has_pos || !has_neg || unlabeled) {
      ++s.n_skipped;
      continue;
    }
    s.auc += sfi::auc(r.scores, r.labels);
    s.mrr += sfi::mrr(r.scores, r.labels);
    s.ndcg5 += ndcg_at(r.scores, r.labels, 5);
    s.ndcg10 += ndcg_at(r.scores, r.labels, 10);
    ++s.n_impressions;
  }
  if (s.n_impressions > 0) {
    const double n = static_cast<double>(s.n_impressions);
    s.auc /= n;
    s.mrr /= n;
    s.ndcg5 /= n;
    s.ndcg10 /= n;
  }
  return s;
}

void write_predictions(std::ostream& out, std::span<const ImpressionResult> results) {
  for (const auto& r : results) {
    out << r.impression_id << " [";
    const auto rk = ranks(r.scores);
    for (std::size_t i = 0; i < rk.size(); ++i) out << (i ? "," : "") << rk[i];
    out << "]\n";
  }
}

}  // namespace sfi
