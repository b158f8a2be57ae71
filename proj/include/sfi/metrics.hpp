#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace sfi {

// Probability that a random positive outranks a random negative; ties count
// half. Throws DegenerateInputError without both classes.
double auc(std::span<const double> scores, std::span<const int> labels);
// Mean of 1/rank over positives. Throws DegenerateInputError without positives.
double mrr(std::span<const double> scores, std::span<const int> labels);
// DCG with gain 2^label - 1 and log2 discount over the top k, over the ideal DCG.
double ndcg_at(std::span<const double> scores, std::span<const int> labels, std::size_t k);

// Descending order of scores; equal scores keep candidate order.
std::vector<std::size_t> ranking_order(std::span<const double> scores);
// 1-based rank of every candidate under ranking_order.
std::vector<std::size_t> ranks(std::span<const double> scores);

struct ImpressionResult {
  std::string impression_id;
  std::vector<double> scores;
  std::vector<int> labels;  // -1 when unlabeled
};

struct MetricSummary {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t n_impressions = 0;
  std::size_t n_skipped = 0;  // impressions lacking a positive or a negative

  std::string to_json() const;
};

MetricSummary summarize(std::span<const ImpressionResult> results);

// One "impression_id [r1,r2,...]" line per impression.
void write_predictions(std::ostream& out, std::span<const ImpressionResult> results);

}  // namespace sfi
