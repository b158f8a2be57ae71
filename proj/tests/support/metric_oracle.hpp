#pragma once

// Ranking metrics computed without sorting: every rank comes from counting
// the candidates that beat it. Sums run in rank order so results are
// comparable bit for bit.

#include <cmath>
#include <random>
#include <vector>

namespace sfi::oracle {

// 1-based rank: candidates with a higher score, or an equal score at a
// smaller index, come first.
inline std::vector<std::size_t> count_ranks(const std::vector<double>& s) {
  std::vector<std::size_t> r(s.size(), 1);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r[i];
  return r;
}

// Mann-Whitney statistic from average ranks of the ascending order.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double pos_rank_sum = 0.0;
  double p = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] < s[i]) ++below;
      else if (s[j] == s[i]) ++equal;
    }
    if (y[i] > 0) {
      pos_rank_sum += below + (equal + 1.0) / 2.0;
      ++p;
    } else {
      ++n;
    }
  }
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double mrr(const std::vector<double>& s, const std::vector<int>& y) {
  const auto r = count_ranks(s);
  double total = 0.0, p = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] > 0) {
      total += 1.0 / static_cast<double>(r[i]);
      ++p;
    }
  }
  return total / p;
}

// Binary labels.
inline double ndcg(const std::vector<double>& s, const std::vector<int>& y, std::size_t k) {
  const auto r = count_ranks(s);
  std::vector<double> gain_at(s.size(), 0.0);
  std::size_t p = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    gain_at[r[i] - 1] = y[i] > 0 ? 1.0 : 0.0;
    p += y[i] > 0;
  }
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t pos = 0; pos < std::min(k, s.size()); ++pos) {
    const double discount = std::log2(static_cast<double>(pos) + 2.0);
    dcg += gain_at[pos] / discount;
    ideal += (pos < p ? 1.0 : 0.0) / discount;
  }
  return dcg / ideal;
}

struct RandomImpression {
  std::vector<double> scores;
  std::vector<int> labels;
};

// 2..20 candidates, at least one of each label, scores on a coarse grid so
// ties are common.
inline RandomImpression random_impression(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> size(2, 20);
  std::uniform_int_distribution<int> grid(0, 7);
  std::bernoulli_distribution click(0.3);
  RandomImpression out;
  const std::size_t n = size(rng);
  for (std::size_t i = 0; i < n; ++i) {
    out.scores.push_back(grid(rng) * 0.25 - 1.0);
    out.labels.push_back(click(rng) ? 1 : 0);
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t a = pick(rng);
  std::size_t b = pick(rng);
  while (b == a) b = pick(rng);
  out.labels[a] = 1;
  out.labels[b] = 0;
  return out;
}

}  // namespace sfi::oracle
