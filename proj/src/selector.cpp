#include "sfi/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sfi/errors.hpp"

namespace sfi {

SelectorParams init_selector(const ModelConfig& config, std::mt19937_64& rng) {
  SelectorParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.filters));
  p.proj_weight = nn::uniform_init({config.select_dim, config.filters}, bound, rng);
  p.proj_bias = nn::Tensor(nn::Shape{config.select_dim}, true);
  return p;
}

nn::Tensor project(nn::Graph& graph, const SelectorParams& params, const nn::Tensor& v) {
  const std::size_t f = params.proj_weight.dim(1);
  const std::size_t d = params.proj_weight.dim(0);
  if (v.rank() == 1) {
    if (v.dim(0) != f) throw DimensionError("project: input width " + std::to_string(v.dim(0)) + " != " + std::to_string(f));
    const nn::Tensor y = graph.matmul(params.proj_weight, graph.reshape(v, {f, 1}));
    return graph.add(graph.reshape(y, {d}), params.proj_bias);
  }
  if (v.rank() != 2 || v.dim(1) != f) throw DimensionError("project: expected [rows x " + std::to_string(f) + "]");
  return graph.add_bias(graph.matmul(v, graph.transpose(params.proj_weight)), params.proj_bias);
}

nn::Tensor informativeness(nn::Graph& graph, const SelectorParams& params, const nn::Tensor& history_coarse,
                           const nn::Tensor& candidate_coarse, const nn::Mask& valid) {
  const nn::Tensor rows = project(graph, params, history_coarse);
  const nn::Tensor query = project(graph, params, candidate_coarse);
  return graph.cosine_rows(rows, query, valid, kInvalidScore);
}

std::vector<long> top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw ConfigError("top_k_indices: K must be at least 1");
  std::vector<long> order;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > kInvalidScore) order.push_back(static_cast<long>(i));
  }
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&scores](long a, long b) {
                      const double sa = scores[static_cast<std::size_t>(a)];
                      const double sb = scores[static_cast<std::size_t>(b)];
                      return sa > sb || (sa == sb && a < b);
                    });
  order.resize(take);
  std::sort(order.begin(), order.end());
  order.resize(k, -1);
  return order;
}

namespace {

void note_topk_margin(nn::Graph& graph, std::span<const double> scores, const std::vector<long>& indices) {
  double lowest_in = std::numeric_limits<double>::infinity();
  for (long i : indices) {
    if (i >= 0) lowest_in = std::min(lowest_in, scores[static_cast<std::size_t>(i)]);
  }
  double highest_out = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= kInvalidScore) continue;
    if (std::find(indices.begin(), indices.end(), static_cast<long>(i)) == indices.end()) {
      highest_out = std::max(highest_out, scores[i]);
    }
  }
  if (std::isfinite(lowest_in) && std::isfinite(highest_out)) graph.note_margin(lowest_in - highest_out);
}

}  // namespace

HardSelection hard_select(nn::Graph& graph, const nn::Tensor& scores, const nn::Tensor& fine_all, std::size_t k) {
  if (scores.rank() != 1 || fine_all.rank() == 0 || fine_all.dim(0) != scores.size()) {
    throw DimensionError("hard_select: need one fine block per score");
  }
  HardSelection out;
  out.indices = top_k_indices(scores.data(), k);
  note_topk_margin(graph, scores.data(), out.indices);
  out.selected_scores = graph.gather_rows(scores, out.indices, kInvalidScore);
  out.selected_fine = graph.gather_rows(fine_all, out.indices, 0.0);
  return out;
}

HardSelection hard_select(nn::Graph& graph, const nn::Tensor& scores, std::span<const nn::Tensor> fine_items,
                          std::size_t k) {
  if (scores.rank() != 1 || fine_items.size() != scores.size()) {
    throw DimensionError("hard_select: need one fine block per score");
  }
  HardSelection out;
  out.indices = top_k_indices(scores.data(), k);
  note_topk_margin(graph, scores.data(), out.indices);
  out.selected_scores = graph.gather_rows(scores, out.indices, kInvalidScore);
  nn::Shape block;
  for (long i : out.indices) {
    if (i >= 0) {
      block = fine_items[static_cast<std::size_t>(i)].shape();
      break;
    }
  }
  if (block.empty()) {
    for (const auto& t : fine_items) {
      if (t.defined()) {
        block = t.shape();
        break;
      }
    }
  }
  if (block.empty()) throw DimensionError("hard_select: no fine representation available to size the output");
  std::vector<nn::Tensor> parts;
  parts.reserve(k);
  for (long i : out.indices) {
    if (i < 0) {
      parts.emplace_back(block);
      continue;
    }
    const nn::Tensor& t = fine_items[static_cast<std::size_t>(i)];
    if (!t.defined()) throw DimensionError("hard_select: selected slot has no fine representation");
    parts.push_back(t);
  }
  out.selected_fine = graph.stack(parts);
  return out;
}

SoftSelection soft_select(nn::Graph& graph, const nn::Tensor& selected_scores, const nn::Tensor& selected_fine,
                          double gamma) {
  for (double s : selected_scores.data()) {
    if (s > kInvalidScore) graph.note_margin(s - gamma);
  }
  SoftSelection out;
  out.soft_weights = graph.threshold_gate(selected_scores, gamma);
  // padding slots stay at weight 0 even when gamma is at or below their score
  auto s = selected_scores.data();
  if (std::any_of(s.begin(), s.end(), [](double v) { return v <= kInvalidScore; })) {
    nn::Tensor keep(selected_scores.shape());
    auto kd = keep.mutable_data();
    for (std::size_t i = 0; i < s.size(); ++i) kd[i] = s[i] > kInvalidScore ? 1.0 : 0.0;
    out.soft_weights = graph.mul(out.soft_weights, keep);
  }
  out.selected_fine = graph.scale_rows(selected_fine, out.soft_weights);
  return out;
}

}  // namespace sfi
