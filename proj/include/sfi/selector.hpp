#pragma once

#include <random>
#include <span>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/graph.hpp"

namespace sfi {

// Score given to padding slots; below any cosine.
inline constexpr double kInvalidScore = -2.0;

struct SelectorParams {
  nn::Tensor proj_weight;  // [d_sel x f]
  nn::Tensor proj_bias;    // [d_sel]
};

struct HardSelection {
  std::vector<long> indices;  // K history positions in increasing order, -1 for padding
  nn::Tensor selected_scores;  // [K], kInvalidScore at padding
  nn::Tensor selected_fine;    // [K x L x N x f], zero at padding
};

struct SelectionResult {
  std::vector<long> indices;
  nn::Tensor raw_scores;       // [M]
  nn::Tensor selected_scores;  // [K]
  nn::Tensor soft_weights;     // [K]
  nn::Tensor selected_fine;    // [K x L x N x f] after gating
};

SelectorParams init_selector(const ModelConfig& config, std::mt19937_64& rng);

// Affine map into the selection space. Accepts [f] or [rows x f].
nn::Tensor project(nn::Graph& graph, const SelectorParams& params, const nn::Tensor& v);

// Cosine between projected history rows and the projected candidate;
// slots with valid == 0 score kInvalidScore.
nn::Tensor informativeness(nn::Graph& graph, const SelectorParams& params, const nn::Tensor& history_coarse,
                           const nn::Tensor& candidate_coarse, const nn::Mask& valid);

// Positions of the k highest scores, ties going to the smaller position,
// returned in increasing position order. Scores <= kInvalidScore never win;
// missing slots are -1.
std::vector<long> top_k_indices(std::span<const double> scores, std::size_t k);

// Top-K routing. Records the gap between the K-th and the (K+1)-th score as a
// margin on the graph.
HardSelection hard_select(nn::Graph& graph, const nn::Tensor& scores, const nn::Tensor& fine_all, std::size_t k);
// Same, with the fine tensors of the history given one per slot; only the
// chosen slots are touched, so padding slots may hold undefined tensors.
HardSelection hard_select(nn::Graph& graph, const nn::Tensor& scores, std::span<const nn::Tensor> fine_items,
                          std::size_t k);

struct SoftSelection {
  nn::Tensor soft_weights;
  nn::Tensor selected_fine;
};

// Weights are the scores themselves above gamma and 0 below; every fine block
// is scaled by its weight.
SoftSelection soft_select(nn::Graph& graph, const nn::Tensor& selected_scores, const nn::Tensor& selected_fine,
                          double gamma);

}  // namespace sfi
