#pragma once

#include <random>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/graph.hpp"

namespace sfi {

struct InteractorParams {
  std::vector<nn::Tensor> conv_kernels;  // layer c: [C_out x C_in x 3 x 3 x 3]
  std::vector<nn::Tensor> conv_biases;   // [C_out]
};

InteractorParams init_interactor(const ModelConfig& config, std::mt19937_64& rng);

// Shape of every stage: the cube, then conv output and pooled output per
// layer. Throws ConfigError if any extent collapses to 0.
std::vector<nn::Shape> phi_stage_shapes(const ModelConfig& config);
nn::Shape phi_shape(const ModelConfig& config);
std::size_t phi_size(const ModelConfig& config);

// [K x L x N x f] selected, [L x N x f] candidate -> [L x K x N x N] scaled dot products.
nn::Tensor similarity_matrices(nn::Graph& graph, const nn::Tensor& selected_fine, const nn::Tensor& candidate_fine);

// (conv3d + ReLU + max pool) per layer, flattened.
nn::Tensor extract_phi(nn::Graph& graph, const InteractorParams& params, const ModelConfig& config,
                       const nn::Tensor& cube);

// Unscaled dot product of every history row with the candidate, 0 where valid == 0.
nn::Tensor coarse_signals(nn::Graph& graph, const nn::Tensor& history_coarse, const nn::Tensor& candidate_coarse,
                          const nn::Mask& valid);

}  // namespace sfi
