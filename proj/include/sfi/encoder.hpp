#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/dataio.hpp"
#include "sfi/graph.hpp"

namespace sfi {

enum class Mode { kTrain, kEval };

struct EncoderParams {
  nn::Tensor embedding;                 // [V x D]
  std::vector<nn::Tensor> conv_kernels;  // layer l: [kernel_width x (D or f) x f]
  std::vector<nn::Tensor> conv_biases;   // [f]
  nn::Tensor level_query;                // [f]
  nn::Tensor word_query;                 // [f]
};

/// Output of the title encoder for one news item.
struct EncodedNews {
  nn::Tensor fine;    // [L x N x f], one slice per conv layer
  nn::Tensor coarse;  // [f]
  nn::Mask token_mask;
  bool empty = false;          // no real tokens; coarse is the zero vector
  nn::Tensor level_weights;    // [N x L], per-word softmax over layers
  nn::Tensor word_weights;     // [N], zero at padded positions; undefined when empty
};

// Embedding fan-in init (uniform +-0.1) for the table, uniform +-1/sqrt(fan_in)
// for kernels and queries, zero biases.
EncoderParams init_encoder(const ModelConfig& config, std::mt19937_64& rng);

// Rows of the embedding table for `tokens`, with inverted dropout in training mode.
nn::Tensor embed(nn::Graph& graph, const EncoderParams& params, std::span<const std::int32_t> tokens, Mode mode,
                 double dropout, std::mt19937_64* rng);

/// Dilated-conv stack, then attention over layers per word, then attention
/// over unmasked words.
EncodedNews encode_title(nn::Graph& graph, const EncoderParams& params, const ModelConfig& config,
                         std::span<const std::int32_t> tokens, const nn::Mask& mask, Mode mode,
                         std::mt19937_64* rng = nullptr);

// Reads "token v1 ... vD" lines and overwrites matching rows of the table.
// Returns how many vocabulary rows were set.
std::size_t load_glove(const std::filesystem::path& path, const data::Vocabulary& vocab, nn::Tensor& embedding);

}  // namespace sfi
