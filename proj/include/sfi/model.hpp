#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/dataio.hpp"
#include "sfi/encoder.hpp"
#include "sfi/interactor.hpp"
#include "sfi/selector.hpp"

namespace sfi {

struct ModelParams {
  EncoderParams encoder;
  SelectorParams selector;
  InteractorParams interactor;
  nn::Tensor click_weight;  // [1 x (F_phi + M_max)], phi part first
  nn::Tensor click_bias;    // [1]

  // Dotted names in a fixed order; the tensors are shared handles.
  std::vector<std::pair<std::string, nn::Tensor>> named() const;
  // Deep copy.
  ModelParams clone() const;
};

/// A user's history ready for scoring: one encoded item per slot.
struct EncodedHistory {
  std::vector<EncodedNews> items;  // padding slots hold default-constructed entries
  nn::Mask valid;
  nn::Tensor coarse;  // [M x f], zero rows at padding
};

struct ScoreTrace {
  nn::Tensor score;  // shape {}
  SelectionResult selection;
  nn::Tensor phi;
  nn::Tensor psi;
  bool fine_silenced = false;  // every soft weight was 0, so phi is the zero vector
};

class SfiModel {
 public:
  // Fresh parameters drawn from config.seed.
  explicit SfiModel(const ModelConfig& config);
  SfiModel(const ModelConfig& config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  std::size_t phi_size() const { return phi_size_; }

  EncodedNews encode(nn::Graph& graph, const data::Corpus& corpus, std::size_t index, Mode mode,
                     std::mt19937_64* rng = nullptr) const;

  // Slots with corpus index 0 are padding. `encoded` supplies one entry per slot.
  EncodedHistory assemble_history(nn::Graph& graph, std::span<const std::size_t> slots,
                                  std::vector<EncodedNews> encoded) const;

  ScoreTrace score(nn::Graph& graph, const EncodedHistory& history, const EncodedNews& candidate) const;

  // Same parameters, different non-structural settings (gamma, selection
  // mode, training options). Throws ConfigError if shapes would change.
  SfiModel rebind(const ModelConfig& config) const;
  // Same encoder, selector and coarse weights with a different K. The phi part
  // of the click weights is redrawn for the new feature size; an unchanged K
  // keeps every weight.
  SfiModel with_select_k(std::size_t k) const;

 private:
  ModelConfig config_;
  ModelParams params_;
  std::size_t phi_size_ = 0;
};

ModelParams init_params(const ModelConfig& config);

// -log(exp(pos) / (exp(pos) + sum exp(neg))), computed stably.
nn::Tensor sampled_softmax_loss(nn::Graph& graph, const nn::Tensor& positive, std::span<const nn::Tensor> negatives);

}  // namespace sfi
