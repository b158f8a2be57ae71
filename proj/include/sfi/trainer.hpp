#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "sfi/dataio.hpp"
#include "sfi/model.hpp"

namespace sfi {

/// Adam moments, aligned with ModelParams::named().
struct AdamState {
  std::uint64_t step = 0;
  std::vector<nn::Tensor> m;
  std::vector<nn::Tensor> v;

  static AdamState zeros_like(const ModelParams& params);
};

// One bias-corrected Adam update from the accumulated gradients divided by
// `batch`. Parameters that do not require grad are left alone. Clears grads.
void adam_step(ModelParams& params, AdamState& state, const ModelConfig& config, std::size_t batch);

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;  // positives without any negative in their impression
  std::size_t batches = 0;
};

// Sampled-softmax loss of one sample, positive first. Every distinct news
// item is encoded once per call.
nn::Tensor sample_loss(nn::Graph& graph, const SfiModel& model, const data::Corpus& corpus,
                       const data::TrainSample& sample, Mode mode, std::mt19937_64* rng = nullptr);

// Forward + backward on one sample; returns the loss. Gradients accumulate
// into the parameters.
double train_sample(const SfiModel& model, const data::Corpus& corpus, const data::TrainSample& sample,
                    std::mt19937_64& rng);

// Mean loss of samples in eval mode, without touching gradients.
double evaluate_loss(const SfiModel& model, const data::Corpus& corpus, std::span<const data::TrainSample> samples);

class Trainer {
 public:
  Trainer(SfiModel& model, const data::Corpus& corpus, std::vector<data::IndexedImpression> impressions);

  // Fresh negatives and a fresh shuffle per call.
  EpochStats train_epoch();
  std::vector<EpochStats> train(std::function<void(std::size_t, const EpochStats&)> on_epoch = {});

  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  SfiModel& model_;
  const data::Corpus& corpus_;
  std::vector<data::IndexedImpression> impressions_;
  AdamState adam_;
  std::mt19937_64 rng_;
};

}  // namespace sfi
