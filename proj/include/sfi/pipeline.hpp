#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "sfi/dataio.hpp"
#include "sfi/metrics.hpp"
#include "sfi/model.hpp"
#include "sfi/trainer.hpp"

namespace sfi {

// The vocabulary of a checkpoint lives next to it as "<checkpoint>.vocab".
std::filesystem::path vocab_sidecar(const std::filesystem::path& checkpoint);

/// A data directory (news.tsv + behaviors.tsv) mapped through a vocabulary.
struct Dataset {
  std::unique_ptr<data::Corpus> corpus;
  std::vector<data::IndexedImpression> impressions;
  std::size_t malformed_rows = 0;
};

Dataset load_dataset(const std::filesystem::path& dir, const data::Vocabulary& vocab, const ModelConfig& config,
                     bool require_labels);

struct TrainOptions {
  std::filesystem::path train_dir;
  std::filesystem::path checkpoint;  // written after the last epoch, with its vocabulary sidecar
  std::filesystem::path dev_dir;     // optional, evaluated after every epoch
  std::filesystem::path embeddings;  // optional "token v1 ... vD" file
  // dev is null without a dev directory
  std::function<void(std::size_t epoch, const EpochStats&, const MetricSummary* dev)> on_epoch;
};

// Builds the vocabulary from the training news, trains for config.epochs and
// saves the checkpoint. config.vocab_size is taken from the data.
SfiModel train_from_directory(ModelConfig config, const TrainOptions& options);

// Applies command-line style overrides to a loaded model: a different K
// redraws the K-dependent click weights, anything else must keep the shapes.
SfiModel reconfigure(const SfiModel& model, const ModelConfig& config);

}  // namespace sfi
