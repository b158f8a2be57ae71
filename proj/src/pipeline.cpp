#include "sfi/pipeline.hpp"


#include "sfi/checkpoint.hpp"
#include "sfi/encoder.hpp"
#include "sfi/evaluation.hpp"

namespace sfi {

std::filesystem::path vocab_sidecar(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".vocab");
}

namespace {

struct RawSplit {
  data::NewsTable news;
  data::BehaviorsTable behaviors;
};

RawSplit read_split(const std::filesystem::path& dir, const ModelConfig& config) {
  RawSplit s;
  s.news = data::parse_news_tsv(dir / "news.tsv", config.title_len);
  s.behaviors = data::parse_behaviors_tsv(dir / "behaviors.tsv", config.max_history);
  return s;
}

Dataset index_split(RawSplit& split, const data::Vocabulary& vocab, const ModelConfig& config, bool require_labels) {
  data::assign_token_ids(split.news, vocab, config.title_len);
  Dataset d;
  d.corpus = std::make_unique<data::Corpus>(split.news, config.title_len);
  d.impressions = data::index_impressions(split.behaviors.impressions, *d.corpus, require_labels);
  d.malformed_rows = split.news.malformed_rows + split.behaviors.malformed_rows;
  return d;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, const data::Vocabulary& vocab, const ModelConfig& config,
                     bool require_labels) {
  RawSplit split = read_split(dir, config);
  return index_split(split, vocab, config, require_labels);
}

SfiModel train_from_directory(ModelConfig config, const TrainOptions& options) {
  RawSplit split = read_split(options.train_dir, config);
  const data::Vocabulary vocab = data::Vocabulary::build(split.news);
  config.vocab_size = vocab.size();
  config.validate();
  const Dataset train = index_split(split, vocab, config, true);
  std::unique_ptr<Dataset> dev;
  if (!options.dev_dir.empty()) dev = std::make_unique<Dataset>(load_dataset(options.dev_dir, vocab, config, true));

  SfiModel model(config);
  if (!options.embeddings.empty()) load_glove(options.embeddings, vocab, model.params().encoder.embedding);
  Trainer trainer(model, *train.corpus, train.impressions);
  trainer.train([&](std::size_t epoch, const EpochStats& stats) {
    if (!options.on_epoch) return;
    if (!dev) {
      options.on_epoch(epoch, stats, nullptr);
      return;
    }
    const NewsCache cache(model, *dev->corpus);
    const MetricSummary summary = summarize(predict(model, cache, dev->impressions));
    options.on_epoch(epoch, stats, &summary);
  });
  if (!options.checkpoint.empty()) {
    save_checkpoint(options.checkpoint, model, &trainer.adam());
    vocab.save(vocab_sidecar(options.checkpoint));
  }
  return model;
}

SfiModel reconfigure(const SfiModel& model, const ModelConfig& config) {
  return model.with_select_k(config.select_k).rebind(config);
}

}  // namespace sfi
