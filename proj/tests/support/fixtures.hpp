#pragma once

#include <memory>
#include <random>

#include "sfi/dataio.hpp"
#include "sfi/model.hpp"
#include "sfi/synthetic.hpp"

namespace sfi::testing {

/// A generated dataset with token ids, a corpus and indexed impressions.
struct World {
  data::SyntheticDataset dataset;
  data::Vocabulary vocab;
  std::unique_ptr<data::Corpus> corpus;
  std::vector<data::IndexedImpression> train;
  std::vector<data::IndexedImpression> eval;
};

inline World make_world(const data::SynthConfig& synth, std::size_t title_len, std::uint64_t seed) {
  World w;
  std::mt19937_64 rng(seed);
  w.dataset = data::generate_synthetic(synth, rng);
  w.vocab = data::Vocabulary::build(w.dataset.news);
  data::assign_token_ids(w.dataset.news, w.vocab, title_len);
  w.corpus = std::make_unique<data::Corpus>(w.dataset.news, title_len);
  w.train = data::index_impressions(w.dataset.train, *w.corpus, true);
  w.eval = data::index_impressions(w.dataset.eval, *w.corpus, true);
  return w;
}

// Small world: 20 topics of 6 tokens, short titles and histories.
inline data::SynthConfig tiny_synth(std::size_t history, std::size_t train, std::size_t eval) {
  data::SynthConfig s;
  s.vocab_size = 120;
  s.tokens_per_topic = 6;
  s.news_per_topic = 8;
  s.title_min = 3;
  s.title_max = 5;
  s.shared_tokens = 2;
  s.num_users = 20;
  s.history_min = history;
  s.history_max = history;
  s.train_impressions = train;
  s.eval_impressions = eval;
  return s;
}

// Tiny model over a world's vocabulary.
inline ModelConfig tiny_model(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 6;
  c.filters = 4;
  c.title_len = 6;
  c.max_history = 6;
  c.select_k = 3;
  c.dilations = {1, 2};
  c.select_dim = 4;
  c.conv3d_channels = {4, 2};
  c.gamma = 0.2;
  c.dropout = 0.0;
  c.batch_train = 10;
  c.seed = 3;
  return c;
}

}  // namespace sfi::testing

namespace sfi::testing {

/// Hand-built corpus of random titles over a 20-token vocabulary and one
/// training sample, for end-to-end gradient checks.
struct GradWorld {
  std::unique_ptr<data::Corpus> corpus;
  data::TrainSample sample;
};

inline ModelConfig gradcheck_config(std::uint64_t seed) {
  ModelConfig c = tiny_model(20);
  c.seed = seed;
  return c;
}

inline GradWorld make_grad_world(const ModelConfig& cfg, std::size_t history_count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> token(2, static_cast<std::int32_t>(cfg.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> length(cfg.title_len - 2, cfg.title_len);
  data::NewsTable news;
  const std::size_t items = history_count + 1 + cfg.negatives;
  for (std::size_t i = 0; i < items; ++i) {
    data::NewsRecord rec;
    rec.news_id = "N" + std::to_string(100 + i);
    rec.length = length(rng);
    rec.title_tokens.assign(cfg.title_len, 0);
    for (std::size_t t = 0; t < rec.length; ++t) rec.title_tokens[t] = token(rng);
    news.records.emplace(rec.news_id, rec);
  }
  GradWorld w;
  w.corpus = std::make_unique<data::Corpus>(news, cfg.title_len);
  w.sample.impression_id = "grad";
  w.sample.history.assign(cfg.max_history, 0);
  for (std::size_t i = 0; i < history_count; ++i) w.sample.history[i] = i + 1;
  w.sample.history_count = history_count;
  w.sample.positive = history_count + 1;
  for (std::size_t i = 0; i < cfg.negatives; ++i) w.sample.negatives.push_back(history_count + 2 + i);
  return w;
}

// Zero-initialized biases would put every ReLU of a dead channel exactly on
// its kink; small random biases avoid that.
inline void randomize_biases(ModelParams& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.2, 0.2);
  for (auto& [name, t] : params.named()) {
    if (name.find("conv") != std::string::npos && name.ends_with("bias")) {
      for (double& v : t.mutable_data()) v = dist(rng);
    }
  }
}

// At init scale the ~1500 ReLU, pooling and top-K quantities of a sample crowd
// around their kinks. Widening the embedding, the 3D kernels and the
// convolution biases spreads them out so a draw with every gap >= 1e-3 exists;
// the click weights are shrunk so the scores stay in the unsaturated range.
inline void spread_for_gradcheck(ModelParams& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bias(-1.0, 1.0);
  for (auto& [name, t] : params.named()) {
    if (name.find("conv") != std::string::npos && name.ends_with("bias")) {
      for (double& v : t.mutable_data()) v = bias(rng);
    }
    if (name == "encoder.embedding") {
      for (double& v : t.mutable_data()) v *= 10.0;
    }
    if (name.starts_with("interactor.") && name.ends_with("kernel")) {
      for (double& v : t.mutable_data()) v *= 10.0;
    }
  }
}

}  // namespace sfi::testing
