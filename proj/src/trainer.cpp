#include "sfi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "sfi/errors.hpp"

namespace sfi {

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, t] : params.named()) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

void adam_step(ModelParams& params, AdamState& state, const ModelConfig& config, std::size_t batch) {
  if (batch == 0) throw ConfigError("adam_step: empty batch");
  auto named = params.named();
  if (state.m.size() != named.size() || state.v.size() != named.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double scale = 1.0 / static_cast<double>(batch);
  for (std::size_t p = 0; p < named.size(); ++p) {
    nn::Tensor& w = named[p].second;
    if (!w.requires_grad()) continue;
    auto x = w.mutable_data();
    auto m = state.m[p].mutable_data();
    auto v = state.v[p].mutable_data();
    const std::span<const double> g = w.has_grad() ? w.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * scale;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      x[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
    }
    w.zero_grad();
  }
}

nn::Tensor sample_loss(nn::Graph& graph, const SfiModel& model, const data::Corpus& corpus,
                       const data::TrainSample& sample, Mode mode, std::mt19937_64* rng) {
  std::map<std::size_t, EncodedNews> cache;
  const auto encoded = [&](std::size_t index) -> const EncodedNews& {
    auto it = cache.find(index);
    if (it == cache.end()) it = cache.emplace(index, model.encode(graph, corpus, index, mode, rng)).first;
    return it->second;
  };
  std::vector<EncodedNews> items;
  items.reserve(sample.history.size());
  for (std::size_t idx : sample.history) items.push_back(idx == 0 ? EncodedNews{} : encoded(idx));
  const EncodedHistory history = model.assemble_history(graph, sample.history, std::move(items));
  const nn::Tensor positive = model.score(graph, history, encoded(sample.positive)).score;
  std::vector<nn::Tensor> negatives;
  for (std::size_t idx : sample.negatives) negatives.push_back(model.score(graph, history, encoded(idx)).score);
  return sampled_softmax_loss(graph, positive, negatives);
}

namespace {

std::string describe(const data::Corpus& corpus, const data::TrainSample& sample) {
  std::ostringstream os;
  os << "impression " << sample.impression_id << ", history [";
  for (std::size_t i = 0; i < sample.history_count; ++i) os << (i ? " " : "") << corpus.news_id(sample.history[i]);
  os << "], positive " << corpus.news_id(sample.positive) << ", negatives [";
  for (std::size_t i = 0; i < sample.negatives.size(); ++i) os << (i ? " " : "") << corpus.news_id(sample.negatives[i]);
  os << ']';
  return os.str();
}

}  // namespace

double train_sample(const SfiModel& model, const data::Corpus& corpus, const data::TrainSample& sample,
                    std::mt19937_64& rng) {
  nn::Graph graph(true);
  try {
    const nn::Tensor loss = sample_loss(graph, model, corpus, sample, Mode::kTrain, &rng);
    graph.backward(loss);
    return loss.item();
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " while training on " + describe(corpus, sample));
  }
}

double evaluate_loss(const SfiModel& model, const data::Corpus& corpus, std::span<const data::TrainSample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    nn::Graph graph(false);
    total += sample_loss(graph, model, corpus, s, Mode::kEval, nullptr).item();
  }
  return total / static_cast<double>(samples.size());
}

Trainer::Trainer(SfiModel& model, const data::Corpus& corpus, std::vector<data::IndexedImpression> impressions)
    : model_(model),
      corpus_(corpus),
      impressions_(std::move(impressions)),
      adam_(AdamState::zeros_like(model.params())),
      rng_(model.config().seed + 1) {}

EpochStats Trainer::train_epoch() {
  const ModelConfig& cfg = model_.config();
  std::vector<data::TrainSample> samples;
  EpochStats stats;
  for (const auto& imp : impressions_) {
    auto drawn = data::negative_sample(imp, cfg.negatives, cfg.max_history, rng_);
    stats.skipped += drawn.skipped;
    for (auto& s : drawn.samples) samples.push_back(std::move(s));
  }
  std::shuffle(samples.begin(), samples.end(), rng_);
  double total = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += cfg.batch_train) {
    const std::size_t end = std::min(samples.size(), start + cfg.batch_train);
    for (std::size_t i = start; i < end; ++i) total += train_sample(model_, corpus_, samples[i], rng_);
    adam_step(model_.params(), adam_, cfg, end - start);
    ++stats.batches;
  }
  stats.samples = samples.size();
  stats.mean_loss = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
  return stats;
}

std::vector<EpochStats> Trainer::train(std::function<void(std::size_t, const EpochStats&)> on_epoch) {
  std::vector<EpochStats> out;
  for (std::size_t e = 0; e < model_.config().epochs; ++e) {
    out.push_back(train_epoch());
    if (on_epoch) on_epoch(e, out.back());
  }
  return out;
}

}  // namespace sfi
