#include "sfi/model.hpp"

#include <algorithm>
#include <cmath>

#include "sfi/errors.hpp"

namespace sfi {

std::vector<std::pair<std::string, nn::Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, nn::Tensor>> out;
  out.emplace_back("encoder.embedding", encoder.embedding);
  for (std::size_t l = 0; l < encoder.conv_kernels.size(); ++l) {
    out.emplace_back("encoder.conv" + std::to_string(l) + ".kernel", encoder.conv_kernels[l]);
    out.emplace_back("encoder.conv" + std::to_string(l) + ".bias", encoder.conv_biases[l]);
  }
  out.emplace_back("encoder.level_query", encoder.level_query);
  out.emplace_back("encoder.word_query", encoder.word_query);
  out.emplace_back("selector.proj_weight", selector.proj_weight);
  out.emplace_back("selector.proj_bias", selector.proj_bias);
  for (std::size_t c = 0; c < interactor.conv_kernels.size(); ++c) {
    out.emplace_back("interactor.conv" + std::to_string(c) + ".kernel", interactor.conv_kernels[c]);
    out.emplace_back("interactor.conv" + std::to_string(c) + ".bias", interactor.conv_biases[c]);
  }
  out.emplace_back("predictor.weight", click_weight);
  out.emplace_back("predictor.bias", click_bias);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  const auto copy = [](const std::vector<nn::Tensor>& v) {
    std::vector<nn::Tensor> out;
    for (const auto& t : v) out.push_back(t.clone());
    return out;
  };
  p.encoder.embedding = encoder.embedding.clone();
  p.encoder.conv_kernels = copy(encoder.conv_kernels);
  p.encoder.conv_biases = copy(encoder.conv_biases);
  p.encoder.level_query = encoder.level_query.clone();
  p.encoder.word_query = encoder.word_query.clone();
  p.selector.proj_weight = selector.proj_weight.clone();
  p.selector.proj_bias = selector.proj_bias.clone();
  p.interactor.conv_kernels = copy(interactor.conv_kernels);
  p.interactor.conv_biases = copy(interactor.conv_biases);
  p.click_weight = click_weight.clone();
  p.click_bias = click_bias.clone();
  return p;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ModelParams p;
  p.encoder = init_encoder(config, rng);
  p.selector = init_selector(config, rng);
  p.interactor = init_interactor(config, rng);
  const std::size_t features = phi_size(config) + config.max_history;
  p.click_weight = nn::uniform_init({1, features}, 1.0 / std::sqrt(static_cast<double>(features)), rng);
  p.click_bias = nn::Tensor(nn::Shape{1}, true);
  return p;
}

namespace {

void check_params(const ModelConfig& config, const ModelParams& params) {
  const ModelParams reference_shapes = [&] {
    // shapes only; values are irrelevant
    ModelConfig c = config;
    c.seed = 0;
    return init_params(c);
  }();
  const auto want = reference_shapes.named();
  const auto have = params.named();
  if (want.size() != have.size()) throw ConfigError("parameter set does not match the configuration");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!have[i].second.defined() || want[i].second.shape() != have[i].second.shape()) {
      throw ConfigError("parameter " + want[i].first + " has shape " +
                        (have[i].second.defined() ? nn::to_string(have[i].second.shape()) : "<none>") +
                        ", expected " + nn::to_string(want[i].second.shape()));
    }
  }
}

}  // namespace

SfiModel::SfiModel(const ModelConfig& config)
    : config_(config), params_(init_params(config)), phi_size_(sfi::phi_size(config)) {}

SfiModel::SfiModel(const ModelConfig& config, ModelParams params)
    : config_(config), params_(std::move(params)), phi_size_(sfi::phi_size(config)) {
  config_.validate();
  check_params(config_, params_);
}

EncodedNews SfiModel::encode(nn::Graph& graph, const data::Corpus& corpus, std::size_t index, Mode mode,
                             std::mt19937_64* rng) const {
  if (index >= corpus.size()) throw IndexError("news index " + std::to_string(index) + " outside the corpus");
  if (corpus.title_len() != config_.title_len) throw DimensionError("corpus title length differs from model");
  return encode_title(graph, params_.encoder, config_, corpus.title(index), corpus.mask(index), mode, rng);
}

EncodedHistory SfiModel::assemble_history(nn::Graph& graph, std::span<const std::size_t> slots,
                                          std::vector<EncodedNews> encoded) const {
  const std::size_t m = config_.max_history;
  if (slots.size() > m) throw DimensionError("history longer than max_history");
  if (encoded.size() != slots.size()) throw DimensionError("assemble_history: one encoding per slot required");
  EncodedHistory h;
  h.items = std::move(encoded);
  h.items.resize(m);
  h.valid.assign(m, 0);
  std::vector<nn::Tensor> rows;
  rows.reserve(m);
  const nn::Tensor zero_row(nn::Shape{config_.filters});
  for (std::size_t i = 0; i < m; ++i) {
    const bool real = i < slots.size() && slots[i] != 0;
    h.valid[i] = real ? 1 : 0;
    if (real) {
      if (!h.items[i].coarse.defined()) throw DimensionError("assemble_history: missing encoding for a real slot");
      rows.push_back(h.items[i].coarse);
    } else {
      h.items[i] = EncodedNews{};
      rows.push_back(zero_row);
    }
  }
  h.coarse = graph.stack(rows);
  return h;
}

ScoreTrace SfiModel::score(nn::Graph& graph, const EncodedHistory& history, const EncodedNews& candidate) const {
  const std::size_t m = config_.max_history;
  const std::size_t k = config_.select_k;
  if (history.items.size() != m || history.valid.size() != m) throw DimensionError("score: history must be padded to max_history");
  if (!candidate.fine.defined()) throw DimensionError("score: candidate is not encoded");

  ScoreTrace trace;
  std::vector<nn::Tensor> fine_items(m);
  for (std::size_t i = 0; i < m; ++i) fine_items[i] = history.items[i].fine;

  nn::Mask coarse_mask = history.valid;
  const bool any_valid = std::any_of(history.valid.begin(), history.valid.end(), [](std::uint8_t v) { return v != 0; });
  if (config_.selection == SelectionMode::kLearned) {
    trace.selection.raw_scores =
        informativeness(graph, params_.selector, history.coarse, candidate.coarse, history.valid);
  }
  if (!any_valid) {
    trace.selection.indices.assign(k, -1);
    trace.selection.soft_weights = nn::Tensor(nn::Shape{k});
  } else if (config_.selection == SelectionMode::kLearned) {
    HardSelection hard = hard_select(graph, trace.selection.raw_scores, fine_items, k);
    SoftSelection soft = soft_select(graph, hard.selected_scores, hard.selected_fine, config_.gamma);
    trace.selection.indices = std::move(hard.indices);
    trace.selection.selected_scores = hard.selected_scores;
    trace.selection.soft_weights = soft.soft_weights;
    trace.selection.selected_fine = soft.selected_fine;
  } else {
    // the K most recent valid items with weight 1; the rest of the history is dropped
    std::vector<long> chosen;
    for (std::size_t i = 0; i < m && chosen.size() < k; ++i) {
      if (history.valid[i]) chosen.push_back(static_cast<long>(i));
    }
    std::fill(coarse_mask.begin(), coarse_mask.end(), 0);
    for (long i : chosen) coarse_mask[static_cast<std::size_t>(i)] = 1;
    nn::Tensor weights(nn::Shape{k});
    std::fill_n(weights.mutable_data().begin(), chosen.size(), 1.0);
    std::vector<nn::Tensor> parts;
    const nn::Shape block{config_.levels(), config_.title_len, config_.filters};
    for (std::size_t j = 0; j < k; ++j) {
      parts.push_back(j < chosen.size() ? fine_items[static_cast<std::size_t>(chosen[j])] : nn::Tensor(block));
    }
    chosen.resize(k, -1);
    trace.selection.indices = std::move(chosen);
    trace.selection.soft_weights = weights;
    trace.selection.selected_fine = graph.stack(parts);
  }

  const auto w = trace.selection.soft_weights.data();
  trace.fine_silenced = std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; });
  if (trace.fine_silenced) {
    trace.phi = nn::Tensor(nn::Shape{phi_size_});
  } else {
    const nn::Tensor cube = similarity_matrices(graph, trace.selection.selected_fine, candidate.fine);
    trace.phi = extract_phi(graph, params_.interactor, config_, cube);
  }
  trace.psi = coarse_signals(graph, history.coarse, candidate.coarse, coarse_mask);
  const std::vector<nn::Tensor> parts{trace.phi, trace.psi};
  const nn::Tensor features = graph.concat(parts);
  trace.score = graph.add(graph.dot(params_.click_weight, features), graph.reshape(params_.click_bias, {}));
  return trace;
}

SfiModel SfiModel::rebind(const ModelConfig& config) const {
  if (config.architecture_hash() != config_.architecture_hash()) {
    throw ConfigError("rebind: configuration changes parameter shapes");
  }
  SfiModel out(*this);
  out.config_ = config;
  out.config_.validate();
  return out;
}

SfiModel SfiModel::with_select_k(std::size_t k) const {
  if (k == config_.select_k) return *this;
  ModelConfig c = config_;
  c.select_k = k;
  c.validate();
  SfiModel out(*this);
  out.config_ = c;
  out.phi_size_ = sfi::phi_size(c);
  const std::size_t features = out.phi_size_ + c.max_history;
  std::mt19937_64 rng(c.seed ^ (0x9e3779b97f4a7c15ull * k));
  nn::Tensor w = nn::uniform_init({1, features}, 1.0 / std::sqrt(static_cast<double>(features)), rng);
  auto dst = w.mutable_data();
  const auto src = params_.click_weight.data();
  std::copy(src.end() - static_cast<std::ptrdiff_t>(c.max_history), src.end(),
            dst.end() - static_cast<std::ptrdiff_t>(c.max_history));
  out.params_.click_weight = w;
  return out;
}

nn::Tensor sampled_softmax_loss(nn::Graph& graph, const nn::Tensor& positive, std::span<const nn::Tensor> negatives) {
  std::vector<nn::Tensor> parts;
  parts.reserve(negatives.size() + 1);
  parts.push_back(positive);
  parts.insert(parts.end(), negatives.begin(), negatives.end());
  return graph.sampled_softmax_nll(graph.concat(parts));
}

}  // namespace sfi
