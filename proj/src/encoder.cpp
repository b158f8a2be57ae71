#include "sfi/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sfi/errors.hpp"

namespace sfi {

EncoderParams init_encoder(const ModelConfig& config, std::mt19937_64& rng) {
  EncoderParams p;
  p.embedding = nn::uniform_init({config.vocab_size, config.embed_dim}, 0.1, rng);
  std::size_t in_dim = config.embed_dim;
  for (std::size_t l = 0; l < config.levels(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.kernel_width * in_dim));
    p.conv_kernels.push_back(nn::uniform_init({config.kernel_width, in_dim, config.filters}, bound, rng));
    p.conv_biases.emplace_back(nn::Shape{config.filters}, true);
    in_dim = config.filters;
  }
  const double qbound = 1.0 / std::sqrt(static_cast<double>(config.filters));
  p.level_query = nn::uniform_init({config.filters}, qbound, rng);
  p.word_query = nn::uniform_init({config.filters}, qbound, rng);
  return p;
}

nn::Tensor embed(nn::Graph& graph, const EncoderParams& params, std::span<const std::int32_t> tokens, Mode mode,
                 double dropout, std::mt19937_64* rng) {
  nn::Tensor e = graph.embedding(params.embedding, tokens);
  if (mode == Mode::kTrain && dropout > 0.0) {
    if (rng == nullptr) throw ConfigError("embed: training mode with dropout needs an rng");
    e = graph.dropout(e, dropout, *rng);
  }
  return e;
}

EncodedNews encode_title(nn::Graph& graph, const EncoderParams& params, const ModelConfig& config,
                         std::span<const std::int32_t> tokens, const nn::Mask& mask, Mode mode,
                         std::mt19937_64* rng) {
  const std::size_t n = tokens.size();
  if (n != config.title_len) {
    throw DimensionError("encode_title: expected " + std::to_string(config.title_len) + " tokens, got " +
                         std::to_string(n));
  }
  if (!mask.empty() && mask.size() != n) throw DimensionError("encode_title: mask length differs from title");
  const std::size_t levels = config.levels();
  const std::size_t f = config.filters;

  EncodedNews out;
  out.token_mask = mask.empty() ? nn::Mask(n, 1) : mask;

  nn::Tensor x = embed(graph, params, tokens, mode, config.dropout, rng);
  std::vector<nn::Tensor> outputs;
  outputs.reserve(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    x = graph.conv1d_dilated(x, params.conv_kernels[l], params.conv_biases[l], config.dilations[l]);
    outputs.push_back(x);
  }
  out.fine = graph.stack(outputs);

  // attention over layers, separately for every word
  const nn::Tensor level_q = graph.reshape(params.level_query, {f, 1});
  std::vector<nn::Tensor> level_logits;
  level_logits.reserve(levels);
  for (const auto& r : outputs) level_logits.push_back(graph.matmul(r, level_q));
  const nn::Tensor logits = graph.transpose(graph.reshape(graph.stack(level_logits), {levels, n}));
  out.level_weights = graph.softmax(logits);
  const nn::Tensor by_level = graph.transpose(out.level_weights);
  nn::Tensor mixed = graph.scale_rows(outputs[0], graph.select(by_level, 0));
  for (std::size_t l = 1; l < levels; ++l) {
    mixed = graph.add(mixed, graph.scale_rows(outputs[l], graph.select(by_level, l)));
  }

  // attention over words
  if (std::none_of(out.token_mask.begin(), out.token_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    out.empty = true;
    out.coarse = nn::Tensor(nn::Shape{f});
    return out;
  }
  const nn::Tensor word_logits = graph.reshape(graph.matmul(mixed, graph.reshape(params.word_query, {f, 1})), {n});
  out.word_weights = graph.softmax(word_logits, out.token_mask);
  out.coarse = graph.reshape(graph.matmul(graph.reshape(out.word_weights, {1, n}), mixed), {f});
  return out;
}

std::size_t load_glove(const std::filesystem::path& path, const data::Vocabulary& vocab, nn::Tensor& embedding) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path.string());
  const std::size_t width = embedding.dim(1);
  auto table = embedding.mutable_data();
  std::vector<bool> seen(vocab.size(), false);
  std::size_t hits = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    std::string token;
    if (!(is >> token)) continue;
    const std::int32_t id = vocab.id(token);
    if (id < 2 || seen[static_cast<std::size_t>(id)]) continue;
    std::vector<double> values;
    double v = 0.0;
    while (is >> v) values.push_back(v);
    if (values.size() != width) {
      throw FormatError("embedding file line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " values, got " + std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), table.begin() + static_cast<std::ptrdiff_t>(id * width));
    seen[static_cast<std::size_t>(id)] = true;
    ++hits;
  }
  return hits;
}

}  // namespace sfi
