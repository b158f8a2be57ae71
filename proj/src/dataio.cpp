#include "sfi/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sfi/errors.hpp"

namespace sfi::data {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    parts.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string item;
  while (is >> item) out.push_back(item);
  return out;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

NewsTable parse_news_tsv(std::istream& in, std::size_t title_len) {
  NewsTable table;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 4 || cols[0].empty()) {
      ++table.malformed_rows;
      continue;
    }
    NewsRecord rec;
    rec.news_id = std::string(cols[0]);
    rec.raw_title = std::string(cols[3]);
    rec.tokens = tokenize(rec.raw_title);
    if (rec.tokens.size() > title_len) rec.tokens.resize(title_len);
    rec.length = rec.tokens.size();
    auto [it, inserted] = table.records.insert_or_assign(rec.news_id, std::move(rec));
    if (!inserted) ++table.duplicate_ids;
  }
  return table;
}

NewsTable parse_news_tsv(const std::filesystem::path& path, std::size_t title_len) {
  auto in = open_or_throw(path);
  return parse_news_tsv(in, title_len);
}

void write_news_tsv(std::ostream& out, const NewsTable& news) {
  for (const auto& [id, rec] : news.records) {
    std::string title = rec.raw_title;
    std::replace(title.begin(), title.end(), '\t', ' ');
    std::replace(title.begin(), title.end(), '\n', ' ');
    out << id << "\tnews\tgeneral\t" << title << "\t\t\t[]\t[]\n";
  }
}

Vocabulary::Vocabulary() {
  push("<pad>");
  push("<unk>");
}

void Vocabulary::push(std::string token) {
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const NewsTable& news) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& [id, rec] : news.records) {
    for (const auto& tok : rec.tokens) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [tok, count] : ranked) {
    if (tok == "<pad>" || tok == "<unk>") continue;
    vocab.push(std::move(tok));
  }
  return vocab;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IndexError("vocabulary id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    if (vocab.ids_.count(line)) throw FormatError("duplicate vocabulary token '" + line + "'");
    vocab.push(line);
  }
  return vocab;
}

void assign_token_ids(NewsTable& news, const Vocabulary& vocab, std::size_t title_len) {
  for (auto& [id, rec] : news.records) {
    rec.title_tokens.assign(title_len, kPadId);
    const std::size_t n = std::min(title_len, rec.tokens.size());
    for (std::size_t i = 0; i < n; ++i) rec.title_tokens[i] = vocab.id(rec.tokens[i]);
    rec.length = n;
  }
}

bool Impression::labeled() const {
  return std::all_of(candidates.begin(), candidates.end(), [](const Candidate& c) { return c.label >= 0; });
}

BehaviorsTable parse_behaviors_tsv(std::istream& in, std::size_t max_history) {
  BehaviorsTable table;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 5 || cols[0].empty()) {
      ++table.malformed_rows;
      continue;
    }
    Impression imp;
    imp.impression_id = std::string(cols[0]);
    imp.user_id = std::string(cols[1]);
    imp.time = std::string(cols[2]);
    auto history = split_ws(cols[3]);
    std::reverse(history.begin(), history.end());
    if (history.size() > max_history) history.resize(max_history);
    imp.history = std::move(history);
    for (const auto& tok : split_ws(cols[4])) {
      Candidate cand;
      const auto dash = tok.rfind('-');
      if (dash != std::string::npos && dash + 2 == tok.size() && (tok.back() == '0' || tok.back() == '1')) {
        cand.news_id = tok.substr(0, dash);
        cand.label = tok.back() - '0';
      } else {
        cand.news_id = tok;
      }
      imp.candidates.push_back(std::move(cand));
    }
    table.impressions.push_back(std::move(imp));
  }
  return table;
}

BehaviorsTable parse_behaviors_tsv(const std::filesystem::path& path, std::size_t max_history) {
  auto in = open_or_throw(path);
  return parse_behaviors_tsv(in, max_history);
}

void write_behaviors_tsv(std::ostream& out, std::span<const Impression> impressions) {
  for (const auto& imp : impressions) {
    out << imp.impression_id << '\t' << imp.user_id << '\t' << imp.time << '\t';
    for (std::size_t i = imp.history.size(); i-- > 0;) {
      out << imp.history[i];
      if (i) out << ' ';
    }
    out << '\t';
    for (std::size_t i = 0; i < imp.candidates.size(); ++i) {
      if (i) out << ' ';
      out << imp.candidates[i].news_id;
      if (imp.candidates[i].label >= 0) out << '-' << imp.candidates[i].label;
    }
    out << '\n';
  }
}

Corpus::Corpus(const NewsTable& news, std::size_t title_len) : title_len_(title_len) {
  ids_.emplace_back();
  titles_.emplace_back(title_len, kPadId);
  masks_.emplace_back(title_len, 0);
  for (const auto& [id, rec] : news.records) {
    if (rec.title_tokens.size() != title_len) {
      throw FormatError("news " + id + " has no token ids of length " + std::to_string(title_len) +
                        "; apply a vocabulary first");
    }
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    titles_.push_back(rec.title_tokens);
    nn::Mask mask(title_len, 0);
    std::fill_n(mask.begin(), std::min(rec.length, title_len), 1);
    masks_.push_back(std::move(mask));
  }
}

std::size_t Corpus::index_of(std::string_view news_id) const {
  const auto it = index_.find(std::string(news_id));
  return it == index_.end() ? 0 : it->second;
}

IndexedImpression index_impression(const Impression& impression, const Corpus& corpus, bool require_labels) {
  IndexedImpression out;
  out.impression_id = impression.impression_id;
  out.history.reserve(impression.history.size());
  for (const auto& id : impression.history) out.history.push_back(corpus.index_of(id));
  for (const auto& cand : impression.candidates) {
    if (require_labels && cand.label < 0) {
      throw FormatError("impression " + impression.impression_id + ": candidate " + cand.news_id +
                        " has no label (only allowed in prediction mode)");
    }
    out.candidates.push_back(corpus.index_of(cand.news_id));
    out.labels.push_back(cand.label);
  }
  return out;
}

std::vector<IndexedImpression> index_impressions(std::span<const Impression> impressions, const Corpus& corpus,
                                                 bool require_labels) {
  std::vector<IndexedImpression> out;
  out.reserve(impressions.size());
  for (const auto& imp : impressions) out.push_back(index_impression(imp, corpus, require_labels));
  return out;
}

SamplingResult negative_sample(const IndexedImpression& impression, std::size_t m, std::size_t max_history,
                               std::mt19937_64& rng) {
  if (m == 0) throw ConfigError("negative_sample: m must be at least 1");
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < impression.candidates.size(); ++i) {
    if (impression.labels[i] == 1) positives.push_back(impression.candidates[i]);
    else if (impression.labels[i] == 0) negatives.push_back(impression.candidates[i]);
  }
  SamplingResult result;
  if (negatives.empty()) {
    result.skipped = positives.size();
    return result;
  }
  std::vector<std::size_t> history(max_history, 0);
  const std::size_t count = std::min(max_history, impression.history.size());
  std::copy_n(impression.history.begin(), count, history.begin());

  for (std::size_t pos : positives) {
    TrainSample sample;
    sample.impression_id = impression.impression_id;
    sample.history = history;
    sample.history_count = count;
    sample.positive = pos;
    if (negatives.size() >= m) {
      std::vector<std::size_t> pool = negatives;
      for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      pool.resize(m);
      sample.negatives = std::move(pool);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, negatives.size() - 1);
      for (std::size_t i = 0; i < m; ++i) sample.negatives.push_back(negatives[pick(rng)]);
    }
    result.samples.push_back(std::move(sample));
  }
  return result;
}

}  // namespace sfi::data
