#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sfi/tensor.hpp"

namespace sfi::data {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> tokenize(std::string_view text);

struct NewsRecord {
  std::string news_id;
  std::string raw_title;
  std::vector<std::string> tokens;         // at most title_len, in title order
  std::vector<std::int32_t> title_tokens;  // exactly title_len ids once a vocabulary is applied
  std::size_t length = 0;                  // real (unpadded) token count

  bool operator==(const NewsRecord&) const = default;
};

struct NewsTable {
  std::map<std::string, NewsRecord> records;
  std::size_t malformed_rows = 0;
  std::size_t duplicate_ids = 0;
};

// Columns: id, category, subcategory, title, abstract, url, title entities,
// abstract entities. Only the id and title are used; rows with fewer than
// four columns are skipped and counted. A repeated id replaces the earlier row.
NewsTable parse_news_tsv(std::istream& in, std::size_t title_len = 20);
NewsTable parse_news_tsv(const std::filesystem::path& path, std::size_t title_len = 20);
void write_news_tsv(std::ostream& out, const NewsTable& news);

/// Token to id map. Id 0 is padding, id 1 is unknown; the rest are assigned
/// by descending corpus frequency, ties in lexicographic order.
class Vocabulary {
 public:
  Vocabulary();
  static Vocabulary build(const NewsTable& news);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

// Fills title_tokens (padded to title_len with kPadId) from tokens.
void assign_token_ids(NewsTable& news, const Vocabulary& vocab, std::size_t title_len);

struct Candidate {
  std::string news_id;
  int label = -1;  // -1: unlabeled (prediction mode)

  bool operator==(const Candidate&) const = default;
};

struct Impression {
  std::string impression_id;
  std::string user_id;
  std::string time;
  std::vector<std::string> history;  // most recent first, at most max_history
  std::vector<Candidate> candidates;

  bool labeled() const;
  bool operator==(const Impression&) const = default;
};

struct BehaviorsTable {
  std::vector<Impression> impressions;
  std::size_t malformed_rows = 0;
};

// Columns: impression id, user id, time, history (oldest first, as stored by
// MIND), candidates ("newsid-label"). History is reversed on load and keeps
// the max_history most recent entries.
BehaviorsTable parse_behaviors_tsv(std::istream& in, std::size_t max_history = 50);
BehaviorsTable parse_behaviors_tsv(const std::filesystem::path& path, std::size_t max_history = 50);
void write_behaviors_tsv(std::ostream& out, std::span<const Impression> impressions);

/// Dense news index used by the model. Index 0 is the all-padding
/// pseudo-news that stands in for padding slots and unknown ids.
class Corpus {
 public:
  Corpus(const NewsTable& news, std::size_t title_len);

  std::size_t size() const { return titles_.size(); }
  std::size_t title_len() const { return title_len_; }
  std::size_t index_of(std::string_view news_id) const;  // 0 when unknown
  const std::string& news_id(std::size_t index) const { return ids_[index]; }
  std::span<const std::int32_t> title(std::size_t index) const { return titles_[index]; }
  const nn::Mask& mask(std::size_t index) const { return masks_[index]; }

 private:
  std::size_t title_len_;
  std::vector<std::string> ids_;
  std::vector<std::vector<std::int32_t>> titles_;
  std::vector<nn::Mask> masks_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct IndexedImpression {
  std::string impression_id;
  std::vector<std::size_t> history;  // corpus indices, recent first; 0 = unknown
  std::vector<std::size_t> candidates;
  std::vector<int> labels;  // -1 when unlabeled
};

// Throws FormatError when require_labels is set and a candidate has no label.
IndexedImpression index_impression(const Impression& impression, const Corpus& corpus, bool require_labels);
std::vector<IndexedImpression> index_impressions(std::span<const Impression> impressions, const Corpus& corpus,
                                                 bool require_labels);

struct TrainSample {
  std::string impression_id;
  std::vector<std::size_t> history;  // exactly max_history slots, 0-padded
  std::size_t history_count = 0;     // real slots at the front
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

struct SamplingResult {
  std::vector<TrainSample> samples;
  std::size_t skipped = 0;  // positives dropped because the impression had no negatives
};

// One sample per clicked candidate. Negatives come from the same impression's
// non-clicked candidates: without replacement when at least m exist, with
// replacement otherwise.
SamplingResult negative_sample(const IndexedImpression& impression, std::size_t m, std::size_t max_history,
                               std::mt19937_64& rng);

}  // namespace sfi::data
