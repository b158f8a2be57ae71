#include "sfi/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sfi/errors.hpp"

namespace sfi::data {

void SynthConfig::validate() const {
  if (tokens_per_topic == 0) throw ConfigError("tokens_per_topic must be positive");
  if (title_min == 0 || title_min > title_max) throw ConfigError("need 0 < title_min <= title_max");
  if (title_max > tokens_per_topic) throw ConfigError("title_max cannot exceed tokens_per_topic");
  if (shared_tokens > title_min) throw ConfigError("shared_tokens cannot exceed title_min");
  if (history_min == 0 || history_min > history_max) throw ConfigError("need 0 < history_min <= history_max");
  if (distractor_ratio < 0.0 || distractor_ratio > 1.0) throw ConfigError("distractor_ratio must lie in [0, 1]");
  if (num_users == 0 || topics_per_user == 0 || news_per_topic == 0) {
    throw ConfigError("num_users, topics_per_user and news_per_topic must be positive");
  }
  if (negatives_per_impression == 0) throw ConfigError("negatives_per_impression must be positive");
  // user topics + one topic per negative + at least one distractor topic
  const std::size_t needed = topics_per_user + negatives_per_impression + (distractor_ratio > 0.0 ? 1 : 0);
  if (needed > num_topics()) {
    throw ConfigError("synthetic config needs " + std::to_string(needed) + " topics but the vocabulary holds only " +
                      std::to_string(num_topics()) + " clusters");
  }
}

namespace {

class Generator {
 public:
  Generator(const SynthConfig& cfg, std::mt19937_64& rng, SyntheticDataset& out) : cfg_(cfg), rng_(rng), out_(out) {}

  void run() {
    const std::size_t topics = cfg_.num_topics();
    pool_.resize(topics);
    for (std::size_t t = 0; t < topics; ++t) {
      for (std::size_t i = 0; i < cfg_.news_per_topic; ++i) {
        pool_[t].push_back(make_news(t, sample_tokens(t, title_length(cfg_.title_min), {})));
      }
    }
    std::vector<std::size_t> all(topics);
    std::iota(all.begin(), all.end(), 0);
    users_.resize(cfg_.num_users);
    for (auto& user_topics : users_) {
      std::shuffle(all.begin(), all.end(), rng_);
      user_topics.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg_.topics_per_user));
    }
    for (std::size_t i = 0; i < cfg_.train_impressions; ++i) make_impression(i + 1, out_.train, out_.train_planted);
    for (std::size_t i = 0; i < cfg_.eval_impressions; ++i) make_impression(i + 1, out_.eval, out_.eval_planted);
  }

 private:
  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  std::size_t title_length(std::size_t at_least) { return uniform(std::max(cfg_.title_min, at_least), cfg_.title_max); }

  static std::string token(std::size_t topic, std::size_t j) {
    return "t" + std::to_string(topic) + "w" + std::to_string(j);
  }

  // `length` distinct tokens of `topic`, starting with `seed_tokens`.
  std::vector<std::string> sample_tokens(std::size_t topic, std::size_t length, std::vector<std::string> seed_tokens) {
    std::vector<std::size_t> order(cfg_.tokens_per_topic);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::set<std::string> used(seed_tokens.begin(), seed_tokens.end());
    for (std::size_t j : order) {
      if (seed_tokens.size() >= length) break;
      std::string tok = token(topic, j);
      if (used.insert(tok).second) seed_tokens.push_back(std::move(tok));
    }
    std::shuffle(seed_tokens.begin(), seed_tokens.end(), rng_);
    return seed_tokens;
  }

  std::string make_news(std::size_t topic, const std::vector<std::string>& tokens) {
    const std::string id = "N" + std::to_string(++news_counter_);
    std::string title;
    for (const auto& tok : tokens) {
      if (!title.empty()) title += ' ';
      title += tok;
    }
    title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
    NewsRecord rec;
    rec.news_id = id;
    rec.raw_title = title;
    rec.tokens = tokenize(title);
    rec.length = rec.tokens.size();
    out_.news.records.emplace(id, std::move(rec));
    out_.topic_of.emplace(id, topic);
    return id;
  }

  void make_impression(std::size_t number, std::vector<Impression>& sink,
                       std::map<std::string, std::vector<std::size_t>>& planted_sink) {
    const std::size_t topics = cfg_.num_topics();
    const std::size_t user = uniform(0, users_.size() - 1);
    const auto& user_topics = users_[user];
    const std::size_t length = uniform(cfg_.history_min, cfg_.history_max);
    std::size_t planted_n = length;
    if (cfg_.distractor_ratio > 0.0) {
      planted_n = static_cast<std::size_t>(std::lround((1.0 - cfg_.distractor_ratio) * static_cast<double>(length)));
      if (cfg_.distractor_ratio < 1.0) planted_n = std::max<std::size_t>(planted_n, 1);
    }

    std::vector<std::size_t> other;
    for (std::size_t t = 0; t < topics; ++t) {
      if (std::find(user_topics.begin(), user_topics.end(), t) == user_topics.end()) other.push_back(t);
    }
    std::shuffle(other.begin(), other.end(), rng_);
    const std::vector<std::size_t> negative_topics(other.begin(),
                                                   other.begin() + static_cast<std::ptrdiff_t>(cfg_.negatives_per_impression));
    const std::vector<std::size_t> distractor_topics(
        other.begin() + static_cast<std::ptrdiff_t>(cfg_.negatives_per_impression), other.end());

    std::vector<std::size_t> positions(length);
    std::iota(positions.begin(), positions.end(), 0);
    if (!cfg_.planted_recent) std::shuffle(positions.begin(), positions.end(), rng_);
    std::vector<std::size_t> planted(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(planted_n));
    std::sort(planted.begin(), planted.end());

    Impression imp;
    imp.impression_id = std::to_string(number);
    imp.user_id = "U" + std::to_string(user + 1);
    imp.time = "11/11/2019 9:00:00 AM";
    imp.history.resize(length);
    std::vector<std::size_t> planted_topic(length, topics);
    for (std::size_t pos = 0; pos < length; ++pos) {
      const bool is_planted = std::binary_search(planted.begin(), planted.end(), pos);
      const std::size_t topic = is_planted ? user_topics[uniform(0, user_topics.size() - 1)]
                                           : distractor_topics[uniform(0, distractor_topics.size() - 1)];
      if (is_planted) planted_topic[pos] = topic;
      imp.history[pos] = pool_[topic][uniform(0, pool_[topic].size() - 1)];
    }

    // clicked candidate: a topic that actually appears among the planted items
    const std::size_t click_topic =
        planted.empty() ? user_topics[uniform(0, user_topics.size() - 1)] : planted_topic[planted[uniform(0, planted.size() - 1)]];
    std::vector<std::string> overlap_pool;
    for (std::size_t pos : planted) {
      if (planted_topic[pos] != click_topic) continue;
      for (const auto& tok : out_.news.records.at(imp.history[pos]).tokens) {
        if (std::find(overlap_pool.begin(), overlap_pool.end(), tok) == overlap_pool.end()) overlap_pool.push_back(tok);
      }
    }
    std::shuffle(overlap_pool.begin(), overlap_pool.end(), rng_);
    if (overlap_pool.size() > cfg_.shared_tokens) overlap_pool.resize(cfg_.shared_tokens);
    const std::size_t click_len = title_length(overlap_pool.size());
    imp.candidates.push_back({make_news(click_topic, sample_tokens(click_topic, click_len, overlap_pool)), 1});
    for (std::size_t t : negative_topics) {
      imp.candidates.push_back({make_news(t, sample_tokens(t, title_length(cfg_.title_min), {})), 0});
    }
    std::shuffle(imp.candidates.begin(), imp.candidates.end(), rng_);

    planted_sink.emplace(imp.impression_id, std::move(planted));
    sink.push_back(std::move(imp));
  }

  const SynthConfig& cfg_;
  std::mt19937_64& rng_;
  SyntheticDataset& out_;
  std::vector<std::vector<std::string>> pool_;
  std::vector<std::vector<std::size_t>> users_;
  std::size_t news_counter_ = 0;
};

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& config, std::mt19937_64& rng) {
  config.validate();
  SyntheticDataset out;
  Generator(config, rng, out).run();
  return out;
}

void write_planted(std::ostream& out, const std::map<std::string, std::vector<std::size_t>>& planted) {
  for (const auto& [id, positions] : planted) {
    out << id << '\t';
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (i) out << ' ';
      out << positions[i];
    }
    out << '\n';
  }
}

std::map<std::string, std::vector<std::size_t>> read_planted(std::istream& in) {
  std::map<std::string, std::vector<std::size_t>> planted;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("planted file: missing tab in '" + line + "'");
    std::istringstream positions(line.substr(tab + 1));
    auto& dst = planted[line.substr(0, tab)];
    std::size_t p = 0;
    while (positions >> p) dst.push_back(p);
  }
  return planted;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& dataset) {
  const auto write_split = [&dataset](const std::filesystem::path& split_dir, const std::vector<Impression>& imps,
                                      const std::map<std::string, std::vector<std::size_t>>& planted) {
    std::filesystem::create_directories(split_dir);
    std::ofstream news(split_dir / "news.tsv");
    std::ofstream behaviors(split_dir / "behaviors.tsv");
    std::ofstream planted_out(split_dir / "planted.tsv");
    if (!news || !behaviors || !planted_out) throw FormatError("cannot write dataset under " + split_dir.string());
    write_news_tsv(news, dataset.news);
    write_behaviors_tsv(behaviors, imps);
    write_planted(planted_out, planted);
  };
  write_split(dir / "train", dataset.train, dataset.train_planted);
  write_split(dir / "dev", dataset.eval, dataset.eval_planted);
}

}  // namespace sfi::data
