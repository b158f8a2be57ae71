#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sfi/dataio.hpp"

namespace sfi::data {

/// Planted-interest dataset parameters.
///
/// The token vocabulary is split into disjoint topic clusters of
/// tokens_per_topic tokens. Each user owns topics_per_user topics. History
/// items from the user's topics form the planted (informative) set; the rest
/// are distractors drawn from other topics. The clicked candidate comes from a
/// user topic and shares at least shared_tokens tokens with the planted
/// items; non-clicked candidates come from topics absent from the history.
struct SynthConfig {
  std::size_t vocab_size = 720;
  std::size_t tokens_per_topic = 12;
  std::size_t news_per_topic = 40;
  std::size_t title_min = 5;
  std::size_t title_max = 8;
  std::size_t num_users = 500;
  std::size_t topics_per_user = 1;
  std::size_t history_min = 25;
  std::size_t history_max = 25;
  double distractor_ratio = 0.8;
  std::size_t shared_tokens = 3;  // q
  std::size_t negatives_per_impression = 4;
  std::size_t train_impressions = 5000;
  std::size_t eval_impressions = 1000;
  bool planted_recent = false;  // put planted items at the most recent positions

  std::size_t num_topics() const { return vocab_size / tokens_per_topic; }
  void validate() const;
};

struct SyntheticDataset {
  NewsTable news;
  std::vector<Impression> train;
  std::vector<Impression> eval;
  // impression id -> recent-first history positions of planted items
  std::map<std::string, std::vector<std::size_t>> train_planted;
  std::map<std::string, std::vector<std::size_t>> eval_planted;
  // news id -> topic cluster, for diagnostics
  std::map<std::string, std::size_t> topic_of;
};

SyntheticDataset generate_synthetic(const SynthConfig& config, std::mt19937_64& rng);

// "impression_id<TAB>space-separated planted positions"
void write_planted(std::ostream& out, const std::map<std::string, std::vector<std::size_t>>& planted);
std::map<std::string, std::vector<std::size_t>> read_planted(std::istream& in);

// Writes train/{news,behaviors,planted}.tsv and dev/{news,behaviors,planted}.tsv under dir.
void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& dataset);

}  // namespace sfi::data
