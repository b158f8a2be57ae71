#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sfi {

enum class SelectionMode {
  kLearned,  // SFI: projection + cosine + top-K + threshold gate
  kRecent,   // Recent(K): history truncated to the K most recent valid items
};

std::string to_string(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view text);

/// Every hyperparameter of the model and its training loop.
///
/// Text form is one `key = value` per line; `#` starts a comment, lists are
/// comma separated, and keys are the field names below.
struct ModelConfig {
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 300;
  std::size_t title_len = 20;
  std::size_t max_history = 50;
  std::vector<std::size_t> dilations{1, 2, 3};
  std::size_t kernel_width = 3;  // taps per 1D conv, 2w+1
  std::size_t filters = 150;
  std::size_t select_k = 5;
  double gamma = 0.2;
  std::size_t select_dim = 150;
  std::size_t negatives = 4;
  std::vector<std::size_t> conv3d_channels{32, 16};
  std::size_t pool = 3;  // cubic window and stride of each 3D max pool
  double dropout = 0.2;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_train = 100;
  std::size_t batch_predict = 400;
  std::size_t epochs = 5;
  std::uint64_t seed = 42;
  SelectionMode selection = SelectionMode::kLearned;

  std::size_t levels() const { return dilations.size(); }

  // Throws ConfigError on any invalid combination.
  void validate() const;

  // FNV-1a over the fields that determine parameter shapes.
  std::uint64_t architecture_hash() const;

  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
  static std::vector<std::string> keys();
};

ModelConfig parse_config_text(std::string_view text, ModelConfig base = {});
ModelConfig load_config_file(const std::filesystem::path& path, ModelConfig base = {});

}  // namespace sfi
