#include "sfi/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sfi/errors.hpp"

namespace sfi {

std::string to_string(SelectionMode mode) { return mode == SelectionMode::kLearned ? "sfi" : "recent"; }

SelectionMode parse_selection_mode(std::string_view text) {
  if (text == "sfi" || text == "learned") return SelectionMode::kLearned;
  if (text == "recent") return SelectionMode::kRecent;
  throw ConfigError("unknown selection mode '" + std::string(text) + "' (expected sfi or recent)");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_number<std::size_t>(key, text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2 (padding and unknown ids)");
  positive(embed_dim, "embed_dim");
  positive(title_len, "title_len");
  positive(max_history, "max_history");
  positive(filters, "filters");
  positive(select_k, "select_k");
  positive(select_dim, "select_dim");
  positive(negatives, "negatives");
  positive(pool, "pool");
  positive(batch_train, "batch_train");
  positive(batch_predict, "batch_predict");
  if (dilations.empty()) throw ConfigError("dilations must list at least one layer");
  for (std::size_t d : dilations) positive(d, "dilation");
  if (kernel_width == 0 || kernel_width % 2 == 0) throw ConfigError("kernel_width must be odd");
  if (conv3d_channels.empty()) throw ConfigError("conv3d_channels must list at least one layer");
  for (std::size_t c : conv3d_channels) positive(c, "conv3d channel count");
  if (select_k > max_history) throw ConfigError("select_k must not exceed max_history");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::uint64_t ModelConfig::architecture_hash() const {
  std::ostringstream os;
  os << "V=" << vocab_size << ";D=" << embed_dim << ";N=" << title_len << ";M=" << max_history
     << ";dil=" << join(dilations) << ";kw=" << kernel_width << ";fs=" << filters << ";K=" << select_k
     << ";dsel=" << select_dim << ";c3d=" << join(conv3d_channels) << ";pool=" << pool;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void ModelConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "vocab_size") vocab_size = parse_number<std::size_t>(key, value);
  else if (key == "embed_dim") embed_dim = parse_number<std::size_t>(key, value);
  else if (key == "title_len") title_len = parse_number<std::size_t>(key, value);
  else if (key == "max_history") max_history = parse_number<std::size_t>(key, value);
  else if (key == "dilations") dilations = parse_list(key, value);
  else if (key == "kernel_width") kernel_width = parse_number<std::size_t>(key, value);
  else if (key == "filters") filters = parse_number<std::size_t>(key, value);
  else if (key == "select_k") select_k = parse_number<std::size_t>(key, value);
  else if (key == "gamma") gamma = parse_number<double>(key, value);
  else if (key == "select_dim") select_dim = parse_number<std::size_t>(key, value);
  else if (key == "negatives") negatives = parse_number<std::size_t>(key, value);
  else if (key == "conv3d_channels") conv3d_channels = parse_list(key, value);
  else if (key == "pool") pool = parse_number<std::size_t>(key, value);
  else if (key == "dropout") dropout = parse_number<double>(key, value);
  else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "beta1") beta1 = parse_number<double>(key, value);
  else if (key == "beta2") beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") adam_eps = parse_number<double>(key, value);
  else if (key == "batch_train") batch_train = parse_number<std::size_t>(key, value);
  else if (key == "batch_predict") batch_predict = parse_number<std::size_t>(key, value);
  else if (key == "epochs") epochs = parse_number<std::size_t>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "selection") selection = parse_selection_mode(value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> ModelConfig::keys() {
  return {"vocab_size", "embed_dim",     "title_len",   "max_history", "dilations",  "kernel_width",
          "filters",    "select_k",      "gamma",       "select_dim",  "negatives",  "conv3d_channels",
          "pool",       "dropout",       "lr",          "beta1",       "beta2",      "adam_eps",
          "batch_train", "batch_predict", "epochs",     "seed",        "selection"};
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "vocab_size = " << vocab_size << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "title_len = " << title_len << '\n'
     << "max_history = " << max_history << '\n'
     << "dilations = " << join(dilations) << '\n'
     << "kernel_width = " << kernel_width << '\n'
     << "filters = " << filters << '\n'
     << "select_k = " << select_k << '\n'
     << "gamma = " << format_double(gamma) << '\n'
     << "select_dim = " << select_dim << '\n'
     << "negatives = " << negatives << '\n'
     << "conv3d_channels = " << join(conv3d_channels) << '\n'
     << "pool = " << pool << '\n'
     << "dropout = " << format_double(dropout) << '\n'
     << "lr = " << format_double(lr) << '\n'
     << "beta1 = " << format_double(beta1) << '\n'
     << "beta2 = " << format_double(beta2) << '\n'
     << "adam_eps = " << format_double(adam_eps) << '\n'
     << "batch_train = " << batch_train << '\n'
     << "batch_predict = " << batch_predict << '\n'
     << "epochs = " << epochs << '\n'
     << "seed = " << seed << '\n'
     << "selection = " << to_string(selection) << '\n';
  return os.str();
}

ModelConfig parse_config_text(std::string_view text, ModelConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

ModelConfig load_config_file(const std::filesystem::path& path, ModelConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), std::move(base));
}

}  // namespace sfi
