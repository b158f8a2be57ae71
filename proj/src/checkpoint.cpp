#include "sfi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "sfi/errors.hpp"

namespace sfi {

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text(std::uint64_t n) {
    if (n > (1ull << 32)) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("checkpoint: truncated file");
    return s;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    if (!in_) throw FormatError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

void write_array(Writer& w, const std::string& name, const nn::Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.text(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SfiModel& model, const AdamState* adam) {
  const auto named = model.params().named();
  if (adam != nullptr && (adam->m.size() != named.size() || adam->v.size() != named.size())) {
    throw DimensionError("save_checkpoint: optimizer state does not match the parameters");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  Writer w(out);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(model.config().architecture_hash());
  const std::string cfg = model.config().to_text();
  w.u64(cfg.size());
  w.text(cfg);
  w.u64(adam != nullptr ? adam->step : 0);
  w.u64(named.size() * (adam != nullptr ? 3 : 1));
  for (const auto& [name, t] : named) write_array(w, name, t);
  if (adam != nullptr) {
    for (std::size_t i = 0; i < named.size(); ++i) write_array(w, "adam.m." + named[i].first, adam->m[i]);
    for (std::size_t i = 0; i < named.size(); ++i) write_array(w, "adam.v." + named[i].first, adam->v[i]);
  }
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(in);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  const std::uint64_t hash = r.u64();
  const ModelConfig config = parse_config_text(r.text(r.u64()));
  if (config.architecture_hash() != hash) throw FormatError("checkpoint header is inconsistent with its configuration");
  if (expected != nullptr && expected->architecture_hash() != hash) {
    throw ConfigError("checkpoint architecture does not match the requested configuration");
  }
  const std::uint64_t step = r.u64();
  const std::uint64_t count = r.u64();

  std::map<std::string, nn::Tensor> arrays;
  for (std::uint64_t a = 0; a < count; ++a) {
    std::string name = r.text(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + name);
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (nn::numel(shape) > (1ull << 31)) throw FormatError("checkpoint: implausible size for " + name);
    std::vector<double> values(nn::numel(shape));
    for (double& v : values) v = r.f64();
    arrays.insert_or_assign(std::move(name), nn::Tensor(std::move(shape), std::move(values)));
  }

  ModelParams params = init_params(config);
  auto named = params.named();
  const auto take = [&arrays](const std::string& name, nn::Tensor& dst) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw FormatError("checkpoint: missing array " + name);
    if (it->second.shape() != dst.shape()) throw FormatError("checkpoint: wrong shape for " + name);
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  };
  for (auto& [name, t] : named) take(name, t);

  std::optional<AdamState> adam;
  if (arrays.count("adam.m." + named.front().first) != 0) {
    AdamState s = AdamState::zeros_like(params);
    s.step = step;
    for (std::size_t i = 0; i < named.size(); ++i) {
      take("adam.m." + named[i].first, s.m[i]);
      take("adam.v." + named[i].first, s.v[i]);
    }
    adam = std::move(s);
  }
  return {SfiModel(config, std::move(params)), std::move(adam)};
}

}  // namespace sfi
