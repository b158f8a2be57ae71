#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <random>

#include "sfi/checkpoint.hpp"
#include "sfi/errors.hpp"
#include "sfi/evaluation.hpp"
#include "sfi/metrics.hpp"
#include "sfi/pipeline.hpp"
#include "sfi/synthetic.hpp"

namespace py = pybind11;
using namespace sfi;

namespace {

py::dict summary_dict(const MetricSummary& s) {
  py::dict d;
  d["auc"] = s.auc;
  d["mrr"] = s.mrr;
  d["ndcg5"] = s.ndcg5;
  d["ndcg10"] = s.ndcg10;
  d["n_impressions"] = s.n_impressions;
  d["n_skipped"] = s.n_skipped;
  return d;
}

/// A checkpoint opened against one data directory, with the news pre-encoded.
class Recommender {
 public:
  Recommender(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
              const std::map<std::string, std::string>& overrides, std::size_t threads, bool labeled)
      : model_(open(checkpoint, overrides)),
        dataset_(load_dataset(data_dir, data::Vocabulary::load(vocab_sidecar(checkpoint)), model_.config(), labeled)),
        cache_(model_, *dataset_.corpus, threads),
        threads_(threads) {}

  const ModelConfig& config() const { return model_.config(); }
  std::size_t num_impressions() const { return dataset_.impressions.size(); }

  py::dict evaluate() const {
    py::gil_scoped_release release;
    const auto s = summarize(predict(model_, cache_, dataset_.impressions, threads_));
    py::gil_scoped_acquire acquire;
    return summary_dict(s);
  }

  std::vector<std::pair<std::string, std::vector<double>>> predict_scores() const {
    std::vector<ImpressionResult> results;
    {
      py::gil_scoped_release release;
      results = predict(model_, cache_, dataset_.impressions, threads_);
    }
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (auto& r : results) out.emplace_back(r.impression_id, std::move(r.scores));
    return out;
  }

  // Scores candidates (news ids) against a recent-first history of news ids.
  std::vector<double> score(const std::vector<std::string>& history, const std::vector<std::string>& candidates) const {
    data::IndexedImpression imp;
    const std::size_t keep = std::min(history.size(), model_.config().max_history);
    for (std::size_t i = 0; i < keep; ++i) imp.history.push_back(dataset_.corpus->index_of(history[i]));
    for (const auto& id : candidates) {
      const std::size_t idx = dataset_.corpus->index_of(id);
      if (idx == 0) throw IndexError("unknown candidate news id " + id);
      imp.candidates.push_back(idx);
    }
    return score_impression(model_, cache_, imp);
  }

  std::vector<py::dict> profile() const {
    std::vector<py::dict> out;
    for (const auto& p : informativeness_profile(model_, cache_, dataset_.impressions)) {
      py::dict d;
      d["position"] = p.position;
      d["count"] = p.count;
      d["mean"] = p.mean;
      d["std"] = p.stddev;
      out.push_back(d);
    }
    return out;
  }

  std::string benchmark(double duration, double warmup) const {
    BenchOptions o;
    o.duration_seconds = duration;
    o.warmup_seconds = warmup;
    o.threads = threads_;
    py::gil_scoped_release release;
    return run_benchmark(model_, cache_, dataset_.impressions, o).to_json();
  }

 private:
  static SfiModel open(const std::filesystem::path& checkpoint, const std::map<std::string, std::string>& overrides) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    if (overrides.empty()) return std::move(loaded.model);
    ModelConfig cfg = loaded.model.config();
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return reconfigure(loaded.model, cfg);
  }

  SfiModel model_;
  Dataset dataset_;
  NewsCache cache_;
  std::size_t threads_;
};

}  // namespace

PYBIND11_MODULE(_sfirec, m) {
  m.doc() = "Selective fine-grained interaction news recommender";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("from_text", [](const std::string& text) { return parse_config_text(text); })
      .def_static("keys", &ModelConfig::keys)
      .def("set", [](ModelConfig& c, const std::string& k, const std::string& v) { c.set(k, v); })
      .def("to_text", &ModelConfig::to_text)
      .def("validate", &ModelConfig::validate)
      .def("architecture_hash", &ModelConfig::architecture_hash)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("title_len", &ModelConfig::title_len)
      .def_readwrite("max_history", &ModelConfig::max_history)
      .def_readwrite("dilations", &ModelConfig::dilations)
      .def_readwrite("kernel_width", &ModelConfig::kernel_width)
      .def_readwrite("filters", &ModelConfig::filters)
      .def_readwrite("select_k", &ModelConfig::select_k)
      .def_readwrite("gamma", &ModelConfig::gamma)
      .def_readwrite("select_dim", &ModelConfig::select_dim)
      .def_readwrite("negatives", &ModelConfig::negatives)
      .def_readwrite("conv3d_channels", &ModelConfig::conv3d_channels)
      .def_readwrite("pool", &ModelConfig::pool)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_readwrite("lr", &ModelConfig::lr)
      .def_readwrite("batch_train", &ModelConfig::batch_train)
      .def_readwrite("batch_predict", &ModelConfig::batch_predict)
      .def_readwrite("epochs", &ModelConfig::epochs)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property(
          "selection", [](const ModelConfig& c) { return to_string(c.selection); },
          [](ModelConfig& c, const std::string& v) { c.selection = parse_selection_mode(v); })
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(\n" + c.to_text() + ")"; });

  m.def("auc", [](const std::vector<double>& s, const std::vector<int>& y) { return auc(s, y); });
  m.def("mrr", [](const std::vector<double>& s, const std::vector<int>& y) { return mrr(s, y); });
  m.def("ndcg", [](const std::vector<double>& s, const std::vector<int>& y, std::size_t k) { return ndcg_at(s, y, k); },
        py::arg("scores"), py::arg("labels"), py::arg("k"));

  m.def(
      "synthesize",
      [](const std::filesystem::path& out, std::size_t train, std::size_t eval, std::size_t history, std::uint64_t seed,
         double distractor_ratio, bool planted_recent) {
        data::SynthConfig sc;
        sc.train_impressions = train;
        sc.eval_impressions = eval;
        sc.history_min = sc.history_max = history;
        sc.distractor_ratio = distractor_ratio;
        sc.planted_recent = planted_recent;
        std::mt19937_64 rng(seed);
        data::write_synthetic(out, data::generate_synthetic(sc, rng));
      },
      py::arg("out_dir"), py::arg("train_impressions") = 5000, py::arg("eval_impressions") = 1000,
      py::arg("history") = 25, py::arg("seed") = 2024, py::arg("distractor_ratio") = 0.8,
      py::arg("planted_recent") = false, "Write train/ and dev/ splits of a planted-interest dataset.");

  m.def(
      "train",
      [](const ModelConfig& config, const std::filesystem::path& train_dir, const std::filesystem::path& checkpoint,
         const std::filesystem::path& dev_dir, const std::filesystem::path& embeddings) {
        TrainOptions o;
        o.train_dir = train_dir;
        o.checkpoint = checkpoint;
        o.dev_dir = dev_dir;
        o.embeddings = embeddings;
        std::vector<py::dict> epochs;
        std::vector<std::pair<EpochStats, std::optional<MetricSummary>>> log;
        o.on_epoch = [&](std::size_t, const EpochStats& s, const MetricSummary* dev) {
          log.emplace_back(s, dev ? std::optional<MetricSummary>(*dev) : std::nullopt);
        };
        {
          py::gil_scoped_release release;
          train_from_directory(config, o);
        }
        for (const auto& [s, dev] : log) {
          py::dict d;
          d["loss"] = s.mean_loss;
          d["samples"] = s.samples;
          d["skipped"] = s.skipped;
          if (dev) d["dev"] = summary_dict(*dev);
          epochs.push_back(d);
        }
        return epochs;
      },
      py::arg("config"), py::arg("train_dir"), py::arg("checkpoint"), py::arg("dev_dir") = std::filesystem::path(),
      py::arg("embeddings") = std::filesystem::path(),
      "Train on a data directory and write the checkpoint plus its vocabulary. Returns per-epoch stats.");

  py::class_<Recommender>(m, "Recommender")
      .def(py::init<const std::filesystem::path&, const std::filesystem::path&,
                    const std::map<std::string, std::string>&, std::size_t, bool>(),
           py::arg("checkpoint"), py::arg("data_dir"), py::arg("overrides") = std::map<std::string, std::string>{},
           py::arg("threads") = 1, py::arg("labeled") = true)
      .def_property_readonly("config", &Recommender::config)
      .def("__len__", &Recommender::num_impressions)
      .def("evaluate", &Recommender::evaluate)
      .def("predict", &Recommender::predict_scores)
      .def("score", &Recommender::score, py::arg("history"), py::arg("candidates"))
      .def("profile", &Recommender::profile)
      .def("benchmark", &Recommender::benchmark, py::arg("duration") = 30.0, py::arg("warmup") = 5.0);
}
