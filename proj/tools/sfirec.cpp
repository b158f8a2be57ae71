// Command-line front end: synth, train, eval, predict, bench, analyze.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "sfi/checkpoint.hpp"
#include "sfi/evaluation.hpp"
#include "sfi/synthetic.hpp"
#include "sfi/pipeline.hpp"

using namespace sfi;
namespace fs = std::filesystem;

namespace {

// One --flag per ModelConfig key (underscores become dashes), plus --config.
// Values from the config file win over flags.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  fs::path file;

  void attach(CLI::App& cmd) {
    for (const auto& key : ModelConfig::keys()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd.add_option_function<std::string>(
          flag, [this, key](const std::string& v) { values[key] = v; }, "model config: " + key);
    }
    cmd.add_option("--config", file, "key = value file; overrides flags")->check(CLI::ExistingFile);
  }

  ModelConfig apply(ModelConfig base) const {
    for (const auto& [k, v] : values) base.set(k, v);
    if (!file.empty()) base = load_config_file(file, base);
    return base;
  }

  bool empty() const { return values.empty() && file.empty(); }
};

// Checkpointed model with any overrides from the command line.
SfiModel load_model(const fs::path& ckpt, const ConfigFlags& flags) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  if (flags.empty()) return std::move(loaded.model);
  return reconfigure(loaded.model, flags.apply(loaded.model.config()));
}

Dataset open_data(const fs::path& dir, const fs::path& ckpt, const ModelConfig& cfg, bool require_labels) {
  Dataset d = load_dataset(dir, data::Vocabulary::load(vocab_sidecar(ckpt)), cfg, require_labels);
  if (d.malformed_rows) std::cerr << dir.string() << ": skipped " << d.malformed_rows << " malformed rows\n";
  return d;
}

void write_or_print(const fs::path& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << text << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective fine-grained interaction news recommender"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a planted-interest synthetic dataset");
  data::SynthConfig sc;
  fs::path synth_out;
  std::uint64_t synth_seed = 2024;
  std::size_t history = 25;
  synth->add_option("--out", synth_out, "Output directory (train/ and dev/)")->required();
  synth->add_option("--seed", synth_seed);
  synth->add_option("--train-impressions", sc.train_impressions);
  synth->add_option("--eval-impressions", sc.eval_impressions);
  synth->add_option("--users", sc.num_users);
  synth->add_option("--history", history, "History length of every impression");
  synth->add_option("--vocab-size", sc.vocab_size);
  synth->add_option("--tokens-per-topic", sc.tokens_per_topic);
  synth->add_option("--news-per-topic", sc.news_per_topic);
  synth->add_option("--distractor-ratio", sc.distractor_ratio);
  synth->add_option("--shared-tokens", sc.shared_tokens);
  synth->add_option("--negatives", sc.negatives_per_impression);
  synth->add_flag("--planted-recent", sc.planted_recent, "Put planted items at the most recent positions");

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  fs::path train_dir, dev_dir, train_ckpt, glove;
  train->add_option("--train-dir", train_dir, "Directory with news.tsv and behaviors.tsv")->required();
  train->add_option("--dev-dir", dev_dir, "Evaluated after every epoch when given");
  train->add_option("--out", train_ckpt, "Checkpoint path; the vocabulary goes to <out>.vocab")->required();
  train->add_option("--embeddings", glove, "Pretrained word vectors, one 'token v1 ... vD' per line");

  // eval / predict / analyze share the data + checkpoint flags
  struct ReadCmd {
    CLI::App* cmd = nullptr;
    ConfigFlags flags;
    fs::path data_dir, ckpt, out;
    std::size_t threads = 1;
  };
  const auto reader = [&](const char* name, const char* help) {
    auto r = std::make_unique<ReadCmd>();
    r->cmd = app.add_subcommand(name, help);
    r->flags.attach(*r->cmd);
    r->cmd->add_option("--data-dir", r->data_dir, "Directory with news.tsv and behaviors.tsv")->required();
    r->cmd->add_option("--ckpt", r->ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    r->cmd->add_option("--threads", r->threads, "Scoring threads");
    return r;
  };
  auto eval = reader("eval", "Ranking metrics as JSON");
  eval->cmd->add_option("--out", eval->out, "JSON file (default: stdout)");
  auto predict_cmd = reader("predict", "Ranked predictions, one impression per line");
  predict_cmd->cmd->add_option("--out", predict_cmd->out, "Predictions file")->required();
  auto analyze = reader("analyze", "Informativeness by history position");
  fs::path svg_out;
  analyze->cmd->add_option("--out", analyze->out, "CSV file")->required();
  analyze->cmd->add_option("--svg", svg_out, "Plot file (default: <out>.svg)");
  auto bench = reader("bench", "Inference throughput for several K");
  std::vector<std::size_t> bench_k{5, 10, 25, 50};
  std::string bench_mode = "both";
  BenchOptions bench_opts;
  bench->cmd->add_option("--k", bench_k, "Values of K")->delimiter(',');
  bench->cmd->add_option("--mode", bench_mode, "sfi, recent or both")
      ->check(CLI::IsMember({"sfi", "recent", "both"}));
  bench->cmd->add_option("--duration", bench_opts.duration_seconds, "Measured seconds per run");
  bench->cmd->add_option("--warmup", bench_opts.warmup_seconds, "Warmup seconds per run");
  bench->cmd->add_option("--out", bench->out, "JSON file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      sc.history_min = sc.history_max = history;
      std::mt19937_64 rng(synth_seed);
      const auto ds = data::generate_synthetic(sc, rng);
      data::write_synthetic(synth_out, ds);
      std::cout << "wrote " << ds.news.records.size() << " news, " << ds.train.size() << " train and "
                << ds.eval.size() << " dev impressions to " << synth_out.string() << '\n';
    } else if (train->parsed()) {
      TrainOptions opts;
      opts.train_dir = train_dir;
      opts.dev_dir = dev_dir;
      opts.checkpoint = train_ckpt;
      opts.embeddings = glove;
      opts.on_epoch = [](std::size_t epoch, const EpochStats& s, const MetricSummary* dev) {
        std::cerr << "epoch " << epoch + 1 << ": loss " << s.mean_loss << " over " << s.samples << " samples";
        if (dev) std::cerr << ", dev auc " << dev->auc;
        std::cerr << '\n';
      };
      train_from_directory(train_flags.apply({}), opts);
    } else if (eval->cmd->parsed()) {
      const SfiModel model = load_model(eval->ckpt, eval->flags);
      const Dataset p = open_data(eval->data_dir, eval->ckpt, model.config(), true);
      const NewsCache cache(model, *p.corpus, eval->threads);
      write_or_print(eval->out, summarize(predict(model, cache, p.impressions, eval->threads)).to_json());
    } else if (predict_cmd->cmd->parsed()) {
      const SfiModel model = load_model(predict_cmd->ckpt, predict_cmd->flags);
      const Dataset p = open_data(predict_cmd->data_dir, predict_cmd->ckpt, model.config(), false);
      const NewsCache cache(model, *p.corpus, predict_cmd->threads);
      std::ofstream out(predict_cmd->out);
      write_predictions(out, predict(model, cache, p.impressions, predict_cmd->threads));
    } else if (analyze->cmd->parsed()) {
      const SfiModel model = load_model(analyze->ckpt, analyze->flags);
      const Dataset p = open_data(analyze->data_dir, analyze->ckpt, model.config(), false);
      const NewsCache cache(model, *p.corpus, analyze->threads);
      const auto profile = informativeness_profile(model, cache, p.impressions);
      std::ofstream csv(analyze->out);
      write_profile_csv(csv, profile);
      std::ofstream svg(svg_out.empty() ? fs::path(analyze->out.string() + ".svg") : svg_out);
      write_profile_svg(svg, profile);
    } else if (bench->cmd->parsed()) {
      const SfiModel base = load_model(bench->ckpt, bench->flags);
      const Dataset p = open_data(bench->data_dir, bench->ckpt, base.config(), false);
      const NewsCache cache(base, *p.corpus, bench->threads);
      bench_opts.threads = bench->threads;
      std::string text = "[";
      for (std::size_t k : bench_k) {
        for (SelectionMode mode : {SelectionMode::kLearned, SelectionMode::kRecent}) {
          if (bench_mode != "both" && bench_mode != to_string(mode)) continue;
          ModelConfig cfg = base.config();
          cfg.select_k = k;
          cfg.selection = mode;
          const SfiModel model = reconfigure(base, cfg);
          const BenchReport r = run_benchmark(model, cache, p.impressions, bench_opts);
          std::cerr << r.label() << ": " << r.iterations_per_second << " it/s\n";
          text += (text.size() > 1 ? ",\n" : "\n") + r.to_json();
        }
      }
      write_or_print(bench->out, text + "\n]");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
