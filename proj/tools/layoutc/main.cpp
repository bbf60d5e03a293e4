#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutcomp/checkpoint.hpp"
#include "layoutcomp/corpus.hpp"
#include "layoutcomp/harness.hpp"
#include "layoutcomp/metrics.hpp"
#include "layoutcomp/service.hpp"
#include "layoutcomp/synthetic.hpp"

using namespace layoutcomp;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TypeManifest manifest_from(const std::string& path) {
  return path.empty() ? TypeManifest::builtin() : TypeManifest::load(path);
}

ModelConfig model_config_for(const ExperimentConfig& cfg, Variant v, const TypeManifest& manifest) {
  ModelConfig mc = cfg.model_config.empty() ? ModelConfig{} : ModelConfig::load(cfg.model_config);
  mc.variant = v;
  mc.num_types = manifest.size();
  mc.validate();
  return mc;
}

void print_stats(const CorpusStats& s) {
  std::printf("layouts     %d\n", s.num_layouts);
  std::printf("nodes       mean %.2f  min %d  max %d\n", s.mean_nodes, s.min_nodes, s.max_nodes);
  std::printf("depth       mean %.2f  min %d  max %d\n", s.mean_depth, s.min_depth, s.max_depth);
}

void print_report(const char* label, const MetricReport& m) {
  std::printf("%-8s F1 %6.2f  P %6.2f  R %6.2f  Next %6.2f  Edit %7.2f  (trees %d, next cases %d)\n", label, m.f1,
              m.precision, m.recall, m.next_accuracy, m.edit_distance, m.trees, m.next_cases);
}

HttpServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout completion toolkit: ingest, train, evaluate and serve tree decoders"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a directory of layout JSON files into a corpus bundle");
  std::string data_dir, manifest_path, out_path, root_label;
  bool shuffle_children = false;
  std::uint64_t shuffle_seed = 0;
  ingest->add_option("--data-dir", data_dir, "Directory of layout documents")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--manifest", manifest_path, "Type manifest (one name per line)");
  ingest->add_option("--out", out_path, "Corpus bundle to write (JSON lines)")->required();
  ingest->add_option("--root-label", root_label, "Type for roots without a componentLabel");
  ingest->add_flag("--shuffle-children", shuffle_children, "Random sibling order instead of reading order");
  ingest->add_option("--shuffle-seed", shuffle_seed, "Seed for --shuffle-children");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus bundle");
  int synth_count = 200;
  std::uint64_t synth_seed = 0;
  synth->add_option("--count", synth_count, "Number of layouts")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "First generator seed");
  synth->add_option("--out", out_path, "Corpus bundle to write")->required();

  // split
  auto* split = app.add_subcommand("split", "Split a corpus bundle into train/valid/test bundles");
  std::string corpus_path, ratios_text = "0.8,0.1,0.1", out_dir;
  std::uint64_t seed = 1;
  split->add_option("--corpus", corpus_path, "Corpus bundle")->required()->check(CLI::ExistingFile);
  split->add_option("--ratios", ratios_text, "train,valid,test ratios");
  split->add_option("--seed", seed, "Shuffle seed");
  split->add_option("--out-dir", out_dir, "Directory for train/valid/test.jsonl")->required();
  split->add_option("--manifest", manifest_path, "Type manifest");

  // train
  auto* train = app.add_subcommand("train", "Train one decoder variant on the experiment's training split");
  std::string variant_text, config_path, resume_path;
  train->add_option("--variant", variant_text, "vanilla|pointer|recursive")
      ->required()
      ->check(CLI::IsMember({"vanilla", "pointer", "recursive"}));
  train->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  std::string order_text = "dfs";
  train->add_option("--order", order_text, "Traversal order of the training prefixes: bfs|dfs")
      ->check(CLI::IsMember({"bfs", "dfs"}));
  train->add_option("--out", out_dir, "Checkpoint directory (default <outputDir>/<variant>-<order>)");
  train->add_option("--resume", resume_path, "Continue from a last.ckpt");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one (order, fraction) cell");
  std::string checkpoint_path;
  double fraction = 0.5;
  bool relaxed = false;
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--order", order_text, "bfs|dfs")->check(CLI::IsMember({"bfs", "dfs"}));
  eval->add_option("--fraction", fraction, "Given fraction of each tree")->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--relaxed", relaxed, "Report only the relaxed metrics");
  auto* eval_src = eval->add_option_group("source", "Trees to evaluate on");
  eval_src->add_option("--config", config_path, "Experiment config (uses its test split)")->check(CLI::ExistingFile);
  eval_src->add_option("--corpus", corpus_path, "Evaluate on every tree of this bundle")->check(CLI::ExistingFile);
  eval_src->require_option(1);
  eval->add_option("--manifest", manifest_path, "Type manifest (with --corpus)");
  std::string costs_path;
  eval->add_option("--costs", costs_path, "Edit cost table JSON")->check(CLI::ExistingFile);

  // matrix
  auto* matrix = app.add_subcommand("matrix", "Evaluate all trained variants over orders and fractions");
  matrix->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);

  // complete
  auto* comp = app.add_subcommand("complete", "Complete a partial layout file");
  std::string partial_path, strategy_text = "greedy";
  int beam_width = 4, num_candidates = 1;
  comp->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  comp->add_option("--partial", partial_path, "Partial layout (wire-schema node JSON)")->required()->check(CLI::ExistingFile);
  comp->add_option("--strategy", strategy_text, "greedy|beam")->check(CLI::IsMember({"greedy", "beam"}));
  comp->add_option("--beam-width", beam_width, "Beam width")->check(CLI::PositiveNumber);
  comp->add_option("--num-candidates", num_candidates, "Candidates to return (<= 5)")->check(CLI::Range(1, 5));
  auto* comp_order =
      comp->add_option("--order", order_text, "bfs|dfs (default: the checkpoint's training order)")
          ->check(CLI::IsMember({"bfs", "dfs"}));
  comp->add_option("--manifest", manifest_path, "Type manifest");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve completions over HTTP");
  int port = 8080, timeout_ms = 5000, workers = 4;
  std::string host = "0.0.0.0";
  serve->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--timeout-ms", timeout_ms, "Per-request completion timeout")->check(CLI::PositiveNumber);
  serve->add_option("--workers", workers, "HTTP worker threads")->check(CLI::PositiveNumber);
  serve->add_option("--manifest", manifest_path, "Type manifest");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      IngestOptions opt;
      opt.root_label = root_label;
      opt.shuffle_children = shuffle_children;
      opt.shuffle_seed = shuffle_seed;
      const auto manifest = manifest_from(manifest_path);
      const auto r = ingest_corpus(data_dir, manifest, opt);
      save_corpus(out_path, r.trees, manifest);
      print_stats(r.stats);
      std::printf("parse errors %d\n", r.parse_errors);
      for (const auto& [reason, n] : r.rejects) std::printf("rejected    %-22s %d\n", reason.c_str(), n);
      std::printf("wrote %s\n", out_path.c_str());
    } else if (*synth) {
      save_corpus(out_path, generate_synthetic_corpus(synth_seed, synth_count), TypeManifest::builtin());
      std::printf("wrote %d layouts to %s\n", synth_count, out_path.c_str());
    } else if (*split) {
      const auto manifest = manifest_from(manifest_path);
      const auto s = split_corpus(load_corpus(corpus_path, manifest), SplitRatios::parse(ratios_text), seed);
      fs::create_directories(out_dir);
      save_corpus(fs::path(out_dir) / "train.jsonl", s.train, manifest);
      save_corpus(fs::path(out_dir) / "valid.jsonl", s.valid, manifest);
      save_corpus(fs::path(out_dir) / "test.jsonl", s.test, manifest);
      std::printf("train %zu  valid %zu  test %zu\n", s.train.size(), s.valid.size(), s.test.size());
    } else if (*train) {
      const auto cfg = ExperimentConfig::load(config_path);
      const auto v = parse_variant(variant_text);
      const auto manifest = manifest_from(cfg.manifest);
      const auto s = split_corpus(load_corpus(cfg.corpus, manifest), cfg.ratios, cfg.seed);
      auto tc = cfg.train_config.empty() ? TrainConfig{} : TrainConfig::from_json(read_file(cfg.train_config));
      const auto order = parse_order(order_text);
      tc.orders = {order};
      const fs::path dir = out_dir.empty() ? cfg.checkpoint_path(v, order).parent_path() : fs::path(out_dir);
      Trainer trainer = resume_path.empty() ? Trainer(model_config_for(cfg, v, manifest), tc, s.train, s.valid)
                                            : Trainer::resume(resume_path, tc, s.train, s.valid);
      std::printf("%s %s: %zu train / %zu valid trees, %d steps max\n", variant_text.c_str(), order_text.c_str(),
                  s.train.size(), s.valid.size(), tc.max_steps);
      trainer.run(dir, [](const CurvePoint& p) {
        std::printf("step %6d  train %.4f  valid %.4f  best %.4f\n", p.step, p.train_loss, p.valid_loss, p.best_valid);
        std::fflush(stdout);
      });
      std::printf("%s after %d steps; best valid %.4f at step %d -> %s\n",
                  trainer.stopped_early() ? "early stop" : "done", trainer.steps_done(), trainer.best_valid(),
                  trainer.best_step(), (dir / "best.ckpt").c_str());
    } else if (*eval) {
      auto ck = load_checkpoint(checkpoint_path);
      std::vector<LayoutTree> trees;
      CostTable costs;
      if (!config_path.empty()) {
        const auto cfg = ExperimentConfig::load(config_path);
        trees = split_corpus(load_corpus(cfg.corpus, manifest_from(cfg.manifest)), cfg.ratios, cfg.seed).test;
        if (!cfg.costs.empty()) costs = CostTable::load(cfg.costs);
      } else {
        trees = load_corpus(corpus_path, manifest_from(manifest_path));
      }
      if (!costs_path.empty()) costs = CostTable::load(costs_path);
      const auto order = parse_order(order_text);
      if (ck.model->config().variant == Variant::kVanilla && order == TraversalOrder::kBfs) {
        throw std::invalid_argument("the vanilla decoder only completes depth-first prefixes");
      }
      NeuralCompleter completer(*ck.model);
      const auto r = evaluate_cell(completer, trees, order, fraction, costs);
      std::printf("%s %s %.0f%%\n", std::string(to_string(ck.model->config().variant)).c_str(), order_text.c_str(),
                  fraction * 100);
      if (!relaxed) print_report("strict", r.strict);
      print_report("relaxed", r.relaxed);
    } else if (*matrix) {
      const auto report = run_matrix(ExperimentConfig::load(config_path));
      std::cout << report.table(false) << report.table(true) << report.footer();
    } else if (*comp) {
      const auto manifest = manifest_from(manifest_path);
      ServiceConfig sc;
      sc.timeout_ms = 1 << 30;
      CompletionService service(manifest, sc);
      service.load(checkpoint_path);
      nlohmann::json req{{"root", nlohmann::json::parse(read_file(partial_path))},
                         {"strategy", strategy_text},
                         {"numCandidates", num_candidates}};
      if (comp_order->count() > 0) req["order"] = order_text;
      if (strategy_text == "beam") req["beamWidth"] = beam_width;
      const auto res = service.handle_complete(req.dump());
      std::cout << nlohmann::json::parse(res.body).dump(2) << '\n';
      return res.status == 200 ? 0 : 1;
    } else if (*serve) {
      ServiceConfig sc;
      sc.timeout_ms = timeout_ms;
      sc.workers = workers;
      CompletionService service(manifest_from(manifest_path), sc);
      HttpServer server(service);
      const int bound = server.bind(host, port);
      if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      int exit_code = 0;
      std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), bound);
      std::thread loader([&] {
        try {
          service.load(checkpoint_path);
          std::fprintf(stderr, "model loaded from %s\n", checkpoint_path.c_str());
        } catch (const std::exception& e) {
          std::fprintf(stderr, "error: %s\n", e.what());
          exit_code = 1;
          server.stop();
        }
      });
      server.serve();
      loader.join();
      return exit_code;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
