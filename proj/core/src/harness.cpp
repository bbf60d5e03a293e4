#include "layoutcomp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "layoutcomp/corpus.hpp"
#include "layoutcomp/teacher.hpp"

namespace layoutcomp {

bool order_supported(Variant v, TraversalOrder o) { return v != Variant::kVanilla || o == TraversalOrder::kDfs; }

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent_label(double fraction) { return std::to_string(static_cast<int>(std::lround(fraction * 100))) + "%"; }

std::vector<std::string> order_names(const std::vector<TraversalOrder>& orders) {
  std::vector<std::string> out;
  for (auto o : orders) out.emplace_back(to_string(o));
  return out;
}

std::vector<TraversalOrder> parse_orders(const json& value) {
  if (!value.is_array()) throw std::invalid_argument("orders: expected an array");
  std::vector<TraversalOrder> out;
  for (const auto& v : value) out.push_back(parse_order(v.get<std::string>()));
  return out;
}

// Unbiased index in [0, n) from a raw 64-bit generator, independent of the standard
// library's distribution implementations.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

template <typename T>
T require_field(const json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string(what) + ": field '" + key + "' is missing or has the wrong type");
  }
}

}  // namespace

// ---- splitting ----------------------------------------------------------------

void SplitRatios::validate() const {
  for (double r : {train, valid, test}) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("split ratios must lie in [0, 1]");
  }
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
}

SplitRatios SplitRatios::parse(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad split ratio '" + item + "'");
    }
  }
  if (parts.size() != 3) throw std::invalid_argument("expected three comma-separated split ratios");
  SplitRatios r{parts[0], parts[1], parts[2]};
  r.validate();
  return r;
}

Splits split_corpus(const std::vector<LayoutTree>& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  if (corpus.size() < 10) throw TooSmall("corpus has " + std::to_string(corpus.size()) + " trees; at least 10 are needed");
  const size_t n = corpus.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[draw_below(rng, i + 1)]);

  const auto n_valid = static_cast<size_t>(std::llround(ratios.valid * static_cast<double>(n)));
  const auto n_test = static_cast<size_t>(std::llround(ratios.test * static_cast<double>(n)));
  Splits s;
  for (size_t i = 0; i < n; ++i) {
    const auto& t = corpus[idx[i]];
    if (i < n_valid) {
      s.valid.push_back(t);
    } else if (i < n_valid + n_test) {
      s.test.push_back(t);
    } else {
      s.train.push_back(t);
    }
  }
  return s;
}

// ---- training -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be positive");
  if (warmup < 0) throw std::invalid_argument("train: warmup must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (patience < 0) throw std::invalid_argument("train: patience must be >= 0");
  if (!(min_delta >= 0)) throw std::invalid_argument("train: min_delta must be >= 0");
  if (fractions.empty()) throw std::invalid_argument("train: fractions must not be empty");
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("train: fractions must lie in (0, 1]");
  }
  if (orders.empty()) throw std::invalid_argument("train: orders must not be empty");
  for (size_t i = 0; i < orders.size(); ++i) {
    if (std::find(orders.begin(), orders.begin() + static_cast<long>(i), orders[i]) != orders.begin() + static_cast<long>(i)) {
      throw std::invalid_argument("train: orders repeats " + std::string(to_string(orders[i])));
    }
  }
}

std::string TrainConfig::to_json() const {
  json j{{"maxSteps", max_steps}, {"batchSize", batch_size}, {"lr", lr},          {"warmup", warmup},
         {"evalEvery", eval_every}, {"patience", patience},   {"minDelta", min_delta}, {"fractions", fractions},
         {"orders", order_names(orders)}, {"seed", seed}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("train config: expected an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "maxSteps") c.max_steps = value.get<int>();
      else if (key == "batchSize") c.batch_size = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "warmup") c.warmup = value.get<int>();
      else if (key == "evalEvery") c.eval_every = value.get<int>();
      else if (key == "patience") c.patience = value.get<int>();
      else if (key == "minDelta") c.min_delta = value.get<double>();
      else if (key == "fractions") c.fractions = value.get<std::vector<double>>();
      else if (key == "orders") c.orders = parse_orders(value);
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw std::invalid_argument("train config: unknown field '" + key + "'");
    } catch (const json::exception&) {
      throw std::invalid_argument("train config: field '" + key + "' has the wrong type");
    }
  }
  c.validate();
  return c;
}

EvalResult evaluate_teacher_forced(DecoderModel<float>& model, const std::vector<LayoutTree>& trees,
                                   const std::vector<double>& fractions, const std::vector<TraversalOrder>& orders) {
  std::vector<TrainExample> all;
  for (auto order : orders) {
    if (!order_supported(model.config().variant, order)) {
      throw std::invalid_argument("the vanilla decoder only supports dfs");
    }
  }
  for (const auto& t : trees) {
    for (double f : fractions) {
      const int k = prefix_size(t.size(), f);
      for (auto order : orders) all.push_back(TrainExample{&t, k, order});
    }
  }
  EvalResult r;
  double total = 0;
  long long scored = 0;
  constexpr size_t kChunk = 32;
  for (size_t i = 0; i < all.size(); i += kChunk) {
    std::vector<TrainExample> chunk(all.begin() + static_cast<long>(i),
                                    all.begin() + static_cast<long>(std::min(all.size(), i + kChunk)));
    ad::Graph<float> g(false);
    const auto res = teacher_forced_loss(g, model, chunk);
    total += res.value * static_cast<double>(res.scored);
    scored += res.scored;
    r.accuracy += res.accuracy;
  }
  r.loss = scored ? total / static_cast<double>(scored) : 0.0;
  return r;
}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<LayoutTree>& train,
                 const std::vector<LayoutTree>& valid)
    : cfg_(cfg), train_(&train), valid_(&valid), model_(std::make_unique<DecoderModel<float>>(model_cfg)) {
  cfg_.validate();
  for (auto order : cfg_.orders) {
    if (!order_supported(model_cfg.variant, order)) throw std::invalid_argument("train: the vanilla decoder only supports dfs");
  }
  if (train.empty()) throw std::invalid_argument("train: the training set is empty");
  if (valid.empty()) throw std::invalid_argument("train: the validation set is empty");
  adam_.init(model_->params().pointers());
}

Trainer Trainer::resume(const std::string& checkpoint, const TrainConfig& cfg, const std::vector<LayoutTree>& train,
                        const std::vector<LayoutTree>& valid) {
  auto ck = load_checkpoint(checkpoint);
  if (!ck.adam) throw CheckpointError(checkpoint + ": no optimizer state to resume from");
  Trainer t(ck.model->config(), cfg, train, valid);
  t.model_ = std::move(ck.model);
  t.adam_ = std::move(*ck.adam);
  const json meta = json::parse(ck.meta_json);
  try {
    t.step_ = meta.at("step").get<int>();
    t.best_valid_ = meta.at("bestValid").get<double>();
    t.best_step_ = meta.at("bestStep").get<int>();
    t.stale_evals_ = meta.at("staleEvals").get<int>();
    t.stopped_early_ = meta.at("stoppedEarly").get<bool>();
    t.running_loss_ = meta.at("runningLoss").get<double>();
    t.running_count_ = meta.at("runningCount").get<int>();
    for (const auto& p : meta.at("curve")) {
      t.curve_.push_back(CurvePoint{p.at(0).get<int>(), p.at(1).get<double>(), p.at(2).get<double>(),
                                    p.at(3).get<double>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointError(checkpoint + ": bad trainer metadata: " + e.what());
  }
  return t;
}

std::vector<TrainExample> Trainer::sample_batch(int step) const {
  auto rng = step_rng(cfg_.seed, static_cast<std::uint64_t>(step), 0);
  std::vector<TrainExample> batch;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    const auto& tree = (*train_)[draw_below(rng, train_->size())];
    const double f = cfg_.fractions[draw_below(rng, cfg_.fractions.size())];
    const auto order = cfg_.orders.size() == 1 ? cfg_.orders[0] : cfg_.orders[draw_below(rng, cfg_.orders.size())];
    batch.push_back(TrainExample{&tree, prefix_size(tree.size(), f), order});
  }
  return batch;
}

double Trainer::step() {
  const auto batch = sample_batch(step_);
  auto dropout_rng = step_rng(cfg_.seed, static_cast<std::uint64_t>(step_), 1);
  auto& params = model_->params();
  params.zero_grad();
  double value = 0;
  try {
    ad::Graph<float> g;
    auto res = teacher_forced_loss(g, *model_, batch, &dropout_rng);
    value = res.value;
    if (!std::isfinite(value)) throw Diverged("training loss is not finite at step " + std::to_string(step_));
    g.backward(res.loss);
    const ad::LrSchedule schedule{cfg_.lr, cfg_.warmup};
    ad::adam_step(params.pointers(), adam_, schedule.at(step_ + 1));
  } catch (const ad::NonFiniteError& e) {
    throw Diverged("training diverged at step " + std::to_string(step_) + ": " + e.what());
  }
  ++step_;
  running_loss_ += value;
  ++running_count_;
  return value;
}

bool Trainer::evaluate() {
  const auto r = evaluate_teacher_forced(*model_, *valid_, cfg_.fractions, cfg_.orders);
  if (!std::isfinite(r.loss)) throw Diverged("validation loss is not finite at step " + std::to_string(step_));
  const bool improved = best_step_ < 0 || r.loss < best_valid_ - cfg_.min_delta;
  if (improved) {
    best_valid_ = r.loss;
    best_step_ = step_;
    stale_evals_ = 0;
  } else {
    ++stale_evals_;
    if (cfg_.patience > 0 && stale_evals_ >= cfg_.patience) stopped_early_ = true;
  }
  CurvePoint p;
  p.step = step_;
  p.train_loss = running_count_ ? running_loss_ / running_count_ : 0.0;
  p.valid_loss = r.loss;
  p.best_valid = best_valid_;
  curve_.push_back(p);
  running_loss_ = 0;
  running_count_ = 0;
  if (improved && out_dir_) save_checkpoint((*out_dir_ / "best.ckpt").string(), *model_, nullptr, meta_json());
  return improved;
}

void Trainer::run(const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const CurvePoint&)>& on_eval) {
  out_dir_ = out_dir;
  if (out_dir_) std::filesystem::create_directories(*out_dir_);
  while (step_ < cfg_.max_steps && !stopped_early_) {
    step();
    if (step_ % cfg_.eval_every == 0 || step_ == cfg_.max_steps) {
      evaluate();
      if (on_eval) on_eval(curve_.back());
      if (out_dir_) save_last((*out_dir_ / "last.ckpt").string());
    }
  }
  if (out_dir_) {
    json curve = json::array();
    for (const auto& p : curve_) {
      curve.push_back({{"step", p.step}, {"trainLoss", p.train_loss}, {"validLoss", p.valid_loss},
                       {"bestValid", p.best_valid}});
    }
    write_file(*out_dir_ / "curve.json", curve.dump(2) + "\n");
  }
}

std::string Trainer::meta_json() const {
  json curve = json::array();
  for (const auto& p : curve_) curve.push_back({p.step, p.train_loss, p.valid_loss, p.best_valid});
  json meta{{"step", step_},
            {"bestValid", best_valid_},
            {"bestStep", best_step_},
            {"staleEvals", stale_evals_},
            {"stoppedEarly", stopped_early_},
            {"runningLoss", running_loss_},
            {"runningCount", running_count_},
            {"curve", curve},
            {"train", json::parse(cfg_.to_json())}};
  return meta.dump();
}

void Trainer::save_last(const std::string& path) const { save_checkpoint(path, *model_, &adam_, meta_json()); }

// ---- experiment matrix --------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (variants.empty()) throw std::invalid_argument("experiment: no variants");
  if (orders.empty()) throw std::invalid_argument("experiment: no orders");
  if (fractions.empty()) throw std::invalid_argument("experiment: no fractions");
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("experiment: fractions must lie in (0, 1]");
  }
  ratios.validate();
  decode.validate();
  if (output_dir.empty()) throw std::invalid_argument("experiment: outputDir must not be empty");
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("experiment config: expected an object");
  ExperimentConfig c;
  auto path_field = [&](const std::string& value) {
    if (value.empty()) return value;
    const std::filesystem::path p(value);
    return (p.is_absolute() || base_dir.empty() ? p : base_dir / p).string();
  };
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "variants") {
        c.variants.clear();
        for (const auto& v : value) c.variants.push_back(parse_variant(v.get<std::string>()));
      } else if (key == "orders") {
        c.orders = parse_orders(value);
      } else if (key == "fractions") {
        c.fractions = value.get<std::vector<double>>();
      } else if (key == "ratios") {
        const auto r = value.get<std::vector<double>>();
        if (r.size() != 3) throw std::invalid_argument("experiment config: ratios needs three values");
        c.ratios = SplitRatios{r[0], r[1], r[2]};
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "corpus") {
        c.corpus = path_field(value.get<std::string>());
      } else if (key == "manifest") {
        c.manifest = path_field(value.get<std::string>());
      } else if (key == "modelConfig") {
        c.model_config = path_field(value.get<std::string>());
      } else if (key == "trainConfig") {
        c.train_config = path_field(value.get<std::string>());
      } else if (key == "costs") {
        c.costs = path_field(value.get<std::string>());
      } else if (key == "outputDir") {
        c.output_dir = path_field(value.get<std::string>());
      } else if (key == "decode") {
        if (!value.is_object()) throw std::invalid_argument("experiment config: decode must be an object");
        for (const auto& [dk, dv] : value.items()) {
          if (dk == "strategy") c.decode.strategy = parse_strategy(dv.get<std::string>());
          else if (dk == "beamWidth") c.decode.beam_width = dv.get<int>();
          else if (dk == "maxNewNodes") c.decode.max_new_nodes = dv.get<int>();
          else if (dk == "temperature") c.decode.temperature = dv.get<double>();
          else throw std::invalid_argument("experiment config: unknown field 'decode." + dk + "'");
        }
      } else {
        throw std::invalid_argument("experiment config: unknown field '" + key + "'");
      }
    } catch (const json::exception&) {
      throw std::invalid_argument("experiment config: field '" + key + "' has the wrong type");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return from_json(read_file(path), path.parent_path());
}

std::filesystem::path ExperimentConfig::checkpoint_path(Variant v, TraversalOrder o) const {
  return std::filesystem::path(output_dir) / (std::string(to_string(v)) + "-" + std::string(to_string(o))) / "best.ckpt";
}

const MatrixCell* MatrixReport::find(Variant v, TraversalOrder o, double fraction) const {
  for (const auto& c : cells) {
    if (c.variant == v && c.order == o && std::abs(c.fraction - fraction) < 1e-12) return &c;
  }
  return nullptr;
}

std::string MatrixReport::tsv() const {
  std::ostringstream out;
  out << "variant\torder\tfraction\tf1\tprecision\trecall\tnext\tedit\t"
         "relaxed_f1\trelaxed_precision\trelaxed_recall\trelaxed_next\trelaxed_edit\ttrees\tnext_cases\n";
  for (const auto& c : cells) {
    const auto& s = c.result.strict;
    const auto& r = c.result.relaxed;
    out << to_string(c.variant) << '\t' << to_string(c.order) << '\t' << fmt(c.fraction, 2) << '\t' << fmt(s.f1, 4)
        << '\t' << fmt(s.precision, 4) << '\t' << fmt(s.recall, 4) << '\t' << fmt(s.next_accuracy, 4) << '\t'
        << fmt(s.edit_distance, 4) << '\t' << fmt(r.f1, 4) << '\t' << fmt(r.precision, 4) << '\t'
        << fmt(r.recall, 4) << '\t' << fmt(r.next_accuracy, 4) << '\t' << fmt(r.edit_distance, 4) << '\t'
        << s.trees << '\t' << s.next_cases << '\n';
  }
  return out.str();
}

std::string MatrixReport::table(bool relaxed) const {
  static const Variant kRowOrder[] = {Variant::kVanilla, Variant::kPointer, Variant::kRecursive};
  static const char* kRowName[] = {"Vanilla", "Pointer", "Recursive"};
  std::ostringstream out;
  for (auto order : {TraversalOrder::kBfs, TraversalOrder::kDfs}) {
    std::vector<int> rows;
    for (int r = 0; r < 3; ++r) {
      for (double f : fractions) {
        if (find(kRowOrder[r], order, f)) {
          rows.push_back(r);
          break;
        }
      }
    }
    if (rows.empty()) continue;
    const std::string order_name = order == TraversalOrder::kBfs ? "BFS" : "DFS";
    out << order_name << (relaxed ? " (relaxed)" : " (strict)") << '\n';
    std::string head1 = "Models    ", head2 = "          ";
    for (double f : fractions) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " | %-22s", (order_name + " " + percent_label(f)).c_str());
      head1 += buf;
      head2 += " |     F1   Next   Edit";
    }
    out << head1 << '\n' << head2 << '\n';
    for (int r : rows) {
      char name[16];
      std::snprintf(name, sizeof name, "%-10s", kRowName[r]);
      out << name;
      for (double f : fractions) {
        const auto* c = find(kRowOrder[r], order, f);
        if (!c) {
          out << " |      -      -      -";
          continue;
        }
        const auto& m = relaxed ? c->result.relaxed : c->result.strict;
        char buf[64];
        std::snprintf(buf, sizeof buf, " | %6.2f %6.2f %6.2f", m.f1, m.next_accuracy, m.edit_distance);
        out << buf;
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

std::string MatrixReport::footer() const {
  return "Reference relaxed Next (%), published full-corpus results:\n"
         "  BFS 80%: Recursive 95.3, Pointer 92.9\n"
         "  DFS 80%: Recursive 93.4, Pointer 88.4, Vanilla 76.6\n";
}

MatrixReport evaluate_matrix(const std::vector<Variant>& variants, const CompleterFor& completer_for,
                             const std::vector<LayoutTree>& test, const std::vector<TraversalOrder>& orders,
                             const std::vector<double>& fractions, const CostTable& costs) {
  MatrixReport report;
  report.fractions = fractions;
  for (auto variant : variants) {
    for (auto order : orders) {
      if (!order_supported(variant, order)) continue;
      auto& completer = completer_for(variant, order);
      for (double f : fractions) {
        report.cells.push_back(MatrixCell{variant, order, f, evaluate_cell(completer, test, order, f, costs)});
      }
    }
  }
  return report;
}

void write_report(const MatrixReport& report, const std::filesystem::path& dir) {
  write_file(dir / "report.tsv", report.tsv());
  write_file(dir / "report.txt", report.table(false) + report.table(true) + report.footer());
}

MatrixReport run_matrix(const ExperimentConfig& cfg) {
  cfg.validate();
  std::map<std::pair<Variant, TraversalOrder>, std::unique_ptr<DecoderModel<float>>> models;
  for (auto v : cfg.variants) {
    for (auto o : cfg.orders) {
      if (!order_supported(v, o)) continue;
      const auto path = cfg.checkpoint_path(v, o);
      if (!std::filesystem::exists(path)) {
        throw MissingCheckpoint("no " + std::string(to_string(o)) + " checkpoint for " + std::string(to_string(v)) +
                                " at " + path.string());
      }
      auto ck = load_checkpoint(path.string());
      if (ck.model->config().variant != v) {
        throw CheckpointError(path.string() + " holds a " + std::string(to_string(ck.model->config().variant)) +
                              " model");
      }
      models[{v, o}] = std::move(ck.model);
    }
  }
  const auto manifest = cfg.manifest.empty() ? TypeManifest::builtin() : TypeManifest::load(cfg.manifest);
  const auto corpus = load_corpus(cfg.corpus, manifest);
  const auto splits = split_corpus(corpus, cfg.ratios, cfg.seed);
  const CostTable costs = cfg.costs.empty() ? CostTable{} : CostTable::load(cfg.costs);

  std::map<std::pair<Variant, TraversalOrder>, NeuralCompleter> completers;
  for (auto& [key, model] : models) completers.emplace(key, NeuralCompleter(*model, cfg.decode));
  auto report = evaluate_matrix(
      cfg.variants, [&](Variant v, TraversalOrder o) -> Completer& { return completers.at({v, o}); }, splits.test,
      cfg.orders, cfg.fractions, costs);
  write_report(report, cfg.output_dir);
  return report;
}

}  // namespace layoutcomp
