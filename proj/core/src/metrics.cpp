#include "layoutcomp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace layoutcomp {

namespace {

std::int64_t micros(double seconds) { return std::llround(seconds * 1e6); }

struct Postorder {
  std::vector<const LayoutNode*> node;  // 1-based
  std::vector<int> leftmost;            // 1-based postorder index of the leftmost leaf
  std::vector<int> keyroots;
};

Postorder postorder(const LayoutTree& t) {
  Postorder p;
  p.node.push_back(nullptr);
  p.leftmost.push_back(0);
  if (t.empty()) return p;
  // Iterative DFS; children visited in stored order.
  std::vector<std::pair<int, size_t>> stack{{0, 0}};
  std::vector<int> first_leaf(static_cast<size_t>(t.size()), 0);
  while (!stack.empty()) {
    auto& [v, next] = stack.back();
    const auto& kids = t.children(v);
    if (next < kids.size()) {
      const int c = kids[next++];
      stack.emplace_back(c, 0);
      continue;
    }
    p.node.push_back(&t.node(v));
    const int idx = static_cast<int>(p.node.size()) - 1;
    const int lm = kids.empty() ? idx : first_leaf[static_cast<size_t>(kids.front())];
    first_leaf[static_cast<size_t>(v)] = lm;
    p.leftmost.push_back(lm);
    stack.pop_back();
  }
  const int n = static_cast<int>(p.node.size()) - 1;
  std::set<int> seen;
  for (int i = n; i >= 1; --i) {
    if (seen.insert(p.leftmost[static_cast<size_t>(i)]).second) p.keyroots.push_back(i);
  }
  std::sort(p.keyroots.begin(), p.keyroots.end());
  return p;
}

using PairKey = std::tuple<int, int, int, int, int, int, int, int, int, int>;

std::map<PairKey, long long> pair_multiset(const LayoutTree& t, bool relaxed) {
  std::map<PairKey, long long> out;
  for (const auto& n : t.nodes()) {
    if (n.parent == kNoParent) continue;
    const auto& p = t.node(n.parent);
    const auto& a = p.bounds;
    const auto& b = n.bounds;
    PairKey key = relaxed ? PairKey{p.type_id, 0, 0, 0, 0, n.type_id, 0, 0, 0, 0}
                          : PairKey{p.type_id, a.x, a.y, a.x2, a.y2, n.type_id, b.x, b.y, b.x2, b.y2};
    ++out[key];
  }
  return out;
}

std::string tree_key(const LayoutTree& t) {
  std::string s;
  for (const auto& n : t.nodes()) {
    s += std::to_string(n.type_id) + (n.terminal ? "t" : "n") + std::to_string(n.bounds.x) + "," +
         std::to_string(n.bounds.y) + "," + std::to_string(n.bounds.x2) + "," + std::to_string(n.bounds.y2) + "^" +
         std::to_string(n.parent) + ";";
  }
  return s;
}

double percent(long long num, long long den) { return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

void CostTable::validate() const {
  for (double c : {insert, change_type, change_geometry, del}) {
    if (!(c >= 0) || !std::isfinite(c)) throw std::invalid_argument("edit costs must be finite and non-negative");
  }
  if (del > std::min({insert, change_type, change_geometry})) {
    throw std::invalid_argument("deletion must be the cheapest edit operation");
  }
}

std::string CostTable::to_json() const {
  nlohmann::json j{{"insert", insert}, {"change_type", change_type}, {"change_geometry", change_geometry}, {"delete", del}};
  return j.dump(2);
}

CostTable CostTable::from_json(const std::string& text) {
  CostTable c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("cost table must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!value.is_number()) throw std::invalid_argument("cost '" + key + "' must be a number");
      const double v = value.get<double>();
      if (key == "insert") {
        c.insert = v;
      } else if (key == "change_type") {
        c.change_type = v;
      } else if (key == "change_geometry") {
        c.change_geometry = v;
      } else if (key == "delete") {
        c.del = v;
      } else {
        throw std::invalid_argument("unknown cost '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad cost table: ") + e.what());
  }
  c.validate();
  return c;
}

CostTable CostTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open cost table '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

std::int64_t zhang_shasha(const LayoutTree& pred, const LayoutTree& gold, std::int64_t ins, std::int64_t del,
                          std::int64_t ct, std::int64_t cg) {
  const auto A = postorder(pred);
  const auto B = postorder(gold);
  const int n = static_cast<int>(A.node.size()) - 1;
  const int m = static_cast<int>(B.node.size()) - 1;
  if (n == 0) return ins * m;
  if (m == 0) return del * n;
  auto change = [&](int i, int j) {
    const auto* a = A.node[static_cast<size_t>(i)];
    const auto* b = B.node[static_cast<size_t>(j)];
    return (a->type_id != b->type_id ? ct : 0) + (a->bounds == b->bounds ? 0 : cg);
  };
  std::vector<std::int64_t> td(static_cast<size_t>(n + 1) * (m + 1), 0);
  auto TD = [&](int i, int j) -> std::int64_t& { return td[static_cast<size_t>(i) * (m + 1) + j]; };
  std::vector<std::int64_t> fd;
  for (int i : A.keyroots) {
    for (int j : B.keyroots) {
      const int li = A.leftmost[static_cast<size_t>(i)], lj = B.leftmost[static_cast<size_t>(j)];
      const int rows = i - li + 2, cols = j - lj + 2;
      fd.assign(static_cast<size_t>(rows) * cols, 0);
      auto FD = [&](int a, int b) -> std::int64_t& {
        // a in [li-1, i], b in [lj-1, j]
        return fd[static_cast<size_t>(a - li + 1) * cols + (b - lj + 1)];
      };
      for (int a = li; a <= i; ++a) FD(a, lj - 1) = FD(a - 1, lj - 1) + del;
      for (int b = lj; b <= j; ++b) FD(li - 1, b) = FD(li - 1, b - 1) + ins;
      for (int a = li; a <= i; ++a) {
        for (int b = lj; b <= j; ++b) {
          const std::int64_t drop = FD(a - 1, b) + del;
          const std::int64_t add = FD(a, b - 1) + ins;
          if (A.leftmost[static_cast<size_t>(a)] == li && B.leftmost[static_cast<size_t>(b)] == lj) {
            FD(a, b) = std::min({drop, add, FD(a - 1, b - 1) + change(a, b)});
            TD(a, b) = FD(a, b);
          } else {
            const int pa = A.leftmost[static_cast<size_t>(a)] - 1, pb = B.leftmost[static_cast<size_t>(b)] - 1;
            FD(a, b) = std::min({drop, add, FD(pa, pb) + TD(a, b)});
          }
        }
      }
    }
  }
  return TD(n, m);
}

}  // namespace

std::int64_t tree_edit_distance_us(const LayoutTree& pred, const LayoutTree& gold, const CostTable& costs) {
  costs.validate();
  return zhang_shasha(pred, gold, micros(costs.insert), micros(costs.del), micros(costs.change_type),
                      micros(costs.change_geometry));
}

double tree_edit_distance(const LayoutTree& pred, const LayoutTree& gold, const CostTable& costs) {
  return static_cast<double>(tree_edit_distance_us(pred, gold, costs)) / 1e6;
}

PairCounts& PairCounts::operator+=(const PairCounts& o) {
  matched += o.matched;
  predicted += o.predicted;
  gold += o.gold;
  return *this;
}

double PairCounts::precision() const {
  if (predicted == 0) return gold == 0 ? 100.0 : 0.0;
  return percent(matched, predicted);
}

double PairCounts::recall() const {
  if (gold == 0) return predicted == 0 ? 100.0 : 0.0;
  return percent(matched, gold);
}

double PairCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

PairCounts pair_counts(const LayoutTree& pred, const LayoutTree& gold, bool relaxed) {
  const auto a = pair_multiset(pred, relaxed);
  const auto b = pair_multiset(gold, relaxed);
  PairCounts c;
  for (const auto& [k, n] : a) {
    c.predicted += n;
    if (auto it = b.find(k); it != b.end()) c.matched += std::min(n, it->second);
  }
  for (const auto& kv : b) c.gold += kv.second;
  return c;
}

PairScores pair_retrieval(const LayoutTree& pred, const LayoutTree& gold, bool relaxed) {
  const auto c = pair_counts(pred, gold, relaxed);
  return PairScores{c.precision(), c.recall(), c.f1()};
}

bool next_element_hit(const LayoutNode& predicted, const LayoutNode& truth, bool relaxed) {
  if (predicted.type_id != truth.type_id || predicted.terminal != truth.terminal) return false;
  return relaxed || predicted.bounds == truth.bounds;
}

double mean_completions(const std::vector<LayoutTree>& corpus, TraversalOrder order, double fraction) {
  if (corpus.empty()) return 0.0;
  std::vector<std::string> prefix(corpus.size());
  std::map<std::string, std::set<std::string>> groups;
  for (size_t i = 0; i < corpus.size(); ++i) {
    prefix[i] = tree_key(extract_partial(corpus[i], fraction, order).tree);
    groups[prefix[i]].insert(tree_key(canonicalize(corpus[i])));
  }
  double total = 0;
  for (const auto& p : prefix) total += static_cast<double>(groups[p].size());
  return total / static_cast<double>(corpus.size());
}

std::string NeuralCompleter::name() const { return std::string(to_string(model_.config().variant)); }

Completion NeuralCompleter::complete(const PartialTree& partial, const LayoutTree&) {
  return layoutcomp::complete(partial, model_, cfg_).front();
}

std::optional<LayoutNode> NeuralCompleter::next(const PartialTree& partial, const LayoutTree&) {
  return predict_next(partial, model_);
}

Completion OracleCompleter::complete(const PartialTree& partial, const LayoutTree& gold) {
  const auto order = traverse(gold, partial.order);
  std::vector<int> index(static_cast<size_t>(gold.size()), -1);
  LayoutTree out = partial.tree;
  for (int i = 0; i < partial.tree.size() && i < gold.size(); ++i) index[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
  for (size_t i = static_cast<size_t>(partial.tree.size()); i < order.size(); ++i) {
    const auto& n = gold.node(order[i]);
    index[static_cast<size_t>(order[i])] =
        out.add_node(n.type_id, n.terminal, n.bounds, index[static_cast<size_t>(n.parent)]);
  }
  Completion c;
  c.new_node_count = out.size() - partial.tree.size();
  c.tree = std::move(out);
  return c;
}

std::optional<LayoutNode> OracleCompleter::next(const PartialTree& partial, const LayoutTree& gold) {
  const auto order = traverse(gold, partial.order);
  if (partial.tree.size() >= static_cast<int>(order.size())) return std::nullopt;
  return gold.node(order[static_cast<size_t>(partial.tree.size())]);
}

double next_element_accuracy(Completer& completer, const std::vector<LayoutTree>& corpus, TraversalOrder order,
                             double fraction, bool relaxed) {
  long long hits = 0, cases = 0;
  for (const auto& gold : corpus) {
    const auto partial = extract_partial(gold, fraction, order);
    const auto seq = traverse(gold, order);
    if (partial.tree.size() >= gold.size()) continue;
    ++cases;
    const auto pred = completer.next(partial, gold);
    if (pred && next_element_hit(*pred, gold.node(seq[static_cast<size_t>(partial.tree.size())]), relaxed)) ++hits;
  }
  return percent(hits, cases);
}

CellResult evaluate_cell(Completer& completer, const std::vector<LayoutTree>& test, TraversalOrder order,
                         double fraction, const CostTable& costs) {
  costs.validate();
  PairCounts strict_pairs, relaxed_pairs;
  std::int64_t strict_edit = 0, relaxed_edit = 0;
  long long strict_hits = 0, relaxed_hits = 0, cases = 0;
  for (const auto& gold : test) {
    const auto partial = extract_partial(gold, fraction, order);
    const auto done = completer.complete(partial, gold);
    strict_pairs += pair_counts(done.tree, gold, false);
    relaxed_pairs += pair_counts(done.tree, gold, true);
    strict_edit += tree_edit_distance_us(done.tree, gold, costs);
    relaxed_edit += zhang_shasha(done.tree, gold, micros(costs.insert), micros(costs.del), micros(costs.change_type), 0);
    if (partial.tree.size() < gold.size()) {
      ++cases;
      const auto truth = gold.node(traverse(gold, order)[static_cast<size_t>(partial.tree.size())]);
      if (const auto pred = completer.next(partial, gold)) {
        strict_hits += next_element_hit(*pred, truth, false);
        relaxed_hits += next_element_hit(*pred, truth, true);
      }
    }
  }
  auto fill = [&](MetricReport& r, const PairCounts& pc, std::int64_t edit, long long hits, bool relaxed) {
    r.relaxed = relaxed;
    r.trees = static_cast<int>(test.size());
    r.next_cases = static_cast<int>(cases);
    r.precision = pc.precision();
    r.recall = pc.recall();
    r.f1 = pc.f1();
    r.next_accuracy = percent(hits, cases);
    r.edit_distance = test.empty() ? 0.0 : static_cast<double>(edit) / 1e6 / static_cast<double>(test.size());
  };
  CellResult out;
  fill(out.strict, strict_pairs, strict_edit, strict_hits, false);
  fill(out.relaxed, relaxed_pairs, relaxed_edit, relaxed_hits, true);
  return out;
}

}  // namespace layoutcomp
