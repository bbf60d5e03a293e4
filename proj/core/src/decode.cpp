#include "layoutcomp/decode.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace layoutcomp {

using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> log_probs(const float* logits, int n, double temperature) {
  std::vector<double> v(static_cast<size_t>(n));
  double mx = kNegInf;
  for (int i = 0; i < n; ++i) {
    v[static_cast<size_t>(i)] = static_cast<double>(logits[i]) / temperature;
    mx = std::max(mx, v[static_cast<size_t>(i)]);
  }
  double z = 0;
  for (double x : v) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  for (auto& x : v) x -= lse;
  return v;
}

StepDistribution heads_distribution(DecoderModel<float>& model, Graph<float>& g, Var<float> row, double temperature) {
  auto h = model.heads(g, row);
  StepDistribution d;
  auto lp = [&](Var<float> v) { return log_probs(v.value().row(0), v.cols(), temperature); };
  d.c = lp(h.c);
  d.t = lp(h.t);
  d.x = lp(h.x);
  d.y = lp(h.y);
  d.x2 = lp(h.x2);
  d.y2 = lp(h.y2);
  return d;
}

struct Ranked {
  int index;
  double lp;
};

std::vector<Ranked> top_k(const std::vector<double>& lp, int k) {
  std::vector<Ranked> r;
  for (size_t i = 0; i < lp.size(); ++i) {
    if (lp[i] != kNegInf) r.push_back(Ranked{static_cast<int>(i), lp[i]});
  }
  std::stable_sort(r.begin(), r.end(), [](const Ranked& a, const Ranked& b) { return a.lp > b.lp; });
  if (static_cast<int>(r.size()) > k) r.resize(static_cast<size_t>(k));
  return r;
}

struct Combo {
  int v[6] = {-1, -1, -1, -1, -1, -1};  // t, x, y, x2, y2, parent
  double lp = 0;
};

std::vector<Combo> best_combos(const StepDistribution& d, int width) {
  std::vector<const std::vector<double>*> heads{&d.t, &d.x, &d.y, &d.x2, &d.y2};
  if (!d.parent.empty()) heads.push_back(&d.parent);
  std::vector<Combo> combos(1);
  for (size_t h = 0; h < heads.size(); ++h) {
    const auto ranked = top_k(*heads[h], width);
    std::vector<Combo> next;
    for (const auto& c : combos) {
      for (const auto& r : ranked) {
        Combo n = c;
        n.v[h] = r.index;
        n.lp += r.lp;
        next.push_back(n);
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Combo& a, const Combo& b) { return a.lp > b.lp; });
    if (static_cast<int>(next.size()) > width) next.resize(static_cast<size_t>(width));
    combos = std::move(next);
  }
  return combos;
}

}  // namespace

std::string_view to_string(Strategy s) { return s == Strategy::kGreedy ? "greedy" : "beam"; }

Strategy parse_strategy(std::string_view text) {
  if (text == "greedy") return Strategy::kGreedy;
  if (text == "beam") return Strategy::kBeam;
  throw std::invalid_argument("unknown strategy '" + std::string(text) + "' (expected greedy or beam)");
}

void DecodeConfig::validate() const {
  if (beam_width < 1) throw std::invalid_argument("beam width must be at least 1");
  if (max_new_nodes < -1) throw std::invalid_argument("max_new_nodes must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (num_candidates < 1) throw std::invalid_argument("num_candidates must be at least 1");
}

std::vector<StepChoice> step_expand(const StepDistribution& dist, const ModelConfig& cfg, int width, bool allow_nodes) {
  std::vector<Combo> combos;
  if (allow_nodes) combos = best_combos(dist, width);
  const bool nodes_possible = allow_nodes && !combos.empty();
  auto c_lp = dist.c;
  if (!nodes_possible) {
    for (int i = 0; i < cfg.num_types && i < static_cast<int>(c_lp.size()); ++i) c_lp[static_cast<size_t>(i)] = kNegInf;
  }
  std::vector<StepChoice> out;
  for (const auto& c : top_k(c_lp, width)) {
    if (c.index >= cfg.num_types) {
      StepChoice s;
      s.c = c.index;
      s.log_prob = c.lp;
      out.push_back(s);
      continue;
    }
    for (const auto& combo : combos) {
      StepChoice s;
      s.c = c.index;
      s.t = combo.v[0];
      s.bounds = Bounds{combo.v[1], combo.v[2], combo.v[3], combo.v[4]};
      s.parent = combo.v[5];
      s.log_prob = c.lp + combo.lp;
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const StepChoice& a, const StepChoice& b) { return a.log_prob > b.log_prob; });
  if (static_cast<int>(out.size()) > width) out.resize(static_cast<size_t>(width));
  return out;
}

StepChoice step_select(const StepDistribution& dist, const ModelConfig& cfg) {
  auto r = step_expand(dist, cfg, 1, true);
  if (r.empty()) throw std::logic_error("step_select: no selectable outcome");
  return r.front();
}

StepDistribution flat_step(DecoderModel<float>& model, const std::vector<InputToken>& inputs,
                           const std::vector<std::uint8_t>& parent_ok, double temperature) {
  if (inputs.empty()) throw std::invalid_argument("flat_step: empty input");
  Graph<float> g(false);
  const int n = static_cast<int>(inputs.size());
  auto h = model.decode_stack(g, model.embed(g, inputs), 1, n, {}, nullptr);
  auto last = ad::gather_rows(h, std::vector<int>{n - 1});
  auto d = heads_distribution(model, g, last, temperature);
  if (model.config().variant == Variant::kPointer) {
    if (parent_ok.size() != inputs.size()) throw std::invalid_argument("flat_step: one parent flag per position required");
    const auto& hv = h.value();
    const int H = hv.cols();
    const float* q = hv.row(n - 1);
    std::vector<double> lp(static_cast<size_t>(n), kNegInf);
    double mx = kNegInf;
    for (int j = 0; j < n; ++j) {
      if (!parent_ok[static_cast<size_t>(j)]) continue;
      const float* k = hv.row(j);
      double s = 0;
      for (int c = 0; c < H; ++c) s += static_cast<double>(k[c]) * q[c];
      lp[static_cast<size_t>(j)] = static_cast<double>(static_cast<float>(s)) / temperature;
      mx = std::max(mx, lp[static_cast<size_t>(j)]);
    }
    if (mx != kNegInf) {
      double z = 0;
      for (double v : lp) {
        if (v != kNegInf) z += std::exp(v - mx);
      }
      const double lse = mx + std::log(z);
      for (auto& v : lp) {
        if (v != kNegInf) v -= lse;
      }
    }
    d.parent = std::move(lp);
  }
  return d;
}

std::vector<float> recursive_root_state(DecoderModel<float>& model, const LayoutNode& root) {
  Graph<float> g(false);
  auto h = model.decode_stack(g, model.embed(g, {InputToken::of(root)}), 1, 1, {}, nullptr);
  return h.value().data;
}

ListStep recursive_step(DecoderModel<float>& model, const std::vector<InputToken>& list,
                        const std::vector<std::vector<float>>& ancestry, double temperature) {
  if (list.empty()) throw std::invalid_argument("recursive_step: empty sibling list");
  if (ancestry.empty()) throw std::invalid_argument("recursive_step: missing ancestry states");
  const int H = model.config().hidden;
  Tensor<float> mem(std::vector<int>{static_cast<int>(ancestry.size()), H});
  for (size_t a = 0; a < ancestry.size(); ++a) {
    if (static_cast<int>(ancestry[a].size()) != H) throw std::invalid_argument("recursive_step: bad ancestry state width");
    std::copy(ancestry[a].begin(), ancestry[a].end(), mem.row(static_cast<int>(a)));
  }
  Graph<float> g(false);
  const int n = static_cast<int>(list.size());
  CrossMemory<float> memory{g.constant(std::move(mem)), static_cast<int>(ancestry.size())};
  auto h = model.decode_stack(g, model.embed(g, list), 1, n, {}, &memory);
  ListStep out;
  out.dist = heads_distribution(model, g, ad::gather_rows(h, std::vector<int>{n - 1}), temperature);
  for (int p = 0; p < n; ++p) out.states.emplace_back(h.value().row(p), h.value().row(p) + H);
  return out;
}

RepairResult repair(const LayoutTree& tree, int first_free) {
  RepairResult res;
  std::vector<LayoutNode> nodes = tree.nodes();
  for (size_t i = static_cast<size_t>(std::max(first_free, 0)); i < nodes.size(); ++i) {
    auto& n = nodes[i];
    const Bounds outer =
        n.parent == kNoParent ? Bounds{0, 0, kGridWidth, kGridHeight} : nodes[static_cast<size_t>(n.parent)].bounds;
    Bounds b = n.bounds;
    if (b.x > b.x2) std::swap(b.x, b.x2);
    if (b.y > b.y2) std::swap(b.y, b.y2);
    b.x = std::clamp(b.x, outer.x, outer.x2);
    b.x2 = std::clamp(b.x2, outer.x, outer.x2);
    b.y = std::clamp(b.y, outer.y, outer.y2);
    b.y2 = std::clamp(b.y2, outer.y, outer.y2);
    if (b.x2 == b.x) {
      if (b.x2 < outer.x2) {
        ++b.x2;
      } else {
        --b.x;
      }
    }
    if (b.y2 == b.y) {
      if (b.y2 < outer.y2) {
        ++b.y2;
      } else {
        --b.y;
      }
    }
    if (!(b == n.bounds)) {
      n.bounds = b;
      ++res.repairs;
    }
  }
  res.tree = LayoutTree(std::move(nodes), tree.source_id());
  return res;
}

namespace {

// Drops predicted nodes (index >= given) that break the size or fan-out limits or hang
// under a terminal node, together with their subtrees.
LayoutTree enforce_limits(const LayoutTree& tree, int given) {
  std::vector<bool> keep(static_cast<size_t>(tree.size()), false);
  std::vector<int> fanout(static_cast<size_t>(tree.size()), 0);
  std::vector<int> kept;
  for (int i = 0; i < tree.size(); ++i) {
    const auto& n = tree.node(i);
    bool ok = i < given;
    if (!ok && static_cast<int>(kept.size()) < kMaxNodes) {
      ok = n.parent != kNoParent && keep[static_cast<size_t>(n.parent)] && !tree.node(n.parent).terminal &&
           fanout[static_cast<size_t>(n.parent)] < kMaxChildren;
    }
    if (!ok) continue;
    keep[static_cast<size_t>(i)] = true;
    if (n.parent != kNoParent) ++fanout[static_cast<size_t>(n.parent)];
    kept.push_back(i);
  }
  if (static_cast<int>(kept.size()) == tree.size()) return tree;
  return induced_subtree(tree, kept);
}

bool is_preorder_storage(const LayoutTree& tree) {
  const auto order = traverse(tree, TraversalOrder::kDfs);
  for (size_t i = 0; i < order.size(); ++i) {
    if (order[i] != static_cast<int>(i)) return false;
  }
  return true;
}

struct Hyp {
  LayoutTree tree;
  TokenSeq seq;
  std::deque<int> queue;
  int current = -1;
  std::vector<std::vector<float>> states;
  double lp = 0;
  int new_nodes = 0;
  int steps = 0;
  bool done = false;
  bool budget = false;
};

InputToken seq_input(const Token& tok, const ModelConfig& cfg) {
  switch (tok.kind) {
    case Token::Kind::kNode:
      return InputToken::of(tok.node);
    case Token::Kind::kOpen:
      return InputToken::special(cfg.open_id());
    case Token::Kind::kClose:
      return InputToken::special(cfg.close_id());
    case Token::Kind::kEos:
      return InputToken::special(cfg.eos_id());
  }
  return InputToken::pad();
}

LayoutNode node_of(const StepChoice& s) {
  LayoutNode n;
  n.type_id = s.c;
  n.terminal = s.t == 1;
  n.bounds = s.bounds;
  return n;
}

class Decoder {
 public:
  Decoder(DecoderModel<float>& model, const DecodeConfig& cfg, int given)
      : model_(model), mc_(model.config()), cfg_(cfg), given_(given) {
    budget_ = cfg.max_new_nodes < 0 ? std::max(0, kMaxNodes - given) : std::min(cfg.max_new_nodes, kMaxNodes - given);
    budget_ = std::max(budget_, 0);
    max_steps_ = 4 * (given + budget_) + 8;
  }

  Hyp start(const PartialTree& partial) const {
    Hyp h;
    h.tree = partial.tree;
    switch (mc_.variant) {
      case Variant::kVanilla:
        if (!is_preorder_storage(partial.tree)) {
          throw PrefixViolation("the vanilla decoder needs a partial tree that is a depth-first preorder prefix");
        }
        h.seq = linearize_prefix(partial.tree);
        break;
      case Variant::kPointer:
        break;
      case Variant::kRecursive:
        h.states.assign(static_cast<size_t>(kMaxNodes), {});
        h.states[0] = recursive_root_state(model_, h.tree.node(0));
        if (!h.tree.node(0).terminal) h.queue.push_back(0);
        if (h.queue.empty()) h.done = true;
        break;
    }
    return h;
  }

  std::vector<Hyp> expand(const Hyp& h, int width) const {
    if (h.new_nodes >= budget_ || h.steps >= max_steps_) {
      Hyp d = h;
      d.done = true;
      d.budget = true;
      return {d};
    }
    switch (mc_.variant) {
      case Variant::kVanilla:
        return expand_vanilla(h, width);
      case Variant::kPointer:
        return expand_pointer(h, width);
      case Variant::kRecursive:
        return expand_recursive(h, width);
    }
    return {};
  }

  Completion finish(const Hyp& h) const {
    LayoutTree tree = mc_.variant == Variant::kVanilla ? delinearize(h.seq) : h.tree;
    tree = enforce_limits(tree, given_);
    auto rep = repair(tree, given_);
    Completion c;
    c.tree = std::move(rep.tree);
    c.repairs = rep.repairs;
    c.log_prob = h.lp;
    c.new_node_count = c.tree.size() - given_;
    c.budget_exhausted = h.budget;
    return c;
  }

 private:
  std::vector<Hyp> expand_vanilla(const Hyp& h, int width) const {
    std::vector<InputToken> inputs;
    for (const auto& tok : h.seq) inputs.push_back(seq_input(tok, mc_));
    const auto dist = flat_step(model_, inputs, {}, cfg_.temperature);
    std::vector<Hyp> out;
    for (const auto& ch : step_expand(dist, mc_, width, true)) {
      Hyp n = h;
      n.lp += ch.log_prob;
      ++n.steps;
      if (ch.c == mc_.eos_id()) {
        n.done = true;
      } else if (ch.c == mc_.open_id()) {
        n.seq.push_back(Token::open());
      } else if (ch.c == mc_.close_id()) {
        n.seq.push_back(Token::close());
      } else {
        n.seq.push_back(Token::of(node_of(ch)));
        ++n.new_nodes;
      }
      out.push_back(std::move(n));
    }
    return out;
  }

  std::vector<Hyp> expand_pointer(const Hyp& h, int width) const {
    std::vector<InputToken> inputs;
    std::vector<std::uint8_t> ok;
    for (int i = 0; i < h.tree.size(); ++i) {
      const auto& n = h.tree.node(i);
      inputs.push_back(InputToken::of(n));
      ok.push_back(!n.terminal && static_cast<int>(h.tree.children(i).size()) < kMaxChildren);
    }
    const auto dist = flat_step(model_, inputs, ok, cfg_.temperature);
    const bool room = h.tree.size() < kMaxNodes;
    std::vector<Hyp> out;
    for (const auto& ch : step_expand(dist, mc_, width, room)) {
      Hyp n = h;
      n.lp += ch.log_prob;
      ++n.steps;
      if (!ch.is_node()) {
        n.done = true;
      } else {
        n.tree.add_node(ch.c, ch.t == 1, ch.bounds, ch.parent);
        ++n.new_nodes;
      }
      out.push_back(std::move(n));
    }
    return out;
  }

  std::vector<Hyp> expand_recursive(const Hyp& start, int width) const {
    Hyp h = start;
    if (h.current < 0) {
      h.current = h.queue.front();
      h.queue.pop_front();
    }
    const int p = h.current;
    std::vector<InputToken> list{InputToken::of(h.tree.node(p))};
    for (int c : h.tree.children(p)) list.push_back(InputToken::of(h.tree.node(c)));
    std::vector<std::vector<float>> ancestry;
    for (int a = p; a != kNoParent; a = h.tree.node(a).parent) ancestry.push_back(h.states[static_cast<size_t>(a)]);
    std::reverse(ancestry.begin(), ancestry.end());
    auto step = recursive_step(model_, list, ancestry, cfg_.temperature);
    const bool room = static_cast<int>(h.tree.children(p).size()) < kMaxChildren && h.tree.size() < kMaxNodes;
    std::vector<Hyp> out;
    for (const auto& ch : step_expand(step.dist, mc_, width, room)) {
      Hyp n = h;
      n.lp += ch.log_prob;
      ++n.steps;
      if (!ch.is_node()) {
        const auto& kids = n.tree.children(p);
        for (size_t s = 0; s < kids.size(); ++s) {
          n.states[static_cast<size_t>(kids[s])] = step.states[s + 1];
          if (!n.tree.node(kids[s]).terminal) n.queue.push_back(kids[s]);
        }
        n.current = -1;
        if (n.queue.empty()) n.done = true;
      } else {
        n.tree.add_node(ch.c, ch.t == 1, ch.bounds, p);
        ++n.new_nodes;
      }
      out.push_back(std::move(n));
    }
    return out;
  }

  DecoderModel<float>& model_;
  const ModelConfig& mc_;
  const DecodeConfig& cfg_;
  int given_;
  int budget_ = 0;
  int max_steps_ = 0;
};

std::vector<Hyp> search(const Decoder& dec, const PartialTree& partial, int width, int keep) {
  std::vector<Hyp> active{dec.start(partial)};
  std::vector<Hyp> finished;
  while (!active.empty()) {
    std::vector<Hyp> cand;
    for (const auto& h : active) {
      if (h.done) {
        finished.push_back(h);
        continue;
      }
      for (auto& n : dec.expand(h, width)) cand.push_back(std::move(n));
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) { return a.lp > b.lp; });
    if (static_cast<int>(cand.size()) > width) cand.resize(static_cast<size_t>(width));
    active.clear();
    for (auto& c : cand) (c.done ? finished : active).push_back(std::move(c));
    if (static_cast<int>(finished.size()) >= keep && !active.empty()) {
      std::vector<double> lps;
      for (const auto& f : finished) lps.push_back(f.lp);
      std::sort(lps.begin(), lps.end(), std::greater<>());
      const double kth = lps[static_cast<size_t>(keep - 1)];
      double best_active = kNegInf;
      for (const auto& a : active) best_active = std::max(best_active, a.lp);
      if (best_active <= kth) break;
    }
  }
  std::stable_sort(finished.begin(), finished.end(), [](const Hyp& a, const Hyp& b) { return a.lp > b.lp; });
  return finished;
}

}  // namespace

std::vector<Completion> complete(const PartialTree& partial, DecoderModel<float>& model, const DecodeConfig& cfg) {
  cfg.validate();
  if (auto err = check_tree(partial.tree)) throw *err;
  const int given = partial.tree.size();
  Decoder dec(model, cfg, given);
  const int width = cfg.strategy == Strategy::kGreedy ? 1 : cfg.beam_width;
  const int keep = cfg.strategy == Strategy::kGreedy ? 1 : std::max(cfg.num_candidates, 1);
  std::vector<Completion> pool;
  auto add = [&](const Completion& c) {
    for (const auto& p : pool) {
      if (p.tree == c.tree) return;
    }
    pool.push_back(c);
  };
  for (const auto& h : search(dec, partial, width, keep)) add(dec.finish(h));
  if (width > 1) {
    for (const auto& h : search(dec, partial, 1, 1)) add(dec.finish(h));
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Completion& a, const Completion& b) { return a.log_prob > b.log_prob; });
  const int n = cfg.strategy == Strategy::kGreedy ? 1 : cfg.num_candidates;
  if (static_cast<int>(pool.size()) > n) pool.resize(static_cast<size_t>(n));
  return pool;
}

std::optional<LayoutNode> predict_next(const PartialTree& partial, DecoderModel<float>& model) {
  const auto& mc = model.config();
  const auto& tree = partial.tree;
  if (tree.size() >= kMaxNodes) return std::nullopt;
  if (mc.variant != Variant::kRecursive) {
    DecodeConfig cfg;
    cfg.max_new_nodes = 1;
    auto c = complete(partial, model, cfg).front();
    if (c.new_node_count == 0) return std::nullopt;
    return c.tree.node(tree.size());
  }
  std::vector<std::vector<float>> states(static_cast<size_t>(tree.size()));
  states[0] = recursive_root_state(model, tree.node(0));
  auto ancestry_of = [&](int p) {
    std::vector<std::vector<float>> a;
    for (int x = p; x != kNoParent; x = tree.node(x).parent) a.push_back(states[static_cast<size_t>(x)]);
    std::reverse(a.begin(), a.end());
    return a;
  };
  auto list_of = [&](int p) {
    std::vector<InputToken> list{InputToken::of(tree.node(p))};
    for (int c : tree.children(p)) list.push_back(InputToken::of(tree.node(c)));
    return list;
  };
  std::vector<ListStep> steps(static_cast<size_t>(tree.size()));
  std::vector<bool> stepped(static_cast<size_t>(tree.size()), false);
  for (int p : traverse(tree, TraversalOrder::kBfs)) {
    if (tree.node(p).terminal) continue;
    steps[static_cast<size_t>(p)] = recursive_step(model, list_of(p), ancestry_of(p));
    stepped[static_cast<size_t>(p)] = true;
    const auto& kids = tree.children(p);
    for (size_t s = 0; s < kids.size(); ++s) states[static_cast<size_t>(kids[s])] = steps[static_cast<size_t>(p)].states[s + 1];
  }
  std::vector<int> candidates;
  if (partial.order == TraversalOrder::kBfs) {
    candidates = traverse(tree, TraversalOrder::kBfs);
  } else {
    for (int x = traverse(tree, TraversalOrder::kDfs).back(); x != kNoParent; x = tree.node(x).parent) candidates.push_back(x);
  }
  for (int p : candidates) {
    if (!stepped[static_cast<size_t>(p)] || static_cast<int>(tree.children(p).size()) >= kMaxChildren) continue;
    const auto choice = step_select(steps[static_cast<size_t>(p)].dist, mc);
    if (choice.is_node()) {
      LayoutTree grown = tree;
      const int idx = grown.add_node(choice.c, choice.t == 1, choice.bounds, p);
      return repair(grown, tree.size()).tree.node(idx);
    }
  }
  return std::nullopt;
}

}  // namespace layoutcomp
