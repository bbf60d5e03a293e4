#include "layoutcomp/teacher.hpp"

#include <algorithm>
#include <map>

namespace layoutcomp {

using ad::Graph;
using ad::Tensor;
using ad::Var;

StepTarget StepTarget::node(const LayoutNode& n, bool scored) {
  StepTarget s;
  s.c = n.type_id;
  s.t = n.terminal ? 1 : 0;
  s.x = n.bounds.x;
  s.y = n.bounds.y;
  s.x2 = n.bounds.x2;
  s.y2 = n.bounds.y2;
  s.scored = scored;
  return s;
}

StepTarget StepTarget::special(int c, bool scored) {
  StepTarget s;
  s.c = c;
  s.scored = scored;
  return s;
}

TeacherAccuracy& TeacherAccuracy::operator+=(const TeacherAccuracy& o) {
  c += o.c;
  t += o.t;
  x += o.x;
  y += o.y;
  x2 += o.x2;
  y2 += o.y2;
  parent += o.parent;
  structure_type += o.structure_type;
  return *this;
}

namespace {

InputToken token_input(const Token& tok, const ModelConfig& cfg) {
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

StepTarget token_target(const Token& tok, const ModelConfig& cfg, bool scored) {
  switch (tok.kind) {
    case Token::Kind::kNode:
      return StepTarget::node(tok.node, scored);
    case Token::Kind::kOpen:
      return StepTarget::special(cfg.open_id(), scored);
    case Token::Kind::kClose:
      return StepTarget::special(cfg.close_id(), scored);
    case Token::Kind::kEos:
      return StepTarget::special(cfg.eos_id(), scored);
  }
  return {};
}

template <typename T>
int argmax_row(const Tensor<T>& t, int r, const T* additive = nullptr) {
  const T* row = t.row(r);
  int best = 0;
  T bv = row[0] + (additive ? additive[0] : T(0));
  for (int j = 1; j < t.cols(); ++j) {
    const T v = row[j] + (additive ? additive[j] : T(0));
    if (v > bv) {
      bv = v;
      best = j;
    }
  }
  return best;
}

void tally(HitCount& h, bool hit) {
  ++h.total;
  if (hit) ++h.hits;
}

// Cross-entropy of every head over the scored rows of `h`; `row_ok` receives per-row
// correctness of c and (for nodes) t, indexed like `rows`.
template <typename T>
void score_rows(Graph<T>& g, DecoderModel<T>& model, Var<T> h, const std::vector<int>& rows,
                const std::vector<const StepTarget*>& targets, std::vector<Var<T>>& losses, TeacherAccuracy& acc,
                std::vector<bool>& row_ok, std::vector<int>& node_slot) {
  row_ok.assign(rows.size(), true);
  node_slot.assign(rows.size(), -1);
  if (rows.empty()) return;
  auto hs = ad::gather_rows(h, rows);
  auto lc = model.c_head(g, hs);
  std::vector<int> tc;
  std::vector<int> node_rows;
  std::vector<size_t> node_of;
  for (size_t i = 0; i < rows.size(); ++i) {
    tc.push_back(targets[i]->c);
    const bool ok = argmax_row(lc.value(), static_cast<int>(i)) == targets[i]->c;
    tally(acc.c, ok);
    row_ok[i] = ok;
    if (targets[i]->is_node()) {
      node_slot[i] = static_cast<int>(node_rows.size());
      node_rows.push_back(rows[i]);
      node_of.push_back(i);
    }
  }
  losses.push_back(ad::cross_entropy(lc, tc));
  if (node_rows.empty()) return;
  auto hn = ad::gather_rows(h, node_rows);
  auto heads = model.heads(g, hn);
  struct Head {
    Var<T> logits;
    int StepTarget::*field;
    HitCount* count;
  };
  const Head all[] = {{heads.t, &StepTarget::t, &acc.t},   {heads.x, &StepTarget::x, &acc.x},
                      {heads.y, &StepTarget::y, &acc.y},   {heads.x2, &StepTarget::x2, &acc.x2},
                      {heads.y2, &StepTarget::y2, &acc.y2}};
  for (const auto& hd : all) {
    std::vector<int> tg;
    for (size_t n = 0; n < node_rows.size(); ++n) {
      const int want = targets[node_of[n]]->*hd.field;
      tg.push_back(want);
      const bool ok = argmax_row(hd.logits.value(), static_cast<int>(n)) == want;
      tally(*hd.count, ok);
      if (hd.field == &StepTarget::t && !ok) row_ok[node_of[n]] = false;
    }
    losses.push_back(ad::cross_entropy(hd.logits, tg));
  }
}

template <typename T>
Var<T> total_of(const std::vector<Var<T>>& losses) {
  Var<T> total = losses.front();
  for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
  return total;
}

template <typename T>
LossResult<T> flat_loss(Graph<T>& g, DecoderModel<T>& model, const std::vector<TrainExample>& batch,
                        std::mt19937_64* rng) {
  const auto& cfg = model.config();
  const bool pointer = cfg.variant == Variant::kPointer;
  std::vector<EncodedSequence> enc;
  int len = 0;
  for (const auto& ex : batch) {
    enc.push_back(pointer ? encode_pointer(*ex.tree, ex.k, ex.order, cfg) : encode_vanilla(*ex.tree, ex.k, cfg));
    len = std::max(len, static_cast<int>(enc.back().inputs.size()));
  }
  const int B = static_cast<int>(batch.size());
  std::vector<InputToken> inputs(static_cast<size_t>(B) * len, InputToken::pad());
  std::vector<std::uint8_t> valid(inputs.size(), 0);
  std::vector<int> rows;
  std::vector<const StepTarget*> targets;
  for (int b = 0; b < B; ++b) {
    for (size_t p = 0; p < enc[b].inputs.size(); ++p) {
      const size_t r = static_cast<size_t>(b) * len + p;
      inputs[r] = enc[b].inputs[p];
      valid[r] = 1;
      if (enc[b].targets[p].scored) {
        rows.push_back(static_cast<int>(r));
        targets.push_back(&enc[b].targets[p]);
      }
    }
  }
  if (rows.empty()) throw EmptyBatch("batch has no scored positions");
  auto h = model.decode_stack(g, model.embed(g, inputs), B, len, valid, nullptr, rng);

  LossResult<T> res;
  std::vector<Var<T>> losses;
  std::vector<bool> row_ok;
  std::vector<int> node_slot;
  score_rows(g, model, h, rows, targets, losses, res.accuracy, row_ok, node_slot);

  if (pointer) {
    auto scores = ad::pair_scores(h, B, len);
    std::vector<int> prow, ptarget;
    std::vector<T> mask;
    std::vector<size_t> owner;
    for (size_t i = 0; i < rows.size(); ++i) {
      if (!targets[i]->is_node()) continue;
      const int b = rows[i] / len, p = rows[i] % len;
      prow.push_back(rows[i]);
      ptarget.push_back(targets[i]->parent);
      owner.push_back(i);
      for (int j = 0; j < len; ++j) {
        bool ok = j <= p && valid[static_cast<size_t>(b) * len + j];
        if (ok && cfg.mask_terminal_parents) ok = enc[b].parent_candidate[static_cast<size_t>(j)];
        mask.push_back(ok ? T(0) : static_cast<T>(ad::kMaskedLogit));
      }
    }
    if (!prow.empty()) {
      auto ps = ad::gather_rows(scores, prow);
      for (size_t n = 0; n < prow.size(); ++n) {
        const bool ok = argmax_row(ps.value(), static_cast<int>(n), mask.data() + n * len) == ptarget[n];
        tally(res.accuracy.parent, ok);
        if (!ok) row_ok[owner[n]] = false;
      }
      losses.push_back(ad::cross_entropy(ps, ptarget, &mask));
    }
  }
  for (bool ok : row_ok) tally(res.accuracy.structure_type, ok);
  res.scored = static_cast<long long>(rows.size());
  res.loss = ad::scale(total_of(losses), T(1) / static_cast<T>(res.scored));
  res.value = static_cast<double>(res.loss.value().data[0]);
  return res;
}

struct ListItem {
  int b;
  const EncodedList* list;
};

template <typename T>
struct ForestLevel {
  std::vector<ListItem> items;
  Var<T> h;
  int len = 0;
};

// Root pass, then one batched pass per level of sibling lists across all trees.
template <typename T>
std::vector<ForestLevel<T>> forest_forward(Graph<T>& g, DecoderModel<T>& model, const std::vector<TrainExample>& batch,
                                           std::vector<std::vector<EncodedList>>& lists, std::mt19937_64* rng) {
  const auto& cfg = model.config();
  const int B = static_cast<int>(batch.size());
  lists.assign(static_cast<size_t>(B), {});
  std::map<int, std::vector<ListItem>> by_depth;
  for (int b = 0; b < B; ++b) {
    lists[b] = encode_recursive(*batch[b].tree, batch[b].k, batch[b].order, cfg);
    for (const auto& l : lists[b]) by_depth[batch[b].tree->node(l.parent).depth].push_back(ListItem{b, &l});
  }

  std::vector<InputToken> roots;
  for (const auto& ex : batch) roots.push_back(InputToken::of(ex.tree->node(0)));
  auto root_states = model.decode_stack(g, model.embed(g, roots), B, 1, {}, nullptr, rng);
  std::vector<Var<T>> tables{root_states};
  int table_rows = B;
  std::vector<std::vector<int>> state_row(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    state_row[b].assign(static_cast<size_t>(batch[b].tree->size()), -1);
    state_row[b][0] = b;
  }

  std::vector<ForestLevel<T>> levels;
  int expected_depth = 0;
  for (auto& [depth, items] : by_depth) {
    if (depth != expected_depth++) throw std::logic_error("recursive decoder: sibling lists skip a level");
    ForestLevel<T> level;
    level.items = std::move(items);
    int len = 0;
    for (const auto& it : level.items) len = std::max(len, static_cast<int>(it.list->inputs.size()));
    const int n = static_cast<int>(level.items.size());
    std::vector<InputToken> inputs(static_cast<size_t>(n) * len, InputToken::pad());
    std::vector<std::uint8_t> valid(inputs.size(), 0);
    std::vector<int> mem_rows;
    for (int i = 0; i < n; ++i) {
      const auto& l = *level.items[i].list;
      for (int a : l.ancestry) mem_rows.push_back(state_row[level.items[i].b][static_cast<size_t>(a)]);
      for (size_t p = 0; p < l.inputs.size(); ++p) {
        inputs[static_cast<size_t>(i) * len + p] = l.inputs[p];
        valid[static_cast<size_t>(i) * len + p] = 1;
      }
    }
    auto table = tables.size() == 1 ? tables.front() : ad::concat_rows(tables);
    CrossMemory<T> mem{ad::gather_rows(table, mem_rows), depth + 1};
    level.h = model.decode_stack(g, model.embed(g, inputs), n, len, valid, &mem, rng);
    level.len = len;
    for (int i = 0; i < n; ++i) {
      const auto& l = *level.items[i].list;
      for (size_t s = 0; s < l.children.size(); ++s) {
        state_row[level.items[i].b][static_cast<size_t>(l.children[s])] = table_rows + i * len + static_cast<int>(s) + 1;
      }
    }
    tables.push_back(level.h);
    table_rows += n * len;
    levels.push_back(std::move(level));
  }
  return levels;
}

template <typename T>
LossResult<T> recursive_loss(Graph<T>& g, DecoderModel<T>& model, const std::vector<TrainExample>& batch,
                             std::mt19937_64* rng) {
  std::vector<std::vector<EncodedList>> lists;
  const auto levels = forest_forward(g, model, batch, lists, rng);
  LossResult<T> res;
  std::vector<Var<T>> losses;
  for (const auto& level : levels) {
    std::vector<int> rows;
    std::vector<const StepTarget*> targets;
    for (size_t i = 0; i < level.items.size(); ++i) {
      const auto& l = *level.items[i].list;
      for (size_t p = 0; p < l.targets.size(); ++p) {
        if (!l.targets[p].scored) continue;
        rows.push_back(static_cast<int>(i) * level.len + static_cast<int>(p));
        targets.push_back(&l.targets[p]);
      }
    }
    std::vector<bool> row_ok;
    std::vector<int> node_slot;
    score_rows(g, model, level.h, rows, targets, losses, res.accuracy, row_ok, node_slot);
    for (bool ok : row_ok) tally(res.accuracy.structure_type, ok);
    res.scored += static_cast<long long>(rows.size());
  }
  if (res.scored == 0) throw EmptyBatch("batch has no scored positions");
  res.loss = ad::scale(total_of(losses), T(1) / static_cast<T>(res.scored));
  res.value = static_cast<double>(res.loss.value().data[0]);
  return res;
}

}  // namespace

EncodedSequence encode_vanilla(const LayoutTree& tree, int k, const ModelConfig& cfg) {
  if (k < 1 || k > tree.size()) throw std::invalid_argument("prefix size out of range");
  TokenSeq seq = linearize(tree);
  seq.push_back(Token::eos());
  int kth = -1, seen = 0;
  for (size_t i = 0; i < seq.size(); ++i) {
    if (seq[i].kind == Token::Kind::kNode && ++seen == k) {
      kth = static_cast<int>(i);
      break;
    }
  }
  EncodedSequence e;
  for (size_t p = 0; p + 1 < seq.size(); ++p) {
    e.inputs.push_back(token_input(seq[p], cfg));
    e.targets.push_back(token_target(seq[p + 1], cfg, static_cast<int>(p) + 1 > kth));
  }
  return e;
}

EncodedSequence encode_pointer(const LayoutTree& tree, int k, TraversalOrder order, const ModelConfig& cfg) {
  if (k < 1 || k > tree.size()) throw std::invalid_argument("prefix size out of range");
  const auto ord = traverse(tree, order);
  std::vector<int> pos(static_cast<size_t>(tree.size()));
  for (size_t i = 0; i < ord.size(); ++i) pos[static_cast<size_t>(ord[i])] = static_cast<int>(i);
  EncodedSequence e;
  for (size_t p = 0; p < ord.size(); ++p) {
    const auto& n = tree.node(ord[p]);
    e.inputs.push_back(InputToken::of(n));
    e.parent_candidate.push_back(n.terminal ? 0 : 1);
    const bool scored = static_cast<int>(p) + 1 >= k;
    if (p + 1 < ord.size()) {
      const auto& next = tree.node(ord[p + 1]);
      auto t = StepTarget::node(next, scored);
      t.parent = pos[static_cast<size_t>(next.parent)];
      e.targets.push_back(t);
    } else {
      e.targets.push_back(StepTarget::special(cfg.eos_id(), scored));
    }
  }
  return e;
}

std::vector<EncodedList> encode_recursive(const LayoutTree& tree, int k, TraversalOrder order, const ModelConfig& cfg) {
  if (k < 1 || k > tree.size()) throw std::invalid_argument("prefix size out of range");
  std::vector<bool> given(static_cast<size_t>(tree.size()), false);
  const auto ord = traverse(tree, order);
  for (int i = 0; i < k; ++i) given[static_cast<size_t>(ord[static_cast<size_t>(i)])] = true;
  std::vector<EncodedList> out;
  for (int pnode : traverse(tree, TraversalOrder::kBfs)) {
    const auto& pn = tree.node(pnode);
    if (pn.terminal) continue;
    EncodedList l;
    l.parent = pnode;
    for (int a = pnode; a != kNoParent; a = tree.node(a).parent) l.ancestry.push_back(a);
    std::reverse(l.ancestry.begin(), l.ancestry.end());
    l.children = tree.children(pnode);
    l.inputs.push_back(InputToken::of(pn));
    for (int c : l.children) {
      l.inputs.push_back(InputToken::of(tree.node(c)));
      l.targets.push_back(StepTarget::node(tree.node(c), !given[static_cast<size_t>(c)]));
    }
    l.targets.push_back(StepTarget::special(cfg.eos_id(), true));
    out.push_back(std::move(l));
  }
  return out;
}

template <typename T>
LossResult<T> teacher_forced_loss(Graph<T>& g, DecoderModel<T>& model, const std::vector<TrainExample>& batch,
                                  std::mt19937_64* rng) {
  if (batch.empty()) throw EmptyBatch("empty batch");
  for (const auto& ex : batch) {
    if (!ex.tree || ex.tree->empty()) throw EmptyBatch("batch contains an empty tree");
  }
  if (model.config().variant == Variant::kRecursive) return recursive_loss(g, model, batch, rng);
  return flat_loss(g, model, batch, rng);
}

template <typename T>
std::vector<std::map<int, Tensor<T>>> recursive_list_states(DecoderModel<T>& model,
                                                            const std::vector<TrainExample>& forest) {
  if (model.config().variant != Variant::kRecursive) throw std::logic_error("recursive_list_states needs a recursive model");
  if (forest.empty()) throw EmptyBatch("empty forest");
  Graph<T> g(false);
  std::vector<std::vector<EncodedList>> lists;
  const auto levels = forest_forward(g, model, forest, lists, nullptr);
  std::vector<std::map<int, Tensor<T>>> out(forest.size());
  const int H = model.config().hidden;
  for (const auto& level : levels) {
    for (size_t i = 0; i < level.items.size(); ++i) {
      const auto& l = *level.items[i].list;
      const int n = static_cast<int>(l.inputs.size());
      Tensor<T> t(std::vector<int>{n, H});
      for (int p = 0; p < n; ++p) std::copy_n(level.h.value().row(static_cast<int>(i) * level.len + p), H, t.row(p));
      out[static_cast<size_t>(level.items[i].b)].emplace(l.parent, std::move(t));
    }
  }
  return out;
}

template std::vector<std::map<int, Tensor<float>>> recursive_list_states(DecoderModel<float>&,
                                                                         const std::vector<TrainExample>&);
template std::vector<std::map<int, Tensor<double>>> recursive_list_states(DecoderModel<double>&,
                                                                          const std::vector<TrainExample>&);

template LossResult<float> teacher_forced_loss(Graph<float>&, DecoderModel<float>&, const std::vector<TrainExample>&,
                                               std::mt19937_64*);
template LossResult<double> teacher_forced_loss(Graph<double>&, DecoderModel<double>&, const std::vector<TrainExample>&,
                                                std::mt19937_64*);
template LossResult<long double> teacher_forced_loss(Graph<long double>&, DecoderModel<long double>&,
                                                     const std::vector<TrainExample>&, std::mt19937_64*);

}  // namespace layoutcomp
