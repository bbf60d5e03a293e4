#include "layoutcomp/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace layoutcomp {

using ad::Graph;
using ad::Tensor;
using ad::Var;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kVanilla:
      return "vanilla";
    case Variant::kPointer:
      return "pointer";
    case Variant::kRecursive:
      return "recursive";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "vanilla") return Variant::kVanilla;
  if (text == "pointer") return Variant::kPointer;
  if (text == "recursive") return Variant::kRecursive;
  throw std::invalid_argument("unknown variant '" + std::string(text) + "' (expected vanilla, pointer or recursive)");
}

int ModelConfig::open_id() const {
  if (variant != Variant::kVanilla) throw std::logic_error("only the vanilla decoder has bracket tokens");
  return num_types;
}

int ModelConfig::close_id() const {
  if (variant != Variant::kVanilla) throw std::logic_error("only the vanilla decoder has bracket tokens");
  return num_types + 1;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (embed <= 0 || embed % 4 != 0) fail("embed must be a positive multiple of 4");
  if (hidden != embed) fail("hidden must equal embed (the embedding feeds the residual stream)");
  if (layers <= 0) fail("layers must be positive");
  if (heads <= 0 || hidden % heads != 0) fail("heads must divide hidden");
  if (ffn <= 0) fail("ffn must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (num_types <= 0) fail("num_types must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = std::string(to_string(variant));
  j["embed"] = embed;
  j["hidden"] = hidden;
  j["layers"] = layers;
  j["heads"] = heads;
  j["ffn"] = ffn;
  j["dropout"] = dropout;
  j["seed"] = seed;
  j["num_types"] = num_types;
  j["mask_terminal_parents"] = mask_terminal_parents;
  j["vocab"] = {{"c", c_vocab()}, {"t", kTerminalVocab}, {"x", kXVocab}, {"y", kYVocab}};
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("model config: expected an object");
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.embed = j.value("embed", c.embed);
    c.hidden = j.value("hidden", c.embed);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.dropout = j.value("dropout", c.dropout);
    c.seed = j.value("seed", c.seed);
    c.num_types = j.value("num_types", c.num_types);
    c.mask_terminal_parents = j.value("mask_terminal_parents", c.mask_terminal_parents);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

InputToken InputToken::of(const LayoutNode& n) {
  return InputToken{n.type_id, n.terminal ? 1 : 0, n.bounds.x, n.bounds.y, n.bounds.x2, n.bounds.y2};
}

namespace {

template <typename T>
Tensor<T> xavier(int in, int out, std::mt19937_64& rng) {
  Tensor<T> t(std::vector<int>{in, out});
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
Tensor<T> normal(int rows, int cols, double sd, std::mt19937_64& rng) {
  Tensor<T> t(std::vector<int>{rows, cols});
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data) v = static_cast<T>(n(rng));
  return t;
}

template <typename T>
Tensor<T> filled(int n, T v) {
  return Tensor<T>(std::vector<int>{n}, v);
}

}  // namespace

template <typename T>
DecoderModel<T>::DecoderModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int E = cfg_.embed, H = cfg_.hidden, q = E / 4;
  const double esd = 1.0 / std::sqrt(static_cast<double>(E));
  params_.add("embed.c", normal<T>(cfg_.c_vocab(), E, esd, rng));
  params_.add("embed.t", normal<T>(3, E, esd, rng));
  params_.add("embed.x", normal<T>(kXVocab, q, esd, rng));
  params_.add("embed.y", normal<T>(kYVocab, q, esd, rng));
  params_.add("embed.x2", normal<T>(kXVocab, q, esd, rng));
  params_.add("embed.y2", normal<T>(kYVocab, q, esd, rng));
  auto attn = [&](const std::string& prefix) {
    for (const char* m : {"q", "k", "v", "o"}) {
      params_.add(prefix + "." + m + ".w", xavier<T>(H, H, rng));
      if (std::string_view(m) != "k") params_.add(prefix + "." + m + ".b", filled<T>(H, T(0)));
    }
  };
  auto norm = [&](const std::string& prefix) {
    params_.add(prefix + ".g", filled<T>(H, T(1)));
    params_.add(prefix + ".b", filled<T>(H, T(0)));
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string L = "layer" + std::to_string(l);
    norm(L + ".ln_self");
    attn(L + ".self");
    if (cfg_.variant == Variant::kRecursive) {
      norm(L + ".ln_cross");
      attn(L + ".cross");
    }
    norm(L + ".ln_ffn");
    params_.add(L + ".ffn1.w", xavier<T>(H, cfg_.ffn, rng));
    params_.add(L + ".ffn1.b", filled<T>(cfg_.ffn, T(0)));
    params_.add(L + ".ffn2.w", xavier<T>(cfg_.ffn, H, rng));
    params_.add(L + ".ffn2.b", filled<T>(H, T(0)));
  }
  norm("final_ln");
  auto head = [&](const std::string& name, int out) {
    params_.add("head." + name + ".w", xavier<T>(H, out, rng));
    params_.add("head." + name + ".b", filled<T>(out, T(0)));
  };
  head("c", cfg_.c_vocab());
  head("t", kTerminalVocab);
  head("x", kXVocab);
  head("y", kYVocab);
  head("x2", kXVocab);
  head("y2", kYVocab);
}

template <typename T>
Var<T> DecoderModel<T>::embed(Graph<T>& g, const std::vector<InputToken>& tokens) {
  std::vector<int> c, t, x, y, x2, y2;
  for (const auto& tok : tokens) {
    c.push_back(tok.c);
    t.push_back(tok.t);
    x.push_back(tok.x);
    y.push_back(tok.y);
    x2.push_back(tok.x2);
    y2.push_back(tok.y2);
  }
  auto eb = ad::concat_cols<T>({ad::embedding(p(g, "embed.x"), x), ad::embedding(p(g, "embed.y"), y),
                                ad::embedding(p(g, "embed.x2"), x2), ad::embedding(p(g, "embed.y2"), y2)});
  return ad::add(ad::add(eb, ad::embedding(p(g, "embed.c"), c)), ad::embedding(p(g, "embed.t"), t));
}

template <typename T>
Var<T> DecoderModel<T>::attention_block(Graph<T>& g, const std::string& prefix, Var<T> q_in, Var<T> kv_in,
                                        const ad::AttentionSpec& spec, std::vector<T>* weights) {
  auto q = ad::linear(q_in, p(g, prefix + ".q.w"), p(g, prefix + ".q.b"));
  auto k = ad::linear(kv_in, p(g, prefix + ".k.w"), ad::Var<T>{});
  auto v = ad::linear(kv_in, p(g, prefix + ".v.w"), p(g, prefix + ".v.b"));
  auto a = ad::attention(q, k, v, spec, weights);
  return ad::linear(a, p(g, prefix + ".o.w"), p(g, prefix + ".o.b"));
}

template <typename T>
Var<T> DecoderModel<T>::decode_stack(Graph<T>& g, Var<T> x, int batch, int len, const std::vector<std::uint8_t>& valid,
                                     const CrossMemory<T>* memory, std::mt19937_64* rng,
                                     std::vector<Var<T>>* layer_states, std::vector<std::vector<T>>* self_attention) {
  if (x.rows() != batch * len) throw ad::ShapeMismatch("decode_stack: input rows do not match batch * len");
  ad::AttentionSpec self;
  self.batch = batch;
  self.query_len = len;
  self.key_len = len;
  self.heads = cfg_.heads;
  self.causal = true;
  self.key_valid = valid;
  ad::AttentionSpec cross;
  if (memory) {
    if (cfg_.variant != Variant::kRecursive) throw std::logic_error("only the recursive decoder cross-attends");
    cross.batch = batch;
    cross.query_len = len;
    cross.key_len = memory->key_len;
    cross.heads = cfg_.heads;
  }
  const bool drop = rng != nullptr && cfg_.dropout > 0.0 && g.recording();
  auto maybe_drop = [&](Var<T> v) { return drop ? ad::dropout(v, cfg_.dropout, *rng) : v; };
  Var<T> h = maybe_drop(x);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string L = "layer" + std::to_string(l);
    auto n1 = ad::layer_norm(h, p(g, L + ".ln_self.g"), p(g, L + ".ln_self.b"));
    std::vector<T> weights;
    h = ad::add(h, maybe_drop(attention_block(g, L + ".self", n1, n1, self, self_attention ? &weights : nullptr)));
    if (self_attention) self_attention->push_back(std::move(weights));
    if (memory) {
      auto n2 = ad::layer_norm(h, p(g, L + ".ln_cross.g"), p(g, L + ".ln_cross.b"));
      h = ad::add(h, maybe_drop(attention_block(g, L + ".cross", n2, memory->states, cross, nullptr)));
    }
    auto n3 = ad::layer_norm(h, p(g, L + ".ln_ffn.g"), p(g, L + ".ln_ffn.b"));
    auto f = ad::relu(ad::linear(n3, p(g, L + ".ffn1.w"), p(g, L + ".ffn1.b")));
    h = ad::add(h, maybe_drop(ad::linear(f, p(g, L + ".ffn2.w"), p(g, L + ".ffn2.b"))));
    if (layer_states) layer_states->push_back(h);
  }
  return ad::layer_norm(h, p(g, "final_ln.g"), p(g, "final_ln.b"));
}

template <typename T>
Var<T> DecoderModel<T>::c_head(Graph<T>& g, Var<T> h) {
  return ad::linear(h, p(g, "head.c.w"), p(g, "head.c.b"));
}

template <typename T>
HeadLogits<T> DecoderModel<T>::heads(Graph<T>& g, Var<T> h) {
  HeadLogits<T> out;
  out.c = c_head(g, h);
  out.t = ad::linear(h, p(g, "head.t.w"), p(g, "head.t.b"));
  out.x = ad::linear(h, p(g, "head.x.w"), p(g, "head.x.b"));
  out.y = ad::linear(h, p(g, "head.y.w"), p(g, "head.y.b"));
  out.x2 = ad::linear(h, p(g, "head.x2.w"), p(g, "head.x2.b"));
  out.y2 = ad::linear(h, p(g, "head.y2.w"), p(g, "head.y2.b"));
  return out;
}

template class DecoderModel<float>;
template class DecoderModel<double>;
template class DecoderModel<long double>;

}  // namespace layoutcomp
