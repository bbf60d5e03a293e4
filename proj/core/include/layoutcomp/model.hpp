#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "layoutcomp/graph.hpp"
#include "layoutcomp/layout.hpp"

namespace layoutcomp {

enum class Variant { kVanilla, kPointer, kRecursive };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

inline constexpr int kXVocab = kGridWidth + 1;
inline constexpr int kYVocab = kGridHeight + 1;
inline constexpr int kTerminalVocab = 2;
// Terminal embedding row for bracket and EOS tokens.
inline constexpr int kTerminalNotApplicable = 2;

struct ModelConfig {
  Variant variant = Variant::kPointer;
  int embed = 64;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 256;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  int num_types = 25;
  bool mask_terminal_parents = true;

  int c_vocab() const { return variant == Variant::kVanilla ? num_types + 3 : num_types + 1; }
  int open_id() const;
  int close_id() const;
  int eos_id() const { return c_vocab() - 1; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load(const std::string& path);
};

/// Embedding ids of one input position; -1 selects a zero row.
struct InputToken {
  int c = -1;
  int t = -1;
  int x = -1;
  int y = -1;
  int x2 = -1;
  int y2 = -1;

  static InputToken of(const LayoutNode& n);
  static InputToken special(int c) { return InputToken{c, kTerminalNotApplicable, -1, -1, -1, -1}; }
  static InputToken pad() { return InputToken{}; }
};

template <typename T>
struct HeadLogits {
  ad::Var<T> c, t, x, y, x2, y2;
};

/// Cross-attention memory: `key_len` stored states per query sequence.
template <typename T>
struct CrossMemory {
  ad::Var<T> states;
  int key_len = 0;
};

template <typename T>
class DecoderModel {
 public:
  explicit DecoderModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

  ad::Var<T> embed(ad::Graph<T>& g, const std::vector<InputToken>& tokens);

  /// Runs the decoder layers over `batch` sequences of `len` rows each. `valid` flags real
  /// rows (empty = all real). With `memory`, every layer cross-attends to it after
  /// self-attention. Returns final states after the closing layer norm; `layer_states`
  /// receives h^1..h^L before it.
  ad::Var<T> decode_stack(ad::Graph<T>& g, ad::Var<T> x, int batch, int len, const std::vector<std::uint8_t>& valid,
                          const CrossMemory<T>* memory, std::mt19937_64* rng = nullptr,
                          std::vector<ad::Var<T>>* layer_states = nullptr,
                          std::vector<std::vector<T>>* self_attention = nullptr);

  HeadLogits<T> heads(ad::Graph<T>& g, ad::Var<T> h);
  ad::Var<T> c_head(ad::Graph<T>& g, ad::Var<T> h);

  /// Copies parameter values from a model with the same configuration in another precision.
  template <typename U>
  void copy_from(const DecoderModel<U>& other) {
    for (size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.params()[i].value.data;
      auto& dst = params_[i].value.data;
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
    }
  }

 private:
  ad::Var<T> p(ad::Graph<T>& g, const std::string& name) { return g.param(params_.get(name)); }
  ad::Var<T> attention_block(ad::Graph<T>& g, const std::string& prefix, ad::Var<T> q_in, ad::Var<T> kv_in,
                             const ad::AttentionSpec& spec, std::vector<T>* weights);

  ModelConfig cfg_;
  ad::ParamSet<T> params_;
};

extern template class DecoderModel<float>;
extern template class DecoderModel<double>;

}  // namespace layoutcomp
