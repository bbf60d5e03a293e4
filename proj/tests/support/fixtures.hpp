#pragma once

#include <cstdint>

#include "layoutcomp/layout.hpp"
#include "layoutcomp/model.hpp"

namespace layoutcomp::testing {

inline ModelConfig tiny(Variant v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.variant = v;
  c.embed = c.hidden = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn = 16;
  c.seed = seed;
  return c;
}

inline ModelConfig desk(Variant v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.variant = v;
  c.seed = seed;
  return c;
}

inline LayoutTree three_node(bool chain) {
  LayoutTree t;
  t.add_node(4, false, Bounds{0, 0, 72, 128}, kNoParent);
  if (chain) {
    t.add_node(7, false, Bounds{2, 2, 70, 60}, 0);
    t.add_node(1, true, Bounds{4, 4, 30, 20}, 1);
  } else {
    t.add_node(1, true, Bounds{2, 2, 70, 20}, 0);
    t.add_node(2, true, Bounds{2, 30, 40, 60}, 0);
  }
  return t;
}

}  // namespace layoutcomp::testing
