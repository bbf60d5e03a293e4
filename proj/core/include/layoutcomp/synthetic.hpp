#pragma once

#include <cstdint>
#include <vector>

#include "layoutcomp/layout.hpp"

namespace layoutcomp {

struct SyntheticParams {
  int max_depth = 4;     // levels including the root; 1 yields a single root
  int max_children = 4;  // per container
  int type_count = 25;
};

/// Deterministic layout in grid units: children tile their parent's box (with a
/// one-cell inset where room allows) along its longer axis without overlapping.
LayoutTree generate_synthetic(std::uint64_t seed, const SyntheticParams& params = {});

std::vector<LayoutTree> generate_synthetic_corpus(std::uint64_t first_seed, int count, const SyntheticParams& params = {});

}  // namespace layoutcomp
