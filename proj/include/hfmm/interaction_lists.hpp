#ifndef HFMM_INTERACTION_LISTS_HPP
#define HFMM_INTERACTION_LISTS_HPP

#include <unordered_map>
#include <vector>

#include "hfmm/morton.hpp"

namespace hfmm {

/// True when the equal-level boxes touch or coincide: Chebyshev distance of
/// their per-axis cell indices is at most one (face, edge, or vertex).
bool boxes_near(const MortonKey& a, const MortonKey& b);

/// Sorted unique keys of every nonempty box per level (index = level, entry 0
/// unused), derived from the sorted leaf keys by repeated parent-taking.
std::vector<std::vector<MortonKey>> collect_level_nodes(
    const std::vector<MortonKey>& sorted_leaves);

struct InteractionLists {
  /// Far (translation) list per node at levels [top_level, leaf_level]:
  /// same-level nonempty boxes that are not near while their parents are,
  /// Morton-sorted. Keyed by MortonKey::packed().
  std::unordered_map<std::uint64_t, std::vector<MortonKey>> far;
  /// Near list per leaf: the nonempty adjacent leaves including the leaf
  /// itself, Morton-sorted. Keyed by MortonKey::packed().
  std::unordered_map<std::uint64_t, std::vector<MortonKey>> near;
};

InteractionLists build_interaction_lists(
    const std::vector<std::vector<MortonKey>>& nodes_by_level, int top_level);

}  // namespace hfmm

#endif
