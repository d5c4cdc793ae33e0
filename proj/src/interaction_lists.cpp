#include "hfmm/interaction_lists.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace hfmm {

bool boxes_near(const MortonKey& a, const MortonKey& b) {
  if (a.level != b.level)
    throw std::invalid_argument("boxes_near: levels differ");
  auto cheb = [](std::uint32_t x, std::uint32_t y) {
    return x > y ? x - y : y - x;
  };
  return cheb(a.cell_x(), b.cell_x()) <= 1 && cheb(a.cell_y(), b.cell_y()) <= 1 &&
         cheb(a.cell_z(), b.cell_z()) <= 1;
}

std::vector<std::vector<MortonKey>> collect_level_nodes(
    const std::vector<MortonKey>& sorted_leaves) {
  if (sorted_leaves.empty())
    throw std::invalid_argument("collect_level_nodes: no leaves");
  int L = sorted_leaves.front().level;
  std::vector<std::vector<MortonKey>> by_level(L + 1);
  by_level[L] = sorted_leaves;
  for (int l = L; l > 1; --l) {
    auto& up = by_level[l - 1];
    for (const auto& k : by_level[l]) {
      MortonKey p = k.parent();
      if (up.empty() || !(up.back() == p)) up.push_back(p);
    }
    // Sorted leaves give sorted parents; dedup above relies on that.
  }
  return by_level;
}

namespace {

MortonKey key_of_cell(int level, std::uint32_t x, std::uint32_t y,
                      std::uint32_t z) {
  std::uint64_t code = 0;
  for (int t = 0; t < level - 1; ++t) {
    code |= std::uint64_t((x >> t) & 1) << (3 * t);
    code |= std::uint64_t((y >> t) & 1) << (3 * t + 1);
    code |= std::uint64_t((z >> t) & 1) << (3 * t + 2);
  }
  return {level, code};
}

}  // namespace

InteractionLists build_interaction_lists(
    const std::vector<std::vector<MortonKey>>& nodes_by_level, int top_level) {
  InteractionLists out;
  int L = int(nodes_by_level.size()) - 1;
  std::vector<std::unordered_set<std::uint64_t>> present(L + 1);
  for (int l = 1; l <= L; ++l)
    for (const auto& k : nodes_by_level[l]) present[l].insert(k.packed());

  auto neighbors = [&](const MortonKey& k) {
    // Existing same-level boxes within Chebyshev distance one, self included.
    std::vector<MortonKey> res;
    std::uint32_t cells = std::uint32_t(1) << (k.level - 1);
    long x = long(k.cell_x()), y = long(k.cell_y()), z = long(k.cell_z());
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dz = -1; dz <= 1; ++dz) {
          long nx = x + dx, ny = y + dy, nz = z + dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= long(cells) ||
              ny >= long(cells) || nz >= long(cells))
            continue;
          MortonKey nk = key_of_cell(k.level, std::uint32_t(nx),
                                     std::uint32_t(ny), std::uint32_t(nz));
          if (present[k.level].count(nk.packed())) res.push_back(nk);
        }
    std::sort(res.begin(), res.end());
    return res;
  };

  for (int l = std::max(top_level, 2); l <= L; ++l) {
    for (const auto& k : nodes_by_level[l]) {
      std::vector<MortonKey> far;
      for (const auto& pn : neighbors(k.parent()))
        for (int oct = 0; oct < 8; ++oct) {
          MortonKey cand = pn.child(oct);
          if (!present[l].count(cand.packed())) continue;
          if (!boxes_near(k, cand)) far.push_back(cand);
        }
      std::sort(far.begin(), far.end());
      if (!far.empty()) out.far.emplace(k.packed(), std::move(far));
    }
  }
  for (const auto& leaf : nodes_by_level[L])
    out.near.emplace(leaf.packed(), neighbors(leaf));
  return out;
}

}  // namespace hfmm
