#ifndef HFMM_MORTON_HPP
#define HFMM_MORTON_HPP

#include <compare>
#include <cstdint>

#include "hfmm/geometry.hpp"

namespace hfmm {

/// Box identity in the uniform octree. level 1 is the root; a key at level l
/// carries 3*(l-1) meaningful bits, three per refinement step with the x bit
/// lowest, then y, then z. The lowest three bits select the finest octant, so
/// the parent key is the code with those bits dropped.
struct MortonKey {
  int level = 1;
  std::uint64_t code = 0;

  MortonKey parent() const { return {level - 1, code >> 3}; }
  MortonKey child(int octant) const {
    return {level + 1, (code << 3) | std::uint64_t(octant & 7)};
  }
  bool is_ancestor_of(const MortonKey& k) const {
    return k.level >= level && (k.code >> (3 * (k.level - level))) == code;
  }
  /// Per-axis cell index at this key's level.
  std::uint32_t cell_x() const { return deinterleave(0); }
  std::uint32_t cell_y() const { return deinterleave(1); }
  std::uint32_t cell_z() const { return deinterleave(2); }

  std::uint64_t packed() const { return (std::uint64_t(level) << 58) | code; }

  friend auto operator<=>(const MortonKey&, const MortonKey&) = default;

 private:
  std::uint32_t deinterleave(int axis) const {
    std::uint32_t v = 0;
    for (int t = 0; t < level - 1; ++t)
      v |= std::uint32_t((code >> (3 * t + axis)) & 1) << t;
    return v;
  }
};

/// Geometry of the uniform tree. The tree itself always lives in 3-D space;
/// `d` (2 or 3) only classifies the geometry for the complexity model.
struct TreeConfig {
  double root_side = 1.0;   // D0, meters
  double leaf_side = 1.0;   // D(L), meters
  int levels = 1;           // L
  int d = 3;
  Vec3 root_corner{};

  double box_side(int level) const;
  Vec3 box_center(const MortonKey& key) const;
};

/// Smallest integer L with L >= log2(D0/leaf_diameter) + 1.
int compute_num_levels(double root_diameter, double leaf_diameter);

/// Key of the level-`level` box containing `position`.
/// Throws std::out_of_range if the position is outside the root box.
MortonKey morton_key(const Vec3& position, const TreeConfig& config, int level);

}  // namespace hfmm

#endif
