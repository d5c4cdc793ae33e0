#include "hfmm/morton.hpp"

#include <cmath>
#include <stdexcept>

namespace hfmm {

double TreeConfig::box_side(int level) const {
  return root_side / double(std::uint64_t(1) << (level - 1));
}

Vec3 TreeConfig::box_center(const MortonKey& key) const {
  double side = box_side(key.level);
  return {root_corner.x + (double(key.cell_x()) + 0.5) * side,
          root_corner.y + (double(key.cell_y()) + 0.5) * side,
          root_corner.z + (double(key.cell_z()) + 0.5) * side};
}

int compute_num_levels(double root_diameter, double leaf_diameter) {
  if (!(leaf_diameter > 0.0) || root_diameter < leaf_diameter)
    throw std::invalid_argument("compute_num_levels: need D0 >= leaf > 0");
  double lv = std::log2(root_diameter / leaf_diameter) + 1.0;
  int L = int(std::ceil(lv));
  // Guard against log2 landing a hair above an exact integer.
  if (L > 1 && double(L - 1) >= lv) --L;
  return std::max(L, 1);
}

MortonKey morton_key(const Vec3& position, const TreeConfig& config, int level) {
  if (level < 1 || level > config.levels)
    throw std::out_of_range("morton_key: bad level");
  Vec3 rel = position - config.root_corner;
  std::uint32_t cells = std::uint32_t(1) << (level - 1);
  double inv = double(cells) / config.root_side;
  auto cell_of = [&](double v) {
    if (v < 0.0 || v > config.root_side)
      throw std::out_of_range("morton_key: position outside root box");
    auto c = std::uint32_t(v * inv);
    return std::min(c, cells - 1);  // points on the far face land in last cell
  };
  std::uint32_t ix = cell_of(rel.x), iy = cell_of(rel.y), iz = cell_of(rel.z);
  std::uint64_t code = 0;
  for (int t = 0; t < level - 1; ++t) {
    code |= std::uint64_t((ix >> t) & 1) << (3 * t);
    code |= std::uint64_t((iy >> t) & 1) << (3 * t + 1);
    code |= std::uint64_t((iz >> t) & 1) << (3 * t + 2);
  }
  return {level, code};
}

}  // namespace hfmm
