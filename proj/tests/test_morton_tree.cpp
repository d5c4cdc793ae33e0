#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "hfmm/tree.hpp"

using namespace hfmm;

namespace {

// Independent recursive-descent key computation: at every level pick the
// octant by comparing against the box midpoint per axis.
MortonKey descend(const Vec3& pos, const TreeConfig& cfg, int level) {
  MortonKey key{1, 0};
  Vec3 corner = cfg.root_corner;
  double side = cfg.root_side;
  while (key.level < level) {
    side *= 0.5;
    int octant = 0;
    Vec3 next = corner;
    if (pos.x >= corner.x + side) {
      octant |= 1;
      next.x += side;
    }
    if (pos.y >= corner.y + side) {
      octant |= 2;
      next.y += side;
    }
    if (pos.z >= corner.z + side) {
      octant |= 4;
      next.z += side;
    }
    key = key.child(octant);
    corner = next;
  }
  return key;
}

std::vector<MortonKey> full_leaf_level(int level) {
  std::vector<MortonKey> out;
  std::uint64_t n = std::uint64_t(1) << (3 * (level - 1));
  for (std::uint64_t c = 0; c < n; ++c) out.push_back({level, c});
  return out;
}

}  // namespace

TEST_CASE("compute_num_levels canonical ratios") {
  // 512-lambda box with lambda/4 leaves: ratio 2048 -> 12-level tree.
  CHECK(compute_num_levels(512.0, 0.25) == 12);
  CHECK(compute_num_levels(1.0, 1.0) == 1);
  CHECK(compute_num_levels(32.0, 1.0) == 6);  // log2(32) + 1
}

TEST_CASE("morton key bit layout and cell indices") {
  MortonKey k{3, 0b101011};  // two refinement steps
  CHECK(k.parent().level == 2);
  CHECK(k.parent().code == 0b101u);
  CHECK(k.parent().child(3) == MortonKey{3, 0b101011});
  CHECK(k.parent().is_ancestor_of(k));
  CHECK(MortonKey{1, 0}.is_ancestor_of(k));
  CHECK(!k.is_ancestor_of(k.parent()));
  // code bits per step: x lowest. step1 = 101 (x=1,y=0,z=1), step2 = 011.
  CHECK(k.cell_x() == 0b11u);
  CHECK(k.cell_y() == 0b01u);
  CHECK(k.cell_z() == 0b10u);
}

TEST_CASE("position at the root corner maps to the all-zero code") {
  TreeConfig cfg{8.0, 1.0, 4, 3, {1.0, 2.0, 3.0}};
  for (int level = 1; level <= 4; ++level) {
    MortonKey k = morton_key(cfg.root_corner, cfg, level);
    CHECK(k.level == level);
    CHECK(k.code == 0u);
  }
  CHECK_THROWS_AS(morton_key({0.0, 2.0, 3.0}, cfg, 2), std::out_of_range);
}

TEST_CASE("eight octant centers at level 2 give the codes 0..7") {
  TreeConfig cfg{2.0, 1.0, 2, 3, {0, 0, 0}};
  std::set<std::uint64_t> codes;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        Vec3 c{0.5 + x, 0.5 + y, 0.5 + z};
        MortonKey k = morton_key(c, cfg, 2);
        CHECK(k.code == std::uint64_t(x | (y << 1) | (z << 2)));
        codes.insert(k.code);
        CHECK(cfg.box_center(k).x == doctest::Approx(c.x));
        CHECK(cfg.box_center(k).y == doctest::Approx(c.y));
        CHECK(cfg.box_center(k).z == doctest::Approx(c.z));
      }
  CHECK(codes.size() == 8u);
}

TEST_CASE("bit interleaving equals recursive descent on 1000 random points") {
  TreeConfig cfg{16.0, 1.0, 5, 3, {-3.0, 0.5, 2.0}};
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 16.0);
  for (int t = 0; t < 1000; ++t) {
    Vec3 p = cfg.root_corner + Vec3{u(rng), u(rng), u(rng)} * 0.999;
    CHECK(morton_key(p, cfg, 5) == descend(p, cfg, 5));
  }
}

TEST_CASE("partition of 8 unit leaves over 4 ranks: two each, contiguous") {
  std::vector<std::pair<MortonKey, std::size_t>> leaves;
  for (std::uint64_t c = 0; c < 8; ++c) leaves.push_back({{2, c}, 1});
  Partition p = partition_leaves(leaves, 4);
  REQUIRE(p.rank_ranges.size() == 4u);
  for (int r = 0; r < 4; ++r) {
    CHECK(p.rank_ranges[r].first == std::size_t(2 * r));
    CHECK(p.rank_ranges[r].second == std::size_t(2 * r + 2));
  }
  CHECK(p.rank_of_leaf(5) == 2);
}

TEST_CASE("partition of 7 unit leaves over 4 ranks: loads in {1,2} only") {
  std::vector<std::pair<MortonKey, std::size_t>> leaves;
  for (std::uint64_t c = 0; c < 7; ++c) leaves.push_back({{2, c}, 1});
  Partition p = partition_leaves(leaves, 4);
  std::size_t covered = 0;
  for (auto& [b, e] : p.rank_ranges) {
    std::size_t load = e - b;
    CHECK(load >= 1u);
    CHECK(load <= 2u);
    CHECK(b == covered);  // contiguous, in order
    covered = e;
  }
  CHECK(covered == 7u);
}

TEST_CASE("grid-like weighted partition, N_p = 5: contiguous complete cover") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> w(1, 4);
  std::vector<std::pair<MortonKey, std::size_t>> leaves;
  for (std::uint64_t c = 0; c < 64; ++c) leaves.push_back({{3, c}, w(rng)});
  Partition p = partition_leaves(leaves, 5);
  std::size_t covered = 0;
  for (int r = 0; r < 5; ++r) {
    CHECK(p.rank_ranges[r].first == covered);
    CHECK(p.rank_ranges[r].second > covered);
    covered = p.rank_ranges[r].second;
  }
  CHECK(covered == 64u);
  CHECK(p.splitters.size() == 4u);
  CHECK(std::is_sorted(p.splitters.begin(), p.splitters.end()));
  CHECK_THROWS_AS(partition_leaves({}, 1), std::invalid_argument);
  CHECK_THROWS_AS(
      partition_leaves({{MortonKey{2, 0}, 1}, {MortonKey{2, 1}, 1}}, 3),
      std::invalid_argument);
}

TEST_CASE("local subtree of a single leaf has exactly L nodes") {
  TreeConfig cfg{8.0, 1.0, 4, 3, {0, 0, 0}};
  LocalSubtree t = build_local_subtree({MortonKey{4, 0b101101011}}, cfg);
  CHECK(t.nodes.size() == 4u);
  CHECK(t.nodes.front().leaf);
  CHECK(t.nodes.back().key == MortonKey{1, 0});
  for (int i = 0; i < 3; ++i) CHECK(t.nodes[i].key.level == 4 - i);
}

TEST_CASE("two sibling leaves: parent after both children (post-order)") {
  TreeConfig cfg{2.0, 1.0, 2, 3, {0, 0, 0}};
  LocalSubtree t = build_local_subtree({MortonKey{2, 2}, MortonKey{2, 5}}, cfg);
  int c1 = t.find(MortonKey{2, 2}), c2 = t.find(MortonKey{2, 5});
  int root = t.find(MortonKey{1, 0});
  REQUIRE(root >= 0);
  CHECK(root > c1);
  CHECK(root > c2);
  CHECK(t.nodes[root].children == std::vector<int>{c1, c2});
}

TEST_CASE("full two-level subtree matches a recursive post-order oracle") {
  TreeConfig cfg{4.0, 1.0, 3, 3, {0, 0, 0}};
  std::vector<MortonKey> leaves = full_leaf_level(3);
  LocalSubtree t = build_local_subtree(leaves, cfg);
  CHECK(t.nodes.size() == 64u + 8u + 1u);
  // Post-order: every child index precedes its parent's index.
  for (std::size_t i = 0; i < t.nodes.size(); ++i)
    for (int c : t.nodes[i].children) {
      CHECK(c >= 0);
      CHECK(std::size_t(c) < i);
      CHECK(t.nodes[c].key.parent() == t.nodes[i].key);
    }
  CHECK(t.nodes.back().key == MortonKey{1, 0});
}

TEST_CASE("plural nodes: N_p = 1 yields the empty sequence") {
  TreeConfig cfg{2.0, 1.0, 2, 3, {0, 0, 0}};
  std::vector<MortonKey> leaves = full_leaf_level(2);
  std::vector<std::pair<MortonKey, std::size_t>> weighted;
  for (auto& k : leaves) weighted.push_back({k, 1});
  auto plural = identify_plural_nodes(leaves, partition_leaves(weighted, 1), cfg);
  REQUIRE(plural.size() == 1u);
  CHECK(plural[0].empty());
}

TEST_CASE("four leaves under one parent split over ranks {0,1}") {
  TreeConfig cfg{2.0, 1.0, 2, 3, {0, 0, 0}};
  std::vector<MortonKey> leaves = {{2, 0}, {2, 1}, {2, 2}, {2, 3}};
  std::vector<std::pair<MortonKey, std::size_t>> weighted;
  for (auto& k : leaves) weighted.push_back({k, 1});
  auto plural = identify_plural_nodes(leaves, partition_leaves(weighted, 2), cfg);
  REQUIRE(plural.size() == 2u);
  REQUIRE(plural[0].size() == 1u);
  REQUIRE(plural[1].size() == 1u);
  const PluralInfo& info = plural[0][0];
  CHECK(info.key == MortonKey{1, 0});
  CHECK(info.first_user == 0);
  CHECK(info.last_user == 1);
  CHECK(info.resident == 1);  // right-most rule
  CHECK(info.is_user(0));
  CHECK(info.is_user(1));
  CHECK(info.num_users() == 2);
}

TEST_CASE("random partitions: at most two plural nodes per level per rank") {
  TreeConfig cfg{8.0, 1.0, 4, 3, {0, 0, 0}};
  std::vector<MortonKey> leaves = full_leaf_level(4);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> w(1, 8);
  std::uniform_int_distribution<int> nr(2, 12);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::pair<MortonKey, std::size_t>> weighted;
    for (auto& k : leaves) weighted.push_back({k, w(rng)});
    int ranks = nr(rng);
    auto plural =
        identify_plural_nodes(leaves, partition_leaves(weighted, ranks), cfg);
    for (int r = 0; r < ranks; ++r) {
      std::map<int, int> per_level;
      for (const auto& info : plural[r]) ++per_level[info.key.level];
      for (auto& [level, count] : per_level) CHECK(count <= 2);
    }
  }
}

TEST_CASE("single user gets one full slice under both policies") {
  std::vector<ChildStake> stakes(1);
  stakes[0].samples = 10;
  stakes[0].lowest_fraction = 0.0;
  for (AlignPolicy p : {AlignPolicy::RankOrdered, AlignPolicy::Aligned}) {
    SliceMap m = assign_sample_slices(6, 8, {3}, stakes, p);
    REQUIRE(m.size() == 1u);
    CHECK(m[0].rank == 3);
    CHECK(m[0].begin == 0u);
    CHECK(m[0].end == 48u);
  }
}

TEST_CASE("aligned policy: equal start fractions, smaller stake goes first") {
  // Both ranks hold data starting at child sample 0; rank 1 owns fewer
  // samples, so its parent slice precedes rank 0's.
  std::pair<SliceMap, std::size_t> child_a{{{0, 0, 64}}, 64};
  std::pair<SliceMap, std::size_t> child_b{{{1, 0, 32}, {0, 32, 64}}, 64};
  auto stakes = compute_child_stakes({0, 1}, {child_a, child_b});
  CHECK(stakes[0].samples == 96u);
  CHECK(stakes[1].samples == 32u);
  CHECK(stakes[0].lowest_fraction == doctest::Approx(0.0));
  CHECK(stakes[1].lowest_fraction == doctest::Approx(0.0));
  SliceMap m = assign_sample_slices(10, 10, {0, 1}, stakes, AlignPolicy::Aligned);
  REQUIRE(m.size() == 2u);
  CHECK(m[0].rank == 1);
  CHECK(m[1].rank == 0);
  CHECK(m[0].size() <= m[1].size());
  CHECK(m[0].begin == 0u);
  CHECK(m[1].end == 100u);
}

TEST_CASE("slice maps are column-aligned exact covers") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> nu(1, 6);
  for (int trial = 0; trial < 50; ++trial) {
    int users = nu(rng);
    std::size_t nt = 2 * std::uniform_int_distribution<int>(users, 12)(rng);
    std::size_t np = nt;
    std::vector<int> ids(users);
    std::vector<ChildStake> stakes(users);
    for (int u = 0; u < users; ++u) {
      ids[u] = u + 2;
      stakes[u].samples = std::uniform_int_distribution<int>(0, 40)(rng);
      stakes[u].lowest_fraction =
          std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    for (AlignPolicy p : {AlignPolicy::RankOrdered, AlignPolicy::Aligned}) {
      SliceMap m = assign_sample_slices(nt, np, ids, stakes, p);
      REQUIRE(m.size() == std::size_t(users));
      std::size_t covered = 0;
      for (const Slice& s : m) {
        CHECK(s.begin == covered);
        CHECK(s.begin % np == 0u);
        CHECK(s.end % np == 0u);
        covered = s.end;
      }
      CHECK(covered == nt * np);
    }
  }
}

TEST_CASE("aligned policy keeps at least as much aggregation data local") {
  // Balanced-tree model: child ownership is Morton-contiguous, so each rank
  // owns one contiguous fraction interval of the concatenated child samples.
  // Local volume = overlap between a rank's parent-slice fraction interval
  // and its child fraction interval.
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    int users = std::uniform_int_distribution<int>(2, 5)(rng);
    std::size_t child_total = 8 * 16;  // one child grid, 8 columns of 16
    // Random contiguous column split of the child over the users.
    std::vector<std::size_t> cuts = {0};
    for (int u = 1; u < users; ++u)
      cuts.push_back(16 * std::uniform_int_distribution<std::size_t>(0, 8)(rng));
    cuts.push_back(child_total);
    std::sort(cuts.begin(), cuts.end());
    SliceMap child;
    std::vector<int> ids;
    for (int u = 0; u < users; ++u) {
      child.push_back({u, cuts[u], cuts[u + 1]});
      ids.push_back(u);
    }
    auto stakes = compute_child_stakes(ids, {{child, child_total}});

    auto local_volume = [&](const SliceMap& parent, std::size_t total) {
      double vol = 0;
      for (const Slice& ps : parent) {
        double pb = double(ps.begin) / double(total);
        double pe = double(ps.end) / double(total);
        const Slice& cs = child[std::size_t(ps.rank)];
        double cb = double(cs.begin) / double(child_total);
        double ce = double(cs.end) / double(child_total);
        vol += std::max(0.0, std::min(pe, ce) - std::max(pb, cb));
      }
      return vol;
    };

    std::size_t nt = 12, np = 12;
    SliceMap aligned = assign_sample_slices(nt, np, ids, stakes, AlignPolicy::Aligned);
    SliceMap ordered =
        assign_sample_slices(nt, np, ids, stakes, AlignPolicy::RankOrdered);
    CHECK(local_volume(aligned, nt * np) >=
          local_volume(ordered, nt * np) - 1e-12);
  }
}

TEST_CASE("dump_tree_json emits parseable metadata") {
  TreeConfig cfg{2.0, 1.0, 2, 3, {0, 0, 0}};
  std::vector<MortonKey> leaves = full_leaf_level(2);
  std::vector<std::pair<MortonKey, std::size_t>> weighted;
  for (auto& k : leaves) weighted.push_back({k, 1});
  Partition part = partition_leaves(weighted, 2);
  auto plural = identify_plural_nodes(leaves, part, cfg);
  auto j = nlohmann::json::parse(dump_tree_json(cfg, part, plural));
  CHECK(j["config"]["levels"] == 2);
  CHECK(j["rank_ranges"].size() == 2u);
  CHECK(j["plural_nodes"].size() == 1u);
}
