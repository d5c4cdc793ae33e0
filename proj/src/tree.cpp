#include "hfmm/tree.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace hfmm {

int Partition::rank_of_leaf(std::size_t leaf_index) const {
  for (int r = 0; r < num_ranks; ++r)
    if (leaf_index >= rank_ranges[r].first && leaf_index < rank_ranges[r].second)
      return r;
  throw std::out_of_range("rank_of_leaf: index outside partition");
}

Partition partition_leaves(
    const std::vector<std::pair<MortonKey, std::size_t>>& weighted_leaves,
    int num_ranks) {
  if (num_ranks < 1) throw std::invalid_argument("partition_leaves: num_ranks < 1");
  if (weighted_leaves.empty())
    throw std::invalid_argument("partition_leaves: no nonempty leaves");
  if (std::size_t(num_ranks) > weighted_leaves.size())
    throw std::invalid_argument(
        "partition_leaves: more ranks than nonempty leaves");
  if (!std::is_sorted(weighted_leaves.begin(), weighted_leaves.end(),
                      [](auto& a, auto& b) { return a.first < b.first; }))
    throw std::invalid_argument("partition_leaves: leaves must be Morton-sorted");

  std::size_t total = 0;
  for (auto& [k, w] : weighted_leaves) total += w;

  // Each leaf goes to the rank under whose ideal weight interval its weight
  // midpoint falls; whole leaves stay intact and ranges stay contiguous.
  Partition part;
  part.num_ranks = num_ranks;
  part.rank_ranges.assign(num_ranks, {0, 0});
  std::vector<std::size_t> counts(num_ranks, 0);
  std::size_t prefix = 0;
  std::vector<int> rank_of(weighted_leaves.size());
  for (std::size_t i = 0; i < weighted_leaves.size(); ++i) {
    double mid = double(prefix) + 0.5 * double(weighted_leaves[i].second);
    int r = std::min(num_ranks - 1, int(mid * double(num_ranks) / double(total)));
    rank_of[i] = r;
    prefix += weighted_leaves[i].second;
  }
  // A rank may come out empty under heavily skewed weights; whole-leaf
  // granularity cannot fix that, so reassign greedily from the left.
  for (std::size_t i = 1; i < rank_of.size(); ++i)
    if (rank_of[i] < rank_of[i - 1]) rank_of[i] = rank_of[i - 1];
  for (int r = 1; r < num_ranks; ++r) {
    auto it = std::find(rank_of.begin(), rank_of.end(), r);
    if (it == rank_of.end()) {
      // steal the last leaf of the heaviest preceding run
      auto pos = std::find_if(rank_of.rbegin(), rank_of.rend(),
                              [&](int v) { return v < r; });
      *pos = r;
    }
  }
  std::sort(rank_of.begin(), rank_of.end());

  std::size_t idx = 0;
  for (int r = 0; r < num_ranks; ++r) {
    std::size_t begin = idx;
    while (idx < rank_of.size() && rank_of[idx] == r) ++idx;
    part.rank_ranges[r] = {begin, idx};
    if (begin == idx)
      throw std::logic_error("partition_leaves: produced an empty rank");
  }
  for (int r = 1; r < num_ranks; ++r)
    part.splitters.push_back(weighted_leaves[part.rank_ranges[r].first].first);
  return part;
}

namespace {

void emit_postorder(const std::map<MortonKey, std::vector<MortonKey>>& children,
                    const MortonKey& key, const TreeConfig& config,
                    LocalSubtree& out) {
  SubtreeNode node;
  node.key = key;
  node.level = key.level;
  node.center = config.box_center(key);
  auto it = children.find(key);
  node.leaf = (it == children.end());
  if (!node.leaf)
    for (const auto& c : it->second) {
      emit_postorder(children, c, config, out);
      node.children.push_back(out.find(c));
    }
  out.index.emplace(key.packed(), int(out.nodes.size()));
  out.nodes.push_back(std::move(node));
}

}  // namespace

LocalSubtree build_local_subtree(const std::vector<MortonKey>& owned_leaves,
                                 const TreeConfig& config) {
  if (owned_leaves.empty())
    throw std::invalid_argument("build_local_subtree: no leaves");
  for (std::size_t i = 1; i < owned_leaves.size(); ++i)
    if (!(owned_leaves[i - 1] < owned_leaves[i]))
      throw std::invalid_argument(
          "build_local_subtree: leaves must be sorted distinct Morton keys");
  for (const auto& k : owned_leaves)
    if (k.level != owned_leaves.front().level)
      throw std::invalid_argument("build_local_subtree: mixed leaf levels");

  std::map<MortonKey, std::vector<MortonKey>> children;
  for (const auto& leaf : owned_leaves) {
    MortonKey k = leaf;
    while (k.level > 1) {
      auto& sibs = children[k.parent()];
      if (std::find(sibs.begin(), sibs.end(), k) == sibs.end())
        sibs.push_back(k);
      k = k.parent();
    }
  }
  for (auto& [k, v] : children) std::sort(v.begin(), v.end());

  LocalSubtree out;
  emit_postorder(children, MortonKey{1, 0}, config, out);
  return out;
}

std::vector<std::vector<PluralInfo>> identify_plural_nodes(
    const std::vector<MortonKey>& sorted_leaves, const Partition& partition,
    const TreeConfig& config) {
  std::vector<std::vector<PluralInfo>> per_rank(partition.num_ranks);
  if (partition.num_ranks == 1) return per_rank;

  // Leaf index range covered by each node, propagated level by level.
  std::map<MortonKey, std::pair<std::size_t, std::size_t>> span;
  for (std::size_t i = 0; i < sorted_leaves.size(); ++i)
    span[sorted_leaves[i]] = {i, i + 1};
  for (int level = config.levels; level > 1; --level) {
    std::map<MortonKey, std::pair<std::size_t, std::size_t>> parents;
    for (auto& [k, rng] : span) {
      if (k.level != level) continue;
      auto& p = parents.emplace(k.parent(), rng).first->second;
      p.first = std::min(p.first, rng.first);
      p.second = std::max(p.second, rng.second);
    }
    span.merge(parents);
  }

  for (auto& [key, rng] : span) {
    int lo = partition.rank_of_leaf(rng.first);
    int hi = partition.rank_of_leaf(rng.second - 1);
    if (lo == hi) continue;
    PluralInfo info;
    info.key = key;
    info.first_user = lo;
    info.last_user = hi;
    info.resident = hi;
    for (int r = lo; r <= hi; ++r) per_rank[r].push_back(info);
  }
  return per_rank;
}

std::vector<ChildStake> compute_child_stakes(
    const std::vector<int>& users,
    const std::vector<std::pair<SliceMap, std::size_t>>& children) {
  std::vector<ChildStake> stakes(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    for (const auto& [slices, total] : children) {
      for (const auto& s : slices) {
        if (s.rank != users[u] || s.size() == 0) continue;
        stakes[u].samples += s.size();
        double frac = double(s.begin) / double(total);
        stakes[u].lowest_fraction = std::min(stakes[u].lowest_fraction, frac);
      }
    }
  }
  return stakes;
}

SliceMap assign_sample_slices(std::size_t n_theta, std::size_t n_phi,
                              const std::vector<int>& users,
                              const std::vector<ChildStake>& stakes,
                              AlignPolicy policy) {
  if (users.empty())
    throw std::invalid_argument("assign_sample_slices: empty user set");
  if (stakes.size() != users.size())
    throw std::invalid_argument("assign_sample_slices: stakes/users mismatch");

  std::vector<std::size_t> order(users.size());
  std::iota(order.begin(), order.end(), 0);
  if (policy == AlignPolicy::Aligned) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (stakes[a].lowest_fraction != stakes[b].lowest_fraction)
        return stakes[a].lowest_fraction < stakes[b].lowest_fraction;
      if (stakes[a].samples != stakes[b].samples)
        return stakes[a].samples < stakes[b].samples;
      return users[a] < users[b];
    });
  }

  // Column counts: equal split for rank-ordered, stake-proportional for
  // aligned, remainders to the earlier positions in the chosen order.
  std::vector<std::size_t> cols(users.size(), 0);
  if (policy == AlignPolicy::RankOrdered) {
    std::size_t base = n_theta / users.size(), rem = n_theta % users.size();
    for (std::size_t i = 0; i < users.size(); ++i)
      cols[i] = base + (i < rem ? 1 : 0);
  } else {
    std::size_t total_stake = 0;
    for (auto& s : stakes) total_stake += s.samples;
    std::size_t assigned = 0;
    if (total_stake == 0) {
      std::size_t base = n_theta / users.size(), rem = n_theta % users.size();
      for (std::size_t i = 0; i < users.size(); ++i)
        cols[i] = base + (i < rem ? 1 : 0);
      assigned = n_theta;
    } else {
      for (std::size_t i = 0; i < order.size(); ++i) {
        cols[i] = n_theta * stakes[order[i]].samples / total_stake;
        assigned += cols[i];
      }
      for (std::size_t i = 0; assigned < n_theta; i = (i + 1) % cols.size()) {
        ++cols[i];
        ++assigned;
      }
    }
  }

  SliceMap map;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::size_t len = cols[i] * n_phi;
    map.push_back({users[order[i]], begin, begin + len});
    begin += len;
  }
  if (begin != n_theta * n_phi)
    throw std::logic_error("assign_sample_slices: cover mismatch");
  return map;
}

std::string dump_tree_json(const TreeConfig& config, const Partition& partition,
                           const std::vector<std::vector<PluralInfo>>& plural) {
  nlohmann::json j;
  j["config"] = {{"root_side", config.root_side},
                 {"leaf_side", config.leaf_side},
                 {"levels", config.levels},
                 {"d", config.d},
                 {"root_corner", {config.root_corner.x, config.root_corner.y,
                                  config.root_corner.z}}};
  j["rank_ranges"] = nlohmann::json::array();
  for (auto& [b, e] : partition.rank_ranges) j["rank_ranges"].push_back({b, e});
  auto& pj = j["plural_nodes"] = nlohmann::json::array();
  std::map<std::uint64_t, const PluralInfo*> seen;
  for (auto& ranks : plural)
    for (auto& info : ranks) seen.emplace(info.key.packed(), &info);
  for (auto& [_, info] : seen) {
    nlohmann::json slices = nlohmann::json::array();
    for (auto& s : info->slices) slices.push_back({s.rank, s.begin, s.end});
    pj.push_back({{"level", info->key.level},
                  {"code", info->key.code},
                  {"users", {info->first_user, info->last_user}},
                  {"resident", info->resident},
                  {"slices", slices}});
  }
  return j.dump(2);
}

}  // namespace hfmm
