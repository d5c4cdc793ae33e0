#include <algorithm>
#include <map>
#include <set>

#include "hfmm/traversal.hpp"

namespace hfmm {

std::size_t PairPlan::total_samples() const {
  std::size_t n = 0;
  for (const auto& it : items) n += it.end - it.begin;
  return n;
}

std::size_t PairPlan::total_bytes() const {
  return total_samples() * sizeof(cplx);
}

std::size_t PairPlan::num_chunks(std::uint64_t buffer_limit) const {
  std::size_t b = total_bytes();
  if (b == 0) return 0;
  return std::size_t(1 + (b - 1) / buffer_limit);
}

const PairPlan* CommPlan::find(int src, int dst) const {
  for (const auto& p : pairs)
    if (p.src == src && p.dst == dst) return &p;
  return nullptr;
}

CommPlan build_m2l_comm_plan(const GlobalSetup& s) {
  // Collect every (sender slice of source) ∩ (receiver slice of observer)
  // per ordered rank pair, then merge overlapping ranges per source node so
  // each (node, range) rides in one message stream entry only.
  std::map<std::pair<int, int>,
           std::map<std::uint64_t, std::vector<std::pair<std::size_t, std::size_t>>>>
      raw;
  std::map<std::uint64_t, MortonKey> key_of;
  int L = s.tree.levels;
  for (int l = s.top_level; l <= L; ++l) {
    for (const NodeInfo& o : s.levels[l].nodes) {
      auto far_it = s.lists.far.find(o.key.packed());
      if (far_it == s.lists.far.end()) continue;
      for (const MortonKey& sk : far_it->second) {
        const NodeInfo* src = s.levels[l].find(sk);
        for (const Slice& ro : o.slices) {
          if (ro.size() == 0) continue;
          for (const Slice& ss : src->slices) {
            if (ss.size() == 0 || ss.rank == ro.rank) continue;
            std::size_t lo = std::max(ro.begin, ss.begin);
            std::size_t hi = std::min(ro.end, ss.end);
            if (lo >= hi) continue;
            raw[{ss.rank, ro.rank}][sk.packed()].emplace_back(lo, hi);
            key_of.emplace(sk.packed(), sk);
          }
        }
      }
    }
  }

  CommPlan plan;
  for (auto& [pair, per_node] : raw) {
    PairPlan pp;
    pp.src = pair.first;
    pp.dst = pair.second;
    // std::map over packed keys iterates by (level, Morton code) already.
    for (auto& [packed, ranges] : per_node) {
      std::sort(ranges.begin(), ranges.end());
      std::vector<std::pair<std::size_t, std::size_t>> merged;
      for (auto& r : ranges) {
        if (!merged.empty() && r.first <= merged.back().second)
          merged.back().second = std::max(merged.back().second, r.second);
        else
          merged.push_back(r);
      }
      for (auto& r : merged)
        pp.items.push_back({key_of.at(packed), r.first, r.second});
    }
    plan.pairs.push_back(std::move(pp));
  }
  return plan;
}

NearPlan build_near_plan(const GlobalSetup& s) {
  int P = s.partition.num_ranks;
  NearPlan plan;
  plan.send_leaves.assign(P, std::vector<std::vector<std::size_t>>(P));
  std::vector<std::set<std::size_t>> needed_from(std::size_t(P * P));
  auto leaf_index = [&](const MortonKey& k) {
    auto it = std::lower_bound(s.leaves.begin(), s.leaves.end(), k);
    return std::size_t(it - s.leaves.begin());
  };
  for (int w = 0; w < P; ++w) {
    auto [lb, le] = s.partition.rank_ranges[w];
    for (std::size_t li = lb; li < le; ++li) {
      const auto& near = s.lists.near.at(s.leaves[li].packed());
      for (const MortonKey& nk : near) {
        std::size_t ni = leaf_index(nk);
        int q = s.partition.rank_of_leaf(ni);
        if (q != w) needed_from[std::size_t(q * P + w)].insert(ni);
      }
    }
  }
  for (int q = 0; q < P; ++q)
    for (int w = 0; w < P; ++w)
      plan.send_leaves[q][w].assign(needed_from[std::size_t(q * P + w)].begin(),
                                    needed_from[std::size_t(q * P + w)].end());
  return plan;
}

}  // namespace hfmm
