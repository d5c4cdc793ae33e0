#ifndef HFMM_TREE_HPP
#define HFMM_TREE_HPP

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hfmm/morton.hpp"

namespace hfmm {

/// Morton-contiguous leaf assignment across ranks.
struct Partition {
  int num_ranks = 1;
  std::vector<MortonKey> splitters;  // num_ranks - 1, strictly increasing
  // Per-rank [begin, end) index range into the sorted nonempty leaf list.
  std::vector<std::pair<std::size_t, std::size_t>> rank_ranges;

  int rank_of_leaf(std::size_t leaf_index) const;
};

/// Splits sorted (key, weight) leaves into num_ranks Morton-contiguous
/// segments, balancing particle weight at whole-leaf granularity.
/// Throws if num_ranks exceeds the nonempty-leaf count.
Partition partition_leaves(
    const std::vector<std::pair<MortonKey, std::size_t>>& weighted_leaves,
    int num_ranks);

struct SubtreeNode {
  MortonKey key;
  int level = 1;
  Vec3 center;
  bool leaf = false;
  std::vector<int> children;  // positions in the post-order array
};

/// Owned leaves plus all their ancestors up to the root, stored in post-order
/// with an indexer for random access by key.
struct LocalSubtree {
  std::vector<SubtreeNode> nodes;
  std::unordered_map<std::uint64_t, int> index;  // key.packed() -> position

  int find(const MortonKey& key) const {
    auto it = index.find(key.packed());
    return it == index.end() ? -1 : it->second;
  }
};

LocalSubtree build_local_subtree(const std::vector<MortonKey>& owned_leaves,
                                 const TreeConfig& config);

/// Contiguous per-rank ownership of a plural node's flattened samples.
struct Slice {
  int rank = 0;
  std::size_t begin = 0, end = 0;  // sample indices, [begin, end)
  std::size_t size() const { return end - begin; }
};
using SliceMap = std::vector<Slice>;

struct PluralInfo {
  MortonKey key;
  int first_user = 0, last_user = 0;  // users are the contiguous rank interval
  int resident = 0;                   // right-most user
  SliceMap slices;                    // filled once sampling dims are known

  bool is_user(int rank) const { return rank >= first_user && rank <= last_user; }
  int num_users() const { return last_user - first_user + 1; }
};

/// All plural nodes of the tree (nodes whose leaf descendants span >= 2 rank
/// ranges), grouped per rank. Slice maps are left empty.
std::vector<std::vector<PluralInfo>> identify_plural_nodes(
    const std::vector<MortonKey>& sorted_leaves, const Partition& partition,
    const TreeConfig& config);

enum class AlignPolicy { RankOrdered, Aligned };

/// Ownership of a rank within one child of a plural node, used by the aligned
/// slice policy: the lowest owned sample as a fraction of the child's total,
/// and the owned sample count.
struct ChildStake {
  double lowest_fraction = 2.0;  // > 1 means no stake
  std::size_t samples = 0;
};

/// Per-user stakes derived from the slice maps of a plural node's children
/// (each entry: the child's slice map plus its total sample count).
std::vector<ChildStake> compute_child_stakes(
    const std::vector<int>& users,
    const std::vector<std::pair<SliceMap, std::size_t>>& children);

/// Distributes a plural node's samples over its users in whole phi-columns.
/// rank-ordered: equal column blocks in ascending rank order, remainder to the
/// lowest ranks. aligned: ranks ordered by (lowest child-sample fraction,
/// fewer owned child samples, rank), block sizes proportional to owned child
/// samples.
SliceMap assign_sample_slices(std::size_t n_theta, std::size_t n_phi,
                              const std::vector<int>& users,
                              const std::vector<ChildStake>& stakes,
                              AlignPolicy policy);

/// JSON dump of tree metadata (config, rank ranges, plural records) for test
/// fixtures and debugging.
std::string dump_tree_json(const TreeConfig& config, const Partition& partition,
                           const std::vector<std::vector<PluralInfo>>& plural);

}  // namespace hfmm

#endif
