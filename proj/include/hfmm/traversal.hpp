#ifndef HFMM_TRAVERSAL_HPP
#define HFMM_TRAVERSAL_HPP

#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "hfmm/interaction_lists.hpp"
#include "hfmm/kernel.hpp"
#include "hfmm/ledger.hpp"
#include "hfmm/operators.hpp"
#include "hfmm/parallel_interp.hpp"
#include "hfmm/runtime.hpp"
#include "hfmm/sphere_grid.hpp"
#include "hfmm/tree.hpp"

namespace hfmm {

struct RunConfig {
  double lambda = 1.0;        // wavelength, meters
  double digits = 3.0;        // accuracy knob of the truncation rule
  double leaf_lambda = 0.25;  // leaf box side in wavelengths
  int num_ranks = 1;
  std::uint64_t buffer_limit = std::numeric_limits<std::uint64_t>::max();  // M_S
  AlignPolicy policy = AlignPolicy::Aligned;
  bool one_particle_per_leaf = false;  // assert the one-unknown-per-leaf setup
  std::uint64_t seed = 0;
  SchedulerKind scheduler = SchedulerKind::Deterministic;
  /// Highest level carrying expansions; 3 is the first level with nonempty
  /// far lists, lower values force the upward pass to continue to the root
  /// (useful for inspecting the root multipole).
  int top_level = 3;
  int d_override = 0;  // 0 = classify from the geometry's z extent

  void validate() const;
};

/// One tree node of a computed level with its sample ownership.
struct NodeInfo {
  MortonKey key;
  Vec3 center;
  bool plural = false;
  int first_user = 0, last_user = 0;  // == owner for non-plural nodes
  SliceMap slices;                    // column-aligned cover of the samples
  std::vector<std::size_t> children;  // indices into the next level's table
  /// For plural nodes below top_level: how the parent-dimension columns are
  /// spread over this node's users during M2M interpolation (participant
  /// order = slice order); reused in reverse by L2L.
  ColumnLayout interp_layout;

  std::optional<std::pair<std::size_t, std::size_t>> slice_for(int rank) const;
  std::vector<int> user_ranks() const;  // slice order
};

struct LevelTable {
  std::vector<NodeInfo> nodes;  // Morton order
  std::unordered_map<std::uint64_t, std::size_t> index;  // key.packed()

  const NodeInfo* find(const MortonKey& k) const;
};

/// Near-field ghost-exchange plan: leaves (by index into the sorted leaf
/// list) each rank sends to each other rank, Morton-ordered.
struct NearPlan {
  // send_leaves[src][dst] = leaf indices src owns that dst's near lists need
  std::vector<std::vector<std::vector<std::size_t>>> send_leaves;
};

/// Deterministic M2L exchange plan entry: a sample range of one source node,
/// cut as (sender's slice of the source) ∩ (receiver's slice of an observer).
struct PlanItem {
  MortonKey node;
  std::size_t begin = 0, end = 0;  // flat sample range at the node's level
};

struct PairPlan {
  int src = 0, dst = 0;
  std::vector<PlanItem> items;  // (level, Morton, begin) order; disjoint per node
  std::size_t total_samples() const;
  std::size_t total_bytes() const;
  std::size_t num_chunks(std::uint64_t buffer_limit) const;
};

struct CommPlan {
  std::vector<PairPlan> pairs;  // (src, dst) order, nonempty, src != dst
  const PairPlan* find(int src, int dst) const;
};

/// Read-only global metadata shared by every rank of a run: the tree, sample
/// ownership, interaction lists, and communication plans.
struct GlobalSetup {
  RunConfig config;
  Wavenumber k;
  TreeConfig tree;
  int top_level = 3;
  int d_class = 3;

  std::vector<Particle> particles;          // Morton-sorted
  std::vector<std::size_t> original_index;  // sorted position -> input position
  std::vector<MortonKey> leaves;            // sorted nonempty leaf keys
  std::vector<std::pair<std::size_t, std::size_t>> leaf_particles;
  Partition partition;

  std::vector<LevelSampling> samplings;  // by level; valid for top..L
  std::vector<QuadratureRule> quads;     // by level; valid for top..L
  std::vector<LevelTable> levels;        // by level; populated for top..L
  std::vector<std::size_t> level_uid_offset;  // node uid = offset[level] + index
  InteractionLists lists;
  CommPlan m2l_plan;
  NearPlan near_plan;

  int uid(int level, std::size_t index) const {
    return int(level_uid_offset[level] + index);
  }
  const QuadratureRule& leaf_quad() const { return quads[tree.levels]; }
};

GlobalSetup build_setup(const std::vector<Particle>& particles,
                        const RunConfig& config);

CommPlan build_m2l_comm_plan(const GlobalSetup& setup);
NearPlan build_near_plan(const GlobalSetup& setup);

/// Per-rank state and phase drivers of one evaluation. Tests may drive the
/// phases individually inside run_world; evaluate_potential is the packaged
/// five-phase run.
class RankEngine {
 public:
  RankEngine(const GlobalSetup& setup, Endpoint& ep);

  void c2m_phase();
  void m2m_pass();
  void m2l_pass();
  void l2l_pass();
  /// L2O plus leaf near-field; returns potentials of the rank's particles in
  /// sorted (Morton) order.
  std::vector<cplx> l2o_near_phase();

  /// This rank's stored slice of a node's multipole / local expansion.
  const std::vector<cplx>* multipole(const MortonKey& key) const;
  const std::vector<cplx>* local_expansion(const MortonKey& key) const;

 private:
  void init_locals();

  const GlobalSetup& s_;
  Endpoint& ep_;
  int r_;
  std::unordered_map<int, std::vector<cplx>> mp_;     // by node uid
  std::unordered_map<int, std::vector<cplx>> local_;  // by node uid
  std::unordered_map<std::uint64_t, std::vector<Particle>> ghosts_;  // by leaf
  std::uint64_t tree_bytes_ = 0;
  OperatorCache cache_;
};

struct EvalResult {
  std::vector<cplx> potentials;  // input order
  CostLedger ledger;
};

EvalResult evaluate_potential(const std::vector<Particle>& particles,
                              const RunConfig& config);
/// Same, reusing a prebuilt setup (its config governs the run).
EvalResult evaluate_with_setup(const GlobalSetup& setup);

}  // namespace hfmm

#endif
