#include "hfmm/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <stdexcept>

namespace hfmm {

namespace {

// Message tag bases; node uids keep concurrent per-node exchanges apart.
constexpr int kTagAgg = 0x1000000;     // + child uid (M2M aggregation)
constexpr int kTagInterp = 0x2000000;  // + 2 * child uid (parallel interp)
constexpr int kTagShift = 0x4000000;   // + child uid (L2L parent slices)
constexpr int kTagAnterp = 0x5000000;  // + 2 * child uid (parallel anterp)
constexpr int kTagNear = 0x6000000;    // ghost particles
constexpr int kTagM2L = 0x7000000;     // + chunk index

ColumnLayout slices_to_layout(const SliceMap& slices, const LevelSampling& s) {
  ColumnLayout l;
  l.n_theta = s.n_theta;
  l.n_phi = s.n_phi;
  l.splits.push_back(0);
  for (const Slice& sl : slices) l.splits.push_back(sl.end / s.n_phi);
  return l;
}

struct Range {
  std::size_t lo = 0, hi = 0;
  bool empty() const { return lo >= hi; }
  std::size_t size() const { return hi - lo; }
};
Range intersect(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  return {std::max(a, c), std::min(b, d)};
}

}  // namespace

void RunConfig::validate() const {
  if (!(lambda > 0) || !(digits > 0) || !(leaf_lambda > 0) || num_ranks < 1 ||
      buffer_limit == 0 || top_level < 1)
    throw std::invalid_argument("RunConfig: invalid fields");
}

std::optional<std::pair<std::size_t, std::size_t>> NodeInfo::slice_for(
    int rank) const {
  for (const Slice& s : slices)
    if (s.rank == rank && s.size() > 0) return std::make_pair(s.begin, s.end);
  return std::nullopt;
}

std::vector<int> NodeInfo::user_ranks() const {
  std::vector<int> out;
  for (const Slice& s : slices) out.push_back(s.rank);
  return out;
}

const NodeInfo* LevelTable::find(const MortonKey& k) const {
  auto it = index.find(k.packed());
  return it == index.end() ? nullptr : &nodes[it->second];
}

GlobalSetup build_setup(const std::vector<Particle>& input,
                        const RunConfig& config) {
  config.validate();
  if (input.empty()) throw std::invalid_argument("build_setup: no particles");

  GlobalSetup s;
  s.config = config;
  s.k = Wavenumber::from_lambda(config.lambda);
  double leaf = config.leaf_lambda * config.lambda;

  Vec3 lo = input.front().position, hi = lo;
  for (const Particle& p : input) {
    if (!p.position.finite())
      throw std::invalid_argument("build_setup: non-finite position");
    lo = {std::min(lo.x, p.position.x), std::min(lo.y, p.position.y),
          std::min(lo.z, p.position.z)};
    hi = {std::max(hi.x, p.position.x), std::max(hi.y, p.position.y),
          std::max(hi.z, p.position.z)};
  }
  // Snap the root corner to the leaf lattice so regular λ-spaced geometries
  // land one particle per leaf without straddling cell boundaries.
  Vec3 corner{std::floor(lo.x / leaf) * leaf, std::floor(lo.y / leaf) * leaf,
              std::floor(lo.z / leaf) * leaf};
  double span = std::max({hi.x - corner.x, hi.y - corner.y, hi.z - corner.z});
  int L = compute_num_levels(std::max(span, leaf), leaf);
  s.tree.root_side = std::ldexp(leaf, L - 1);
  s.tree.leaf_side = leaf;
  s.tree.levels = L;
  s.tree.root_corner = corner;
  s.d_class = config.d_override ? config.d_override
                                : ((hi.z - lo.z) < 0.5 * leaf ? 2 : 3);
  s.tree.d = s.d_class;
  s.top_level = std::clamp(config.top_level, 1, L);

  // Morton-sort the particles (stable within a leaf).
  std::vector<std::size_t> order(input.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(input.size());
  for (std::size_t i = 0; i < input.size(); ++i)
    keys[i] = morton_key(input[i].position, s.tree, L).packed();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  s.particles.reserve(input.size());
  s.original_index = order;
  for (std::size_t i : order) s.particles.push_back(input[i]);

  for (std::size_t i = 0; i < order.size(); ++i) {
    std::uint64_t pk = keys[order[i]];
    if (s.leaves.empty() || s.leaves.back().packed() != pk) {
      s.leaves.push_back({L, pk & ((std::uint64_t(1) << 58) - 1)});
      s.leaf_particles.emplace_back(i, i + 1);
    } else {
      s.leaf_particles.back().second = i + 1;
    }
  }
  if (config.one_particle_per_leaf)
    for (auto& [b, e] : s.leaf_particles)
      if (e - b != 1)
        throw std::invalid_argument(
            "build_setup: one_particle_per_leaf set but a leaf holds " +
            std::to_string(e - b) + " particles");

  std::vector<std::pair<MortonKey, std::size_t>> weighted;
  for (std::size_t i = 0; i < s.leaves.size(); ++i)
    weighted.emplace_back(s.leaves[i],
                          s.leaf_particles[i].second - s.leaf_particles[i].first);
  s.partition = partition_leaves(weighted, config.num_ranks);

  s.samplings.resize(std::size_t(L + 1));
  s.quads.resize(std::size_t(L + 1));
  for (int l = s.top_level; l <= L; ++l) {
    s.samplings[std::size_t(l)] =
        make_level_sampling(l, s.tree.box_side(l), s.k, config.digits);
    s.quads[std::size_t(l)] = make_quadrature(s.samplings[std::size_t(l)].n_theta,
                                              s.samplings[std::size_t(l)].n_phi);
  }

  auto by_level = collect_level_nodes(s.leaves);
  s.levels.resize(std::size_t(L + 1));
  for (int l = s.top_level; l <= L; ++l) {
    LevelTable& t = s.levels[std::size_t(l)];
    for (const MortonKey& k : by_level[std::size_t(l)]) {
      NodeInfo n;
      n.key = k;
      n.center = s.tree.box_center(k);
      int shift = 3 * (L - l);
      MortonKey lo_leaf{L, k.code << shift};
      MortonKey hi_leaf{L, (k.code + 1) << shift};
      auto lb = std::lower_bound(s.leaves.begin(), s.leaves.end(), lo_leaf);
      auto ub = std::lower_bound(s.leaves.begin(), s.leaves.end(), hi_leaf);
      std::size_t first_leaf = std::size_t(lb - s.leaves.begin());
      std::size_t last_leaf = std::size_t(ub - s.leaves.begin());
      n.first_user = s.partition.rank_of_leaf(first_leaf);
      n.last_user = s.partition.rank_of_leaf(last_leaf - 1);
      n.plural = n.first_user != n.last_user;
      t.index.emplace(k.packed(), t.nodes.size());
      t.nodes.push_back(std::move(n));
    }
  }
  // Child links.
  for (int l = s.top_level; l < L; ++l) {
    LevelTable& t = s.levels[std::size_t(l)];
    LevelTable& ct = s.levels[std::size_t(l + 1)];
    for (std::size_t ci = 0; ci < ct.nodes.size(); ++ci) {
      auto it = t.index.find(ct.nodes[ci].key.parent().packed());
      if (it != t.index.end()) t.nodes[it->second].children.push_back(ci);
    }
  }
  // Sample slices, bottom-up so child stakes are available for the aligned
  // policy.
  for (int l = L; l >= s.top_level; --l) {
    const LevelSampling& sl = s.samplings[std::size_t(l)];
    for (NodeInfo& n : s.levels[std::size_t(l)].nodes) {
      if (!n.plural) {
        n.slices = {{n.first_user, 0, sl.num_samples()}};
        continue;
      }
      std::vector<int> users;
      for (int r = n.first_user; r <= n.last_user; ++r) users.push_back(r);
      std::vector<std::pair<SliceMap, std::size_t>> children;
      for (std::size_t ci : n.children) {
        const NodeInfo& c = s.levels[std::size_t(l + 1)].nodes[ci];
        children.emplace_back(c.slices,
                              s.samplings[std::size_t(l + 1)].num_samples());
      }
      auto stakes = compute_child_stakes(users, children);
      n.slices = assign_sample_slices(sl.n_theta, sl.n_phi, users, stakes,
                                      config.policy);
    }
  }
  // Interpolation layouts for plural nodes that feed a computed parent:
  // parent-dimension columns spread over the users proportionally to their
  // source columns, remainders to the earlier slice positions.
  for (int l = s.top_level + 1; l <= L; ++l) {
    std::size_t nt_parent = s.samplings[std::size_t(l - 1)].n_theta;
    std::size_t np_parent = s.samplings[std::size_t(l - 1)].n_phi;
    std::size_t nt_child = s.samplings[std::size_t(l)].n_theta;
    for (NodeInfo& n : s.levels[std::size_t(l)].nodes) {
      if (!n.plural) continue;
      std::size_t parts = n.slices.size();
      std::vector<std::size_t> cols(parts);
      std::size_t assigned = 0;
      for (std::size_t u = 0; u < parts; ++u) {
        std::size_t src_cols =
            n.slices[u].size() / s.samplings[std::size_t(l)].n_phi;
        cols[u] = nt_parent * src_cols / nt_child;
        assigned += cols[u];
      }
      for (std::size_t u = 0; assigned < nt_parent; u = (u + 1) % parts) {
        ++cols[u];
        ++assigned;
      }
      n.interp_layout.n_theta = nt_parent;
      n.interp_layout.n_phi = np_parent;
      n.interp_layout.splits.assign(1, 0);
      for (std::size_t u = 0; u < parts; ++u)
        n.interp_layout.splits.push_back(n.interp_layout.splits.back() + cols[u]);
    }
  }
  // Node uids.
  s.level_uid_offset.assign(std::size_t(L + 2), 0);
  std::size_t run = 0;
  for (int l = 0; l <= L; ++l) {
    s.level_uid_offset[std::size_t(l)] = run;
    if (l >= s.top_level && l < int(s.levels.size()))
      run += s.levels[std::size_t(l)].nodes.size();
  }

  s.lists = build_interaction_lists(by_level, s.top_level);
  s.m2l_plan = build_m2l_comm_plan(s);
  s.near_plan = build_near_plan(s);
  return s;
}

// ---------------------------------------------------------------------------

RankEngine::RankEngine(const GlobalSetup& setup, Endpoint& ep)
    : s_(setup), ep_(ep), r_(ep.rank()) {
  // Register every translation-operator range this rank will apply, then
  // build the cache in one pass.
  int L = s_.tree.levels;
  for (int l = s_.top_level; l <= L; ++l) {
    for (const NodeInfo& o : s_.levels[std::size_t(l)].nodes) {
      auto my = o.slice_for(r_);
      if (!my) continue;
      auto far_it = s_.lists.far.find(o.key.packed());
      if (far_it == s_.lists.far.end()) continue;
      for (const MortonKey& sk : far_it->second) {
        OperatorCache::Key key{l, long(o.key.cell_x()) - long(sk.cell_x()),
                               long(o.key.cell_y()) - long(sk.cell_y()),
                               long(o.key.cell_z()) - long(sk.cell_z())};
        cache_.register_need(key, my->first, my->second);
      }
    }
  }
  std::vector<double> sides(std::size_t(L + 1), 0.0);
  for (int l = 1; l <= L; ++l) sides[std::size_t(l)] = s_.tree.box_side(l);
  cache_.build(s_.samplings, sides, s_.k);
  ep_.note_memory(MemClass::TranslationOps, cache_.bytes());

  // Temporaries: twice the largest interpolated plural segment (a rank can
  // hold two plural nodes per level) or the largest serial parent grid.
  std::uint64_t tmp = 0;
  for (int l = s_.top_level + 1; l <= L; ++l) {
    std::size_t np_parent = s_.samplings[std::size_t(l - 1)].n_phi;
    std::uint64_t full =
        std::uint64_t(s_.samplings[std::size_t(l - 1)].num_samples()) *
        sizeof(cplx);
    for (const NodeInfo& n : s_.levels[std::size_t(l)].nodes) {
      if (n.plural) {
        auto users = n.user_ranks();
        for (std::size_t u = 0; u < users.size(); ++u)
          if (users[u] == r_)
            tmp = std::max(
                tmp, 2 * std::uint64_t(n.interp_layout.cols(u) * np_parent) *
                         sizeof(cplx));
      } else if (n.first_user == r_) {
        tmp = std::max(tmp, full);
      }
    }
  }
  ep_.note_memory(MemClass::Temporaries, tmp);
}

const std::vector<cplx>* RankEngine::multipole(const MortonKey& key) const {
  const LevelTable& t = s_.levels[std::size_t(key.level)];
  auto it = t.index.find(key.packed());
  if (it == t.index.end()) return nullptr;
  auto jt = mp_.find(s_.uid(key.level, it->second));
  return jt == mp_.end() ? nullptr : &jt->second;
}

const std::vector<cplx>* RankEngine::local_expansion(const MortonKey& key) const {
  const LevelTable& t = s_.levels[std::size_t(key.level)];
  auto it = t.index.find(key.packed());
  if (it == t.index.end()) return nullptr;
  auto jt = local_.find(s_.uid(key.level, it->second));
  return jt == local_.end() ? nullptr : &jt->second;
}

void RankEngine::c2m_phase() {
  ep_.set_phase(Phase::C2M);
  int L = s_.tree.levels;
  const LevelSampling& sl = s_.samplings[std::size_t(L)];
  auto [lb, le] = s_.partition.rank_ranges[std::size_t(r_)];
  for (std::size_t li = lb; li < le; ++li) {
    const NodeInfo& n = s_.levels[std::size_t(L)].nodes[li];
    auto [pb, pe] = s_.leaf_particles[li];
    SphereGrid g = c2m({&s_.particles[pb], pe - pb}, n.center, sl, s_.k);
    ep_.add_flops(std::uint64_t(kC2MFlopsPerEntry) * (pe - pb) * g.size());
    tree_bytes_ += g.size() * sizeof(cplx);
    mp_[s_.uid(L, li)] = std::move(g.samples);
  }
  ep_.note_memory(MemClass::TreeStorage, tree_bytes_);
}

void RankEngine::m2m_pass() {
  ep_.set_phase(Phase::M2M);
  int L = s_.tree.levels;
  for (int l = L - 1; l >= s_.top_level; --l) {
    const LevelSampling& sp = s_.samplings[std::size_t(l)];
    const LevelSampling& sc = s_.samplings[std::size_t(l + 1)];
    for (std::size_t pi = 0; pi < s_.levels[std::size_t(l)].nodes.size(); ++pi) {
      const NodeInfo& p = s_.levels[std::size_t(l)].nodes[pi];
      if (r_ < p.first_user || r_ > p.last_user) continue;

      // Self-delivered aggregation segments, keyed by child uid.
      std::map<int, std::vector<cplx>> self_stage;

      // Phase A: interpolate + shift each child this rank helps hold, and
      // scatter the parent-dimension samples to the parent-slice owners.
      for (std::size_t ci : p.children) {
        const NodeInfo& c = s_.levels[std::size_t(l + 1)].nodes[ci];
        int cuid = s_.uid(l + 1, ci);
        Vec3 disp = c.center - p.center;  // old center minus new center
        if (!c.plural) {
          if (c.first_user != r_) continue;
          SphereGrid child(sc.n_theta, sc.n_phi);
          child.samples = mp_.at(cuid);
          SphereGrid up = fft_interpolate(child, sp.n_theta, sp.n_phi);
          ep_.add_flops(std::uint64_t(
              interp_flops(sc.n_theta, sc.n_phi, sp.n_theta, sp.n_phi)));
          shift_expansion(up.samples, sp, 0, disp, s_.k);
          ep_.add_flops(std::uint64_t(kShiftFlopsPerSample) * up.size());
          for (const Slice& sl : p.slices) {
            if (sl.size() == 0) continue;
            std::span<const cplx> seg{&up.samples[sl.begin], sl.size()};
            if (sl.rank == r_)
              self_stage[cuid].assign(seg.begin(), seg.end());
            else
              ep_.isend(sl.rank, kTagAgg + cuid, pack_cplx(seg));
          }
        } else {
          auto users = c.user_ranks();
          auto me = std::find(users.begin(), users.end(), r_);
          if (me == users.end()) continue;
          std::size_t ui = std::size_t(me - users.begin());
          ColumnLayout src = slices_to_layout(c.slices, sc);
          static const std::vector<cplx> kEmpty;
          auto src_it = mp_.find(cuid);  // absent when my slice is empty
          const std::vector<cplx>& mine_src =
              src_it == mp_.end() ? kEmpty : src_it->second;
          std::vector<cplx> seg = parallel_interpolate(
              src, mine_src, c.interp_layout, users, ui, ep_,
              kTagInterp + 2 * cuid);
          std::size_t d0 = c.interp_layout.splits[ui] * sp.n_phi;
          std::size_t d1 = c.interp_layout.splits[ui + 1] * sp.n_phi;
          shift_expansion(seg, sp, d0, disp, s_.k);
          ep_.add_flops(std::uint64_t(kShiftFlopsPerSample) * seg.size());
          for (const Slice& sl : p.slices) {
            Range x = intersect(sl.begin, sl.end, d0, d1);
            if (x.empty()) continue;
            std::span<const cplx> sub{&seg[x.lo - d0], x.size()};
            if (sl.rank == r_)
              self_stage[cuid].assign(sub.begin(), sub.end());
            else
              ep_.isend(sl.rank, kTagAgg + cuid, pack_cplx(sub));
          }
        }
      }

      // Phase B: owners of parent slices accumulate the contributions in a
      // fixed (child Morton, contributor) order.
      auto my = p.slice_for(r_);
      if (!my) continue;
      std::vector<cplx> acc(my->second - my->first, cplx(0.0, 0.0));
      for (std::size_t ci : p.children) {
        const NodeInfo& c = s_.levels[std::size_t(l + 1)].nodes[ci];
        int cuid = s_.uid(l + 1, ci);
        std::vector<std::pair<int, Range>> contributors;
        if (!c.plural) {
          contributors.emplace_back(c.first_user,
                                    Range{0, sp.num_samples()});
        } else {
          auto users = c.user_ranks();
          for (std::size_t u = 0; u < users.size(); ++u)
            contributors.emplace_back(
                users[u], Range{c.interp_layout.splits[u] * sp.n_phi,
                                c.interp_layout.splits[u + 1] * sp.n_phi});
        }
        for (auto& [q, rng] : contributors) {
          Range x = intersect(rng.lo, rng.hi, my->first, my->second);
          if (x.empty()) continue;
          std::vector<cplx> data;
          if (q == r_) {
            data = std::move(self_stage.at(cuid));
          } else {
            auto bytes = ep_.recv(q, kTagAgg + cuid);
            data.resize(bytes.size() / sizeof(cplx));
            unpack_cplx(bytes, data);
          }
          if (data.size() != x.size())
            throw std::logic_error("m2m_pass: aggregation size mismatch");
          for (std::size_t i = 0; i < data.size(); ++i)
            acc[x.lo - my->first + i] += data[i];
          ep_.add_flops(2 * data.size());
        }
      }
      tree_bytes_ += acc.size() * sizeof(cplx);
      mp_[s_.uid(l, pi)] = std::move(acc);
    }
  }
  ep_.note_memory(MemClass::TreeStorage, tree_bytes_);
}

void RankEngine::init_locals() {
  int L = s_.tree.levels;
  for (int l = s_.top_level; l <= L; ++l)
    for (std::size_t i = 0; i < s_.levels[std::size_t(l)].nodes.size(); ++i) {
      auto my = s_.levels[std::size_t(l)].nodes[i].slice_for(r_);
      if (!my) continue;
      local_[s_.uid(l, i)].assign(my->second - my->first, cplx(0.0, 0.0));
      tree_bytes_ += (my->second - my->first) * sizeof(cplx);
    }
  ep_.note_memory(MemClass::TreeStorage, tree_bytes_);
}

void RankEngine::m2l_pass() {
  ep_.set_phase(Phase::M2L);
  init_locals();
  int L = s_.tree.levels;
  std::uint64_t comm_buffer_bytes = 0;

  // Send every outgoing plan stream, chopped into buffer_limit chunks.
  for (const PairPlan& pp : s_.m2l_plan.pairs) {
    if (pp.src != r_) continue;
    std::vector<cplx> stream;
    stream.reserve(pp.total_samples());
    for (const PlanItem& it : pp.items) {
      const NodeInfo* n = s_.levels[std::size_t(it.node.level)].find(it.node);
      auto my = n->slice_for(r_);
      const std::vector<cplx>& mp = mp_.at(
          s_.uid(it.node.level, s_.levels[std::size_t(it.node.level)]
                                    .index.at(it.node.packed())));
      for (std::size_t i = it.begin; i < it.end; ++i)
        stream.push_back(mp[i - my->first]);
    }
    auto bytes = pack_cplx(stream);
    std::size_t cap = std::size_t(
        std::min<std::uint64_t>(s_.config.buffer_limit, bytes.size()));
    comm_buffer_bytes += cap;
    for (std::size_t off = 0, chunk = 0; off < bytes.size();
         off += cap, ++chunk)
      ep_.isend(pp.dst, kTagM2L + int(chunk),
                {bytes.data() + off, std::min(cap, bytes.size() - off)});
  }

  // Entirely-local translations while transfers are in flight.
  auto apply = [&](const NodeInfo& o, int l, const NodeInfo& src, Range x,
                   std::span<const cplx> mp_seg) {
    OperatorCache::Key key{l, long(o.key.cell_x()) - long(src.key.cell_x()),
                           long(o.key.cell_y()) - long(src.key.cell_y()),
                           long(o.key.cell_z()) - long(src.key.cell_z())};
    auto op = cache_.get(key, x.lo, x.hi);
    auto my = o.slice_for(r_);
    std::span<cplx> acc{
        &local_.at(s_.uid(l, s_.levels[std::size_t(l)].index.at(o.key.packed())))
             [x.lo - my->first],
        x.size()};
    m2l_apply(mp_seg, op, acc);
    ep_.add_flops(std::uint64_t(kM2LFlopsPerSample) * x.size());
  };
  for (int l = s_.top_level; l <= L; ++l) {
    for (const NodeInfo& o : s_.levels[std::size_t(l)].nodes) {
      auto my = o.slice_for(r_);
      if (!my) continue;
      auto far_it = s_.lists.far.find(o.key.packed());
      if (far_it == s_.lists.far.end()) continue;
      for (const MortonKey& sk : far_it->second) {
        const NodeInfo* src = s_.levels[std::size_t(l)].find(sk);
        auto mine = src->slice_for(r_);
        if (!mine) continue;
        Range x = intersect(mine->first, mine->second, my->first, my->second);
        if (x.empty()) continue;
        const std::vector<cplx>& mp = mp_.at(s_.uid(
            l, s_.levels[std::size_t(l)].index.at(sk.packed())));
        apply(o, l, *src, x, {&mp[x.lo - mine->first], x.size()});
      }
    }
  }

  // Drain incoming streams (any arrival order), then apply them in fixed
  // (observer, source, sender) order for determinism.
  std::map<int, std::vector<std::byte>> stream_bytes;  // by src rank
  std::vector<std::pair<int, int>> expected;
  std::map<std::pair<int, int>, std::pair<int, std::size_t>> chunk_slot;
  for (const PairPlan& pp : s_.m2l_plan.pairs) {
    if (pp.dst != r_) continue;
    std::size_t total = pp.total_bytes();
    stream_bytes[pp.src].resize(total);
    comm_buffer_bytes += total;
    std::size_t cap = std::size_t(
        std::min<std::uint64_t>(s_.config.buffer_limit, total));
    for (std::size_t chunk = 0; chunk < pp.num_chunks(s_.config.buffer_limit);
         ++chunk) {
      expected.emplace_back(pp.src, kTagM2L + int(chunk));
      chunk_slot[{pp.src, int(chunk)}] = {pp.src, chunk * cap};
    }
  }
  ep_.note_memory(MemClass::CommBuffers, comm_buffer_bytes);
  std::size_t remaining = expected.size();
  while (remaining > 0) {
    Message m = ep_.recv_any(expected);
    auto slot = chunk_slot.at({m.src, m.tag - kTagM2L});
    std::memcpy(stream_bytes[slot.first].data() + slot.second,
                m.payload.data(), m.payload.size());
    expected.erase(std::find(expected.begin(), expected.end(),
                             std::make_pair(m.src, m.tag)));
    --remaining;
  }
  std::map<int, std::vector<cplx>> streams;
  std::map<std::pair<int, std::uint64_t>,
           std::vector<std::pair<Range, std::size_t>>>
      item_offsets;  // (src, node) -> ranges with stream sample offsets
  for (const PairPlan& pp : s_.m2l_plan.pairs) {
    if (pp.dst != r_) continue;
    auto& sv = streams[pp.src];
    sv.resize(pp.total_samples());
    unpack_cplx(stream_bytes[pp.src], sv);
    std::size_t off = 0;
    for (const PlanItem& it : pp.items) {
      item_offsets[{pp.src, it.node.packed()}].push_back(
          {{it.begin, it.end}, off});
      off += it.end - it.begin;
    }
  }
  for (int l = s_.top_level; l <= L; ++l) {
    for (const NodeInfo& o : s_.levels[std::size_t(l)].nodes) {
      auto my = o.slice_for(r_);
      if (!my) continue;
      auto far_it = s_.lists.far.find(o.key.packed());
      if (far_it == s_.lists.far.end()) continue;
      for (const MortonKey& sk : far_it->second) {
        const NodeInfo* src = s_.levels[std::size_t(l)].find(sk);
        for (const Slice& ss : src->slices) {
          if (ss.rank == r_ || ss.size() == 0) continue;
          Range x = intersect(ss.begin, ss.end, my->first, my->second);
          if (x.empty()) continue;
          auto it = item_offsets.find({ss.rank, sk.packed()});
          if (it == item_offsets.end())
            throw std::logic_error("m2l_pass: missing plan entry");
          const std::vector<cplx>* sv = &streams.at(ss.rank);
          bool applied = false;
          for (auto& [rng, off] : it->second)
            if (x.lo >= rng.lo && x.hi <= rng.hi) {
              apply(o, l, *src, x, {&(*sv)[off + (x.lo - rng.lo)], x.size()});
              applied = true;
              break;
            }
          if (!applied)
            throw std::logic_error("m2l_pass: plan range not found");
        }
      }
    }
  }
}

void RankEngine::l2l_pass() {
  ep_.set_phase(Phase::L2L);
  int L = s_.tree.levels;
  for (int l = s_.top_level; l < L; ++l) {
    const LevelSampling& sp = s_.samplings[std::size_t(l)];
    const LevelSampling& sc = s_.samplings[std::size_t(l + 1)];
    const QuadratureRule& qp = s_.quads[std::size_t(l)];
    const QuadratureRule& qc = s_.quads[std::size_t(l + 1)];
    for (std::size_t pi = 0; pi < s_.levels[std::size_t(l)].nodes.size(); ++pi) {
      const NodeInfo& p = s_.levels[std::size_t(l)].nodes[pi];
      if (r_ < p.first_user || r_ > p.last_user) continue;
      std::map<int, std::vector<cplx>> self_stage;

      // Phase A: parent-slice owners send each child's needed parent samples
      // (the exact reverse of the M2M aggregation messages).
      auto my = p.slice_for(r_);
      if (my) {
        const std::vector<cplx>& lp = local_.at(s_.uid(l, pi));
        for (std::size_t ci : p.children) {
          const NodeInfo& c = s_.levels[std::size_t(l + 1)].nodes[ci];
          int cuid = s_.uid(l + 1, ci);
          std::vector<std::pair<int, Range>> receivers;
          if (!c.plural) {
            receivers.emplace_back(c.first_user, Range{0, sp.num_samples()});
          } else {
            auto users = c.user_ranks();
            for (std::size_t u = 0; u < users.size(); ++u)
              receivers.emplace_back(
                  users[u], Range{c.interp_layout.splits[u] * sp.n_phi,
                                  c.interp_layout.splits[u + 1] * sp.n_phi});
          }
          for (auto& [w, rng] : receivers) {
            Range x = intersect(rng.lo, rng.hi, my->first, my->second);
            if (x.empty()) continue;
            std::span<const cplx> seg{&lp[x.lo - my->first], x.size()};
            if (w == r_)
              self_stage[cuid].assign(seg.begin(), seg.end());
            else
              ep_.isend(w, kTagShift + cuid, pack_cplx(seg));
          }
        }
      }

      // Phase B: children assemble their parent segment, shift to the child
      // center, anterpolate, and accumulate into their local expansions.
      for (std::size_t ci : p.children) {
        const NodeInfo& c = s_.levels[std::size_t(l + 1)].nodes[ci];
        int cuid = s_.uid(l + 1, ci);
        Vec3 disp = p.center - c.center;  // old center minus new center
        if (!c.plural) {
          if (c.first_user != r_) continue;
          SphereGrid parent(sp.n_theta, sp.n_phi);
          for (const Slice& sl : p.slices) {
            if (sl.size() == 0) continue;
            std::vector<cplx> data;
            if (sl.rank == r_) {
              data = std::move(self_stage.at(cuid));
            } else {
              auto bytes = ep_.recv(sl.rank, kTagShift + cuid);
              data.resize(bytes.size() / sizeof(cplx));
              unpack_cplx(bytes, data);
            }
            std::copy(data.begin(), data.end(),
                      parent.samples.begin() + long(sl.begin));
          }
          shift_expansion(parent.samples, sp, 0, disp, s_.k);
          ep_.add_flops(std::uint64_t(kShiftFlopsPerSample) * parent.size());
          // Quadrature-preserving anterpolation W_c^{-1} I^H W_p: the child
          // expansion reproduces the parent's integrals against every
          // child-band function, which plain value truncation does not.
          for (std::size_t i = 0; i < parent.size(); ++i)
            parent.samples[i] *= qp.weight(i);
          SphereGrid down = fft_anterpolate_adjoint(parent, sc.n_theta, sc.n_phi);
          ep_.add_flops(std::uint64_t(
              interp_flops(sc.n_theta, sc.n_phi, sp.n_theta, sp.n_phi)));
          std::vector<cplx>& dst = local_.at(cuid);
          for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] += down.samples[i] / qc.weight(i);
          ep_.add_flops(2 * dst.size());
        } else {
          auto users = c.user_ranks();
          auto me = std::find(users.begin(), users.end(), r_);
          if (me == users.end()) continue;
          std::size_t ui = std::size_t(me - users.begin());
          std::size_t d0 = c.interp_layout.splits[ui] * sp.n_phi;
          std::size_t d1 = c.interp_layout.splits[ui + 1] * sp.n_phi;
          std::vector<cplx> seg(d1 - d0, cplx(0.0, 0.0));
          for (const Slice& sl : p.slices) {
            if (sl.size() == 0) continue;
            Range x = intersect(sl.begin, sl.end, d0, d1);
            if (x.empty()) continue;
            std::vector<cplx> data;
            if (sl.rank == r_) {
              data = std::move(self_stage.at(cuid));
            } else {
              auto bytes = ep_.recv(sl.rank, kTagShift + cuid);
              data.resize(bytes.size() / sizeof(cplx));
              unpack_cplx(bytes, data);
            }
            std::copy(data.begin(), data.end(), seg.begin() + long(x.lo - d0));
          }
          shift_expansion(seg, sp, d0, disp, s_.k);
          ep_.add_flops(std::uint64_t(kShiftFlopsPerSample) * seg.size());
          // Weighted-adjoint anterpolation, distributed: the diagonal weight
          // factors apply to the locally held segments, the constant adjoint
          // scale to the result.
          for (std::size_t i = 0; i < seg.size(); ++i)
            seg[i] *= qp.weight(d0 + i);
          ColumnLayout dst_layout = slices_to_layout(c.slices, sc);
          std::vector<cplx> mine = parallel_anterpolate(
              c.interp_layout, seg, dst_layout, users, ui, ep_,
              kTagAnterp + 2 * cuid);
          double adj = double(sp.num_samples()) / double(sc.num_samples());
          if (auto dst_it = local_.find(cuid); dst_it != local_.end()) {
            std::vector<cplx>& dst = dst_it->second;
            std::size_t a = c.slice_for(r_)->first;
            for (std::size_t i = 0; i < dst.size(); ++i)
              dst[i] += mine[i] * adj / qc.weight(a + i);
            ep_.add_flops(2 * dst.size());
          }
        }
      }
    }
  }
}

std::vector<cplx> RankEngine::l2o_near_phase() {
  int L = s_.tree.levels;
  const LevelSampling& sl = s_.samplings[std::size_t(L)];
  auto [lb, le] = s_.partition.rank_ranges[std::size_t(r_)];
  std::size_t p0 = s_.leaf_particles[lb].first;
  std::size_t p1 = s_.leaf_particles[le - 1].second;
  std::vector<cplx> pots(p1 - p0, cplx(0.0, 0.0));

  ep_.set_phase(Phase::L2O);
  for (std::size_t li = lb; li < le; ++li) {
    const NodeInfo& n = s_.levels[std::size_t(L)].nodes[li];
    auto [pb, pe] = s_.leaf_particles[li];
    std::vector<Vec3> obs;
    for (std::size_t i = pb; i < pe; ++i) obs.push_back(s_.particles[i].position);
    SphereGrid g(sl.n_theta, sl.n_phi);
    g.samples = local_.at(s_.uid(L, li));
    std::vector<cplx> vals = l2o(g, n.center, obs, s_.leaf_quad(), s_.k);
    ep_.add_flops(std::uint64_t(kL2OFlopsPerEntry) * obs.size() * g.size());
    for (std::size_t i = 0; i < vals.size(); ++i) pots[pb - p0 + i] += vals[i];
  }

  ep_.set_phase(Phase::Near);
  // Ghost-particle exchange along the precomputed near plan.
  int P = s_.partition.num_ranks;
  for (int w = 0; w < P; ++w) {
    if (w == r_) continue;
    const auto& list = s_.near_plan.send_leaves[std::size_t(r_)][std::size_t(w)];
    if (list.empty()) continue;
    std::vector<double> buf;
    for (std::size_t li : list) {
      auto [pb, pe] = s_.leaf_particles[li];
      for (std::size_t i = pb; i < pe; ++i) {
        const Particle& p = s_.particles[i];
        buf.insert(buf.end(), {p.position.x, p.position.y, p.position.z,
                               p.intensity.real(), p.intensity.imag()});
      }
    }
    std::vector<std::byte> bytes(buf.size() * sizeof(double));
    std::memcpy(bytes.data(), buf.data(), bytes.size());
    ep_.isend(w, kTagNear, bytes);
  }
  for (int q = 0; q < P; ++q) {
    if (q == r_) continue;
    const auto& list = s_.near_plan.send_leaves[std::size_t(q)][std::size_t(r_)];
    if (list.empty()) continue;
    auto bytes = ep_.recv(q, kTagNear);
    std::vector<double> buf(bytes.size() / sizeof(double));
    std::memcpy(buf.data(), bytes.data(), bytes.size());
    std::size_t off = 0;
    for (std::size_t li : list) {
      auto [pb, pe] = s_.leaf_particles[li];
      auto& gh = ghosts_[s_.leaves[li].packed()];
      for (std::size_t i = pb; i < pe; ++i) {
        gh.push_back({{buf[off], buf[off + 1], buf[off + 2]},
                      {buf[off + 3], buf[off + 4]}});
        off += 5;
      }
    }
  }
  for (std::size_t li = lb; li < le; ++li) {
    auto [pb, pe] = s_.leaf_particles[li];
    std::vector<Vec3> obs;
    for (std::size_t i = pb; i < pe; ++i) obs.push_back(s_.particles[i].position);
    std::span<cplx> acc{&pots[pb - p0], pe - pb};
    for (const MortonKey& nk : s_.lists.near.at(s_.leaves[li].packed())) {
      auto it = std::lower_bound(s_.leaves.begin(), s_.leaves.end(), nk);
      std::size_t ni = std::size_t(it - s_.leaves.begin());
      std::span<const Particle> srcs;
      if (s_.partition.rank_of_leaf(ni) == r_) {
        auto [sb, se] = s_.leaf_particles[ni];
        srcs = {&s_.particles[sb], se - sb};
      } else {
        srcs = ghosts_.at(nk.packed());
      }
      near_field_accumulate(srcs, obs, s_.k, acc);
      ep_.add_flops(std::uint64_t(kNearFlopsPerPair) * srcs.size() * obs.size());
    }
  }
  return pots;
}

EvalResult evaluate_with_setup(const GlobalSetup& s) {
  int P = s.partition.num_ranks;
  std::vector<std::vector<cplx>> per_rank(static_cast<std::size_t>(P));
  WorldOptions opts;
  opts.num_ranks = P;
  opts.scheduler = s.config.scheduler;
  opts.seed = s.config.seed;
  CostLedger ledger = run_world(opts, [&](Endpoint& ep) {
    ep.set_phase(Phase::Setup);
    RankEngine eng(s, ep);
    eng.c2m_phase();
    eng.m2m_pass();
    eng.m2l_pass();
    eng.l2l_pass();
    per_rank[std::size_t(ep.rank())] = eng.l2o_near_phase();
  });

  EvalResult out;
  out.ledger = std::move(ledger);
  out.potentials.assign(s.particles.size(), cplx(0.0, 0.0));
  for (int r = 0; r < P; ++r) {
    auto [lb, le] = s.partition.rank_ranges[std::size_t(r)];
    std::size_t p0 = s.leaf_particles[lb].first;
    for (std::size_t i = 0; i < per_rank[std::size_t(r)].size(); ++i)
      out.potentials[s.original_index[p0 + i]] = per_rank[std::size_t(r)][i];
  }
  return out;
}

EvalResult evaluate_potential(const std::vector<Particle>& particles,
                              const RunConfig& config) {
  GlobalSetup setup = build_setup(particles, config);
  return evaluate_with_setup(setup);
}

}  // namespace hfmm
