#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <mutex>
#include <vector>

#include "hfmm/kernel.hpp"
#include "hfmm/traversal.hpp"

using namespace hfmm;

namespace {

std::vector<Particle> grid_particles(double extent, std::uint64_t seed = 7) {
  GeometrySpec g;
  g.kind = GeometryKind::PlanarGrid;
  g.extent = extent;
  g.spacing = 0.25;
  return generate_geometry(g, 1.0, IntensityRule::RandomSeeded, seed);
}

double rel_rms(const std::vector<cplx>& got, const std::vector<cplx>& want) {
  REQUIRE(got.size() == want.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += std::norm(got[i] - want[i]);
    den += std::norm(want[i]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<cplx> direct_oracle(const std::vector<Particle>& p, double lambda) {
  std::vector<Vec3> obs;
  for (const auto& q : p) obs.push_back(q.position);
  return direct_potential(p, obs, Wavenumber::from_lambda(lambda));
}

}  // namespace

TEST_CASE("build_setup shapes a 32x32 grid into a 6-level surface tree") {
  auto p = grid_particles(8.0);
  RunConfig cfg;
  cfg.one_particle_per_leaf = true;
  GlobalSetup s = build_setup(p, cfg);
  CHECK(s.tree.levels == 6);
  CHECK(s.d_class == 2);
  CHECK(s.leaves.size() == 1024u);
  CHECK(s.particles.size() == 1024u);
  // Morton order with a complete original-index permutation.
  std::vector<bool> seen(p.size(), false);
  for (std::size_t i : s.original_index) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
  for (std::size_t i = 1; i < s.leaves.size(); ++i)
    CHECK(s.leaves[i - 1] < s.leaves[i]);
  // Levels tables exist for top..L and cover every leaf.
  CHECK(s.levels[s.tree.levels].nodes.size() == 1024u);
  CHECK(s.leaf_quad().n_theta == s.samplings[s.tree.levels].n_theta);
}

TEST_CASE("build_setup rejects invalid configs and inputs") {
  RunConfig cfg;
  cfg.num_ranks = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  RunConfig ok;
  CHECK_THROWS_AS(build_setup({}, ok), std::invalid_argument);
  // one_particle_per_leaf with two particles in one leaf throws.
  RunConfig strict;
  strict.one_particle_per_leaf = true;
  std::vector<Particle> two = {{{0.1, 0.1, 0.1}, {1, 0}},
                               {{0.11, 0.1, 0.1}, {1, 0}}};
  CHECK_THROWS_AS(build_setup(two, strict), std::invalid_argument);
}

TEST_CASE("single-rank evaluation matches the direct oracle at digits 3") {
  auto p = grid_particles(8.0);
  RunConfig cfg;
  cfg.digits = 3;
  EvalResult res = evaluate_potential(p, cfg);
  auto want = direct_oracle(p, cfg.lambda);
  CHECK(rel_rms(res.potentials, want) <= 1e-3);
  CHECK(res.ledger.grand_total().flops > 0u);
}

TEST_CASE("zero intensities give zero potentials with a populated ledger") {
  auto p = grid_particles(4.0);
  for (auto& q : p) q.intensity = {0.0, 0.0};
  RunConfig cfg;
  EvalResult res = evaluate_potential(p, cfg);
  for (const auto& v : res.potentials) CHECK(std::abs(v) == 0.0);
  CHECK(res.ledger.grand_total().flops > 0u);
  CHECK(res.ledger.total(Phase::Near).flops > 0u);
}

TEST_CASE("one particle per leaf keeps the near-field ledger minimal") {
  auto p = grid_particles(4.0);
  RunConfig cfg;
  cfg.one_particle_per_leaf = true;
  GlobalSetup s = build_setup(p, cfg);
  EvalResult res = evaluate_with_setup(s);
  // Exactly one source and one observer per adjacent-leaf pair.
  std::uint64_t pairs = 0;
  for (const MortonKey& leaf : s.leaves)
    pairs += s.lists.near.at(leaf.packed()).size();
  CHECK(res.ledger.total(Phase::Near).flops == 20u * pairs);
}

TEST_CASE("distributed upward pass reproduces the serial root multipole") {
  // 8-leaf volume tree, aggregation forced all the way to the root.
  GeometrySpec g;
  g.kind = GeometryKind::CubicVolume;
  g.extent = 2.0;
  g.spacing = 1.0;
  auto p = generate_geometry(g, 1.0, IntensityRule::RandomSeeded, 5);
  RunConfig cfg;
  cfg.leaf_lambda = 1.0;
  cfg.top_level = 1;

  GlobalSetup serial_setup = build_setup(p, cfg);
  REQUIRE(serial_setup.leaves.size() == 8u);
  MortonKey root{1, 0};
  std::size_t root_samples = serial_setup.samplings[1].num_samples();

  std::vector<cplx> serial_root;
  {
    WorldOptions opt;
    opt.num_ranks = 1;
    run_world(opt, [&](Endpoint& ep) {
      RankEngine eng(serial_setup, ep);
      eng.c2m_phase();
      eng.m2m_pass();
      const std::vector<cplx>* mp = eng.multipole(root);
      REQUIRE(mp != nullptr);
      serial_root = *mp;
    });
  }
  REQUIRE(serial_root.size() == root_samples);

  for (int ranks : {2, 3, 5}) {
    RunConfig cfgN = cfg;
    cfgN.num_ranks = ranks;
    GlobalSetup setup = build_setup(p, cfgN);
    std::vector<cplx> assembled(root_samples, cplx(0, 0));
    std::mutex mu;
    WorldOptions opt;
    opt.num_ranks = ranks;
    run_world(opt, [&](Endpoint& ep) {
      RankEngine eng(setup, ep);
      eng.c2m_phase();
      eng.m2m_pass();
      const NodeInfo* node = setup.levels[1].find(root);
      REQUIRE(node != nullptr);
      auto slice = node->slice_for(ep.rank());
      if (!slice) return;
      const std::vector<cplx>* mp = eng.multipole(root);
      REQUIRE(mp != nullptr);
      REQUIRE(mp->size() == slice->second - slice->first);
      std::lock_guard lock(mu);
      for (std::size_t i = 0; i < mp->size(); ++i)
        assembled[slice->first + i] = (*mp)[i];
    });
    double num = 0, den = 0;
    for (std::size_t i = 0; i < root_samples; ++i) {
      num += std::norm(assembled[i] - serial_root[i]);
      den += std::norm(serial_root[i]);
    }
    CHECK(std::sqrt(num / den) < 1e-12);
  }
}

TEST_CASE("subtree-aligned partitions aggregate without any messages") {
  // 16x16 leaves with 4 ranks: rank boundaries coincide with level-2 subtree
  // boundaries, so every child-slice owner equals the parent-slice owner and
  // the aggregation phases send zero bytes.
  auto p = grid_particles(4.0);
  RunConfig cfg;
  cfg.num_ranks = 4;
  EvalResult res = evaluate_potential(p, cfg);
  CHECK(res.ledger.total(Phase::M2M).messages == 0u);
  CHECK(res.ledger.total(Phase::M2M).bytes == 0u);
  CHECK(res.ledger.total(Phase::L2L).messages == 0u);
}

TEST_CASE("L2L counters equal M2M counters (reverse data flow)") {
  auto p = grid_particles(6.0, 1);
  for (int ranks : {4, 8, 16}) {
    RunConfig cfg;
    cfg.num_ranks = ranks;
    EvalResult res = evaluate_potential(p, cfg);
    Counters m2m = res.ledger.total(Phase::M2M);
    Counters l2l = res.ledger.total(Phase::L2L);
    CHECK(m2m.messages > 0u);  // misaligned geometry communicates
    CHECK(l2l.messages == m2m.messages);
    CHECK(l2l.bytes == m2m.bytes);
  }
}

TEST_CASE("rank count, policy, and buffer cap never change the potentials") {
  auto p = grid_particles(4.0);
  RunConfig base;
  EvalResult serial = evaluate_potential(p, base);
  auto want = direct_oracle(p, base.lambda);
  CHECK(rel_rms(serial.potentials, want) <= 1e-3);

  for (int ranks : {2, 3, 5}) {
    for (AlignPolicy policy : {AlignPolicy::Aligned, AlignPolicy::RankOrdered}) {
      for (std::uint64_t cap :
           {std::numeric_limits<std::uint64_t>::max(), std::uint64_t(64)}) {
        RunConfig cfg;
        cfg.num_ranks = ranks;
        cfg.policy = policy;
        cfg.buffer_limit = cap;
        EvalResult res = evaluate_potential(p, cfg);
        CHECK(rel_rms(res.potentials, serial.potentials) < 1e-10);
      }
    }
  }
}

TEST_CASE("buffer cap splits each pair stream into ceil(total/M_S) messages") {
  auto p = grid_particles(6.0, 1);
  RunConfig cfg;
  cfg.num_ranks = 3;

  GlobalSetup s = build_setup(p, cfg);
  std::uint64_t unbounded_msgs = 0, capped_msgs = 0;
  std::uint64_t cap = 4096;
  for (const PairPlan& pp : s.m2l_plan.pairs) {
    unbounded_msgs += pp.num_chunks(std::numeric_limits<std::uint64_t>::max());
    capped_msgs += pp.num_chunks(cap);
  }
  CHECK(capped_msgs > unbounded_msgs);

  EvalResult full = evaluate_with_setup(s);
  CHECK(full.ledger.total(Phase::M2L).messages == unbounded_msgs);

  RunConfig capped_cfg = cfg;
  capped_cfg.buffer_limit = cap;
  EvalResult capped = evaluate_potential(p, capped_cfg);
  CHECK(capped.ledger.total(Phase::M2L).messages == capped_msgs);
  CHECK(capped.ledger.total(Phase::M2L).bytes ==
        full.ledger.total(Phase::M2L).bytes);
  CHECK(rel_rms(capped.potentials, full.potentials) < 1e-12);
}

TEST_CASE("adversarial and threaded schedulers reproduce the result") {
  auto p = grid_particles(4.0);
  RunConfig base;
  base.num_ranks = 4;
  EvalResult det = evaluate_potential(p, base);
  for (std::uint64_t seed : {1ull, 9ull}) {
    RunConfig adv = base;
    adv.scheduler = SchedulerKind::Adversarial;
    adv.seed = seed;
    EvalResult res = evaluate_potential(p, adv);
    CHECK(rel_rms(res.potentials, det.potentials) < 1e-12);
  }
  RunConfig thr = base;
  thr.scheduler = SchedulerKind::Threaded;
  EvalResult res = evaluate_potential(p, thr);
  CHECK(rel_rms(res.potentials, det.potentials) < 1e-12);
  CHECK(!res.ledger.virtual_time);
}

TEST_CASE("evaluate_with_setup agrees with evaluate_potential") {
  auto p = grid_particles(4.0);
  RunConfig cfg;
  cfg.num_ranks = 2;
  GlobalSetup s = build_setup(p, cfg);
  EvalResult a = evaluate_with_setup(s);
  EvalResult b = evaluate_potential(p, cfg);
  CHECK(rel_rms(a.potentials, b.potentials) == 0.0);
}
