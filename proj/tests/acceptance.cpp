// Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hfmm/bench.hpp"
#include "hfmm/complexity.hpp"
#include "hfmm/kernel.hpp"
#include "hfmm/parallel_interp.hpp"
#include "hfmm/traversal.hpp"

using namespace hfmm;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  if (!ok) ++g_failures;
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::vector<Particle> grid_particles(double extent, double spacing,
                                     std::uint64_t seed) {
  GeometrySpec g;
  g.kind = GeometryKind::PlanarGrid;
  g.extent = extent;
  g.spacing = spacing;
  return generate_geometry(g, 1.0, IntensityRule::RandomSeeded, seed);
}

std::vector<Particle> volume_particles(double extent, double spacing,
                                       std::uint64_t seed) {
  GeometrySpec g;
  g.kind = GeometryKind::CubicVolume;
  g.extent = extent;
  g.spacing = spacing;
  return generate_geometry(g, 1.0, IntensityRule::RandomSeeded, seed);
}

double rel_rms(const std::vector<cplx>& got, const std::vector<cplx>& want) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += std::norm(got[i] - want[i]);
    den += std::norm(want[i]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<cplx> direct_oracle(const std::vector<Particle>& p, double lambda) {
  std::vector<Vec3> obs;
  obs.reserve(p.size());
  for (const auto& q : p) obs.push_back(q.position);
  return direct_potential(p, obs, Wavenumber::from_lambda(lambda));
}

// ---- criterion 1: oracle accuracy with a monotone digits knob -------------

void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  auto p = grid_particles(8.0, 0.25, 7);
  auto want = direct_oracle(p, 1.0);
  std::map<int, double> err;
  for (int digits : {2, 3, 4}) {
    RunConfig cfg;
    cfg.digits = digits;
    err[digits] = rel_rms(evaluate_potential(p, cfg).potentials, want);
  }
  double elapsed = seconds_since(t0);
  bool ok = err[3] <= 1e-3 && err[4] <= 1e-4 && err[3] <= err[2] &&
            err[4] <= err[3] && elapsed <= 60.0;
  std::ostringstream s;
  s << "32x32 grid rel RMS digits{2,3,4} = {" << err[2] << ", " << err[3]
    << ", " << err[4] << "} in " << elapsed << " s (need <=1e-3, <=1e-4, "
    << "monotone, <=60 s)";
  report(1, ok, s.str());
}

// ---- criterion 2: rank / policy / buffer-cap transparency -----------------

void criterion2() {
  auto p = grid_particles(8.0, 0.25, 7);
  RunConfig base;
  auto want = evaluate_potential(p, base).potentials;
  double worst = 0.0;
  std::string worst_id = "none";
  for (int ranks : {1, 2, 3, 4, 8, 16}) {
    for (AlignPolicy policy : {AlignPolicy::Aligned, AlignPolicy::RankOrdered}) {
      for (std::uint64_t cap :
           {std::numeric_limits<std::uint64_t>::max(), std::uint64_t(64)}) {
        RunConfig cfg;
        cfg.num_ranks = ranks;
        cfg.policy = policy;
        cfg.buffer_limit = cap;
        double e = rel_rms(evaluate_potential(p, cfg).potentials, want);
        if (e > worst) {
          std::ostringstream id;
          id << "N_p=" << ranks << " "
             << (policy == AlignPolicy::Aligned ? "aligned" : "rank-ordered")
             << (cap == std::uint64_t(64) ? " M_S=64" : " M_S=inf");
          worst = e;
          worst_id = id.str();
        }
      }
    }
  }
  std::ostringstream s;
  s << "24 configurations agree with N_p=1; worst rel RMS " << worst << " ("
    << worst_id << "), need <= 1e-10";
  report(2, worst <= 1e-10, s.str());
}

// ---- criterion 3: parallel interpolation vs the serial oracle -------------

SphereGrid random_sphere_grid(std::size_t nt, std::size_t np,
                              std::mt19937_64& rng) {
  SphereGrid g(nt, np);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& s : g.samples) s = cplx(u(rng), u(rng));
  return g;
}

ColumnLayout layout_of(std::size_t nt, std::size_t np,
                       std::vector<std::size_t> splits) {
  ColumnLayout l;
  l.n_theta = nt;
  l.n_phi = np;
  l.splits = std::move(splits);
  return l;
}

// Runs parallel_interpolate over src.num_parts() ranks and assembles the
// per-rank destination blocks; returns the relative error vs the serial path.
double distributed_interp_error(const SphereGrid& in, const ColumnLayout& src,
                                const ColumnLayout& dst) {
  std::size_t R = src.num_parts();
  std::vector<int> ranks(R);
  for (std::size_t i = 0; i < R; ++i) ranks[i] = int(i);
  SphereGrid assembled(dst.n_theta, dst.n_phi);
  std::mutex mu;
  WorldOptions opt;
  opt.num_ranks = int(R);
  run_world(opt, [&](Endpoint& ep) {
    std::size_t me = std::size_t(ep.rank());
    std::vector<cplx> mine(
        in.samples.begin() + long(src.splits[me] * src.n_phi),
        in.samples.begin() + long(src.splits[me + 1] * src.n_phi));
    std::vector<cplx> res =
        parallel_interpolate(src, mine, dst, ranks, me, ep, 100);
    std::lock_guard lock(mu);
    std::copy(res.begin(), res.end(),
              assembled.samples.begin() + long(dst.splits[me] * dst.n_phi));
  });
  SphereGrid serial = fft_interpolate(in, dst.n_theta, dst.n_phi);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < serial.samples.size(); ++i) {
    num += std::norm(assembled.samples[i] - serial.samples[i]);
    den += std::norm(serial.samples[i]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

void criterion3() {
  std::mt19937_64 rng(17);
  double worst = 0.0;

  // The published small example: 3x4 -> 5x6 over three single-column owners.
  {
    SphereGrid g = random_sphere_grid(3, 4, rng);
    worst = std::max(worst, distributed_interp_error(
                                g, layout_of(3, 4, {0, 1, 2, 3}),
                                layout_of(5, 6, even_splits(5, 3))));
  }

  for (int trial = 0; trial < 200; ++trial) {
    std::size_t R = 1 + rng() % 8;
    std::size_t nt = std::max<std::size_t>(R, 3 + rng() % 6);
    std::size_t np = 4 + 2 * (rng() % 4);
    std::size_t mt = nt + rng() % 7;
    std::size_t mp = np + 2 * (rng() % 4);
    auto random_splits = [&](std::size_t total) {
      std::vector<std::size_t> s = {0};
      for (std::size_t i = 1; i < R; ++i) s.push_back(rng() % (total + 1));
      s.push_back(total);
      std::sort(s.begin(), s.end());
      return s;
    };
    std::vector<std::size_t> ssrc;
    do {
      ssrc = random_splits(nt);
    } while (std::adjacent_find(ssrc.begin(), ssrc.end()) != ssrc.end());

    SphereGrid g = random_sphere_grid(nt, np, rng);
    worst = std::max(worst,
                     distributed_interp_error(g, layout_of(nt, np, ssrc),
                                              layout_of(mt, mp,
                                                        random_splits(mt))));
  }
  std::ostringstream s;
  s << "200 randomized trials + the 3x4->5x6 R=3 case; worst rel error "
    << worst << ", need <= 1e-12";
  report(3, worst <= 1e-12, s.str());
}

// ---- criterion 4: complexity shape over doubling geometries ---------------

void criterion4() {
  auto t0 = std::chrono::steady_clock::now();

  std::vector<std::pair<double, double>> surface;
  for (double extent : {8.0, 16.0, 32.0, 64.0}) {
    auto p = grid_particles(extent, 0.25, 7);
    RunConfig cfg;
    EvalResult res = evaluate_potential(p, cfg);
    surface.push_back({double(p.size()),
                       double(res.ledger.grand_total().flops)});
  }
  FitResult sfit = fit_and_compare(
      surface, [](double n) { return n * std::log2(n) * std::log2(n); });

  std::vector<std::pair<double, double>> volume;
  for (double extent : {4.0, 8.0, 16.0}) {
    auto p = volume_particles(extent, 0.5, 7);
    RunConfig cfg;
    cfg.leaf_lambda = 0.5;
    EvalResult res = evaluate_potential(p, cfg);
    volume.push_back({double(p.size()),
                      double(res.ledger.grand_total().flops)});
  }
  FitResult vfit = fit_and_compare(volume, [](double n) { return n; });

  double elapsed = seconds_since(t0);
  bool ok = sfit.r_squared >= 0.98 && vfit.r_squared >= 0.98 &&
            elapsed <= 900.0;
  std::ostringstream s;
  s << "surface flops ~ N log^2 N with R^2 = " << sfit.r_squared
    << ", volume flops ~ N with R^2 = " << vfit.r_squared << " in " << elapsed
    << " s (need >= 0.98 each, <= 900 s)";
  report(4, ok, s.str());
}

// ---- criteria 5 & 6: M2M message shape and the alignment benefit ----------

void criteria5_6() {
  auto p = grid_particles(6.0, 0.25, 1);
  std::vector<double> p_squared, m2m_messages;
  bool l2l_mirror = true;
  bool aligned_wins = true;
  std::ostringstream bytes_table;
  for (int ranks : {4, 8, 16, 32}) {
    std::map<AlignPolicy, std::uint64_t> agg_bytes;
    for (AlignPolicy policy : {AlignPolicy::Aligned, AlignPolicy::RankOrdered}) {
      RunConfig cfg;
      cfg.num_ranks = ranks;
      cfg.policy = policy;
      EvalResult res = evaluate_potential(p, cfg);
      Counters m2m = res.ledger.total(Phase::M2M);
      Counters l2l = res.ledger.total(Phase::L2L);
      l2l_mirror = l2l_mirror && l2l.messages == m2m.messages &&
                   l2l.bytes == m2m.bytes;
      agg_bytes[policy] = m2m.bytes + l2l.bytes;
      if (policy == AlignPolicy::Aligned) {
        p_squared.push_back(double(ranks) * double(ranks));
        m2m_messages.push_back(double(m2m.messages));
      }
    }
    aligned_wins = aligned_wins && agg_bytes[AlignPolicy::Aligned] <=
                                       agg_bytes[AlignPolicy::RankOrdered];
    bytes_table << " P=" << ranks << ":" << agg_bytes[AlignPolicy::Aligned]
                << "<=" << agg_bytes[AlignPolicy::RankOrdered];
  }

  AffineFit fit = fit_affine(p_squared, m2m_messages);
  {
    std::ostringstream s;
    s << "M2M messages over P in {4,8,16,32} fit a + b P^2 with R^2 = "
      << fit.r_squared << " (need >= 0.95); L2L counters "
      << (l2l_mirror ? "equal" : "DIFFER FROM") << " M2M counters";
    report(5, fit.r_squared >= 0.95 && l2l_mirror, s.str());
  }
  {
    std::ostringstream s;
    s << "aligned vs rank-ordered aggregation bytes:" << bytes_table.str();
    report(6, aligned_wins, s.str());
  }
}

// ---- criterion 7: the efficiency formula ----------------------------------

void criterion7() {
  double eff = strong_scaling_efficiency(128, 18.55, 2048, 2.38);
  double rounded = std::round(eff * 100.0) / 100.0;
  std::ostringstream s;
  s << "Eff(128 ranks @ 18.55 s -> 2048 ranks @ 2.38 s) = " << eff
    << ", rounds to " << rounded << " (need 0.49)";
  report(7, rounded == 0.49, s.str());
}

// ---- criterion 8: structural invariants over randomized configurations ----

void criterion8() {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> coord(0.0, 2.0);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  int bad = 0;
  std::string first_bad;
  auto fail = [&](int config, const std::string& what) {
    ++bad;
    if (first_bad.empty()) {
      std::ostringstream s;
      s << "config " << config << ": " << what;
      first_bad = s.str();
    }
  };

  int evaluated = 0;
  for (int config = 0; config < 100; ++config) {
    std::size_t n = 20 + rng() % 181;
    std::vector<Particle> particles(n);
    for (auto& q : particles) {
      q.position = {coord(rng), coord(rng), coord(rng)};
      q.intensity = cplx(amp(rng), amp(rng));
    }
    RunConfig cfg;
    cfg.num_ranks = 1 + int(rng() % 6);
    cfg.policy = (rng() & 1) ? AlignPolicy::Aligned : AlignPolicy::RankOrdered;
    cfg.leaf_lambda = (rng() & 1) ? 0.25 : 0.5;

    GlobalSetup s = [&] {
      try {
        return build_setup(particles, cfg);
      } catch (const std::invalid_argument&) {
        cfg.num_ranks = 1;  // more ranks than nonempty leaves
        return build_setup(particles, cfg);
      }
    }();

    // Partition completeness: contiguous [begin, end) ranges covering the
    // sorted nonempty leaf list.
    std::size_t cursor = 0;
    for (const auto& [b, e] : s.partition.rank_ranges) {
      if (b != cursor || e < b) fail(config, "partition gap or overlap");
      cursor = e;
    }
    if (cursor != s.leaves.size()) fail(config, "partition incomplete");

    // Plural multiplicity: at most 2 plural nodes per level per rank.
    auto plural = identify_plural_nodes(s.leaves, s.partition, s.tree);
    for (const auto& per_rank : plural) {
      std::map<int, int> per_level;
      for (const PluralInfo& pi : per_rank) ++per_level[pi.key.level];
      for (const auto& [level, count] : per_level)
        if (count > 2) fail(config, "more than 2 plural nodes in a level");
    }

    // Slice maps: whole-phi-column, disjoint, exact covers.
    for (int level = s.top_level; level <= s.tree.levels; ++level) {
      std::size_t n_phi = s.samplings[level].n_phi;
      std::size_t total = s.samplings[level].num_samples();
      for (const NodeInfo& node : s.levels[level].nodes) {
        std::size_t pos = 0;
        for (const Slice& sl : node.slices) {
          if (sl.begin != pos || sl.end < sl.begin) fail(config, "slice gap");
          if (sl.begin % n_phi || sl.end % n_phi)
            fail(config, "slice not column-aligned");
          pos = sl.end;
        }
        if (pos != total) fail(config, "slices do not cover the samples");
      }
    }

    // Anterpolation is a left inverse of interpolation at the tree's own
    // sampling rates.
    {
      const LevelSampling& leaf = s.samplings[s.tree.levels];
      const LevelSampling& top = s.samplings[s.top_level];
      SphereGrid g = random_sphere_grid(leaf.n_theta, leaf.n_phi, rng);
      SphereGrid up = fft_interpolate(g, top.n_theta, top.n_phi);
      SphereGrid back = fft_anterpolate(up, leaf.n_theta, leaf.n_phi);
      double num = 0, den = 0;
      for (std::size_t i = 0; i < g.samples.size(); ++i) {
        num += std::norm(back.samples[i] - g.samples[i]);
        den += std::norm(g.samples[i]);
      }
      if (std::sqrt(num / den) > 1e-12)
        fail(config, "anterp(interp) round trip exceeded 1e-12");
    }

    // Byte conservation: the executed M2L traffic equals the precomputed
    // plan exactly (every sent chunk is received; leftovers would throw).
    if (s.partition.num_ranks > 1 && evaluated < 20) {
      ++evaluated;
      std::size_t plan_bytes = 0, plan_chunks = 0;
      for (const PairPlan& pp : s.m2l_plan.pairs) {
        plan_bytes += pp.total_bytes();
        plan_chunks += pp.num_chunks(s.config.buffer_limit);
      }
      EvalResult res = evaluate_with_setup(s);
      Counters m2l = res.ledger.total(Phase::M2L);
      if (m2l.bytes != plan_bytes || m2l.messages != plan_chunks)
        fail(config, "ledger M2L traffic differs from the comm plan");
    }
  }

  std::ostringstream s;
  if (bad == 0)
    s << "100 randomized configs: partition, plural multiplicity, slice "
         "covers, interp round trip, and plan byte conservation all hold ("
      << evaluated << " full evaluations)";
  else
    s << bad << " violation(s); first: " << first_bad;
  report(8, bad == 0, s.str());
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criteria5_6();
  criterion7();
  criterion8();
  if (g_failures > 0)
    std::printf("acceptance: %d criterion(s) failed\n", g_failures);
  else
    std::printf("acceptance: all criteria passed\n");
  return g_failures == 0 ? 0 : 1;
}
