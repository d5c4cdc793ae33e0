#include "hfmm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hfmm {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

const char* kind_name(GeometryKind k) {
  switch (k) {
    case GeometryKind::PlanarGrid: return "grid";
    case GeometryKind::SphereSurface: return "sphere";
    case GeometryKind::CubicVolume: return "volume";
  }
  return "?";
}

const char* policy_name(AlignPolicy p) {
  return p == AlignPolicy::Aligned ? "aligned" : "rank_ordered";
}

std::string make_run_id(const GeometrySpec& g, int ranks, AlignPolicy policy) {
  std::ostringstream s;
  s << kind_name(g.kind) << fmt(g.extent) << "x" << fmt(g.spacing) << "_p"
    << ranks << "_" << policy_name(policy);
  return s.str();
}

double run_seconds(const CostLedger& l) {
  // Strong-scaling time of a serialized run: the per-rank virtual clocks
  // advance concurrently, so the makespan is the slowest rank.
  double t = 0.0;
  for (const RankLedger& r : l.ranks) t = std::max(t, r.total().seconds);
  return t;
}

std::uint64_t aggregation_bytes(const CostLedger& l) {
  return l.total(Phase::M2M).bytes + l.total(Phase::L2L).bytes;
}

struct MetricSeries {
  std::vector<std::pair<double, double>> points;  // (N_s, measured)
  std::vector<double> model;                      // prediction per point
};

// For one (ranks, policy) cell across the geometry sweep: measured vs
// predicted per phase/metric, keyed "m2m_C" etc.
std::map<std::string, MetricSeries> collect_series(
    const std::vector<const RunRecord*>& runs) {
  std::map<std::string, MetricSeries> out;
  for (const RunRecord* r : runs) {
    CostPrediction pred = predict_costs(params_for_run(*r), levels_for_run(*r));
    double ns = double(r->n_particles);
    auto add = [&](const std::string& key, double measured, double model) {
      out[key].points.emplace_back(ns, measured);
      out[key].model.push_back(model);
    };
    add("m2m_C", double(r->ledger.total(Phase::M2M).flops), pred.m2m.C);
    add("m2m_M", double(r->ledger.total(Phase::M2M).messages), pred.m2m.M);
    add("m2m_B", double(r->ledger.total(Phase::M2M).bytes), pred.m2m.B);
    add("m2l_C", double(r->ledger.total(Phase::M2L).flops), pred.m2l.C);
    add("m2l_M", double(r->ledger.total(Phase::M2L).messages),
        pred.m2l_messages_upper + pred.m2l_messages_lower);
    add("m2l_B", double(r->ledger.total(Phase::M2L).bytes), pred.m2l.B);
    add("l2l_C", double(r->ledger.total(Phase::L2L).flops), pred.l2l.C);
    add("l2l_M", double(r->ledger.total(Phase::L2L).messages), pred.l2l.M);
    add("l2l_B", double(r->ledger.total(Phase::L2L).bytes), pred.l2l.B);
  }
  return out;
}

}  // namespace

void StudySpec::validate() const {
  if (geometries.empty() || ranks.empty() || policies.empty())
    throw std::invalid_argument("StudySpec: empty sweep");
  for (int r : ranks)
    if (r < 1) throw std::invalid_argument("StudySpec: ranks must be >= 1");
  for (const GeometrySpec& g : geometries) g.validate();
  if (!(lambda > 0) || !(digits > 0) || buffer_bytes == 0)
    throw std::invalid_argument("StudySpec: invalid scalar field");
}

double strong_scaling_efficiency(double base_ranks, double base_seconds,
                                 double target_ranks, double target_seconds) {
  if (!(base_ranks > 0) || !(target_ranks > 0) || !(base_seconds > 0) ||
      !(target_seconds > 0))
    throw std::invalid_argument("strong_scaling_efficiency: nonpositive input");
  return (base_ranks * base_seconds) / (target_ranks * target_seconds);
}

ComplexityParams params_for_run(const RunRecord& run) {
  ComplexityParams p;
  p.N_s = double(run.n_particles);
  p.P = run.ranks;
  p.d = run.d_class;
  p.C_k = 1.0;
  return p;
}

int levels_for_run(const RunRecord& run) {
  double side = std::pow(double(run.n_particles), 1.0 / run.d_class);
  return int(std::lround(std::log2(side))) + 1;
}

Report run_study(const StudySpec& spec) {
  spec.validate();
  Report report;
  for (const GeometrySpec& g : spec.geometries) {
    std::vector<Particle> particles =
        generate_geometry(g, spec.lambda, IntensityRule::RandomSeeded, spec.seed);
    for (AlignPolicy policy : spec.policies) {
      for (int np : spec.ranks) {
        RunRecord rec;
        rec.run_id = make_run_id(g, np, policy);
        rec.geometry = g;
        rec.n_particles = particles.size();
        rec.ranks = np;
        rec.policy = policy;
        try {
          RunConfig cfg;
          cfg.lambda = spec.lambda;
          cfg.digits = spec.digits;
          cfg.leaf_lambda = g.spacing;
          cfg.num_ranks = np;
          cfg.buffer_limit = spec.buffer_bytes;
          cfg.policy = policy;
          cfg.seed = spec.seed;
          GlobalSetup setup = build_setup(particles, cfg);
          rec.d_class = setup.d_class;
          EvalResult res = evaluate_with_setup(setup);
          rec.ledger = std::move(res.ledger);
          rec.ok = true;
        } catch (const std::exception& e) {
          rec.ok = false;
          rec.error = e.what();
        }
        report.runs.push_back(std::move(rec));
      }
    }
  }
  return report;
}

std::string Report::phase_times_csv() const {
  std::ostringstream s;
  s << "run_id,phase,flops,messages,bytes,seconds\n";
  for (const RunRecord& r : runs) {
    if (!r.ok) continue;
    for (int p = 0; p < kNumPhases; ++p) {
      Counters c = r.ledger.total(Phase(p));
      s << r.run_id << "," << phase_name(Phase(p)) << "," << c.flops << ","
        << c.messages << "," << c.bytes << "," << fmt(c.seconds) << "\n";
    }
  }
  return s.str();
}

std::string Report::efficiency_csv() const {
  std::ostringstream s;
  s << "run_id,ranks,seconds,speedup,efficiency\n";
  // Group by (geometry, policy); the base is the smallest successful N_p.
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : runs) {
    if (!r.ok) continue;
    groups[make_run_id(r.geometry, 0, r.policy)].push_back(&r);
  }
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const RunRecord* a, const RunRecord* b) {
                return a->ranks < b->ranks;
              });
    const RunRecord* base = group.front();
    double t_base = run_seconds(base->ledger);
    for (const RunRecord* r : group) {
      double t = run_seconds(r->ledger);
      s << r->run_id << "," << r->ranks << "," << fmt(t) << ","
        << fmt(t_base / t) << ","
        << fmt(strong_scaling_efficiency(base->ranks, t_base, r->ranks, t))
        << "\n";
    }
  }
  return s.str();
}

std::string Report::alignment_csv() const {
  std::ostringstream s;
  s << "geometry,ranks,aligned_bytes,rank_ordered_bytes,delta\n";
  std::map<std::pair<std::string, int>, std::pair<long long, long long>> cells;
  std::map<std::pair<std::string, int>, std::pair<bool, bool>> have;
  for (const RunRecord& r : runs) {
    if (!r.ok) continue;
    std::ostringstream g;
    g << kind_name(r.geometry.kind) << fmt(r.geometry.extent) << "x"
      << fmt(r.geometry.spacing);
    auto key = std::make_pair(g.str(), r.ranks);
    long long b = (long long)aggregation_bytes(r.ledger);
    if (r.policy == AlignPolicy::Aligned) {
      cells[key].first = b;
      have[key].first = true;
    } else {
      cells[key].second = b;
      have[key].second = true;
    }
  }
  for (auto& [key, pair] : cells) {
    if (!have[key].first || !have[key].second) continue;
    s << key.first << "," << key.second << "," << pair.first << ","
      << pair.second << "," << (pair.first - pair.second) << "\n";
  }
  return s.str();
}

std::string Report::memory_csv() const {
  std::ostringstream s;
  s << "run_id";
  for (int c = 0; c < kNumMemClasses; ++c)
    s << "," << mem_class_name(MemClass(c));
  s << "\n";
  for (const RunRecord& r : runs) {
    if (!r.ok) continue;
    s << r.run_id;
    for (int c = 0; c < kNumMemClasses; ++c)
      s << "," << r.ledger.mem_peak_total(MemClass(c));
    s << "\n";
  }
  return s.str();
}

std::string Report::fits_csv() const {
  std::ostringstream s;
  s << "ranks,policy,metric,scale,r_squared,points\n";
  std::map<std::pair<int, int>, std::vector<const RunRecord*>> cells;
  for (const RunRecord& r : runs)
    if (r.ok) cells[{r.ranks, int(r.policy)}].push_back(&r);
  for (auto& [key, group] : cells) {
    if (group.size() < 3) continue;
    auto series = collect_series(group);
    for (auto& [metric, ms] : series) {
      // fit_and_compare evaluates the model at each x; index the stored
      // predictions by matching N_s.
      std::map<double, double> model_at;
      for (std::size_t i = 0; i < ms.points.size(); ++i)
        model_at[ms.points[i].first] = ms.model[i];
      FitResult fit;
      try {
        fit = fit_and_compare(ms.points,
                              [&](double x) { return model_at.at(x); });
      } catch (const std::exception&) {
        continue;  // e.g. single-rank runs have no messages to fit
      }
      s << key.first << "," << policy_name(AlignPolicy(key.second)) << ","
        << metric << "," << fmt(fit.scale) << "," << fmt(fit.r_squared) << ","
        << ms.points.size() << "\n";
    }
  }
  return s.str();
}

std::string Report::gnuplot_data() const {
  std::ostringstream s;
  std::map<std::pair<int, int>, std::vector<const RunRecord*>> cells;
  for (const RunRecord& r : runs)
    if (r.ok) cells[{r.ranks, int(r.policy)}].push_back(&r);
  for (auto& [key, group] : cells) {
    if (group.size() < 3) continue;
    auto series = collect_series(group);
    for (auto& [metric, ms] : series) {
      std::map<double, double> model_at;
      for (std::size_t i = 0; i < ms.points.size(); ++i)
        model_at[ms.points[i].first] = ms.model[i];
      FitResult fit;
      try {
        fit = fit_and_compare(ms.points,
                              [&](double x) { return model_at.at(x); });
      } catch (const std::exception&) {
        continue;
      }
      s << "# p" << key.first << " " << policy_name(AlignPolicy(key.second))
        << " " << metric << "  (N_s measured scaled_model)\n";
      for (std::size_t i = 0; i < ms.points.size(); ++i)
        s << fmt(ms.points[i].first) << " " << fmt(ms.points[i].second) << " "
          << fmt(fit.scale * ms.model[i]) << "\n";
      s << "\n\n";
    }
  }
  return s.str();
}

void write_report(const Report& report, const std::string& output_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(output_dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(fs::path(output_dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error("write_report: cannot open " + name);
    f << text;
  };
  write("phase_times.csv", report.phase_times_csv());
  write("efficiency.csv", report.efficiency_csv());
  write("alignment.csv", report.alignment_csv());
  write("memory.csv", report.memory_csv());
  write("fits.csv", report.fits_csv());
  write("complexity_fit.dat", report.gnuplot_data());
  for (const RunRecord& r : report.runs)
    if (r.ok) write(r.run_id + ".ledger.json", r.ledger.to_json());
}

}  // namespace hfmm
