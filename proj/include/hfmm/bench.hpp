#ifndef HFMM_BENCH_HPP
#define HFMM_BENCH_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hfmm/complexity.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/ledger.hpp"
#include "hfmm/traversal.hpp"

namespace hfmm {

/// Scaling-study description: every (geometry, ranks, policy) cell is run once.
struct StudySpec {
  std::vector<GeometrySpec> geometries;
  std::vector<int> ranks;  // N_p sweep
  double lambda = 1.0;
  double digits = 3.0;
  std::uint64_t buffer_bytes = std::numeric_limits<std::uint64_t>::max();  // M_S
  std::vector<AlignPolicy> policies = {AlignPolicy::Aligned};
  std::uint64_t seed = 0;
  std::string output_dir = ".";

  void validate() const;  // throws std::invalid_argument on empty sweeps
};

/// One study cell: run identity plus its full cost ledger. A failed cell
/// keeps its error text and an empty ledger; the study continues.
struct RunRecord {
  std::string run_id;
  GeometrySpec geometry;
  std::size_t n_particles = 0;
  int d_class = 3;
  int ranks = 1;
  AlignPolicy policy = AlignPolicy::Aligned;
  bool ok = false;
  std::string error;
  CostLedger ledger;
};

/// Strong-scaling efficiency relative to a base configuration:
/// Eff = (N_p * T_{N_p}) / (N_q * T_{N_q}).
double strong_scaling_efficiency(double base_ranks, double base_seconds,
                                 double target_ranks, double target_seconds);

/// Pure views of the stored ledgers: regenerating any table from the same
/// records is byte-identical.
struct Report {
  std::vector<RunRecord> runs;

  /// rank-summed per-phase counters, one row per (run, phase)
  std::string phase_times_csv() const;
  /// per (geometry, policy): speedup and efficiency vs the smallest N_p
  std::string efficiency_csv() const;
  /// per (geometry, ranks): aggregation bytes (M2M + L2L) aligned minus
  /// rank-ordered; requires both policies in the study
  std::string alignment_csv() const;
  /// per run: peak bytes by memory class
  std::string memory_csv() const;
  /// model fits: for every (ranks, policy) cell with >= 3 geometries, the
  /// measured C/M/B of M2M, M2L, L2L against the closed-form predictions
  std::string fits_csv() const;
  /// gnuplot-ready "N_s measured scaled_model" blocks matching fits_csv
  std::string gnuplot_data() const;
};

Report run_study(const StudySpec& spec);
/// Writes the CSV tables, the gnuplot data, and one ledger JSON per run id
/// into spec.output_dir (created if missing).
void write_report(const Report& report, const std::string& output_dir);

/// Model inputs matching a run record (C_k = 1; N_L from the particle count).
ComplexityParams params_for_run(const RunRecord& run);
int levels_for_run(const RunRecord& run);

}  // namespace hfmm

#endif
