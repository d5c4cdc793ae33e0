#ifndef HFMM_LEDGER_HPP
#define HFMM_LEDGER_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hfmm {

/// Traversal phases instrumented in the ledger.
enum class Phase { Setup, C2M, M2M, M2L, L2L, L2O, Near };
inline constexpr int kNumPhases = 7;
const char* phase_name(Phase p);

/// Peak-memory classes tracked per rank.
enum class MemClass { TreeStorage, TranslationOps, CommBuffers, Temporaries };
inline constexpr int kNumMemClasses = 4;
const char* mem_class_name(MemClass c);

struct Counters {
  std::uint64_t flops = 0;
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  double seconds = 0.0;

  Counters& operator+=(const Counters& o) {
    flops += o.flops;
    messages += o.messages;
    bytes += o.bytes;
    seconds += o.seconds;
    return *this;
  }
};

struct RankLedger {
  std::array<Counters, kNumPhases> phases{};
  std::array<std::uint64_t, kNumMemClasses> mem_peak{};

  Counters& at(Phase p) { return phases[int(p)]; }
  const Counters& at(Phase p) const { return phases[int(p)]; }
  Counters total() const;
};

/// Per-rank, per-phase cost record of one run.
struct CostLedger {
  std::vector<RankLedger> ranks;
  bool virtual_time = true;  // false when timed with the wall clock

  Counters total(Phase p) const;
  Counters grand_total() const;
  std::uint64_t mem_peak_total(MemClass c) const;

  std::string to_json() const;
  std::string to_csv() const;
};

}  // namespace hfmm

#endif
