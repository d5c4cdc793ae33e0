#ifndef HFMM_RUNTIME_HPP
#define HFMM_RUNTIME_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "hfmm/geometry.hpp"
#include "hfmm/ledger.hpp"

namespace hfmm {

/// How the logical ranks are interleaved.
///  - Deterministic: one rank runs at a time; on a blocked receive or an
///    explicit yield the turn passes to the next runnable rank in cyclic
///    order. Two runs produce identical interleavings.
///  - Adversarial: like Deterministic but the next rank is drawn from the
///    seeded RNG among all runnable ranks, probing reordering robustness
///    while staying reproducible for a fixed seed.
///  - Threaded: ranks run freely on their own OS threads; receives block on
///    a condition variable. Used for wall-clock timing.
enum class SchedulerKind { Deterministic, Adversarial, Threaded };

struct Message {
  int src = 0;
  int tag = 0;
  std::vector<std::byte> payload;
};

class World;
class Endpoint;
struct WorldOptions;
CostLedger run_world(const WorldOptions& options,
                     const std::function<void(Endpoint&)>& program);

/// Per-rank handle used inside a rank program: point-to-point messaging plus
/// cost instrumentation. Matching is by (source, tag) and FIFO per
/// (source, destination) pair. Sends never block; self-sends are delivered
/// but never counted.
class Endpoint {
 public:
  int rank() const { return rank_; }
  int world_size() const;

  void isend(int dst, int tag, std::span<const std::byte> payload);
  /// Blocks until a message from `src` with tag `tag` is available.
  std::vector<std::byte> recv(int src, int tag);
  /// Blocks until any of the expected (src, tag) pairs has a message and
  /// returns the first available one.
  Message recv_any(const std::vector<std::pair<int, int>>& expected);
  /// Cooperative yield point (a no-op under the threaded scheduler).
  void yield();

  void set_phase(Phase p);
  Phase phase() const { return phase_; }
  void add_flops(std::uint64_t flops);
  /// Direct counter adjustment for costs not tied to a send (e.g. flop
  /// charges recorded against a phase other than the current one).
  void record(Phase p, std::uint64_t flops, std::uint64_t messages,
              std::uint64_t bytes);
  /// Raises the peak for a memory class to at least `bytes`.
  void note_memory(MemClass c, std::uint64_t bytes);

  RankLedger& ledger() { return ledger_; }

 private:
  friend class World;
  friend CostLedger run_world(const WorldOptions&,
                              const std::function<void(Endpoint&)>&);
  Endpoint(World* world, int rank) : world_(world), rank_(rank) {}
  void advance_clock(double seconds);
  void flush_phase_time();

  World* world_;
  int rank_;
  Phase phase_ = Phase::Setup;
  RankLedger ledger_;
  double vtime_ = 0.0;        // virtual seconds elapsed on this rank
  double phase_mark_ = 0.0;   // vtime at the last phase switch
};

struct WorldOptions {
  int num_ranks = 1;
  SchedulerKind scheduler = SchedulerKind::Deterministic;
  std::uint64_t seed = 0;
  /// When false, cross-rank sends are dropped instead of delivered; any
  /// genuine cross-rank data dependence then deadlocks, which makes hidden
  /// side channels detectable (self-sends still work).
  bool messaging_enabled = true;
};

/// Runs `program` once per logical rank on its own thread under the chosen
/// scheduler and returns the merged cost ledger. Throws std::runtime_error
/// on deadlock (no rank can make progress), rethrows the first rank
/// exception, and throws if any sent message was never consumed.
CostLedger run_world(const WorldOptions& options,
                     const std::function<void(Endpoint&)>& program);

// Payload helpers: raw little-endian byte images of complex samples.
std::vector<std::byte> pack_cplx(std::span<const cplx> values);
void unpack_cplx(std::span<const std::byte> bytes, std::span<cplx> out);

}  // namespace hfmm

#endif
