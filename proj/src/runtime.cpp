#include "hfmm/runtime.hpp"

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace hfmm {

namespace {

// Virtual-clock cost of primitive actions (serialized schedulers only).
constexpr double kFlopSeconds = 1e-9;
constexpr double kMessageSeconds = 1e-6;
constexpr double kByteSeconds = 1e-9;

// Internal unwind signal used when the world aborts (deadlock or a failing
// peer); never escapes run_world.
struct AbortError {};

}  // namespace

class World {
 public:
  explicit World(const WorldOptions& opt)
      : opt_(opt),
        status_(opt.num_ranks, Status::WaitTurn),
        blocked_on_(opt.num_ranks),
        inbox_(opt.num_ranks),
        rng_(opt.seed) {}

  bool serialized() const {
    return opt_.scheduler != SchedulerKind::Threaded;
  }

  void acquire_initial(int rank) {
    if (!serialized()) return;
    std::unique_lock lock(mu_);
    wait_turn(lock, rank);
  }

  void isend(int src, int dst, int tag, std::span<const std::byte> payload) {
    if (dst < 0 || dst >= opt_.num_ranks)
      throw std::out_of_range("isend: destination rank out of range");
    std::lock_guard lock(mu_);
    if (!opt_.messaging_enabled && dst != src) return;  // canary mode
    Message m;
    m.src = src;
    m.tag = tag;
    m.payload.assign(payload.begin(), payload.end());
    inbox_[dst].push_back(std::move(m));
    if (!serialized()) cv_.notify_all();
  }

  Message recv(int rank, const std::vector<std::pair<int, int>>& expected) {
    std::unique_lock lock(mu_);
    for (;;) {
      if (auto m = take_match(rank, expected)) return std::move(*m);
      if (serialized()) {
        status_[rank] = Status::Blocked;
        blocked_on_[rank] = expected;
        pass_token(rank);
        wait_turn(lock, rank);
      } else {
        cv_.wait(lock, [&] {
          return abort_ || take_peek(rank, expected);
        });
        if (abort_) throw AbortError{};
      }
    }
  }

  void yield(int rank) {
    if (!serialized()) {
      std::this_thread::yield();
      return;
    }
    std::unique_lock lock(mu_);
    status_[rank] = Status::WaitTurn;
    pass_token(rank);
    wait_turn(lock, rank);
  }

  void finish(int rank) {
    std::lock_guard lock(mu_);
    status_[rank] = Status::Done;
    if (serialized()) pass_token(rank);
  }

  void fail(int rank, std::exception_ptr e) {
    std::lock_guard lock(mu_);
    if (!first_error_) first_error_ = e;
    status_[rank] = Status::Done;
    if (serialized()) {
      pass_token(rank);
    } else {
      abort_ = true;
      cv_.notify_all();
    }
  }

  bool deadlocked() const { return deadlock_; }
  std::exception_ptr first_error() const { return first_error_; }
  int num_ranks() const { return opt_.num_ranks; }

  /// Human-readable descriptors of messages still queued after all ranks
  /// finished; non-empty means the exchange protocol was unbalanced.
  std::vector<std::string> leftover_messages() const {
    std::vector<std::string> out;
    for (int dst = 0; dst < opt_.num_ranks; ++dst)
      for (const auto& m : inbox_[dst]) {
        std::ostringstream s;
        s << "src=" << m.src << " dst=" << dst << " tag=" << m.tag
          << " bytes=" << m.payload.size();
        out.push_back(s.str());
      }
    return out;
  }

 private:
  enum class Status { WaitTurn, Running, Blocked, Done };

  bool take_peek(int rank,
                 const std::vector<std::pair<int, int>>& expected) const {
    for (const auto& m : inbox_[rank])
      for (const auto& [src, tag] : expected)
        if (m.src == src && m.tag == tag) return true;
    return false;
  }

  std::optional<Message> take_match(
      int rank, const std::vector<std::pair<int, int>>& expected) {
    for (auto it = inbox_[rank].begin(); it != inbox_[rank].end(); ++it)
      for (const auto& [src, tag] : expected)
        if (it->src == src && it->tag == tag) {
          Message m = std::move(*it);
          inbox_[rank].erase(it);
          return m;
        }
    return std::nullopt;
  }

  bool eligible(int r) const {
    if (status_[r] == Status::WaitTurn) return true;
    return status_[r] == Status::Blocked && take_peek(r, blocked_on_[r]);
  }

  // Hands the turn to the next runnable rank; cyclic scan from `from` under
  // the deterministic scheduler, a seeded draw among all runnable ranks under
  // the adversarial one. No runnable rank with unfinished ranks remaining is
  // a deadlock. Caller holds the lock.
  void pass_token(int from) {
    int n = opt_.num_ranks;
    int next = -1;
    if (opt_.scheduler == SchedulerKind::Deterministic) {
      for (int step = 1; step <= n && next < 0; ++step)
        if (eligible((from + step) % n)) next = (from + step) % n;
    } else {
      std::vector<int> pool;
      for (int r = 0; r < n; ++r)
        if (eligible(r)) pool.push_back(r);
      if (!pool.empty()) next = pool[rng_() % pool.size()];
    }
    if (next >= 0) {
      token_ = next;
      cv_.notify_all();
      return;
    }
    bool all_done = true;
    for (int r = 0; r < n; ++r)
      if (status_[r] != Status::Done) all_done = false;
    if (!all_done) {
      deadlock_ = true;
      cv_.notify_all();
    }
  }

  void wait_turn(std::unique_lock<std::mutex>& lock, int rank) {
    cv_.wait(lock, [&] { return deadlock_ || token_ == rank; });
    if (deadlock_) throw AbortError{};
    status_[rank] = Status::Running;
  }

  WorldOptions opt_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Status> status_;
  std::vector<std::vector<std::pair<int, int>>> blocked_on_;
  std::vector<std::deque<Message>> inbox_;
  std::mt19937_64 rng_;
  int token_ = 0;
  bool deadlock_ = false;
  bool abort_ = false;
  std::exception_ptr first_error_;
};

int Endpoint::world_size() const { return world_->num_ranks(); }

void Endpoint::isend(int dst, int tag, std::span<const std::byte> payload) {
  world_->isend(rank_, dst, tag, payload);
  if (dst != rank_) {
    Counters& c = ledger_.at(phase_);
    c.messages += 1;
    c.bytes += payload.size();
    advance_clock(kMessageSeconds + double(payload.size()) * kByteSeconds);
  }
}

std::vector<std::byte> Endpoint::recv(int src, int tag) {
  return world_->recv(rank_, {{src, tag}}).payload;
}

Message Endpoint::recv_any(const std::vector<std::pair<int, int>>& expected) {
  return world_->recv(rank_, expected);
}

void Endpoint::yield() { world_->yield(rank_); }

void Endpoint::set_phase(Phase p) {
  flush_phase_time();
  phase_ = p;
}

void Endpoint::add_flops(std::uint64_t flops) {
  ledger_.at(phase_).flops += flops;
  advance_clock(double(flops) * kFlopSeconds);
}

void Endpoint::record(Phase p, std::uint64_t flops, std::uint64_t messages,
                      std::uint64_t bytes) {
  Counters& c = ledger_.at(p);
  c.flops += flops;
  c.messages += messages;
  c.bytes += bytes;
}

void Endpoint::note_memory(MemClass c, std::uint64_t bytes) {
  std::uint64_t& peak = ledger_.mem_peak[int(c)];
  peak = std::max(peak, bytes);
}

void Endpoint::advance_clock(double seconds) { vtime_ += seconds; }

void Endpoint::flush_phase_time() {
  if (world_->serialized()) {
    ledger_.at(phase_).seconds += vtime_ - phase_mark_;
    phase_mark_ = vtime_;
  } else {
    static thread_local std::chrono::steady_clock::time_point wall_mark =
        std::chrono::steady_clock::now();
    auto now = std::chrono::steady_clock::now();
    ledger_.at(phase_).seconds +=
        std::chrono::duration<double>(now - wall_mark).count();
    wall_mark = now;
  }
}

CostLedger run_world(const WorldOptions& options,
                     const std::function<void(Endpoint&)>& program) {
  if (options.num_ranks < 1)
    throw std::invalid_argument("run_world: need at least one rank");
  World world(options);
  std::vector<std::unique_ptr<Endpoint>> eps;
  for (int r = 0; r < options.num_ranks; ++r)
    eps.emplace_back(new Endpoint(&world, r));

  std::vector<std::thread> threads;
  for (int r = 0; r < options.num_ranks; ++r)
    threads.emplace_back([&, r] {
      Endpoint& ep = *eps[r];
      try {
        world.acquire_initial(r);
        program(ep);
        ep.flush_phase_time();
        world.finish(r);
      } catch (const AbortError&) {
        // world-level failure; reported by run_world below
      } catch (...) {
        ep.flush_phase_time();
        world.fail(r, std::current_exception());
      }
    });
  for (auto& t : threads) t.join();

  if (world.first_error()) std::rethrow_exception(world.first_error());
  if (world.deadlocked())
    throw std::runtime_error(
        "run_world: deadlock - every unfinished rank is blocked on a receive "
        "with no matching send");
  auto leftovers = world.leftover_messages();
  if (!leftovers.empty()) {
    std::ostringstream s;
    s << "run_world: " << leftovers.size()
      << " message(s) sent but never received:";
    for (const auto& d : leftovers) s << "\n  " << d;
    throw std::runtime_error(s.str());
  }

  CostLedger ledger;
  ledger.virtual_time = world.serialized();
  for (auto& ep : eps) ledger.ranks.push_back(ep->ledger());
  return ledger;
}

std::vector<std::byte> pack_cplx(std::span<const cplx> values) {
  std::vector<std::byte> out(values.size() * sizeof(cplx));
  if (!values.empty())
    std::memcpy(out.data(), values.data(), out.size());
  return out;
}

void unpack_cplx(std::span<const std::byte> bytes, std::span<cplx> out) {
  if (bytes.size() != out.size() * sizeof(cplx))
    throw std::invalid_argument("unpack_cplx: size mismatch");
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
}

}  // namespace hfmm
