#include "hfmm/ledger.hpp"

#include <sstream>

#include <json.hpp>

namespace hfmm {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Setup: return "setup";
    case Phase::C2M: return "c2m";
    case Phase::M2M: return "m2m";
    case Phase::M2L: return "m2l";
    case Phase::L2L: return "l2l";
    case Phase::L2O: return "l2o";
    case Phase::Near: return "near";
  }
  return "?";
}

const char* mem_class_name(MemClass c) {
  switch (c) {
    case MemClass::TreeStorage: return "tree_storage";
    case MemClass::TranslationOps: return "translation_operators";
    case MemClass::CommBuffers: return "comm_buffers";
    case MemClass::Temporaries: return "temporaries";
  }
  return "?";
}

Counters RankLedger::total() const {
  Counters t;
  for (const auto& c : phases) t += c;
  return t;
}

Counters CostLedger::total(Phase p) const {
  Counters t;
  for (const auto& r : ranks) t += r.at(p);
  return t;
}

Counters CostLedger::grand_total() const {
  Counters t;
  for (const auto& r : ranks) t += r.total();
  return t;
}

std::uint64_t CostLedger::mem_peak_total(MemClass c) const {
  std::uint64_t t = 0;
  for (const auto& r : ranks) t += r.mem_peak[int(c)];
  return t;
}

std::string CostLedger::to_json() const {
  nlohmann::json j;
  j["time_basis"] = virtual_time ? "virtual" : "wall";
  auto& rj = j["ranks"] = nlohmann::json::array();
  for (const auto& r : ranks) {
    nlohmann::json e;
    for (int p = 0; p < kNumPhases; ++p) {
      const Counters& c = r.phases[p];
      e["phases"][phase_name(Phase(p))] = {{"flops", c.flops},
                                           {"messages", c.messages},
                                           {"bytes", c.bytes},
                                           {"seconds", c.seconds}};
    }
    for (int m = 0; m < kNumMemClasses; ++m)
      e["mem_peak"][mem_class_name(MemClass(m))] = r.mem_peak[m];
    rj.push_back(std::move(e));
  }
  return j.dump(2);
}

std::string CostLedger::to_csv() const {
  std::ostringstream out;
  out << "rank,phase,flops,messages,bytes,seconds\n";
  for (std::size_t r = 0; r < ranks.size(); ++r)
    for (int p = 0; p < kNumPhases; ++p) {
      const Counters& c = ranks[r].phases[p];
      out << r << ',' << phase_name(Phase(p)) << ',' << c.flops << ','
          << c.messages << ',' << c.bytes << ',' << c.seconds << '\n';
    }
  return out.str();
}

}  // namespace hfmm
