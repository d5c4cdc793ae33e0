#ifndef HFMM_OPERATORS_HPP
#define HFMM_OPERATORS_HPP

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "hfmm/kernel.hpp"
#include "hfmm/sphere_grid.hpp"

namespace hfmm {

// Nominal flop charges per complex grid sample / particle-sample entry,
// used consistently by the traversal ledger.
inline constexpr int kM2LFlopsPerSample = 8;
inline constexpr int kShiftFlopsPerSample = 6;
inline constexpr int kC2MFlopsPerEntry = 12;
inline constexpr int kL2OFlopsPerEntry = 12;
inline constexpr int kNearFlopsPerPair = 20;

/// Outgoing (multipole) expansion of point sources about `center`:
/// sample(khat) = sum_n u_n * exp(+j k khat . (r_n - center)).
SphereGrid c2m(std::span<const Particle> sources, const Vec3& center,
               const LevelSampling& sampling, const Wavenumber& k);

/// Re-centers an expansion: multiplies each sample by
/// exp(+j k khat . displacement) with displacement = old_center - new_center.
/// The same factor serves M2M (child -> parent, on outgoing expansions) and
/// L2L (parent -> child, on incoming expansions). `samples` covers the flat
/// sample range [first_sample, first_sample + samples.size()) of the grid.
void shift_expansion(std::span<cplx> samples, const LevelSampling& sampling,
                     std::size_t first_sample, const Vec3& displacement,
                     const Wavenumber& k);

/// Diagonal translation operator samples for the flat range [begin, end):
///   T(khat) = sum_{l=0}^{L} (-j)^l (2l+1) h_l^(2)(k|D|) P_l(khat . Dhat)
/// with D = observer_center - source_center and L the sampling's truncation
/// order. The global -jk/(16 pi^2) normalization is applied in l2o, not here.
/// Throws if |D| < 2 * box_side (the translation is only valid between
/// well-separated boxes) or k == 0.
std::vector<cplx> translation_operator(const LevelSampling& sampling,
                                       const Vec3& D, double box_side,
                                       const Wavenumber& k, std::size_t begin,
                                       std::size_t end);

/// acc[i] += mp[i] * op[i] (the whole M2L inner loop; 8 flops per sample).
void m2l_apply(std::span<const cplx> mp, std::span<const cplx> op,
               std::span<cplx> acc);

/// Observer potentials from an incoming (local) expansion about `center`:
///   phi(r) = -jk/(16 pi^2) * sum_s w_s local_s exp(-j k khat_s . (r - center))
std::vector<cplx> l2o(const SphereGrid& local, const Vec3& center,
                      std::span<const Vec3> observers,
                      const QuadratureRule& quad, const Wavenumber& k);

/// acc[m] += sum_n u_n g(observers[m] - sources[n]), skipping zero-distance
/// pairs (an observer particle meeting itself in its own or a near leaf).
void near_field_accumulate(std::span<const Particle> sources,
                           std::span<const Vec3> observers,
                           const Wavenumber& k, std::span<cplx> acc);

/// Per-rank store of translation-operator samples, keyed by (level, integer
/// cell offset). Usage: register every (key, sample range) the rank will
/// apply, then build() computes the deduplicated union of ranges per key in
/// one sweep. get() returns a view of a previously registered range.
class OperatorCache {
 public:
  struct Key {
    int level;
    long ox, oy, oz;
    friend auto operator<=>(const Key&, const Key&) = default;
  };

  void register_need(const Key& key, std::size_t begin, std::size_t end);
  /// Computes all registered ranges. `samplings[level]` must be valid for
  /// every registered level; `side_of_level(level)` gives the box side.
  /// Throws std::length_error if a nonzero capacity would be exceeded
  /// (no eviction fallback is provided).
  void build(const std::vector<LevelSampling>& samplings,
             const std::vector<double>& side_of_level, const Wavenumber& k,
             std::uint64_t capacity_bytes = 0);
  std::span<const cplx> get(const Key& key, std::size_t begin,
                            std::size_t end) const;

  std::uint64_t bytes() const { return bytes_; }
  std::size_t num_entries() const { return entries_.size(); }
  /// Disjoint stored ranges for one key (for inspection in tests).
  std::vector<std::pair<std::size_t, std::size_t>> ranges(const Key& key) const;

 private:
  struct Stored {
    std::size_t begin, end;
    std::vector<cplx> values;
  };
  std::map<Key, std::vector<Stored>> entries_;  // per key, sorted disjoint
  bool built_ = false;
  std::uint64_t bytes_ = 0;
};

}  // namespace hfmm

#endif
