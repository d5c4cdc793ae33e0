#ifndef HFMM_KERNEL_HPP
#define HFMM_KERNEL_HPP

#include <vector>

#include "hfmm/geometry.hpp"

namespace hfmm {

/// Helmholtz Green's function exp(-j*k*|r|) / (4*pi*|r|).
/// Throws std::domain_error for zero-length r.
cplx green(const Wavenumber& k, const Vec3& r);

/// Direct O(N^2) summation. Observer m receives the sum over all sources
/// whose position differs from the observer's; coincident source/observer
/// positions are skipped (self-term), any other zero-distance pair throws.
/// Fixed summation order per observer (input order), bitwise deterministic.
std::vector<cplx> direct_potential(const std::vector<Particle>& sources,
                                   const std::vector<Vec3>& observers,
                                   const Wavenumber& k);

}  // namespace hfmm

#endif
