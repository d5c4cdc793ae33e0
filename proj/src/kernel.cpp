#include "hfmm/kernel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hfmm {

cplx green(const Wavenumber& k, const Vec3& r) {
  double d = r.norm();
  if (d == 0.0) throw std::domain_error("green: zero-length separation");
  double phase = -k.k * d;
  return cplx(std::cos(phase), std::sin(phase)) / (4.0 * M_PI * d);
}

std::vector<cplx> direct_potential(const std::vector<Particle>& sources,
                                   const std::vector<Vec3>& observers,
                                   const Wavenumber& k) {
  std::vector<cplx> out(observers.size(), cplx(0.0, 0.0));
  for (std::size_t m = 0; m < observers.size(); ++m) {
    const Vec3& r = observers[m];
    cplx acc(0.0, 0.0);
    bool skipped_self = false;
    for (std::size_t n = 0; n < sources.size(); ++n) {
      Vec3 d = r - sources[n].position;
      if (d.x == 0.0 && d.y == 0.0 && d.z == 0.0) {
        // First exact coincidence is the self-term and is skipped.
        if (skipped_self)
          throw std::domain_error("direct_potential: coincident source " +
                                  std::to_string(n) + " and observer " +
                                  std::to_string(m));
        skipped_self = true;
        continue;
      }
      acc += green(k, d) * sources[n].intensity;
    }
    out[m] = acc;
  }
  return out;
}

}  // namespace hfmm
