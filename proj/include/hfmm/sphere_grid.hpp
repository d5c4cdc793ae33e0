#ifndef HFMM_SPHERE_GRID_HPP
#define HFMM_SPHERE_GRID_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hfmm/geometry.hpp"

namespace hfmm {

/// Band-limited function sampled on the unit sphere, theta-major:
/// sample (i_theta, i_phi) sits at flat index i_theta * n_phi + i_phi.
/// Theta nodes are half-cell shifted, theta_i = (i + 0.5) * pi / n_theta,
/// so no sample lands on a pole; phi nodes are phi_j = j * 2*pi / n_phi.
/// A "column" is one theta row (all n_phi phi-samples at fixed theta); columns
/// are the unit of distribution across ranks.
struct SphereGrid {
  std::size_t n_theta = 0, n_phi = 0;
  std::vector<cplx> samples;  // size n_theta * n_phi

  SphereGrid() = default;
  SphereGrid(std::size_t nt, std::size_t np)
      : n_theta(nt), n_phi(np), samples(nt * np) {}

  cplx& at(std::size_t it, std::size_t ip) { return samples[it * n_phi + ip]; }
  const cplx& at(std::size_t it, std::size_t ip) const {
    return samples[it * n_phi + ip];
  }
  std::size_t size() const { return n_theta * n_phi; }
};

/// Excess-bandwidth truncation order for a box of the given diameter:
/// L = ceil(k*D + 1.8 * digits^(2/3) * (k*D)^(1/3)), never below 4.
/// Throws std::invalid_argument for the Laplace limit (k == 0): the
/// truncation rule has no finite static limit there.
int truncation_order(double box_diameter, const Wavenumber& k, double digits);

/// Sampling dimensions for one tree level. Both dims are even so phi columns
/// pair up across great circles and the extended theta circle has even length.
struct LevelSampling {
  int level = 0;
  int trunc_order = 0;          // L
  std::size_t n_theta = 0, n_phi = 0;

  std::size_t num_samples() const { return n_theta * n_phi; }
  double theta(std::size_t i) const;
  double phi(std::size_t j) const;
  /// Unit direction of flat sample index s = i_theta * n_phi + i_phi.
  Vec3 direction(std::size_t s) const;
};

/// Sampling for a box of side `box_side` at the given level. The truncation
/// uses the box diagonal (side * sqrt(3)); n_theta = n_phi = 2*L + 2.
LevelSampling make_level_sampling(int level, double box_side,
                                  const Wavenumber& k, double digits);

/// Quadrature over the sphere exact for spherical polynomials of degree
/// <= 2*L + 1 on the half-cell-shifted grid: Fejer-first-kind weights in
/// cos(theta) times the uniform phi weight 2*pi/n_phi. Weights sum to 4*pi.
struct QuadratureRule {
  std::size_t n_theta = 0, n_phi = 0;
  std::vector<double> theta_weight;  // n_theta entries
  double phi_weight = 0.0;

  double weight(std::size_t flat) const {
    return theta_weight[flat / n_phi] * phi_weight;
  }
};
QuadratureRule make_quadrature(std::size_t n_theta, std::size_t n_phi);

/// Fold of the sphere grid into theta-great-circles using the identity
/// f(2*pi - theta, phi + pi) = f(theta, phi). The result has n_phi/2 columns
/// (one per great circle) of length 2*n_theta each: column p holds the samples
/// at phi_p for theta ascending, then the samples at phi_{p + n_phi/2} for
/// theta mapped through 2*pi - theta (i.e. source row 2*n_theta - 1 - i).
/// Returned as a SphereGrid with n_theta = n_phi/2, n_phi = 2*n_theta_src.
SphereGrid fold_transpose(const SphereGrid& g);
SphereGrid unfold_transpose(const SphereGrid& folded, std::size_t n_theta,
                            std::size_t n_phi);

/// Trigonometric resampling of `n_in` equispaced samples on a circle to
/// `n_out` samples; sample i sits at (i + shift) * 2*pi / n. Exact for
/// band-limited input when upsampling; exact mode truncation when
/// downsampling, so down(up(x)) == x for matching sizes.
void resample_circle(std::span<const cplx> in, std::size_t n_in,
                     double shift_in, std::span<cplx> out, std::size_t n_out,
                     double shift_out);

/// Upsamples a sphere grid to the target dimensions (both >= source, even
/// n_phi): per-column phi resampling, then fold and theta resampling along
/// great circles with the half-cell phase handling, then unfold.
SphereGrid fft_interpolate(const SphereGrid& src, std::size_t n_theta_dst,
                           std::size_t n_phi_dst);

/// Mode-truncating reverse of fft_interpolate (theta first, then phi);
/// fft_anterpolate(fft_interpolate(x)) reproduces x exactly.
SphereGrid fft_anterpolate(const SphereGrid& src, std::size_t n_theta_dst,
                           std::size_t n_phi_dst);

/// Adjoint of fft_interpolate under the plain Euclidean inner product,
/// which is the value-preserving anterpolation scaled by
/// (n_theta_src * n_phi_src) / (n_theta_dst * n_phi_dst).
SphereGrid fft_anterpolate_adjoint(const SphereGrid& src,
                                   std::size_t n_theta_dst,
                                   std::size_t n_phi_dst);

/// Flop estimate for one length-n complex FFT: 5 * n * log2(n).
double fft_flops(std::size_t n);
/// Total FFT flops of one serial interpolation src -> dst (or the reverse
/// anterpolation, which runs the same transforms).
double interp_flops(std::size_t nt_src, std::size_t np_src, std::size_t nt_dst,
                    std::size_t np_dst);

// JSON (de)serialization of grids for test fixtures.
std::string grid_to_json(const SphereGrid& g);
SphereGrid grid_from_json(const std::string& text);

}  // namespace hfmm

#endif
