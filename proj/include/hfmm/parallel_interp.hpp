#ifndef HFMM_PARALLEL_INTERP_HPP
#define HFMM_PARALLEL_INTERP_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "hfmm/runtime.hpp"
#include "hfmm/sphere_grid.hpp"

namespace hfmm {

/// Distribution of a sphere grid over participants in whole theta-columns:
/// participant i owns columns [splits[i], splits[i+1]) of a grid with the
/// given dimensions, stored contiguously in theta-major order.
struct ColumnLayout {
  std::size_t n_theta = 0, n_phi = 0;
  std::vector<std::size_t> splits;  // monotone, size participants+1

  std::size_t num_parts() const { return splits.size() - 1; }
  std::size_t cols(std::size_t i) const { return splits[i + 1] - splits[i]; }
  std::size_t samples(std::size_t i) const { return cols(i) * n_phi; }
};

/// Even split of `total` items over `parts`, remainder to the earlier parts.
std::vector<std::size_t> even_splits(std::size_t total, std::size_t parts);

/// Distributed fft_interpolate. Every participant listed in `ranks` calls
/// this with identical layouts and its own column block `my_cols`; the return
/// value is the caller's column block of the interpolated grid. Data moves in
/// two exchange rounds (at most one message per ordered pair per round):
/// locally phi-resampled columns are folded onto theta-great-circles spread
/// evenly over the participants, theta-resampled there, then unfolded back to
/// the destination layout. Tags base_tag and base_tag+1 are used; the result
/// matches the serial fft_interpolate exactly up to roundoff.
std::vector<cplx> parallel_interpolate(const ColumnLayout& src,
                                       std::span<const cplx> my_cols,
                                       const ColumnLayout& dst,
                                       const std::vector<int>& ranks,
                                       std::size_t my_index, Endpoint& ep,
                                       int base_tag);

/// Distributed fft_anterpolate (mode-truncating, value-preserving), the exact
/// communication mirror of parallel_interpolate: for matching layouts each
/// message of the interpolation corresponds to one reversed message of equal
/// size here, so both directions move identical message and byte totals.
std::vector<cplx> parallel_anterpolate(const ColumnLayout& src,
                                       std::span<const cplx> my_cols,
                                       const ColumnLayout& dst,
                                       const std::vector<int>& ranks,
                                       std::size_t my_index, Endpoint& ep,
                                       int base_tag);

}  // namespace hfmm

#endif
