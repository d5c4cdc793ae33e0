#ifndef HFMM_GEOMETRY_HPP
#define HFMM_GEOMETRY_HPP

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace hfmm {

using cplx = std::complex<double>;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
  bool finite() const;
};

/// Point source with complex intensity.
struct Particle {
  Vec3 position;      // meters
  cplx intensity{1.0, 0.0};
};

/// Wavenumber k = 2*pi/lambda. k == 0 is the Laplace limit (lambda unset).
struct Wavenumber {
  double k = 0.0;       // rad/m
  double lambda = 0.0;  // m; meaningful only when k > 0

  static Wavenumber from_lambda(double lambda);
  static Wavenumber from_k(double k);
  bool valid() const;
};

enum class GeometryKind { PlanarGrid, SphereSurface, CubicVolume };

enum class IntensityRule { Unit, RandomSeeded };

/// Geometry description in wavelength units.
struct GeometrySpec {
  GeometryKind kind = GeometryKind::PlanarGrid;
  double extent = 1.0;   // side length or diameter, in wavelengths
  double spacing = 1.0;  // in wavelengths

  void validate() const;  // throws std::invalid_argument on bad fields
  // Deterministic particle count implied by the spec.
  std::size_t point_count() const;
};

std::vector<Particle> generate_geometry(const GeometrySpec& spec, double lambda,
                                        IntensityRule rule, std::uint64_t seed = 0);

// Particle text format: one particle per line, "x y z re im", '#' comments.
std::vector<Particle> read_particles(const std::string& path);
void write_particles(const std::string& path, const std::vector<Particle>& particles,
                     const std::string& header_comment = "");

}  // namespace hfmm

#endif
