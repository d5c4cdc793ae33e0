#include "hfmm/geometry.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace hfmm {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

bool Vec3::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

Wavenumber Wavenumber::from_lambda(double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("wavelength must be positive");
  return Wavenumber{2.0 * M_PI / lambda, lambda};
}

Wavenumber Wavenumber::from_k(double k) {
  if (!(k >= 0.0)) throw std::invalid_argument("wavenumber must be nonnegative");
  if (k == 0.0) return Wavenumber{0.0, 0.0};
  return Wavenumber{k, 2.0 * M_PI / k};
}

bool Wavenumber::valid() const {
  if (k == 0.0) return true;  // Laplace limit, lambda treated as unset
  return std::abs(k * lambda - 2.0 * M_PI) <= 1e-12 * 2.0 * M_PI;
}

namespace {

std::size_t points_per_axis(const GeometrySpec& spec) {
  double n = spec.extent / spec.spacing;
  auto rounded = std::llround(n);
  if (rounded < 1 || std::abs(n - double(rounded)) > 1e-9 * n)
    throw std::invalid_argument("extent/spacing must be an integer point count per axis");
  return std::size_t(rounded);
}

std::size_t sphere_point_count(const GeometrySpec& spec) {
  // Surface area pi*D^2, one point per spacing^2 patch.
  double area = M_PI * spec.extent * spec.extent;
  auto n = std::llround(area / (spec.spacing * spec.spacing));
  return std::size_t(std::max<long long>(n, 1));
}

}  // namespace

void GeometrySpec::validate() const {
  if (!(extent > 0.0)) throw std::invalid_argument("extent must be positive");
  if (!(spacing > 0.0)) throw std::invalid_argument("spacing must be positive");
  if (kind != GeometryKind::SphereSurface) points_per_axis(*this);
}

std::size_t GeometrySpec::point_count() const {
  validate();
  switch (kind) {
    case GeometryKind::PlanarGrid: {
      std::size_t n = points_per_axis(*this);
      return n * n;
    }
    case GeometryKind::CubicVolume: {
      std::size_t n = points_per_axis(*this);
      return n * n * n;
    }
    case GeometryKind::SphereSurface:
      return sphere_point_count(*this);
  }
  throw std::logic_error("unreachable");
}

std::vector<Particle> generate_geometry(const GeometrySpec& spec, double lambda,
                                        IntensityRule rule, std::uint64_t seed) {
  spec.validate();
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");

  std::vector<Particle> out;
  const double s = spec.spacing * lambda;

  switch (spec.kind) {
    case GeometryKind::PlanarGrid: {
      std::size_t n = points_per_axis(spec);
      out.reserve(n * n);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i)
          out.push_back({{(double(i) + 0.5) * s, (double(j) + 0.5) * s, 0.0}, {1.0, 0.0}});
      break;
    }
    case GeometryKind::CubicVolume: {
      std::size_t n = points_per_axis(spec);
      out.reserve(n * n * n);
      for (std::size_t kk = 0; kk < n; ++kk)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < n; ++i)
            out.push_back({{(double(i) + 0.5) * s, (double(j) + 0.5) * s,
                            (double(kk) + 0.5) * s},
                           {1.0, 0.0}});
      break;
    }
    case GeometryKind::SphereSurface: {
      // Fibonacci lattice on the sphere surface at the target density.
      std::size_t n = sphere_point_count(spec);
      out.reserve(n);
      const double r = 0.5 * spec.extent * lambda;
      const double golden = M_PI * (3.0 - std::sqrt(5.0));
      for (std::size_t i = 0; i < n; ++i) {
        double zf = 1.0 - (2.0 * double(i) + 1.0) / double(n);
        double rho = std::sqrt(std::max(0.0, 1.0 - zf * zf));
        double phi = golden * double(i);
        out.push_back({{r + r * rho * std::cos(phi), r + r * rho * std::sin(phi),
                        r + r * zf},
                       {1.0, 0.0}});
      }
      break;
    }
  }

  if (rule == IntensityRule::RandomSeeded) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& p : out) p.intensity = cplx(u(rng), u(rng));
  }
  return out;
}

std::vector<Particle> read_particles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open particle file: " + path);
  std::vector<Particle> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Particle p;
    double re, im;
    if (!(ss >> p.position.x >> p.position.y >> p.position.z >> re >> im))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'x y z re im'");
    p.intensity = cplx(re, im);
    out.push_back(p);
  }
  return out;
}

void write_particles(const std::string& path, const std::vector<Particle>& particles,
                     const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open particle file for write: " + path);
  out.precision(17);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  for (const auto& p : particles)
    out << p.position.x << ' ' << p.position.y << ' ' << p.position.z << ' '
        << p.intensity.real() << ' ' << p.intensity.imag() << '\n';
}

}  // namespace hfmm
