#include "hfmm/sphere_grid.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>
#include <json.hpp>

namespace hfmm {

int truncation_order(double box_diameter, const Wavenumber& k, double digits) {
  if (k.k == 0.0)
    throw std::invalid_argument(
        "truncation_order: Laplace limit (k == 0) has no finite static "
        "truncation; only k > 0 is supported");
  if (!(box_diameter > 0.0) || !(digits > 0.0))
    throw std::invalid_argument("truncation_order: need diameter, digits > 0");
  double kd = k.k * box_diameter;
  double L = std::ceil(kd + 1.8 * std::pow(digits, 2.0 / 3.0) * std::cbrt(kd));
  return std::max(4, int(L));
}

double LevelSampling::theta(std::size_t i) const {
  return (double(i) + 0.5) * M_PI / double(n_theta);
}

double LevelSampling::phi(std::size_t j) const {
  return double(j) * 2.0 * M_PI / double(n_phi);
}

Vec3 LevelSampling::direction(std::size_t s) const {
  double th = theta(s / n_phi), ph = phi(s % n_phi);
  double st = std::sin(th);
  return {st * std::cos(ph), st * std::sin(ph), std::cos(th)};
}

LevelSampling make_level_sampling(int level, double box_side,
                                  const Wavenumber& k, double digits) {
  LevelSampling s;
  s.level = level;
  s.trunc_order = truncation_order(box_side * std::sqrt(3.0), k, digits);
  // One extra harmonic of headroom in phi; theta is oversampled so the
  // equispaced shifted nodes still integrate degree 2L+1 exactly under the
  // Fejer weights. Both even.
  s.n_theta = std::size_t(2 * s.trunc_order + 2);
  s.n_phi = std::size_t(2 * s.trunc_order + 2);
  return s;
}

QuadratureRule make_quadrature(std::size_t n_theta, std::size_t n_phi) {
  if (n_theta == 0 || n_phi == 0)
    throw std::invalid_argument("make_quadrature: empty grid");
  QuadratureRule q;
  q.n_theta = n_theta;
  q.n_phi = n_phi;
  q.phi_weight = 2.0 * M_PI / double(n_phi);
  q.theta_weight.resize(n_theta);
  // Fejer first kind on the Chebyshev nodes cos(theta_i),
  // theta_i = (i + 0.5) * pi / n.
  for (std::size_t i = 0; i < n_theta; ++i) {
    double th = (double(i) + 0.5) * M_PI / double(n_theta);
    double s = 0.0;
    for (std::size_t m = 1; m <= n_theta / 2; ++m)
      s += std::cos(2.0 * double(m) * th) / double(4 * m * m - 1);
    q.theta_weight[i] = (2.0 / double(n_theta)) * (1.0 - 2.0 * s);
  }
  return q;
}

SphereGrid fold_transpose(const SphereGrid& g) {
  if (g.n_phi % 2 != 0)
    throw std::invalid_argument("fold_transpose: n_phi must be even");
  std::size_t half = g.n_phi / 2, len = 2 * g.n_theta;
  SphereGrid f(half, len);
  for (std::size_t p = 0; p < half; ++p)
    for (std::size_t i = 0; i < len; ++i)
      f.at(p, i) = (i < g.n_theta)
                       ? g.at(i, p)
                       : g.at(len - 1 - i, p + half);
  return f;
}

SphereGrid unfold_transpose(const SphereGrid& folded, std::size_t n_theta,
                            std::size_t n_phi) {
  if (folded.n_theta != n_phi / 2 || folded.n_phi != 2 * n_theta ||
      n_phi % 2 != 0)
    throw std::invalid_argument("unfold_transpose: dimension mismatch");
  SphereGrid g(n_theta, n_phi);
  std::size_t half = n_phi / 2, len = 2 * n_theta;
  for (std::size_t p = 0; p < half; ++p)
    for (std::size_t i = 0; i < len; ++i) {
      if (i < n_theta)
        g.at(i, p) = folded.at(p, i);
      else
        g.at(len - 1 - i, p + half) = folded.at(p, i);
    }
  return g;
}

namespace {

fftw_plan cached_plan(std::size_t n, int sign) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, int>, fftw_plan> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(n, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<cplx> dummy(n);
  fftw_plan p = fftw_plan_dft_1d(
      int(n), reinterpret_cast<fftw_complex*>(dummy.data()),
      reinterpret_cast<fftw_complex*>(dummy.data()), sign,
      FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, p);
  return p;
}

void run_fft(std::span<cplx> data, int sign) {
  fftw_plan p = cached_plan(data.size(), sign);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(data.data()),
                   reinterpret_cast<fftw_complex*>(data.data()));
}

}  // namespace

void resample_circle(std::span<const cplx> in, std::size_t n_in,
                     double shift_in, std::span<cplx> out, std::size_t n_out,
                     double shift_out) {
  if (in.size() != n_in || out.size() != n_out || n_in == 0 || n_out == 0)
    throw std::invalid_argument("resample_circle: bad sizes");
  std::vector<cplx> spec(in.begin(), in.end());
  run_fft(spec, FFTW_FORWARD);

  // Transfer the min(n_in, n_out) lowest modes, m in [-K/2, K/2) for even K,
  // adjusting for the sample-position shifts on both circles. The asymmetric
  // mode window is a bijection between bins, which makes a downsample an
  // exact left inverse of the matching upsample.
  std::size_t K = std::min(n_in, n_out);
  std::vector<cplx> dst_spec(n_out, cplx(0.0, 0.0));
  for (std::size_t q = 0; q < K; ++q) {
    long m = (q <= (K - 1) / 2) ? long(q) : long(q) - long(K);
    std::size_t q_in = std::size_t((m + long(n_in)) % long(n_in));
    std::size_t q_out = std::size_t((m + long(n_out)) % long(n_out));
    double ang = double(m) * 2.0 * M_PI *
                 (shift_out / double(n_out) - shift_in / double(n_in));
    dst_spec[q_out] =
        spec[q_in] * cplx(std::cos(ang), std::sin(ang)) / double(n_in);
  }
  std::copy(dst_spec.begin(), dst_spec.end(), out.begin());
  run_fft(out, FFTW_BACKWARD);
}

namespace {

void check_even(const SphereGrid& g, const char* who) {
  if (g.n_phi % 2 != 0 || g.n_theta == 0)
    throw std::invalid_argument(std::string(who) +
                                ": grids need n_theta > 0 and even n_phi");
}

// Per-column phi resampling (rows are contiguous in theta-major storage).
SphereGrid resample_phi(const SphereGrid& g, std::size_t n_phi_dst) {
  SphereGrid out(g.n_theta, n_phi_dst);
  for (std::size_t i = 0; i < g.n_theta; ++i)
    resample_circle({&g.samples[i * g.n_phi], g.n_phi}, g.n_phi, 0.0,
                    {&out.samples[i * n_phi_dst], n_phi_dst}, n_phi_dst, 0.0);
  return out;
}

// Theta resampling along folded great circles; both grids are in folded form.
SphereGrid resample_folded_theta(const SphereGrid& f, std::size_t len_dst) {
  SphereGrid out(f.n_theta, len_dst);
  for (std::size_t p = 0; p < f.n_theta; ++p)
    resample_circle({&f.samples[p * f.n_phi], f.n_phi}, f.n_phi, 0.5,
                    {&out.samples[p * len_dst], len_dst}, len_dst, 0.5);
  return out;
}

}  // namespace

SphereGrid fft_interpolate(const SphereGrid& src, std::size_t n_theta_dst,
                           std::size_t n_phi_dst) {
  check_even(src, "fft_interpolate");
  if (n_theta_dst < src.n_theta || n_phi_dst < src.n_phi || n_phi_dst % 2 != 0)
    throw std::invalid_argument("fft_interpolate: dst must be >= src, even");
  SphereGrid widened = resample_phi(src, n_phi_dst);
  SphereGrid folded = fold_transpose(widened);
  SphereGrid tall = resample_folded_theta(folded, 2 * n_theta_dst);
  return unfold_transpose(tall, n_theta_dst, n_phi_dst);
}

SphereGrid fft_anterpolate(const SphereGrid& src, std::size_t n_theta_dst,
                           std::size_t n_phi_dst) {
  check_even(src, "fft_anterpolate");
  if (n_theta_dst > src.n_theta || n_phi_dst > src.n_phi ||
      n_phi_dst % 2 != 0 || n_theta_dst == 0)
    throw std::invalid_argument("fft_anterpolate: dst must be <= src, even");
  SphereGrid folded = fold_transpose(src);
  SphereGrid shortened = resample_folded_theta(folded, 2 * n_theta_dst);
  SphereGrid narrow = unfold_transpose(shortened, n_theta_dst, src.n_phi);
  return resample_phi(narrow, n_phi_dst);
}

SphereGrid fft_anterpolate_adjoint(const SphereGrid& src,
                                   std::size_t n_theta_dst,
                                   std::size_t n_phi_dst) {
  SphereGrid out = fft_anterpolate(src, n_theta_dst, n_phi_dst);
  double scale = double(src.n_theta * src.n_phi) /
                 double(n_theta_dst * n_phi_dst);
  for (auto& v : out.samples) v *= scale;
  return out;
}

double fft_flops(std::size_t n) {
  return 5.0 * double(n) * std::log2(double(n));
}

double interp_flops(std::size_t nt_src, std::size_t np_src, std::size_t nt_dst,
                    std::size_t np_dst) {
  double phi_pass = double(nt_src) * (fft_flops(np_src) + fft_flops(np_dst));
  double theta_pass =
      double(np_dst / 2) * (fft_flops(2 * nt_src) + fft_flops(2 * nt_dst));
  return phi_pass + theta_pass;
}

std::string grid_to_json(const SphereGrid& g) {
  nlohmann::json j;
  j["n_theta"] = g.n_theta;
  j["n_phi"] = g.n_phi;
  auto& s = j["samples"] = nlohmann::json::array();
  for (const auto& v : g.samples) s.push_back({v.real(), v.imag()});
  return j.dump();
}

SphereGrid grid_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SphereGrid g(j.at("n_theta").get<std::size_t>(),
               j.at("n_phi").get<std::size_t>());
  const auto& s = j.at("samples");
  if (s.size() != g.size())
    throw std::invalid_argument("grid_from_json: sample count mismatch");
  for (std::size_t i = 0; i < g.size(); ++i)
    g.samples[i] = cplx(s[i][0].get<double>(), s[i][1].get<double>());
  return g;
}

}  // namespace hfmm
