#include "hfmm/operators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hfmm {

namespace {

inline cplx unit_phase(double ang) { return {std::cos(ang), std::sin(ang)}; }

}  // namespace

SphereGrid c2m(std::span<const Particle> sources, const Vec3& center,
               const LevelSampling& sampling, const Wavenumber& k) {
  SphereGrid g(sampling.n_theta, sampling.n_phi);
  for (std::size_t s = 0; s < g.size(); ++s) {
    Vec3 khat = sampling.direction(s);
    cplx acc(0.0, 0.0);
    for (const Particle& p : sources)
      acc += p.intensity * unit_phase(k.k * khat.dot(p.position - center));
    g.samples[s] = acc;
  }
  return g;
}

void shift_expansion(std::span<cplx> samples, const LevelSampling& sampling,
                     std::size_t first_sample, const Vec3& displacement,
                     const Wavenumber& k) {
  if (first_sample + samples.size() > sampling.num_samples())
    throw std::out_of_range("shift_expansion: range beyond grid");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Vec3 khat = sampling.direction(first_sample + i);
    samples[i] *= unit_phase(k.k * khat.dot(displacement));
  }
}

std::vector<cplx> translation_operator(const LevelSampling& sampling,
                                       const Vec3& D, double box_side,
                                       const Wavenumber& k, std::size_t begin,
                                       std::size_t end) {
  if (k.k == 0.0)
    throw std::invalid_argument("translation_operator: k == 0 unsupported");
  double dist = D.norm();
  if (dist < 2.0 * box_side * (1.0 - 1e-12))
    throw std::invalid_argument(
        "translation_operator: boxes not well separated (|D| < 2 * side)");
  if (begin > end || end > sampling.num_samples())
    throw std::out_of_range("translation_operator: bad sample range");

  int L = sampling.trunc_order;
  double x = k.k * dist;
  // coef_l = (-j)^l (2l+1) h_l^(2)(x); h^(2) = j_l - j y_l.
  std::vector<cplx> coef(L + 1);
  cplx mj_pow(1.0, 0.0);
  const cplx mj(0.0, -1.0);
  for (int l = 0; l <= L; ++l) {
    cplx h2(std::sph_bessel(unsigned(l), x), -std::sph_neumann(unsigned(l), x));
    coef[l] = mj_pow * double(2 * l + 1) * h2;
    mj_pow *= mj;
  }

  Vec3 dhat = D * (1.0 / dist);
  std::vector<cplx> out(end - begin);
  for (std::size_t s = begin; s < end; ++s) {
    double u = sampling.direction(s).dot(dhat);
    // Legendre recurrence (l+1) P_{l+1} = (2l+1) u P_l - l P_{l-1}.
    double pm1 = 0.0, p0 = 1.0;
    cplx acc = coef[0];
    for (int l = 1; l <= L; ++l) {
      double p1 = (double(2 * l - 1) * u * p0 - double(l - 1) * pm1) / double(l);
      pm1 = p0;
      p0 = p1;
      acc += coef[l] * p0;
    }
    out[s - begin] = acc;
  }
  return out;
}

void m2l_apply(std::span<const cplx> mp, std::span<const cplx> op,
               std::span<cplx> acc) {
  if (mp.size() != op.size() || mp.size() != acc.size())
    throw std::invalid_argument("m2l_apply: span size mismatch");
  for (std::size_t i = 0; i < mp.size(); ++i) acc[i] += mp[i] * op[i];
}

std::vector<cplx> l2o(const SphereGrid& local, const Vec3& center,
                      std::span<const Vec3> observers,
                      const QuadratureRule& quad, const Wavenumber& k) {
  if (quad.n_theta != local.n_theta || quad.n_phi != local.n_phi)
    throw std::invalid_argument("l2o: quadrature/grid dimension mismatch");
  LevelSampling sampling;
  sampling.n_theta = local.n_theta;
  sampling.n_phi = local.n_phi;
  const cplx norm(0.0, -k.k / (16.0 * M_PI * M_PI));
  std::vector<cplx> out(observers.size());
  for (std::size_t m = 0; m < observers.size(); ++m) {
    Vec3 d = observers[m] - center;
    cplx acc(0.0, 0.0);
    for (std::size_t s = 0; s < local.size(); ++s)
      acc += quad.weight(s) * local.samples[s] *
             unit_phase(-k.k * sampling.direction(s).dot(d));
    out[m] = norm * acc;
  }
  return out;
}

void near_field_accumulate(std::span<const Particle> sources,
                           std::span<const Vec3> observers,
                           const Wavenumber& k, std::span<cplx> acc) {
  if (acc.size() != observers.size())
    throw std::invalid_argument("near_field_accumulate: acc size mismatch");
  for (std::size_t m = 0; m < observers.size(); ++m) {
    for (const Particle& p : sources) {
      Vec3 d = observers[m] - p.position;
      if (d.x == 0.0 && d.y == 0.0 && d.z == 0.0) continue;  // self pair
      acc[m] += green(k, d) * p.intensity;
    }
  }
}

void OperatorCache::register_need(const Key& key, std::size_t begin,
                                  std::size_t end) {
  if (built_)
    throw std::logic_error("OperatorCache: register_need after build");
  if (begin >= end)
    throw std::invalid_argument("OperatorCache: empty range");
  auto& ranges = entries_[key];
  ranges.push_back({begin, end, {}});
}

void OperatorCache::build(const std::vector<LevelSampling>& samplings,
                          const std::vector<double>& side_of_level,
                          const Wavenumber& k, std::uint64_t capacity_bytes) {
  if (built_) throw std::logic_error("OperatorCache: build called twice");
  built_ = true;
  for (auto& [key, ranges] : entries_) {
    // Merge the registered ranges into a sorted disjoint union.
    std::sort(ranges.begin(), ranges.end(),
              [](const Stored& a, const Stored& b) { return a.begin < b.begin; });
    std::vector<Stored> merged;
    for (auto& r : ranges) {
      if (!merged.empty() && r.begin <= merged.back().end)
        merged.back().end = std::max(merged.back().end, r.end);
      else
        merged.push_back({r.begin, r.end, {}});
    }
    if (std::size_t(key.level) >= samplings.size() ||
        std::size_t(key.level) >= side_of_level.size())
      throw std::out_of_range("OperatorCache: no sampling for level");
    const LevelSampling& s = samplings[key.level];
    double side = side_of_level[key.level];
    Vec3 D{double(key.ox) * side, double(key.oy) * side, double(key.oz) * side};
    for (auto& r : merged) {
      r.values = translation_operator(s, D, side, k, r.begin, r.end);
      bytes_ += std::uint64_t(r.values.size() * sizeof(cplx));
      if (capacity_bytes != 0 && bytes_ > capacity_bytes)
        throw std::length_error(
            "OperatorCache: registered operators exceed the capacity budget");
    }
    ranges = std::move(merged);
  }
}

std::span<const cplx> OperatorCache::get(const Key& key, std::size_t begin,
                                         std::size_t end) const {
  if (!built_) throw std::logic_error("OperatorCache: get before build");
  auto it = entries_.find(key);
  if (it != entries_.end())
    for (const auto& r : it->second)
      if (begin >= r.begin && end <= r.end)
        return {r.values.data() + (begin - r.begin), end - begin};
  throw std::out_of_range("OperatorCache: range was never registered");
}

std::vector<std::pair<std::size_t, std::size_t>> OperatorCache::ranges(
    const Key& key) const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto it = entries_.find(key);
  if (it != entries_.end())
    for (const auto& r : it->second) out.emplace_back(r.begin, r.end);
  return out;
}

}  // namespace hfmm
