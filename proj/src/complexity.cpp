#include "hfmm/complexity.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace hfmm {

int ComplexityParams::I_max() const {
  int six = 1, three = 1;
  for (int i = 0; i < d; ++i) {
    six *= 6;
    three *= 3;
  }
  return six - three;
}

void ComplexityParams::validate() const {
  if (!(N_s > 0) || P < 1 || (d != 2 && d != 3) || !(C_k > 0) ||
      !(M_S_samples > 0))
    throw std::invalid_argument("ComplexityParams: invalid fields");
}

int model_level(int tree_level, int N_L) { return N_L - tree_level + 1; }

double groups_per_level(double N_s, int d, int l) {
  if (l < 1) throw std::invalid_argument("groups_per_level: l >= 1");
  return N_s / std::pow(double(1 << d), double(l - 1));
}

double samples_per_level(double C_k, int l) {
  if (l < 1) throw std::invalid_argument("samples_per_level: l >= 1");
  return std::ldexp(C_k, l - 1);
}

PluralFraction plural_fraction(const ComplexityParams& p, int l, int N_L) {
  p.validate();
  PluralFraction out;
  out.P_L = N_L + 1;
  for (int j = 1; j <= N_L; ++j)
    if (groups_per_level(p.N_s, p.d, j) < double(p.P)) {
      out.P_L = j;
      break;
    }
  out.P_N = double(p.P) / groups_per_level(p.N_s, p.d, l);
  return out;
}

CostPrediction predict_costs(const ComplexityParams& p, int N_L) {
  p.validate();
  if (N_L < 1) throw std::invalid_argument("predict_costs: N_L >= 1");
  CostPrediction out;
  out.P_L = plural_fraction(p, 1, N_L).P_L;
  out.S_N.assign(std::size_t(std::max(out.P_L, 1)), 0.0);

  auto G = [&](int l) { return groups_per_level(p.N_s, p.d, l); };
  auto K = [&](int l) { return samples_per_level(p.C_k, l); };
  auto P_N = [&](int l) { return double(p.P) / G(l); };
  auto I = [&](int l) {
    return std::min(double(p.I_max()), std::max(G(l) - 1.0, 0.0));
  };

  // --- M2M (and identically L2L) ---
  for (int l = 1; l <= N_L; ++l) {
    double lg = K(l) > 1.0 ? std::log2(K(l)) : 0.0;
    out.m2m.C += G(l) * K(l) * K(l) * lg * lg;
    out.m2m.B += G(l) * K(l) * K(l);
  }
  for (int l = out.P_L; l <= N_L; ++l) {
    out.m2m.M += G(l) * P_N(std::min(l + 1, N_L));  // aggregation messages
    out.m2m.M += G(l) * P_N(l) * P_N(l);            // fold/transpose FFTs
  }
  out.l2l = out.m2m;

  // --- M2L ---
  for (int l = 1; l <= N_L; ++l) out.m2l.C += K(l) * K(l) * I(l) * G(l);
  for (int l = out.P_L; l <= N_L; ++l)
    out.m2l_messages_upper +=
        double(p.P) * I(l) * K(l) * K(l) / (P_N(l) * p.M_S_samples);
  double below = 0.0;
  for (int l = 1; l <= std::min(out.P_L - 1, N_L); ++l)
    below += K(l) * K(l) * G(l) / double(p.P);
  if (below > 0.0)
    out.m2l_messages_lower =
        double(p.P) * p.I_max() * std::ceil(below / p.M_S_samples);
  out.m2l.M = out.m2l_messages_upper + out.m2l_messages_lower;
  for (int l = out.P_L; l <= N_L; ++l)
    out.m2l.B += K(l) * K(l) * G(l) * I(l);
  for (int l = 1; l <= std::min(out.P_L - 1, N_L); ++l) {
    double sn = std::pow(G(l) / double(p.P), double(p.d - 1) / double(p.d));
    if (std::size_t(l) < out.S_N.size()) out.S_N[std::size_t(l)] = sn;
    out.m2l.B += double(p.P) * K(l) * K(l) * sn;
  }

  double n = p.N_s, lg = std::log2(std::max(n, 2.0));
  auto put = [&](const char* name, double val, const char* form) {
    out.asymptotes.emplace_back(name, val);
    out.asymptote_forms.emplace_back(name, form);
  };
  if (p.d == 2) {
    put("m2m_C", n * lg * lg, "N_s log^2 N_s");
    put("m2l_C", n * lg, "N_s log N_s");
    put("m2m_B", n * lg, "N_s log N_s");
    put("m2l_B_below_PL", n, "N_s");
  } else {
    put("m2m_C", n, "N_s");
    put("m2l_C", n, "N_s");
    put("m2m_B", n, "N_s");
    put("m2l_B_below_PL", std::pow(n, 2.0 / 3.0), "N_s^(2/3)");
  }
  put("m2m_M", double(p.P) * double(p.P), "P^2");
  return out;
}

std::string CostPrediction::to_json() const {
  nlohmann::json j;
  auto phase = [](const PhaseCosts& c) {
    return nlohmann::json{{"C", c.C}, {"M", c.M}, {"B", c.B}};
  };
  j["m2m"] = phase(m2m);
  j["m2l"] = phase(m2l);
  j["m2l"]["M_components"] = {{"levels_ge_PL", m2l_messages_upper},
                              {"levels_lt_PL", m2l_messages_lower}};
  j["l2l"] = phase(l2l);
  j["P_L"] = P_L;
  j["S_N"] = S_N;
  for (std::size_t i = 0; i < asymptotes.size(); ++i)
    j["asymptotes"][asymptotes[i].first] = {
        {"value", asymptotes[i].second}, {"form", asymptote_forms[i].second}};
  return j.dump(2);
}

FitResult fit_and_compare(const std::vector<std::pair<double, double>>& series,
                          const std::function<double(double)>& model) {
  if (series.size() < 3)
    throw std::invalid_argument("fit_and_compare: need at least 3 points");
  double sxy = 0, sxx = 0, sy = 0, syy_about_mean = 0;
  std::vector<double> mx(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    mx[i] = model(series[i].first);
    sxy += mx[i] * series[i].second;
    sxx += mx[i] * mx[i];
    sy += series[i].second;
  }
  if (sxx == 0.0)
    throw std::invalid_argument("fit_and_compare: model is zero on the series");
  FitResult fit;
  fit.scale = sxy / sxx;
  double mean = sy / double(series.size());
  double ss_res = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    double r = series[i].second - fit.scale * mx[i];
    ss_res += r * r;
    double c = series[i].second - mean;
    syy_about_mean += c * c;
  }
  if (syy_about_mean == 0.0)
    throw std::invalid_argument("fit_and_compare: degenerate measured series");
  fit.r_squared = 1.0 - ss_res / syy_about_mean;
  return fit;
}

AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw std::invalid_argument("fit_affine: need matched series, >= 3 points");
  double n = double(x.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fit_affine: degenerate x");
  AffineFit f;
  f.b = (n * sxy - sx * sy) / denom;
  f.a = (sy - f.b * sx) / n;
  double mean = sy / n, ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - (f.a + f.b * x[i]);
    ss_res += r * r;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return f;
}

}  // namespace hfmm
