#ifndef HFMM_COMPLEXITY_HPP
#define HFMM_COMPLEXITY_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace hfmm {

/// Inputs of the closed-form cost model. Levels in this module are counted
/// leaf-first (leaf = 1, root = N_L), opposite the tree's root-first
/// numbering; model_level converts between the two.
struct ComplexityParams {
  double N_s = 0;       // number of source points (~ leaf boxes)
  int P = 1;            // number of processes
  int d = 3;            // 2 = surface, 3 = volume
  double C_k = 1.0;     // per-direction samples of a leaf node
  double M_S_samples = 1e18;  // message cap expressed in complex samples

  int I_max() const;  // 6^d - 3^d
  void validate() const;
};

/// Conversion between root-first tree levels (root = 1 .. leaves = N_L) and
/// the model's leaf-first numbering (leaf = 1 .. root = N_L).
int model_level(int tree_level, int N_L);

/// G(l) = N_s / (2^d)^(l-1)
double groups_per_level(double N_s, int d, int l);
/// K(l) = 2^(l-1) C_k
double samples_per_level(double C_k, int l);
/// P_L = smallest l with G(l) < P (N_L + 1 when no such level exists in the
/// tree) and P_N(l) = P / G(l).
struct PluralFraction {
  int P_L = 0;
  double P_N = 0.0;
};
PluralFraction plural_fraction(const ComplexityParams& p, int l, int N_L);

struct PhaseCosts {
  double C = 0;  // computation (flops, up to a constant)
  double M = 0;  // message count
  double B = 0;  // communicated samples
};

struct CostPrediction {
  PhaseCosts m2m, m2l, l2l;  // l2l.M/B/C equal m2m's by construction
  int P_L = 0;
  std::vector<double> S_N;   // per model level 1..P_L-1 (index 0 unused)
  double m2l_messages_upper = 0;  // levels >= P_L component
  double m2l_messages_lower = 0;  // levels <  P_L component
  // Simplified asymptotic forms evaluated at the params, keyed by name
  // (e.g. "m2m_C"), with the textual form in asymptote_form.
  std::vector<std::pair<std::string, double>> asymptotes;
  std::vector<std::pair<std::string, std::string>> asymptote_forms;

  std::string to_json() const;
};

/// Evaluates every finite sum of the model for a tree of N_L levels.
CostPrediction predict_costs(const ComplexityParams& p, int N_L);

struct FitResult {
  double scale = 0.0;
  double r_squared = 0.0;
};

/// Least-squares scale of model(x) to the measured series: scale minimizing
/// sum (y_i - scale*model(x_i))^2, with R^2 of that fit. Throws on fewer
/// than 3 points or an all-zero model/measured series.
FitResult fit_and_compare(const std::vector<std::pair<double, double>>& series,
                          const std::function<double(double)>& model);

/// Ordinary least squares y = a + b*x with R^2.
struct AffineFit {
  double a = 0.0, b = 0.0, r_squared = 0.0;
};
AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hfmm

#endif
