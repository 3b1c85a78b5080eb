#pragma once

#include "mamp/common.hpp"

#include <vector>

namespace mamp {

enum class DampingMode { none, analytical, backoff, automatic };
// Which candidate the analytical rule selects when its covariance is singular.
enum class FallbackPolicy { previous, newest };

inline std::string to_string(DampingMode m) {
  switch (m) {
    case DampingMode::none: return "none";
    case DampingMode::analytical: return "analytical";
    case DampingMode::backoff: return "backoff";
    case DampingMode::automatic: return "auto";
  }
  return "?";
}

inline DampingMode damping_from_string(const std::string& s) {
  if (s == "none") return DampingMode::none;
  if (s == "analytical") return DampingMode::analytical;
  if (s == "backoff") return DampingMode::backoff;
  if (s == "auto") return DampingMode::automatic;
  throw invalid_argument("unknown damping mode '" + s + "'");
}

struct DampingChoice {
  std::vector<double> zeta;  // weights over the candidates, newest (the NLD output) last
  bool fallback = false;
};

// zeta = V^{-1} 1 / (1^T V^{-1} 1) when V is well conditioned; otherwise a
// unit vector on the previous estimate (or the newest, per policy).
inline DampingChoice damp_analytical(const RMatrix& V, FallbackPolicy policy = FallbackPolicy::previous,
                                     double cond_threshold = 1e10) {
  const Index k = V.rows();
  require(k >= 1 && V.cols() == k, "damp_analytical: covariance must be square and nonempty");
  DampingChoice out;
  out.zeta.assign(static_cast<size_t>(k), 0.0);
  if (k == 1) {
    out.zeta[0] = 1;
    return out;
  }
  const RMatrix S = 0.5 * (V + V.transpose());
  Eigen::SelfAdjointEigenSolver<RMatrix> es(S);
  const double lmin = es.eigenvalues()(0), lmax = es.eigenvalues()(k - 1);
  bool ok = es.info() == Eigen::Success && lmin > 0 && lmax / lmin <= cond_threshold;
  if (ok) {
    const RVector a = S.ldlt().solve(RVector::Ones(k));
    const double s = a.sum();
    ok = std::isfinite(s) && std::abs(s) > 0;
    if (ok)
      for (Index i = 0; i < k; ++i) out.zeta[i] = a(i) / s;
  }
  if (!ok) {
    std::fill(out.zeta.begin(), out.zeta.end(), 0.0);
    out.zeta[policy == FallbackPolicy::previous ? k - 2 : k - 1] = 1;
    out.fallback = true;
  }
  return out;
}

// Keep the previous estimate if the new one is worse; ties go to the new one.
inline DampingChoice damp_backoff(double v_new, double v_prev) {
  require(v_new >= 0 && v_prev >= 0, "damp_backoff: variances must be >= 0");
  DampingChoice out;
  out.zeta = v_new > v_prev ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0};
  return out;
}

// Damped-estimate covariance bookkeeping shared by the receivers and the SE:
// V holds the error covariance of all damped estimates so far; `cross` is the
// covariance of the new NLD output with each of them and `self` its variance.
// Returns the weights over the candidate set (last Ld-1 estimates + new).
struct DampingStep {
  DampingChoice choice;
  std::vector<int> candidates;  // indices into the damped history; -1 is the new output
  RVector new_row;              // covariance of the damped estimate with the history
  double new_var = 0;
};

// copy_of (optional) maps each history entry to the entry it is an exact copy
// of; copies are one candidate, not two, so they are not offered twice.
inline DampingStep damping_step(const RMatrix& V, const RVector& cross, double self, DampingMode mode, int Ld,
                                FallbackPolicy policy, double cond_threshold = 1e10,
                                const std::vector<int>& copy_of = {}) {
  const int t = static_cast<int>(V.rows());
  require(t >= 1 && cross.size() == t, "damping_step: history/cross size mismatch");
  DampingStep st;
  auto cov = [&](int a, int b) -> double {
    if (a < 0 && b < 0) return self;
    if (a < 0) return cross(b);
    if (b < 0) return cross(a);
    return V(a, b);
  };
  switch (mode) {
    case DampingMode::none:
      st.candidates = {-1};
      st.choice.zeta = {1.0};
      break;
    case DampingMode::backoff:
      st.candidates = {t - 1, -1};
      st.choice = damp_backoff(self, V(t - 1, t - 1));
      break;
    case DampingMode::analytical: {
      require(Ld >= 2, "analytical damping needs Ld >= 2");
      for (int i = std::max(0, t - (Ld - 1)); i < t; ++i) {
        if (!copy_of.empty() && i + 1 < t && copy_of[i] == copy_of[i + 1]) continue;
        st.candidates.push_back(i);
      }
      st.candidates.push_back(-1);
      const Index k = static_cast<Index>(st.candidates.size());
      RMatrix C(k, k);
      for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b) C(a, b) = cov(st.candidates[a], st.candidates[b]);
      st.choice = damp_analytical(C, policy, cond_threshold);
      break;
    }
    case DampingMode::automatic: throw invalid_argument("damping_step: resolve 'auto' before use");
  }
  st.new_row = RVector::Zero(t);
  for (size_t c = 0; c < st.candidates.size(); ++c)
    for (int j = 0; j < t; ++j) st.new_row(j) += st.choice.zeta[c] * cov(st.candidates[c], j);
  for (size_t a = 0; a < st.candidates.size(); ++a)
    for (size_t b = 0; b < st.candidates.size(); ++b)
      st.new_var += st.choice.zeta[a] * st.choice.zeta[b] * cov(st.candidates[a], st.candidates[b]);
  return st;
}

inline void append_covariance(RMatrix& V, const RVector& row, double diag) {
  const Index t = V.rows();
  V.conservativeResize(t + 1, t + 1);
  V.row(t).head(t) = row.transpose();
  V.col(t).head(t) = row;
  V(t, t) = diag;
}

}  // namespace mamp
