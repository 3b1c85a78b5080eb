#pragma once

#include "mamp/channel.hpp"

#include <vector>

namespace mamp {

// Shifted spectral moments of W = A^H A around lambda_dagger:
//   w_k = (1/N) sum_i l_i (ld - l_i)^k,   q_k = (1/N) sum_i l_i^2 (ld - l_i)^k.
// Since A^H B^k A = W (ld - W)^k for B = ld I - A A^H, every trace the
// recursion needs is one of these.
class MldSpectrum {
 public:
  MldSpectrum() = default;
  MldSpectrum(const SpectralProfile& p, double lambda_dagger)
      : lam_(p.eigenvalues()), N_(p.N()), ld_(lambda_dagger), pw_(RVector::Ones(lam_.size())) {
    require(lambda_dagger > 0, "lambda_dagger must be > 0");
  }

  // exact extreme eigenvalues of A A^H
  static double dagger_exact(const SpectralProfile& p) { return 0.5 * (p.lambda_min() + p.lambda_max()); }

  double lambda_dagger() const { return ld_; }
  Index N() const { return N_; }

  double w(int k) const {
    grow(k + 1);
    return w_[k];
  }
  double q(int k) const {
    grow(k + 1);
    return q_[k];
  }

 private:
  void grow(int n) const {
    while (static_cast<int>(w_.size()) < n) {
      double sw = 0, sq = 0;
      for (Index i = 0; i < lam_.size(); ++i) {
        sw += lam_(i) * pw_(i);
        sq += lam_(i) * lam_(i) * pw_(i);
        pw_(i) *= ld_ - lam_(i);
      }
      w_.push_back(sw / static_cast<double>(N_));
      q_.push_back(sq / static_cast<double>(N_));
    }
  }

  RVector lam_;
  Index N_ = 0;
  double ld_ = 1;
  mutable RVector pw_;
  mutable std::vector<double> w_, q_;
};

// Coefficients of gamma_t = sum_i c_i B^{t-i} z_i (z_i = y - A x_i), oldest first.
using LedgerRow = std::vector<double>;

inline LedgerRow extend_row(const LedgerRow& prev, double theta, double xi) {
  LedgerRow r(prev.size() + 1);
  for (size_t i = 0; i < prev.size(); ++i) r[i] = theta * prev[i];
  r.back() = xi;
  return r;
}

struct OrthoParams {
  double eps_gamma = 0;
  std::vector<double> p;  // p_{t,i}, oldest first
};

inline OrthoParams ortho_from_row(const LedgerRow& row, const MldSpectrum& sp) {
  OrthoParams o;
  const int t = static_cast<int>(row.size());
  o.p.resize(t);
  for (int i = 0; i < t; ++i) {
    const double c = row[i] * sp.w(t - 1 - i);
    o.eps_gamma += c;
    o.p[i] = -c;
  }
  return o;
}

// State-evolution entry <g_t | g_s> for ledger rows of lengths t and s, given
// the damped NLD error covariance V (at least max(t,s) square).
inline double se_gamma_entry(const LedgerRow& rt, const LedgerRow& rs, const RMatrix& V, double sigma2,
                             const MldSpectrum& sp) {
  const int t = static_cast<int>(rt.size()), s = static_cast<int>(rs.size());
  require(V.rows() >= std::max(t, s) && V.cols() >= std::max(t, s), "se_gamma_entry: covariance too small");
  double acc = 0, et = 0, es = 0;
  for (int i = 0; i < t; ++i) et += rt[i] * sp.w(t - 1 - i);
  for (int j = 0; j < s; ++j) es += rs[j] * sp.w(s - 1 - j);
  for (int i = 0; i < t; ++i) {
    const int a = t - 1 - i;
    for (int j = 0; j < s; ++j) {
      const int c = s - 1 - j;
      acc += rt[i] * rs[j] * (sigma2 * sp.w(a + c) + V(i, j) * (sp.q(a + c) - sp.w(a) * sp.w(c)));
    }
  }
  return acc / (et * es);
}

// theta_t = 1 / (ld + sigma2 / v): bounded by 1/ld so theta * rho(B) <= 1.
inline double choose_theta(double lambda_dagger, double v, double sigma2) {
  require(v > 0, "choose_theta: variance must be > 0");
  require(sigma2 >= 0, "choose_theta: sigma2 must be >= 0");
  return 1.0 / (lambda_dagger + sigma2 / v);
}

// Golden-section search of log(xi) minimizing a predicted variance. The
// bracket is centred on xi_ref; xi = 1 and xi_ref are always evaluated and
// the best seen is returned; a flat objective returns 1.
template <class Obj>
double choose_xi(Obj&& objective, double xi_ref, int max_evals = 20) {
  if (!(xi_ref > 0) || !std::isfinite(xi_ref)) xi_ref = 1.0;
  double best_x = 1.0, best_f = objective(1.0);
  const double f1 = best_f;
  int evals = 1;
  auto eval = [&](double lx) {
    const double x = std::exp(lx);
    const double f = objective(x);
    ++evals;
    if (std::isfinite(f) && (!std::isfinite(best_f) || f < best_f)) {
      best_f = f;
      best_x = x;
    }
    return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
  };
  const double c = std::log(xi_ref);
  if (xi_ref != 1.0) eval(c);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = c - std::log(1e3), b = c + std::log(1e3);
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double fx1 = eval(x1), fx2 = eval(x2);
  while (evals < max_evals) {
    if (fx1 < fx2) {
      b = x2;
      x2 = x1;
      fx2 = fx1;
      x1 = b - g * (b - a);
      fx1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      fx1 = fx2;
      x2 = a + g * (b - a);
      fx2 = eval(x2);
    }
  }
  if (!std::isfinite(best_f) || std::abs(best_f - f1) <= 1e-12 * std::max(std::abs(f1), 1e-300)) return 1.0;
  return best_x;
}

// Long-memory matched filter: gamma_t = theta_t B gamma_{t-1} + xi_t z_t with
// B applied matrix-free. Three matrix passes per step when the residual is
// supplied: A x (by the caller), A (A^H gamma_{t-1}) and A^H gamma_t.
class MldState {
 public:
  MldState(const CMatrix& A, MldSpectrum sp) : A_(&A), sp_(std::move(sp)) {}

  int iteration() const { return static_cast<int>(ledger_.size()); }
  const CMatrix& gamma() const { return gamma_; }
  const CMatrix& ah_gamma() const { return ah_gamma_; }
  const std::vector<LedgerRow>& ledger() const { return ledger_; }
  const LedgerRow& row() const { return ledger_.back(); }
  const std::vector<double>& theta_history() const { return theta_; }
  const std::vector<double>& xi_history() const { return xi_; }
  const MldSpectrum& spectrum() const { return sp_; }
  double lambda_dagger() const { return sp_.lambda_dagger(); }

  LedgerRow candidate_row(double theta, double xi) const {
    return ledger_.empty() ? LedgerRow{xi} : extend_row(ledger_.back(), theta, xi);
  }

  // B v = ld v - A (A^H v)
  CMatrix apply_B(const CMatrix& v) const { return sp_.lambda_dagger() * v - (*A_) * (A_->adjoint() * v); }

  void step_residual(const CMatrix& z, double theta, double xi) {
    require(z.rows() == A_->rows(), "lmmf_step: residual has wrong length");
    if (ledger_.empty()) {
      gamma_ = xi * z;
    } else {
      require(z.cols() == gamma_.cols(), "lmmf_step: slot count changed");
      gamma_ = theta * (sp_.lambda_dagger() * gamma_ - (*A_) * ah_gamma_) + xi * z;
    }
    ah_gamma_ = A_->adjoint() * gamma_;
    ledger_.push_back(candidate_row(theta, xi));
    theta_.push_back(ledger_.size() == 1 ? 0.0 : theta);
    xi_.push_back(xi);
  }

  void lmmf_step(const CMatrix& y, const CMatrix& x_t, double theta, double xi) {
    require(y.rows() == A_->rows() && x_t.rows() == A_->cols() && y.cols() == x_t.cols(),
            "lmmf_step: dimension mismatch");
    step_residual(y - (*A_) * x_t, theta, xi);
  }

  OrthoParams ortho_params() const {
    require(!ledger_.empty(), "ortho_params before the first step");
    OrthoParams o = ortho_from_row(ledger_.back(), sp_);
    if (std::abs(o.eps_gamma) < 1e-12) throw numerical_error("degenerate MLD normalizer");
    return o;
  }

  // r_t = (A^H gamma_t - sum_i p_{t,i} x_i) / eps_t
  CMatrix mld_output(const std::vector<CMatrix>& X) const {
    const OrthoParams o = ortho_params();
    require(X.size() == o.p.size(), "mld_output: need one estimate per iteration");
    CMatrix r = ah_gamma_;
    for (size_t i = 0; i < X.size(); ++i) r -= o.p[i] * X[i];
    return r / o.eps_gamma;
  }

 private:
  const CMatrix* A_;
  MldSpectrum sp_;
  CMatrix gamma_, ah_gamma_;
  std::vector<LedgerRow> ledger_;
  std::vector<double> theta_, xi_;
};

}  // namespace mamp
