#pragma once

#include "mamp/analysis.hpp"
#include "mamp/damping.hpp"
#include "mamp/mld.hpp"
#include "mamp/nld.hpp"
#include "mamp/receiver.hpp"

#include <ostream>
#include <vector>

namespace mamp {

struct CovarianceSE {
  RMatrix V_gamma;              // <g_t | g_s>
  RMatrix V_phi_bar;            // damped NLD error covariance
  RVector v_phi_vec;            // latest NLD output covariance with the history (self last)
  std::vector<LedgerRow> rows;  // MLD ledger rows, one per iteration
  int mc_samples = 5000;
};

// New row/column of V_gamma for the ledger row just appended to cov.rows.
inline void se_mld_step(CovarianceSE& cov, const MldSpectrum& sp, double sigma2) {
  const int t = static_cast<int>(cov.rows.size());
  require(t >= 1 && cov.V_phi_bar.rows() >= t, "se_mld_step: ledger and covariance dimensions disagree");
  require(cov.V_gamma.rows() == t - 1, "se_mld_step: V_gamma already extended");
  RVector row(t - 1);
  for (int s = 0; s < t - 1; ++s) row(s) = se_gamma_entry(cov.rows[t - 1], cov.rows[s], cov.V_phi_bar, sigma2, sp);
  append_covariance(cov.V_gamma, row, se_gamma_entry(cov.rows[t - 1], cov.rows[t - 1], cov.V_phi_bar, sigma2, sp));
}

// Correlated CN Gaussian stacks with a prescribed covariance, grown one
// member at a time by an LDL^T factorization with pivots floored at zero.
class GaussianStack {
 public:
  GaussianStack(Index samples, Index cols, std::uint64_t seed) : S_(samples), C_(cols), rng_(make_rng(seed, 0x5E)) {}

  // cov_row: covariance of the new member with all previous ones, then its variance.
  CMatrix push(const RVector& cov_row) {
    const Index t = static_cast<Index>(D_.size());
    require(cov_row.size() == t + 1, "GaussianStack: covariance row has wrong length");
    RVector l(t);
    double d = cov_row(t);
    for (Index j = 0; j < t; ++j) {
      double c = cov_row(j);
      for (Index k = 0; k < j; ++k) c -= l(k) * L_[j](k) * D_[k];
      l(j) = D_[j] > 1e-300 ? c / D_[j] : 0.0;
      d -= l(j) * l(j) * D_[j];
    }
    d = std::max(d, 0.0);
    CMatrix e = complex_normal_matrix(S_, C_, rng_);
    CMatrix g = std::sqrt(d) * e;
    for (Index k = 0; k < t; ++k) g += (l(k) * std::sqrt(D_[k])) * E_[k];
    L_.push_back(l);
    D_.push_back(d);
    E_.push_back(std::move(e));
    return g;
  }

 private:
  Index S_, C_;
  Rng rng_;
  std::vector<RVector> L_;
  std::vector<double> D_;
  std::vector<CMatrix> E_;
};

struct SeConfig {
  int max_iters = 30;
  int mc_samples = 5000;
  DampingMode damping = DampingMode::backoff;
  int Ld = 3;
  FallbackPolicy fallback = FallbackPolicy::previous;
  double cond_threshold = 1e10;
  bool optimize_xi = true;
  double tol = 1e-8;
  std::uint64_t seed = 1;
  double lambda_dagger = 0;  // 0: exact from the profile
  // Replays a receiver's (theta, xi, zeta) sequence instead of choosing them.
  const std::vector<IterRecord>* replay = nullptr;
};

struct SePoint {
  int t = 0;
  double v_gamma = 0;    // v^gamma_{t,t}
  double v_phi_bar = 0;  // damped variance entering iteration t+1
  double v_hat = 0;      // posterior variance of the NLD (phi-hat) output
};

struct SeTrajectory {
  std::vector<SePoint> points;
  bool converged = false;
  double v_gamma_star = 0, v_phi_star = 0;
  CovarianceSE cov;

  void write_csv(std::ostream& os) const {
    os << "t,v_gamma,v_phi_bar\n";
    os.precision(12);
    for (const auto& p : points) os << p.t << ',' << p.v_gamma << ',' << p.v_phi_bar << '\n';
  }
};

// Monte Carlo NLD side: pushes x + g through the denoiser and returns the
// empirical covariances of the new error with the damped history errors.
struct NldSample {
  CMatrix f;          // phi - x
  RVector cross;      // <f | fbar_j>
  double self = 0;    // <f | f>
  double v_hat = 0;
};

inline NldSample se_nld_step(const CMatrix& x, const CMatrix& g, double v_gamma, const std::vector<CMatrix>& Fbar,
                             const Denoiser& den, std::uint64_t seed) {
  require(x.size() >= 100, "se_nld_step: at least 100 Monte Carlo samples are required");
  require(v_gamma > 0, "se_nld_step: v_gamma must be > 0");
  const CMatrix r = x + g;
  NldSample out;
  out.f.resize(x.rows(), x.cols());
  if (den.frame_symbols() > 0) {
    for (Index c = 0; c < x.cols(); ++c) {
      const NldOutput o = den.denoise(r.col(c), v_gamma, derive_seed(seed, static_cast<std::uint64_t>(c)));
      out.f.col(c) = o.phi_out - x.col(c);
      out.v_hat += o.v_hat / static_cast<double>(x.cols());
    }
  } else {
    const NldOutput o = den.denoise(r, v_gamma, seed);
    out.f = o.phi_out - x;
    out.v_hat = o.v_hat;
  }
  out.cross.resize(static_cast<Index>(Fbar.size()));
  for (size_t j = 0; j < Fbar.size(); ++j) out.cross(j) = inner(out.f, Fbar[j]);
  out.self = inner(out.f, out.f);
  return out;
}

// Extends V_phi_bar with the damped estimate; returns the damping step.
inline DampingStep se_damping(CovarianceSE& cov, const RVector& cross, double self, DampingMode mode, int Ld,
                              FallbackPolicy pol, double cond, const std::vector<int>& copy_of = {}) {
  const Index t = cov.V_phi_bar.rows();
  cov.v_phi_vec.resize(t + 1);
  cov.v_phi_vec.head(t) = cross;
  cov.v_phi_vec(t) = self;
  DampingStep st = damping_step(cov.V_phi_bar, cross, self, mode, Ld, pol, cond, copy_of);
  append_covariance(cov.V_phi_bar, st.new_row, st.new_var);
  return st;
}

// Extends V_phi_bar with fixed weights over given candidates.
inline DampingStep replay_damping(CovarianceSE& cov, const RVector& cross, double self, const std::vector<int>& cand,
                                  const std::vector<double>& zeta) {
  require(cand.size() == zeta.size() && !cand.empty(), "replay_damping: candidates and weights disagree");
  const Index t = cov.V_phi_bar.rows();
  cov.v_phi_vec.resize(t + 1);
  cov.v_phi_vec.head(t) = cross;
  cov.v_phi_vec(t) = self;
  auto c = [&](int a, int b) -> double {
    if (a < 0 && b < 0) return self;
    if (a < 0) return cross(b);
    if (b < 0) return cross(a);
    return cov.V_phi_bar(a, b);
  };
  DampingStep st;
  st.candidates = cand;
  st.choice.zeta = zeta;
  st.new_row = RVector::Zero(t);
  for (size_t i = 0; i < cand.size(); ++i)
    for (Index j = 0; j < t; ++j) st.new_row(j) += zeta[i] * c(cand[i], static_cast<int>(j));
  for (size_t a = 0; a < cand.size(); ++a)
    for (size_t b = 0; b < cand.size(); ++b) st.new_var += zeta[a] * zeta[b] * c(cand[a], cand[b]);
  append_covariance(cov.V_phi_bar, st.new_row, st.new_var);
  return st;
}

// Full SE recursion mirroring run_mamp: the same theta/xi rules and damping,
// driven by predicted rather than estimated covariances.
inline SeTrajectory predict_trajectory(const SpectralProfile& p, double snr, const Denoiser& den,
                                       const SeConfig& cfg = {}) {
  require(cfg.mc_samples >= 100, "predict_trajectory: at least 100 Monte Carlo samples are required");
  require(snr > 0, "predict_trajectory: snr must be > 0");
  const double sigma2 = 1.0 / snr;
  const double ld = cfg.lambda_dagger > 0 ? cfg.lambda_dagger : MldSpectrum::dagger_exact(p);
  const MldSpectrum sp(p, ld);
  Rng xr = make_rng(cfg.seed, 0x5F);
  Index rows = cfg.mc_samples, cols = 1;
  if (den.frame_symbols() > 0) {
    rows = den.frame_symbols();
    cols = (cfg.mc_samples + rows - 1) / rows;
  }
  const CMatrix x = den.sample(rows, cols, xr).x;
  GaussianStack stack(rows, cols, derive_seed(cfg.seed, 1));
  SeTrajectory tr;
  CovarianceSE& cov = tr.cov;
  cov.mc_samples = static_cast<int>(x.size());
  std::vector<CMatrix> Fbar{-x};  // x_1 = 0
  std::vector<int> copy_of{0};
  cov.V_phi_bar = RMatrix::Constant(1, 1, inner(x, x));
  cov.V_gamma.resize(0, 0);
  const DampingMode mode = cfg.damping == DampingMode::automatic ? DampingMode::backoff : cfg.damping;
  const int T = cfg.replay ? std::min<int>(cfg.max_iters, static_cast<int>(cfg.replay->size())) : cfg.max_iters;
  for (int t = 1; t <= T; ++t) {
    const RMatrix& V = cov.V_phi_bar;
    const IterRecord* rp = cfg.replay ? &(*cfg.replay)[t - 1] : nullptr;
    const double theta = rp ? rp->theta : choose_theta(ld, V(t - 1, t - 1), sigma2);
    double xi = rp ? rp->xi : 1.0;
    const LedgerRow prev = cov.rows.empty() ? LedgerRow{} : cov.rows.back();
    auto cand = [&](double x_) { return prev.empty() ? LedgerRow{x_} : extend_row(prev, theta, x_); };
    if (!rp && t > 1 && cfg.optimize_xi) {
      double ref = 0;
      for (size_t i = 0; i < prev.size(); ++i) ref += theta * prev[i] * sp.w(static_cast<int>(prev.size() - i));
      ref = std::abs(ref) / sp.w(0);
      xi = choose_xi(
          [&](double x_) {
            const LedgerRow row = cand(x_);
            return se_gamma_entry(row, row, V, sigma2, sp);
          },
          ref);
    }
    if (std::abs(ortho_from_row(cand(xi), sp).eps_gamma) < 1e-12) xi = 1.0;
    if (std::abs(ortho_from_row(cand(xi), sp).eps_gamma) < 1e-12) throw numerical_error("degenerate SE normalizer");
    cov.rows.push_back(cand(xi));
    se_mld_step(cov, sp, sigma2);
    const double vg = std::max(cov.V_gamma(t - 1, t - 1), 1e-300);
    const CMatrix g = stack.push(cov.V_gamma.row(t - 1).transpose());
    const NldSample ns = se_nld_step(x, g, vg, Fbar, den, derive_seed(cfg.seed, 0x100 + t));
    const double v_prev = V(t - 1, t - 1);
    DampingStep st;
    if (rp) {
      st = replay_damping(cov, ns.cross, ns.self, rp->candidates, rp->zeta);
    } else {
      st = se_damping(cov, ns.cross, ns.self, mode, cfg.Ld, cfg.fallback, cfg.cond_threshold, copy_of);
    }
    CMatrix fn = CMatrix::Zero(x.rows(), x.cols());
    int src = -2;
    for (size_t c = 0; c < st.candidates.size(); ++c) {
      const int idx = st.candidates[c];
      if (st.choice.zeta[c] == 1.0) src = idx;
      if (st.choice.zeta[c] != 0) fn += st.choice.zeta[c] * (idx < 0 ? ns.f : Fbar[idx]);
    }
    copy_of.push_back(src >= 0 ? copy_of[src] : t);
    Fbar.push_back(std::move(fn));
    const double vn = cov.V_phi_bar(t, t);
    tr.points.push_back({t, vg, vn, ns.v_hat});
    tr.v_gamma_star = vg;
    tr.v_phi_star = vn;
    if (t > 1 && std::abs(vn - v_prev) < cfg.tol && tr.points.size() >= 2 &&
        std::abs(tr.points[tr.points.size() - 2].v_gamma - vg) < cfg.tol) {
      tr.converged = true;
      break;
    }
  }
  return tr;
}

}  // namespace mamp
