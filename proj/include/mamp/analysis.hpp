#pragma once

#include "mamp/channel.hpp"
#include "mamp/nld.hpp"

#include <functional>
#include <map>
#include <limits>
#include <numeric>

namespace mamp {

// Transfer functions are parametrized by u = gamma_se^{-1}(v), the LMMSE
// extrinsic input variance, which keeps every quantity finite and free of
// cancellation; gamma_se(u) and eta(u) are both closed-form sums in u.
namespace detail {

inline double gamma_of_u(const RVector& lam, Index N, double snr, double u) {
  double s = 0;
  for (Index i = 0; i < lam.size(); ++i) s += u / (1.0 + snr * lam(i) * u);
  return (s + static_cast<double>(N - lam.size()) * u) / static_cast<double>(N);
}

// rho(u) = sum_i snr l_i / (1 + snr l_i u) / sum_{all N} 1 / (1 + snr l_i u)
inline double rho_of_u(const RVector& lam, Index N, double snr, double u) {
  double num = 0, den = static_cast<double>(N - lam.size());
  for (Index i = 0; i < lam.size(); ++i) {
    const double d = 1.0 + snr * lam(i) * u;
    num += snr * lam(i) / d;
    den += 1.0 / d;
  }
  return num / den;
}

// lim_{v -> inf} gamma_se(v); infinite unless A^H A has full rank N
inline double gamma_limit(const RVector& lam, Index N, double snr) {
  if (lam.size() < N || snr <= 0) return std::numeric_limits<double>::infinity();
  double s = 0;
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam(i) <= 0) return std::numeric_limits<double>::infinity();
    s += 1.0 / (snr * lam(i));
  }
  return s / static_cast<double>(N);
}

}  // namespace detail

// (1/N) tr{(snr A^H A + v^{-1} I)^{-1}}
inline double gamma_se(const SpectralProfile& p, double snr, double v) {
  require(v > 0, "gamma_se: v must be > 0");
  require(snr >= 0, "gamma_se: snr must be >= 0");
  return detail::gamma_of_u(p.eigenvalues(), p.N(), snr, v);
}

inline double gamma_se_inv(const SpectralProfile& p, double snr, double m) {
  const RVector lam = p.eigenvalues();
  const double lim = detail::gamma_limit(lam, p.N(), snr);
  if (!(m > 0 && m < lim))
    throw invalid_argument("gamma_se_inv: m = " + std::to_string(m) + " outside attainable range (0, " +
                           std::to_string(lim) + ")");
  // gamma_se(v) <= v, so v >= m; grow the upper end until it brackets
  double lo = std::log(m), hi = lo + 1.0;
  while (detail::gamma_of_u(lam, p.N(), snr, std::exp(hi)) < m) hi += 2.0 * (hi - lo);
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::gamma_of_u(lam, p.N(), snr, std::exp(mid)) < m ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

inline double rho_max(double beta, double snr) {
  require(beta > 0, "rho_max: beta must be > 0");
  return beta >= 1.0 ? snr : snr / beta;
}

// eta_se(v) = 1/v - 1/gamma_se^{-1}(v), clipped to [0, snr * F/N]; beyond
// the attainable range the MLD carries no information about v and the
// map continues as 1/v.
inline double eta_se(const SpectralProfile& p, double snr, double v) {
  require(v > 0, "eta_se: v must be > 0");
  const RVector lam = p.eigenvalues();
  const double lim = detail::gamma_limit(lam, p.N(), snr);
  if (v >= lim) return 1.0 / v;
  const double u = gamma_se_inv(p, snr, v);
  const double r = detail::rho_of_u(lam, p.N(), snr, u);
  return std::clamp(r, 0.0, snr * p.moment(1));
}

// Inverse of eta_se over v: the MSE at which the MLD output SINR equals rho.
inline double eta_se_inv(const SpectralProfile& p, double snr, double rho) {
  require(rho >= 0, "eta_se_inv: rho must be >= 0");
  if (rho == 0) return std::numeric_limits<double>::infinity();
  const RVector lam = p.eigenvalues();
  const Index N = p.N();
  if (rho >= snr * p.moment(1)) return 0.0;
  const double lim = detail::gamma_limit(lam, N, snr);
  if (rho <= 1.0 / lim) return 1.0 / rho;
  // rho(u) decreases from snr*m1 at u=0 to 1/lim at u=inf
  double lo = -60, hi = 0;
  while (detail::rho_of_u(lam, N, snr, std::exp(hi)) > rho) hi += 10;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::rho_of_u(lam, N, snr, std::exp(mid)) > rho ? lo : hi) = mid;
  }
  return detail::gamma_of_u(lam, N, snr, std::exp(0.5 * (lo + hi)));
}

// Golub-Welsch nodes/weights for int e^{-t^2} f(t) dt
struct GaussHermite {
  RVector nodes, weights;
  explicit GaussHermite(int n) {
    RMatrix J = RMatrix::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<RMatrix> es(J);
    nodes = es.eigenvalues();
    weights = std::sqrt(M_PI) * es.eigenvectors().row(0).transpose().array().square();
  }
};

namespace detail {

inline const GaussHermite& gauss_hermite(int n) {
  static thread_local std::map<int, GaussHermite> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, GaussHermite(n)).first;
  return it->second;
}

// Real and imaginary levels when the constellation is their Cartesian
// product with a uniform prior (QPSK, square QAM); empty otherwise.
inline std::pair<std::vector<double>, std::vector<double>> product_levels(const Constellation& c) {
  auto levels = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> u;
    for (double x : v)
      if (u.empty() || x - u.back() > 1e-9) u.push_back(x);
    return u;
  };
  std::vector<double> re, im;
  for (Index i = 0; i < c.size(); ++i) {
    if (std::abs(c.priors[i] - 1.0 / static_cast<double>(c.size())) > 1e-12) return {};
    re.push_back(c.points[i].real());
    im.push_back(c.points[i].imag());
  }
  re = levels(re);
  im = levels(im);
  if (static_cast<Index>(re.size() * im.size()) != c.size()) return {};
  return {re, im};
}

// mmse of a uniform PAM level set in real noise of variance 1/2
inline double pam_mmse(const std::vector<double>& lv, double sr, const GaussHermite& gh) {
  const size_t S = lv.size();
  std::vector<double> met(S);
  double acc = 0;
  for (double a : lv)
    for (Index j = 0; j < gh.nodes.size(); ++j) {
      const double y = sr * a + gh.nodes(j);
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t b = 0; b < S; ++b) mx = std::max(mx, met[b] = -std::pow(y - sr * lv[b], 2));
      double z = 0, mean = 0;
      for (size_t b = 0; b < S; ++b) {
        const double w = std::exp(met[b] - mx);
        z += w;
        mean += w * lv[b];
      }
      acc += gh.weights(j) * std::pow(a - mean / z, 2);
    }
  return acc / (std::sqrt(M_PI) * static_cast<double>(S));
}

}  // namespace detail

// mmse{x | sqrt(rho) x + z}, z ~ CN(0,1). The posterior switches in the
// Gaussian tail at high rho, so the rule needs more nodes than the smooth
// part suggests; 128 in 2-D keeps the relative error near 1e-4 up to rho = 12.
inline double mmse_constellation(double rho, const Constellation& cons, int nodes = 128) {
  require(rho >= 0, "mmse_constellation: rho must be >= 0");
  if (cons.gaussian) return 1.0 / (1.0 + rho);
  if (rho == 0) {
    cd m = 0;
    double e2 = 0;
    for (Index j = 0; j < cons.size(); ++j) {
      m += cons.priors[j] * cons.points[j];
      e2 += cons.priors[j] * std::norm(cons.points[j]);
    }
    return e2 - std::norm(m);
  }
  const double sr = std::sqrt(rho);
  if (const auto [re, im] = detail::product_levels(cons); !re.empty()) {
    // separable: two real problems, cheap enough for a much finer rule
    const GaussHermite& g1 = detail::gauss_hermite(4 * nodes);
    return detail::pam_mmse(re, sr, g1) + detail::pam_mmse(im, sr, g1);
  }
  const GaussHermite& gh = detail::gauss_hermite(nodes);
  const Index S = cons.size();
  std::vector<double> met(S);
  double acc = 0;
  for (Index a = 0; a < S; ++a) {
    double inner_acc = 0;
    for (int j = 0; j < nodes; ++j)
      for (int k = 0; k < nodes; ++k) {
        // z = t_j + i t_k has density e^{-|z|^2}/pi
        const cd y = sr * cons.points[a] + cd(gh.nodes(j), gh.nodes(k));
        double mx = -std::numeric_limits<double>::infinity();
        for (Index b = 0; b < S; ++b) {
          met[b] = std::log(cons.priors[b]) - std::norm(y - sr * cons.points[b]);
          mx = std::max(mx, met[b]);
        }
        double z = 0;
        cd mean = 0;
        for (Index b = 0; b < S; ++b) {
          const double w = std::exp(met[b] - mx);
          z += w;
          mean += w * cons.points[b];
        }
        inner_acc += gh.weights(j) * gh.weights(k) * std::norm(cons.points[a] - mean / z);
      }
    acc += cons.priors[a] * inner_acc / M_PI;
  }
  return acc;
}

enum class CurveKind { constellation, code, mld_inverse, target };

struct TransferCurve {
  std::vector<double> rho;
  std::vector<double> values;
  std::vector<double> err;  // Monte Carlo standard error, zero for analytic curves
  CurveKind kind = CurveKind::constellation;
  // target curves keep their two components so the binding one is known
  std::vector<double> constellation_part;
  std::vector<double> mld_inverse_part;

  size_t size() const { return rho.size(); }
  // linear interpolation; values beyond the grid clamp to the end points
  double at(double r) const {
    if (r <= rho.front()) return values.front();
    if (r >= rho.back()) return values.back();
    const size_t i = static_cast<size_t>(std::upper_bound(rho.begin(), rho.end(), r) - rho.begin());
    const double f = (r - rho[i - 1]) / (rho[i] - rho[i - 1]);
    return values[i - 1] + f * (values[i] - values[i - 1]);
  }
};

// rho = 0 plus n log-spaced points on [rho_hi * 10^{-decades}, rho_hi]
inline std::vector<double> rho_grid(double rho_hi, int n = 400, double decades = 5) {
  require(rho_hi > 0 && n >= 2, "rho_grid: need rho_hi > 0 and n >= 2");
  std::vector<double> g{0.0};
  for (int i = 0; i < n; ++i) g.push_back(rho_hi * std::pow(10.0, -decades + decades * i / (n - 1)));
  return g;
}

inline TransferCurve constellation_curve(const Constellation& cons, const std::vector<double>& grid) {
  TransferCurve c;
  c.kind = CurveKind::constellation;
  c.rho = grid;
  c.values.resize(grid.size());
  c.err.assign(grid.size(), 0.0);
  for (size_t i = 0; i < grid.size(); ++i) c.values[i] = mmse_constellation(grid[i], cons);
  return c;
}

inline TransferCurve mld_inverse_curve(const SpectralProfile& p, double snr, const std::vector<double>& grid) {
  TransferCurve c;
  c.kind = CurveKind::mld_inverse;
  c.rho = grid;
  c.values.resize(grid.size());
  c.err.assign(grid.size(), 0.0);
  for (size_t i = 0; i < grid.size(); ++i) c.values[i] = eta_se_inv(p, snr, grid[i]);
  return c;
}

// min{ mmse_constellation, eta_se^{-1} } pointwise
inline TransferCurve target_curve(const SpectralProfile& p, double snr, const Constellation& cons,
                                  std::vector<double> grid = {}) {
  if (grid.empty()) grid = rho_grid(rho_max(p.beta(), snr));
  TransferCurve s = constellation_curve(cons, grid);
  TransferCurve m = mld_inverse_curve(p, snr, grid);
  TransferCurve c;
  c.kind = CurveKind::target;
  c.rho = grid;
  c.err.assign(grid.size(), 0.0);
  c.values.resize(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) c.values[i] = std::min(s.values[i], m.values[i]);
  c.constellation_part = std::move(s.values);
  c.mld_inverse_part = std::move(m.values);
  return c;
}

// Points below rho_hi plus an interpolated end point at rho_hi, so one
// simulated code curve can be checked against targets with smaller rho_max.
inline TransferCurve truncate_curve(const TransferCurve& c, double rho_hi) {
  require(!c.rho.empty() && rho_hi > c.rho.front() && rho_hi <= c.rho.back(), "truncate_curve: rho_hi outside the grid");
  TransferCurve out;
  out.kind = c.kind;
  for (size_t i = 0; i < c.size() && c.rho[i] < rho_hi; ++i) {
    out.rho.push_back(c.rho[i]);
    out.values.push_back(c.values[i]);
    out.err.push_back(c.err[i]);
  }
  const size_t i = out.rho.size();
  const double f = (rho_hi - c.rho[i - 1]) / (c.rho[i] - c.rho[i - 1]);
  out.rho.push_back(rho_hi);
  out.values.push_back(c.at(rho_hi));
  out.err.push_back((1 - f) * c.err[i - 1] + f * c.err[i]);
  return out;
}

// Trapezoid integral of the curve over [0, upper] in nats.
inline double integrate_nats(const TransferCurve& c, double upper) {
  double acc = 0;
  for (size_t i = 1; i < c.size(); ++i) {
    const double a = c.rho[i - 1];
    if (a >= upper) break;
    const double b = std::min(c.rho[i], upper);
    const double fb = c.rho[i] <= upper ? c.values[i] : c.at(b);
    acc += 0.5 * (c.values[i - 1] + fb) * (b - a);
  }
  return acc;
}

// Rate integration grid. The MLD inverse of a flat spectrum drops to zero
// at rho_max, so a point just below it keeps the trapezoid from cutting the
// last interval in half.
inline std::vector<double> rate_grid(double rm) {
  std::vector<double> g = rho_grid(rm);
  g.insert(g.end() - 1, rm * (1 - 1e-9));
  return g;
}

struct RateResult {
  double rate_per_antenna = 0;  // bits per transmit antenna
  double rho_star = 0;
  double sum_rate = 0;
  double v_star = 0;
  bool truncated = false;  // code curve never reached zero on the grid
};

inline RateResult max_rate(const SpectralProfile& p, double snr, const Constellation& cons) {
  const double rm = rho_max(p.beta(), snr);
  RateResult r;
  if (rm <= 0) return r;
  const TransferCurve t = target_curve(p, snr, cons, rate_grid(rm));
  r.rate_per_antenna = integrate_nats(t, rm) / std::log(2.0);
  r.rho_star = rm;
  r.sum_rate = static_cast<double>(p.N()) * r.rate_per_antenna;
  return r;
}

// (1/(N ln 2)) sum_i ln(1 + snr lambda_i)
inline double capacity_gaussian(const SpectralProfile& p, double snr) {
  const RVector lam = p.eigenvalues();
  double s = 0;
  for (Index i = 0; i < lam.size(); ++i) s += std::log1p(snr * lam(i));
  return s / (static_cast<double>(p.N()) * std::log(2.0));
}

// Intersection of eta_se^{-1} with the constellation MMSE (the uncoded fixed
// point): returns rho* and v* = mmse(rho*).
inline std::pair<double, double> fixed_point(const SpectralProfile& p, double snr, const Constellation& cons) {
  const double top = snr * p.moment(1);
  if (top <= 0) return {0.0, mmse_constellation(0.0, cons)};
  auto g = [&](double r) { return mmse_constellation(r, cons) - eta_se_inv(p, snr, r); };
  double lo = 0, hi = top;
  if (g(hi) <= 0) return {hi, mmse_constellation(hi, cons)};
  for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0 ? lo : hi) = mid;
  }
  const double rs = 0.5 * (lo + hi);
  return {rs, mmse_constellation(rs, cons)};
}

struct CasRate {
  RateResult rate;
  double rate_loss = 0;  // bits per antenna
};

inline CasRate cas_rate(const SpectralProfile& p, double snr, const Constellation& cons) {
  const double rm = rho_max(p.beta(), snr);
  CasRate out;
  if (rm <= 0) return out;
  const auto [rs, vs] = fixed_point(p, snr, cons);
  const TransferCurve t = target_curve(p, snr, cons, rate_grid(rm));
  const double total = integrate_nats(t, rm);
  const double part = integrate_nats(t, rs);
  out.rate.rate_per_antenna = part / std::log(2.0);
  out.rate.rho_star = rs;
  out.rate.v_star = vs;
  out.rate.sum_rate = static_cast<double>(p.N()) * out.rate.rate_per_antenna;
  out.rate_loss = (total - part) / std::log(2.0);
  return out;
}

struct CodeCurveConfig {
  int blocks = 200;
  int bp_iters = 100;
  int bootstrap = 200;
  int threads = 0;
  std::uint64_t seed = 1;
};

// Simulated mmse{x | sqrt(rho) x + z} under demapping plus full BP decoding.
inline TransferCurve code_mmse_curve(const LdpcCode& code, const Constellation& cons, const std::vector<double>& grid,
                                     const CodeCurveConfig& cfg) {
  require(cfg.blocks >= 2, "code_mmse_curve: need at least 2 blocks per point");
  require(code.n() % cons.bits == 0, "code length must be a multiple of bits per symbol");
  const Index ns = code.n() / cons.bits;
  TransferCurve c;
  c.kind = CurveKind::code;
  c.rho = grid;
  c.values.assign(grid.size(), 0.0);
  c.err.assign(grid.size(), 0.0);
  std::vector<double> mse(grid.size() * cfg.blocks, 0.0);
  const Index jobs = static_cast<Index>(grid.size()) * cfg.blocks;
  parallel_for(jobs, cfg.threads, [&](Index job) {
    const size_t gi = static_cast<size_t>(job / cfg.blocks);
    const double rho = grid[gi];
    if (rho <= 0) {
      mse[job] = mmse_constellation(0.0, cons);
      return;
    }
    Rng rng = make_rng(derive_seed(cfg.seed, gi), 0xC0DE0000ULL + static_cast<std::uint64_t>(job % cfg.blocks));
    std::vector<std::uint8_t> msg(code.k());
    for (auto& b : msg) b = static_cast<std::uint8_t>(rng() & 1u);
    const CMatrix x = modulate(code.encode(msg), cons, ns, 1);
    const CMatrix r = x + complex_normal_matrix(ns, 1, rng, 1.0 / rho);
    const PhiHatResult ph = phi_hat(r, 1.0 / rho, &code, cons, cfg.bp_iters, true);
    mse[job] = (ph.x_hat - x).squaredNorm() / static_cast<double>(ns);
  });
  Rng brng = make_rng(cfg.seed, 0xB007);
  std::uniform_int_distribution<int> pick(0, cfg.blocks - 1);
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    const double* m = mse.data() + gi * cfg.blocks;
    c.values[gi] = std::accumulate(m, m + cfg.blocks, 0.0) / cfg.blocks;
    if (grid[gi] <= 0) continue;
    // block bootstrap of the mean
    double s = 0, s2 = 0;
    for (int b = 0; b < cfg.bootstrap; ++b) {
      double acc = 0;
      for (int k = 0; k < cfg.blocks; ++k) acc += m[pick(brng)];
      acc /= cfg.blocks;
      s += acc;
      s2 += acc * acc;
    }
    const double mu = s / cfg.bootstrap;
    c.err[gi] = std::sqrt(std::max(s2 / cfg.bootstrap - mu * mu, 0.0));
  }
  return c;
}

inline RateResult achievable_rate(const TransferCurve& code_curve, double zero_tol = 1e-5) {
  RateResult r;
  size_t stop = code_curve.size() - 1;
  r.truncated = true;
  for (size_t i = 0; i < code_curve.size(); ++i)
    if (code_curve.values[i] <= zero_tol) {
      stop = i;
      r.truncated = false;
      break;
    }
  r.rho_star = code_curve.rho[stop];
  r.rate_per_antenna = integrate_nats(code_curve, r.rho_star) / std::log(2.0);
  return r;
}

struct ErrorFreeResult {
  bool pass = false;
  bool marginal = false;  // touches the target within the error bars
  double first_violation_rho = std::numeric_limits<double>::quiet_NaN();
  double min_gap = std::numeric_limits<double>::infinity();  // min over interior of target - code
};

// Open-tunnel test: the code curve must stay strictly below the target on
// the open interval (0, rho_max). A point clearly above (by k error bars) is
// a violation; a point within the error bars of the MLD-inverse branch is a
// marginal touch. Where the constellation MMSE is binding, an exact decoder
// cannot exceed it, so only excesses beyond const_rel_tol (BP on a loopy
// graph is slightly miscalibrated) count there.
inline ErrorFreeResult error_free_check(const TransferCurve& code_curve, const TransferCurve& target, double k = 2.0,
                                        double const_rel_tol = 0.01) {
  require(code_curve.size() == target.size(), "error_free_check: curves must share a grid");
  for (size_t i = 0; i < target.size(); ++i)
    require(std::abs(code_curve.rho[i] - target.rho[i]) <= 1e-12 * std::max(1.0, target.rho[i]),
            "error_free_check: curves must share a grid");
  ErrorFreeResult r;
  const size_t n = target.size();
  for (size_t i = 0; i < n; ++i) {
    if (target.rho[i] <= 0 || i + 1 == n) continue;
    const double code = code_curve.values[i];
    const double e = k * code_curve.err[i];
    const double tv = target.values[i];
    r.min_gap = std::min(r.min_gap, tv - code);
    const bool mld_binding =
        target.mld_inverse_part.empty() || target.mld_inverse_part[i] <= target.constellation_part[i];
    if (code - e >= tv && (mld_binding || code - tv > const_rel_tol * tv)) {
      if (std::isnan(r.first_violation_rho)) r.first_violation_rho = target.rho[i];
    } else if (mld_binding && code >= tv - e) {
      r.marginal = true;
    }
  }
  r.pass = std::isnan(r.first_violation_rho);
  return r;
}

}  // namespace mamp
