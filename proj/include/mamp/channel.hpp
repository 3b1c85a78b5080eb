#pragma once

#include "mamp/common.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <json.hpp>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>

namespace mamp {

// Thin factorization A = U diag(s) V^H, U: M x L, V: N x L, s nonincreasing.
struct ThinSvd {
  CMatrix U;
  RVector s;
  CMatrix V;
};

class ChannelMatrix {
 public:
  ChannelMatrix() = default;
  explicit ChannelMatrix(CMatrix a, std::optional<ThinSvd> factors = std::nullopt)
      : a_(std::move(a)), factors_(std::move(factors)) {
    require(a_.rows() >= 1 && a_.cols() >= 1, "channel matrix must have M, N >= 1");
  }

  const CMatrix& entries() const { return a_; }
  Index M() const { return a_.rows(); }
  Index N() const { return a_.cols(); }
  Index L() const { return std::min(M(), N()); }
  Index F() const { return std::max(M(), N()); }
  double beta() const { return static_cast<double>(N()) / static_cast<double>(M()); }
  // (1/F) tr{A^H A}
  double trace_norm() const { return a_.squaredNorm() / static_cast<double>(F()); }
  const std::optional<ThinSvd>& factors() const { return factors_; }

 private:
  CMatrix a_;
  std::optional<ThinSvd> factors_;
};

enum class ChannelFamily { rayleigh, ill, kron };

// How kappa maps to the geometric singular-value ratio. per_rank uses
// e_i/e_{i+1} = kappa^(1/L) (so e_1/e_L = kappa^((L-1)/L)); exact_condition
// uses kappa^(1/(L-1)) so that e_1/e_L = kappa exactly.
enum class KappaConvention { per_rank, exact_condition };

struct ChannelSpec {
  ChannelFamily family = ChannelFamily::rayleigh;
  Index M = 1;
  Index N = 1;
  double kappa = 1.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  KappaConvention convention = KappaConvention::per_rank;
};

inline std::string to_string(ChannelFamily f) {
  switch (f) {
    case ChannelFamily::rayleigh: return "rayleigh";
    case ChannelFamily::ill: return "ill";
    case ChannelFamily::kron: return "kron";
  }
  return "?";
}

inline ChannelFamily family_from_string(const std::string& s) {
  if (s == "rayleigh") return ChannelFamily::rayleigh;
  if (s == "ill") return ChannelFamily::ill;
  if (s == "kron") return ChannelFamily::kron;
  throw invalid_argument("unknown channel family '" + s + "'");
}

inline void to_json(nlohmann::json& j, const ChannelSpec& s) {
  j = nlohmann::json{{"family", to_string(s.family)}, {"M", s.M}, {"N", s.N}, {"seed", s.seed}};
  if (s.family == ChannelFamily::ill) {
    j["kappa"] = s.kappa;
    if (s.convention == KappaConvention::exact_condition) j["kappa_convention"] = "exact_condition";
  }
  if (s.family == ChannelFamily::kron) j["alpha"] = s.alpha;
}

inline void from_json(const nlohmann::json& j, ChannelSpec& s) {
  s.family = family_from_string(j.at("family").get<std::string>());
  s.M = j.at("M").get<Index>();
  s.N = j.at("N").get<Index>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.kappa = j.value("kappa", 1.0);
  s.alpha = j.value("alpha", 0.0);
  s.convention = j.value("kappa_convention", std::string("per_rank")) == "exact_condition"
                     ? KappaConvention::exact_condition
                     : KappaConvention::per_rank;
}

// (C)_ij = alpha^|i-j|
inline RMatrix exp_correlation(Index n, double alpha) {
  RMatrix c(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) c(i, j) = std::pow(alpha, static_cast<double>(std::abs(i - j)));
  return c;
}

namespace detail {

inline void check_dims(Index M, Index N) {
  require(M >= 1 && N >= 1, "channel dimensions must be >= 1 (got " + std::to_string(M) + "x" +
                                std::to_string(N) + ")");
}

inline void renormalize(CMatrix& a) {
  const double f = static_cast<double>(std::max(a.rows(), a.cols()));
  const double tn = a.squaredNorm() / f;
  if (tn > 0) a /= std::sqrt(tn);
}

// First `cols` columns of a Haar-distributed unitary of size rows x rows.
// QR with the phase of diag(R) removed gives exactly the Haar measure, the same
// law as the singular-vector factors of an IID Gaussian matrix.
inline CMatrix haar_columns(Index rows, Index cols, Rng& rng) {
  CMatrix g = complex_normal_matrix(rows, cols, rng);
  Eigen::HouseholderQR<CMatrix> qr(g);
  CMatrix q = qr.householderQ() * CMatrix::Identity(rows, cols);
  const CMatrix& r = qr.matrixQR();
  for (Index j = 0; j < cols; ++j) {
    const cd d = r(j, j);
    const double ad = std::abs(d);
    if (ad > 0) q.col(j) *= d / ad;
  }
  return q;
}

// Symmetric square root of the exponential correlation matrix alpha^|i-j|.
inline RMatrix exp_corr_sqrt(Index n, double alpha) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(exp_correlation(n, alpha));
  if (es.info() != Eigen::Success) throw numerical_error("correlation eigendecomposition failed");
  RVector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

inline ChannelMatrix gen_rayleigh(Index M, Index N, std::uint64_t seed) {
  detail::check_dims(M, N);
  Rng rng = make_rng(seed, 0xA1);
  CMatrix a = complex_normal_matrix(M, N, rng, 1.0 / static_cast<double>(std::min(M, N)));
  detail::renormalize(a);
  return ChannelMatrix(std::move(a));
}

// Geometric singular values with sum of squares F.
inline RVector ill_singular_values(Index M, Index N, double kappa,
                                   KappaConvention conv = KappaConvention::per_rank) {
  require(kappa >= 1.0, "kappa must be >= 1");
  const Index L = std::min(M, N);
  const double F = static_cast<double>(std::max(M, N));
  const double steps = conv == KappaConvention::per_rank ? static_cast<double>(L)
                                                         : static_cast<double>(std::max<Index>(L - 1, 1));
  const double log_ratio = std::log(kappa) / steps;
  RVector e(L);
  for (Index i = 0; i < L; ++i) e(i) = std::exp(-log_ratio * static_cast<double>(i));
  e *= std::sqrt(F / e.squaredNorm());
  return e;
}

inline ChannelMatrix gen_ill_conditioned(Index M, Index N, double kappa, std::uint64_t seed,
                                         KappaConvention conv = KappaConvention::per_rank) {
  detail::check_dims(M, N);
  require(kappa >= 1.0, "kappa must be >= 1 (got " + std::to_string(kappa) + ")");
  const Index L = std::min(M, N);
  Rng rng = make_rng(seed, 0xB2);
  ThinSvd f;
  f.s = ill_singular_values(M, N, kappa, conv);
  f.U = detail::haar_columns(M, L, rng);
  f.V = detail::haar_columns(N, L, rng);
  CMatrix a = f.U * f.s.asDiagonal() * f.V.adjoint();
  return ChannelMatrix(std::move(a), std::move(f));
}

inline ChannelMatrix gen_correlated(Index M, Index N, double alpha, std::uint64_t seed) {
  detail::check_dims(M, N);
  require(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1) (got " + std::to_string(alpha) + ")");
  Rng rng = make_rng(seed, 0xA1);
  CMatrix a = complex_normal_matrix(M, N, rng, 1.0 / static_cast<double>(std::min(M, N)));
  if (alpha > 0.0) {
    const RMatrix cr = detail::exp_corr_sqrt(M, alpha);
    const RMatrix ct = detail::exp_corr_sqrt(N, alpha);
    a = cr.cast<cd>() * a * ct.cast<cd>();
  }
  detail::renormalize(a);
  return ChannelMatrix(std::move(a));
}

inline ChannelMatrix generate(const ChannelSpec& s) {
  switch (s.family) {
    case ChannelFamily::rayleigh: return gen_rayleigh(s.M, s.N, s.seed);
    case ChannelFamily::ill: return gen_ill_conditioned(s.M, s.N, s.kappa, s.seed, s.convention);
    case ChannelFamily::kron: return gen_correlated(s.M, s.N, s.alpha, s.seed);
  }
  throw invalid_argument("bad channel family");
}

class SpectralProfile {
 public:
  SpectralProfile() = default;
  SpectralProfile(RVector singular_values, Index M, Index N)
      : sv_(std::move(singular_values)), M_(M), N_(N), cache_(std::make_shared<Cache>()) {
    require(M >= 1 && N >= 1, "profile dims must be >= 1");
    require(sv_.size() == std::min(M, N), "profile needs min(M,N) singular values");
    std::sort(sv_.data(), sv_.data() + sv_.size(), std::greater<double>());
    require(sv_.size() == 0 || sv_(sv_.size() - 1) >= 0.0, "singular values must be nonnegative");
  }

  // Spectrum of an M x N matrix whose A^H A eigenvalues all equal one (A = I).
  static SpectralProfile identity(Index n) { return SpectralProfile(RVector::Ones(n), n, n); }

  const RVector& singular_values() const { return sv_; }
  RVector eigenvalues() const { return sv_.array().square(); }  // nonzero part of A^H A spectrum
  Index M() const { return M_; }
  Index N() const { return N_; }
  Index L() const { return sv_.size(); }
  Index F() const { return std::max(M_, N_); }
  double beta() const { return static_cast<double>(N_) / static_cast<double>(M_); }

  // Extreme eigenvalues of A A^H (M x M); it has M - L zero eigenvalues.
  double lambda_max() const { return sv_.size() ? sv_(0) * sv_(0) : 0.0; }
  double lambda_min() const {
    if (M_ > L()) return 0.0;
    return sv_(L() - 1) * sv_(L() - 1);
  }

  // (1/N) tr{(A^H A)^k}; moment(0) = L/N.
  double moment(int k) const {
    require(k >= 0, "moment order must be >= 0");
    {
      std::lock_guard<std::mutex> lock(cache_->mu);
      auto it = cache_->m.find(k);
      if (it != cache_->m.end()) return it->second;
    }
    double acc = 0.0;
    for (Index i = 0; i < L(); ++i) acc += std::pow(sv_(i) * sv_(i), k);
    acc /= static_cast<double>(N_);
    std::lock_guard<std::mutex> lock(cache_->mu);
    cache_->m[k] = acc;
    return acc;
  }

  void write_csv(std::ostream& os) const {
    os.precision(17);
    for (Index i = 0; i < L(); ++i) os << sv_(i) << "\n";
  }

 private:
  struct Cache {
    std::mutex mu;
    std::map<int, double> m;
  };
  RVector sv_;
  Index M_ = 0;
  Index N_ = 0;
  std::shared_ptr<Cache> cache_;
};

// Singular values + right/left vectors from the smaller Gram matrix.
inline ThinSvd thin_svd(const ChannelMatrix& A) {
  if (A.factors()) return *A.factors();
  const CMatrix& a = A.entries();
  const Index L = A.L();
  ThinSvd out;
  if (A.N() <= A.M()) {
    CMatrix g = a.adjoint() * a;
    Eigen::SelfAdjointEigenSolver<CMatrix> es(g);
    if (es.info() != Eigen::Success) throw numerical_error("Gram eigendecomposition did not converge");
    out.s.resize(L);
    out.V.resize(A.N(), L);
    for (Index i = 0; i < L; ++i) {
      const Index src = L - 1 - i;  // ascending -> descending
      out.s(i) = std::sqrt(std::max(es.eigenvalues()(src), 0.0));
      out.V.col(i) = es.eigenvectors().col(src);
    }
    out.U = a * out.V;
    for (Index i = 0; i < L; ++i) {
      if (out.s(i) > 1e-300) out.U.col(i) /= out.s(i);
      else out.U.col(i).setZero();
    }
  } else {
    CMatrix g = a * a.adjoint();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(g);
    if (es.info() != Eigen::Success) throw numerical_error("Gram eigendecomposition did not converge");
    out.s.resize(L);
    out.U.resize(A.M(), L);
    for (Index i = 0; i < L; ++i) {
      const Index src = L - 1 - i;
      out.s(i) = std::sqrt(std::max(es.eigenvalues()(src), 0.0));
      out.U.col(i) = es.eigenvectors().col(src);
    }
    out.V = a.adjoint() * out.U;
    for (Index i = 0; i < L; ++i) {
      if (out.s(i) > 1e-300) out.V.col(i) /= out.s(i);
      else out.V.col(i).setZero();
    }
  }
  return out;
}

inline SpectralProfile spectral_profile(const ChannelMatrix& A) {
  if (A.factors()) return SpectralProfile(A.factors()->s, A.M(), A.N());
  const CMatrix& a = A.entries();
  CMatrix g = A.N() <= A.M() ? CMatrix(a.adjoint() * a) : CMatrix(a * a.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(g, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw numerical_error("spectral decomposition did not converge");
  RVector s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return SpectralProfile(std::move(s), A.M(), A.N());
}

struct EigBoundEstimate {
  double lambda_min_low = 0.0;
  double lambda_max_up = 0.0;
  int tau = 1;
};

// lambda_max(A A^H) <= (tr{(A A^H)^tau})^(1/tau), trace estimated by ||s_tau||^2
// where s_tau alternates A and A^H on a CN(0, I_N) start vector.
inline EigBoundEstimate eig_bound_approx(const ChannelMatrix& A, int tau, std::uint64_t seed, int probes = 1) {
  require(tau >= 1, "tau must be >= 1");
  require(probes >= 1, "probe count must be >= 1");
  const CMatrix& a = A.entries();
  Rng rng = make_rng(seed, 0xE1);
  double acc = 0.0;
  double log_ref = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  for (int p = 0; p < probes; ++p) {
    CVector s = complex_normal_matrix(A.N(), 1, rng);
    double log_norm2 = 2.0 * std::log(s.norm());
    s.normalize();
    for (int k = 1; k <= tau; ++k) {
      CVector next = (k % 2 == 1) ? CVector(a * s) : CVector(a.adjoint() * s);
      const double nrm = next.norm();
      if (nrm == 0.0) return {0.0, 0.0, tau};
      log_norm2 += 2.0 * std::log(nrm);
      s = next / nrm;
    }
    logs.push_back(log_norm2);
    log_ref = std::max(log_ref, log_norm2);
  }
  for (double l : logs) acc += std::exp(l - log_ref);
  const double log_lambda_tau = log_ref + std::log(acc / probes);
  return {0.0, std::exp(log_lambda_tau / tau), tau};
}

}  // namespace mamp
