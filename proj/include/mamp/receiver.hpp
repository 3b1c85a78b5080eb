#pragma once

#include "mamp/analysis.hpp"
#include "mamp/channel.hpp"
#include "mamp/damping.hpp"
#include "mamp/mld.hpp"
#include "mamp/nld.hpp"

#include <functional>
#include <memory>
#include <json.hpp>
#include <optional>
#include <ostream>

namespace mamp {

enum class ReceiverKind { mamp, oamp, cas };
enum class DaggerSource { exact, approx };

inline std::string to_string(ReceiverKind k) {
  switch (k) {
    case ReceiverKind::mamp: return "mamp";
    case ReceiverKind::oamp: return "oamp";
    case ReceiverKind::cas: return "cas";
  }
  return "?";
}

inline ReceiverKind receiver_from_string(const std::string& s) {
  if (s == "mamp") return ReceiverKind::mamp;
  if (s == "oamp" || s == "vamp") return ReceiverKind::oamp;
  if (s == "cas") return ReceiverKind::cas;
  throw invalid_argument("unknown receiver '" + s + "'");
}

struct ReceiverConfig {
  ReceiverKind receiver = ReceiverKind::mamp;
  DampingMode damping = DampingMode::automatic;  // backoff for MAMP, none for OAMP
  int Ld = 3;
  FallbackPolicy fallback = FallbackPolicy::previous;
  int max_iters = 0;  // 0: 60 coded, 30 uncoded
  double csi_stdvar = 0;
  bool optimize_xi = true;
  DaggerSource dagger = DaggerSource::exact;
  int tau = 120;
  bool early_stop = true;
  double early_stop_tol = 1e-8;
  int cas_bp_iters = 100;
  double cond_threshold = 1e10;
  std::uint64_t probe_seed = 0;

  int iters_for(bool coded) const { return max_iters > 0 ? max_iters : (coded ? 60 : 30); }
  DampingMode damping_for(bool coded) const {
    if (damping != DampingMode::automatic) return damping;
    (void)coded;
    return receiver == ReceiverKind::oamp ? DampingMode::none : DampingMode::backoff;
  }
};

inline void to_json(nlohmann::json& j, const ReceiverConfig& c) {
  j = {{"receiver", to_string(c.receiver)},
       {"damping", to_string(c.damping)},
       {"Ld", c.Ld},
       {"fallback", c.fallback == FallbackPolicy::previous ? "previous" : "newest"},
       {"max_iters", c.max_iters},
       {"csi_stdvar", c.csi_stdvar},
       {"optimize_xi", c.optimize_xi},
       {"lambda_bounds", c.dagger == DaggerSource::exact ? "exact" : "approx"},
       {"tau", c.tau},
       {"early_stop", c.early_stop},
       {"cas_bp_iters", c.cas_bp_iters}};
}

inline void from_json(const nlohmann::json& j, ReceiverConfig& c) {
  if (j.contains("receiver")) c.receiver = receiver_from_string(j.at("receiver").get<std::string>());
  if (j.contains("damping")) c.damping = damping_from_string(j.at("damping").get<std::string>());
  if (j.contains("Ld")) c.Ld = j.at("Ld").get<int>();
  if (j.contains("fallback")) {
    const auto f = j.at("fallback").get<std::string>();
    require(f == "previous" || f == "newest", "fallback must be 'previous' or 'newest'");
    c.fallback = f == "previous" ? FallbackPolicy::previous : FallbackPolicy::newest;
  }
  if (j.contains("max_iters")) c.max_iters = j.at("max_iters").get<int>();
  if (j.contains("csi_stdvar")) c.csi_stdvar = j.at("csi_stdvar").get<double>();
  if (j.contains("optimize_xi")) c.optimize_xi = j.at("optimize_xi").get<bool>();
  if (j.contains("lambda_bounds")) {
    const auto s = j.at("lambda_bounds").get<std::string>();
    require(s == "exact" || s == "approx", "lambda_bounds must be 'exact' or 'approx'");
    c.dagger = s == "exact" ? DaggerSource::exact : DaggerSource::approx;
  }
  if (j.contains("tau")) c.tau = j.at("tau").get<int>();
  if (j.contains("early_stop")) c.early_stop = j.at("early_stop").get<bool>();
  if (j.contains("cas_bp_iters")) c.cas_bp_iters = j.at("cas_bp_iters").get<int>();
  require(c.Ld >= 2, "Ld must be >= 2");
  require(c.csi_stdvar >= 0, "csi_stdvar must be >= 0");
  require(c.tau >= 1, "tau must be >= 1");
}

struct TransmissionInstance {
  ChannelMatrix A;                    // true channel
  std::optional<ChannelMatrix> A_rx;  // what the receiver believes, if different
  CMatrix x, y;                       // N x slots, M x slots
  double sigma2 = 1;
  Frame frame;

  double snr() const { return 1.0 / sigma2; }
  const ChannelMatrix& rx() const { return A_rx ? *A_rx : A; }

  // Cached decompositions of the receiver-side matrix.
  const SpectralProfile& rx_profile() const {
    if (!profile_) profile_ = std::make_shared<SpectralProfile>(spectral_profile(rx()));
    return *profile_;
  }
  const ThinSvd& rx_svd() const {
    if (!svd_) svd_ = std::make_shared<ThinSvd>(thin_svd(rx()));
    return *svd_;
  }
  void reset_cache() {
    profile_.reset();
    svd_.reset();
  }

 private:
  mutable std::shared_ptr<SpectralProfile> profile_;
  mutable std::shared_ptr<ThinSvd> svd_;
};

// Receiver-side A + E, E IID CN(0, stdvar^2) per entry.
inline ChannelMatrix inject_csi_error(const ChannelMatrix& A, double stdvar, std::uint64_t seed) {
  require(stdvar >= 0, "inject_csi_error: stdvar must be >= 0");
  if (stdvar == 0) return A;
  Rng rng = make_rng(seed, 0xC5);
  return ChannelMatrix(A.entries() + complex_normal_matrix(A.M(), A.N(), rng, stdvar * stdvar));
}

// Draws a frame from the denoiser's source and passes it through y = A x + n.
// Coded frames fix the slot count to codeword symbols / N.
inline TransmissionInstance make_instance(const ChannelMatrix& A, const Denoiser& den, double snr_db,
                                          std::uint64_t seed, Index slots = 1) {
  const Index N = A.N();
  if (den.frame_symbols() > 0) {
    require(den.frame_symbols() % N == 0, "codeword symbols must be a multiple of N");
    slots = den.frame_symbols() / N;
  }
  require(slots >= 1, "slots must be >= 1");
  TransmissionInstance inst;
  inst.A = A;
  inst.sigma2 = 1.0 / db_to_lin(snr_db);
  Rng frng = make_rng(seed, 0x5A);
  inst.frame = den.sample(N, slots, frng);
  inst.x = inst.frame.x;
  Rng nrng = make_rng(seed, 0x7E);
  inst.y = A.entries() * inst.x + complex_normal_matrix(A.M(), slots, nrng, inst.sigma2);
  return inst;
}

struct IterRecord {
  int t = 0;
  double v_emp_gamma = 0, v_emp_phi = 0;  // genie measurements
  double v_se_gamma = 0, v_se_phi = 0;    // receiver's own predictions
  double ber = 0;
  double theta = 0, xi = 0, eps_gamma = 0, w = 0;
  std::vector<double> zeta;
  std::vector<int> candidates;  // damped-history indices zeta applies to; -1 is the NLD output
  bool fallback = false;
};

struct IterTrace {
  std::vector<IterRecord> records;
  std::vector<std::uint8_t> hard;
  int iterations = 0;
  bool converged = false;
  long bit_errors = 0;
  long bits = 0;
  std::string error;  // component failure that ended the run early
  CMatrix last_r;
  double last_v_gamma = 0;

  double ber() const { return bits ? static_cast<double>(bit_errors) / static_cast<double>(bits) : 0.0; }
  double final_v_phi() const { return records.empty() ? 1.0 : records.back().v_emp_phi; }
  double final_v_gamma() const { return records.empty() ? 0.0 : records.back().v_emp_gamma; }

  void write_csv(std::ostream& os, std::uint64_t seed = 0) const {
    os << "seed,t,v_emp_gamma,v_emp_phi,v_se_gamma,v_se_phi,ber,theta,xi,eps_gamma,w,zeta\n";
    os.precision(10);
    for (const auto& r : records) {
      os << seed << ',' << r.t << ',' << r.v_emp_gamma << ',' << r.v_emp_phi << ',' << r.v_se_gamma << ','
         << r.v_se_phi << ',' << r.ber << ',' << r.theta << ',' << r.xi << ',' << r.eps_gamma << ',' << r.w << ',';
      for (size_t i = 0; i < r.zeta.size(); ++i) os << (i ? ";" : "") << r.zeta[i];
      os << '\n';
    }
  }

  nlohmann::json summary() const {
    return {{"iterations", iterations}, {"converged", converged}, {"bit_errors", bit_errors},
            {"bits", bits},             {"ber", ber()},           {"final_v_phi", final_v_phi()},
            {"error", error}};
  }
};

namespace detail {

// Damped-estimate history with residual-based covariance estimates:
// <z_a|z_b>/N = w0 <f_a|f_b> + (M/N) sigma2 for z = y - A x.
class DampedHistory {
 public:
  DampedHistory(const TransmissionInstance& inst, double w0)
      : A_(&inst.rx().entries()), y_(&inst.y), sigma2_(inst.sigma2), w0_(w0),
        MN_(static_cast<double>(inst.rx().M()) / static_cast<double>(inst.rx().N())) {
    X.push_back(CMatrix::Zero(inst.rx().N(), inst.y.cols()));
    Z.push_back(inst.y);
    V = RMatrix::Constant(1, 1, 1.0);  // x_1 = 0: error variance is the unit symbol power
    copy_of.push_back(0);
  }

  double estimate(const CMatrix& a, const CMatrix& b) const {
    return (inner(a, b) * MN_ - MN_ * sigma2_) / w0_;
  }

  int size() const { return static_cast<int>(X.size()); }
  double v_last() const { return V(V.rows() - 1, V.cols() - 1); }

  // Adds the new NLD output with the chosen damping; returns the step data.
  DampingStep push(const CMatrix& phi, DampingMode mode, int Ld, FallbackPolicy pol, double cond) {
    const CMatrix zphi = (*y_) - (*A_) * phi;
    const int t = size();
    const double self = std::max(estimate(zphi, zphi), kFloor);
    RVector cross(t);
    for (int j = 0; j < t; ++j) cross(j) = estimate(zphi, Z[j]);
    DampingStep st = damping_step(V, cross, self, mode, Ld, pol, cond, copy_of);
    CMatrix xn = CMatrix::Zero(phi.rows(), phi.cols());
    CMatrix zn = CMatrix::Zero(zphi.rows(), zphi.cols());
    for (size_t c = 0; c < st.candidates.size(); ++c) {
      const double z = st.choice.zeta[c];
      if (z == 0) continue;
      const int idx = st.candidates[c];
      xn += z * (idx < 0 ? phi : X[idx]);
      zn += z * (idx < 0 ? zphi : Z[idx]);
    }
    int src = -2;
    for (size_t c = 0; c < st.candidates.size(); ++c)
      if (st.choice.zeta[c] == 1.0) src = st.candidates[c];
    copy_of.push_back(src >= 0 ? copy_of[src] : t);
    X.push_back(std::move(xn));
    Z.push_back(std::move(zn));
    append_covariance(V, st.new_row, std::max(st.new_var, kFloor));
    return st;
  }

  static constexpr double kFloor = 1e-12;
  std::vector<CMatrix> X, Z;
  RMatrix V;
  std::vector<int> copy_of;  // index of the estimate each entry is an exact copy of

 private:
  const CMatrix* A_;
  const CMatrix* y_;
  double sigma2_, w0_, MN_;
};

inline double lambda_dagger_for(const TransmissionInstance& inst, const ReceiverConfig& cfg, std::uint64_t seed) {
  const SpectralProfile& p = inst.rx_profile();
  if (cfg.dagger == DaggerSource::exact) return MldSpectrum::dagger_exact(p);
  const EigBoundEstimate e = eig_bound_approx(inst.rx(), cfg.tau, seed);
  return 0.5 * (e.lambda_min_low + e.lambda_max_up);
}

inline void record_genie(IterRecord& rec, const TransmissionInstance& inst, const Denoiser& den, const CMatrix& r,
                         const NldOutput& nld, const CMatrix& x_next) {
  rec.v_emp_gamma = mean_sq(r - inst.x);
  rec.v_emp_phi = mean_sq(x_next - inst.x);
  rec.ber = static_cast<double>(den.bit_errors(nld, inst.frame)) / static_cast<double>(den.bits_per_frame(inst.frame));
}

// A back-off rejection leaves the variance unchanged without having converged.
inline bool accepted_new(const DampingStep& st) {
  for (size_t c = 0; c < st.candidates.size(); ++c)
    if (st.candidates[c] < 0) return st.choice.zeta[c] != 0.0;
  return false;
}

}  // namespace detail

// Diagnostic hook: called with t, the MLD output r_t and the damped
// estimates x_1..x_t it was computed from.
using IterObserver = std::function<void(int, const CMatrix&, const std::vector<CMatrix>&)>;

namespace detail {

// Shared outer loop: `linear` produces (r_t, v_gamma) from the history.
template <class Linear>
IterTrace outer_loop(const TransmissionInstance& inst, const Denoiser& den, const ReceiverConfig& cfg, double w0,
                     Linear&& linear, const IterObserver* observe = nullptr) {
  IterTrace tr;
  const bool coded = den.coded();
  const int T = cfg.iters_for(coded);
  const DampingMode mode = cfg.damping_for(coded);
  DampedHistory H(inst, w0);
  std::vector<std::uint8_t> prev_hard;
  NldOutput nld;
  for (int t = 1; t <= T; ++t) {
    IterRecord rec;
    rec.t = t;
    try {
      CMatrix r;
      double vg = 0;
      linear(t, H, rec, r, vg);
      if (observe) (*observe)(t, r, H.X);
      vg = std::max(vg, DampedHistory::kFloor);
      nld = den.denoise(r, vg, derive_seed(cfg.probe_seed, static_cast<std::uint64_t>(t)));
      rec.w = nld.w;
      const double v_before = H.v_last();
      const DampingStep st = H.push(nld.phi_out, mode, cfg.Ld, cfg.fallback, cfg.cond_threshold);
      rec.zeta = st.choice.zeta;
      rec.candidates = st.candidates;
      rec.fallback = st.choice.fallback;
      rec.v_se_gamma = vg;
      rec.v_se_phi = H.v_last();
      record_genie(rec, inst, den, r, nld, H.X.back());
      tr.records.push_back(rec);
      tr.iterations = t;
      tr.last_r = std::move(r);
      tr.last_v_gamma = vg;
      tr.hard = nld.hard;
      if (coded) {
        if (nld.parity_ok && nld.hard == prev_hard) {
          tr.converged = true;
          break;
        }
      } else if (cfg.early_stop && t > 1 && accepted_new(st) && std::abs(H.v_last() - v_before) < cfg.early_stop_tol) {
        tr.converged = true;
        break;
      }
      prev_hard = nld.hard;
    } catch (const numerical_error& e) {
      tr.error = e.what();
      break;
    }
  }
  if (!tr.hard.empty()) {
    tr.bit_errors = den.bit_errors(nld, inst.frame);
    tr.bits = den.bits_per_frame(inst.frame);
  }
  return tr;
}

}  // namespace detail

inline IterTrace run_mamp(const TransmissionInstance& inst, const Denoiser& den, const ReceiverConfig& cfg = {},
                          const IterObserver* observe = nullptr) {
  const SpectralProfile& prof = inst.rx_profile();
  const double ld = detail::lambda_dagger_for(inst, cfg, derive_seed(cfg.probe_seed, 0xEB));
  MldState mld(inst.rx().entries(), MldSpectrum(prof, ld));
  const MldSpectrum& sp = mld.spectrum();
  const double s2 = inst.sigma2;
  auto linear = [&](int t, detail::DampedHistory& H, IterRecord& rec, CMatrix& r, double& vg) {
    const RMatrix& V = H.V;
    const double theta = choose_theta(ld, V(t - 1, t - 1), s2);
    double xi = 1.0;
    if (t > 1 && cfg.optimize_xi) {
      const LedgerRow& prev = mld.row();
      double ref = 0;
      for (size_t i = 0; i < prev.size(); ++i) ref += theta * prev[i] * sp.w(static_cast<int>(prev.size() - i));
      ref = std::abs(ref) / sp.w(0);
      xi = choose_xi(
          [&](double x) {
            const LedgerRow row = mld.candidate_row(theta, x);
            return se_gamma_entry(row, row, V, s2, sp);
          },
          ref);
    }
    if (std::abs(ortho_from_row(mld.candidate_row(theta, xi), sp).eps_gamma) < 1e-12) {
      xi = 1.0;
      if (std::abs(ortho_from_row(mld.candidate_row(theta, xi), sp).eps_gamma) < 1e-12)
        throw numerical_error("degenerate MLD normalizer at t = " + std::to_string(t));
    }
    mld.step_residual(H.Z.back(), theta, xi);
    r = mld.mld_output(H.X);
    const LedgerRow& row = mld.row();
    vg = se_gamma_entry(row, row, V, s2, sp);
    rec.theta = t > 1 ? theta : 0.0;
    rec.xi = xi;
    rec.eps_gamma = mld.ortho_params().eps_gamma;
  };
  return detail::outer_loop(inst, den, cfg, sp.w(0), linear, observe);
}

// OAMP/VAMP: LMMSE through the cached thin SVD, then the extrinsic
// combination r = (x_post/m - x_t/v) / (1/m - 1/v).
inline IterTrace run_oamp_vamp(const TransmissionInstance& inst, const Denoiser& den,
                               const ReceiverConfig& cfg = {}) {
  const SpectralProfile& prof = inst.rx_profile();
  const ThinSvd& svd = inst.rx_svd();
  const double s2 = inst.sigma2;
  const double snr = inst.snr();
  auto linear = [&](int, detail::DampedHistory& H, IterRecord& rec, CMatrix& r, double& vg) {
    const double v = H.v_last();
    const CMatrix& xt = H.X.back();
    const RVector g = (v * svd.s.array() / (s2 + v * svd.s.array().square())).matrix();
    const CMatrix x_post = xt + svd.V * (g.asDiagonal() * (svd.U.adjoint() * H.Z.back()));
    const double m = gamma_se(prof, snr, v);
    const double inv = 1.0 / m - 1.0 / v;
    if (!(inv > 0)) throw numerical_error("OAMP extrinsic variance is not positive");
    vg = 1.0 / inv;
    r = (x_post / m - xt / v) * vg;
    rec.eps_gamma = 1.0;
  };
  return detail::outer_loop(inst, den, cfg, prof.moment(1), linear);
}

// Cascaded receiver: the MLD and an uncoded demapper iterate to their fixed
// point, then the code is decoded once.
inline IterTrace run_cas(const TransmissionInstance& inst, const Denoiser& den, const ReceiverConfig& cfg = {}) {
  ReceiverConfig inner_cfg = cfg;
  inner_cfg.receiver = ReceiverKind::mamp;
  const UncodedDenoiser demap(den.constellation());
  if (!den.coded()) return run_mamp(inst, demap, inner_cfg);
  if (cfg.max_iters == 0) inner_cfg.max_iters = inner_cfg.iters_for(false);
  IterTrace tr = run_mamp(inst, demap, inner_cfg);
  if (tr.last_r.size() == 0) return tr;
  const auto& cd = dynamic_cast<const CodedDenoiser&>(den);
  const PhiHatResult ph = phi_hat(tr.last_r, tr.last_v_gamma, &cd.code(), den.constellation(), cfg.cas_bp_iters, true);
  NldOutput o;
  o.hard = ph.hard;
  o.parity_ok = ph.parity_ok;
  tr.hard = ph.hard;
  tr.bit_errors = den.bit_errors(o, inst.frame);
  tr.bits = den.bits_per_frame(inst.frame);
  tr.converged = ph.parity_ok;
  IterRecord rec;
  rec.t = tr.iterations + 1;
  rec.v_emp_gamma = mean_sq(tr.last_r - inst.x);
  rec.v_emp_phi = mean_sq(ph.x_hat - inst.x);
  rec.v_se_gamma = tr.last_v_gamma;
  rec.v_se_phi = ph.v_hat;
  rec.ber = tr.ber();
  rec.zeta = {1.0};
  rec.candidates = {-1};
  tr.records.push_back(rec);
  return tr;
}

inline IterTrace run_receiver(const TransmissionInstance& inst, const Denoiser& den, const ReceiverConfig& cfg) {
  switch (cfg.receiver) {
    case ReceiverKind::mamp: return run_mamp(inst, den, cfg);
    case ReceiverKind::oamp: return run_oamp_vamp(inst, den, cfg);
    case ReceiverKind::cas: return run_cas(inst, den, cfg);
  }
  throw invalid_argument("unknown receiver kind");
}

}  // namespace mamp
