#pragma once

#include "mamp/common.hpp"
#include "mamp/ldpc.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace mamp {

struct Constellation {
  std::string name;
  std::vector<cd> points;
  std::vector<double> priors;
  std::vector<unsigned> labels;  // bit k of a symbol (k = 0 first) is (label >> (bits-1-k)) & 1
  int bits = 0;
  bool gaussian = false;  // continuous CN(0,1) input; only meaningful for analysis

  Index size() const { return static_cast<Index>(points.size()); }
  int bit(Index j, int k) const { return (labels[j] >> (bits - 1 - k)) & 1u; }

  void validate() const {
    if (gaussian) return;
    require(!points.empty() && points.size() == priors.size() && points.size() == labels.size(),
            "constellation arrays must have equal nonzero length");
    double ps = 0, es = 0;
    for (size_t i = 0; i < points.size(); ++i) {
      ps += priors[i];
      es += priors[i] * std::norm(points[i]);
    }
    require(std::abs(ps - 1) < 1e-12, "constellation priors must sum to 1");
    require(std::abs(es - 1) < 1e-12, "constellation must have unit average energy");
  }

  // Gray-labelled QPSK, points (+-1 +-j)/sqrt(2); first bit drives I, second Q.
  static Constellation qpsk() {
    Constellation c{"qpsk", {}, {}, {}, 2, false};
    const double a = 1.0 / std::sqrt(2.0);
    for (unsigned l = 0; l < 4; ++l) {
      const double re = (l & 2u) ? -a : a;
      const double im = (l & 1u) ? -a : a;
      c.points.emplace_back(re, im);
      c.labels.push_back(l);
      c.priors.push_back(0.25);
    }
    return c;
  }

  static Constellation bpsk() { return {"bpsk", {cd(1, 0), cd(-1, 0)}, {0.5, 0.5}, {0u, 1u}, 1, false}; }

  static Constellation psk8() {
    Constellation c{"8psk", {}, {}, {}, 3, false};
    for (unsigned k = 0; k < 8; ++k) {
      const double ang = 2.0 * M_PI * k / 8.0;
      c.points.emplace_back(std::cos(ang), std::sin(ang));
      c.labels.push_back(k ^ (k >> 1));
      c.priors.push_back(0.125);
    }
    return c;
  }

  static Constellation qam16() {
    Constellation c{"16qam", {}, {}, {}, 4, false};
    const double lv[4] = {-3, -1, 1, 3};
    const unsigned gray[4] = {0b00, 0b01, 0b11, 0b10};
    const double s = 1.0 / std::sqrt(10.0);
    for (int i = 0; i < 4; ++i)
      for (int q = 0; q < 4; ++q) {
        c.points.emplace_back(lv[i] * s, lv[q] * s);
        c.labels.push_back((gray[i] << 2) | gray[q]);
        c.priors.push_back(1.0 / 16);
      }
    return c;
  }

  static Constellation gaussian_input() { return {"gaussian", {}, {}, {}, 0, true}; }

  static Constellation by_name(const std::string& n) {
    if (n == "qpsk") return qpsk();
    if (n == "bpsk") return bpsk();
    if (n == "8psk") return psk8();
    if (n == "16qam") return qam16();
    if (n == "gaussian") return gaussian_input();
    throw invalid_argument("unknown constellation '" + n + "'");
  }
};

struct DemapResult {
  CMatrix mean;             // same shape as r
  RMatrix var;              // per-symbol posterior variance
  std::vector<double> llr;  // extrinsic bit LLRs log P(0)/P(1), symbol-major
};

// Exact posterior of x_i in r_i = x_i + z_i, z_i ~ CN(0, v), over the
// constellation. bit_priors (LLRs, symbol-major) are optional.
inline DemapResult demap_app(const CMatrix& r, double v, const Constellation& cons,
                             const std::vector<double>* bit_priors = nullptr) {
  require(v > 0, "demap_app: noise variance must be > 0");
  require(!cons.gaussian, "demap_app needs a discrete constellation");
  const Index n = r.size();
  const int K = cons.bits;
  const Index S = cons.size();
  if (bit_priors) require(static_cast<Index>(bit_priors->size()) == n * K, "bit prior length mismatch");
  DemapResult out;
  out.mean.resize(r.rows(), r.cols());
  out.var.resize(r.rows(), r.cols());
  out.llr.assign(static_cast<size_t>(n * K), 0.0);
  std::vector<double> logp0(S);
  for (Index j = 0; j < S; ++j) logp0[j] = std::log(cons.priors[j]);
  std::vector<double> met(S);
  for (Index i = 0; i < n; ++i) {
    const cd ri = r.data()[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < S; ++j) {
      double m = -std::norm(ri - cons.points[j]) / v + logp0[j];
      if (bit_priors)
        for (int k = 0; k < K; ++k) m += cons.bit(j, k) ? -0.5 * (*bit_priors)[i * K + k] : 0.5 * (*bit_priors)[i * K + k];
      met[j] = m;
      mx = std::max(mx, m);
    }
    double z = 0;
    cd mean = 0;
    double e2 = 0;
    for (Index j = 0; j < S; ++j) {
      const double p = std::exp(met[j] - mx);
      z += p;
      mean += p * cons.points[j];
      e2 += p * std::norm(cons.points[j]);
    }
    mean /= z;
    out.mean.data()[i] = mean;
    out.var.data()[i] = std::max(e2 / z - std::norm(mean), 0.0);
    for (int k = 0; k < K; ++k) {
      double m0 = -std::numeric_limits<double>::infinity(), m1 = m0;
      for (Index j = 0; j < S; ++j) (cons.bit(j, k) ? m1 : m0) = std::max(cons.bit(j, k) ? m1 : m0, met[j]);
      double s0 = 0, s1 = 0;
      for (Index j = 0; j < S; ++j) {
        if (cons.bit(j, k)) s1 += std::exp(met[j] - m1);
        else s0 += std::exp(met[j] - m0);
      }
      double l = (m0 + std::log(s0)) - (m1 + std::log(s1));
      if (bit_priors) l -= (*bit_priors)[i * K + k];
      out.llr[i * K + k] = clip_llr(l);
    }
  }
  return out;
}

// Symbol posterior mean/variance from independent bit LLRs.
inline void symbols_from_bit_llrs(const std::vector<double>& llr, const Constellation& cons, CMatrix& mean,
                                  RMatrix& var) {
  const int K = cons.bits;
  const Index S = cons.size();
  const Index n = mean.size();
  std::vector<double> met(S);
  for (Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < S; ++j) {
      double m = std::log(cons.priors[j]);
      for (int k = 0; k < K; ++k) m += cons.bit(j, k) ? -0.5 * llr[i * K + k] : 0.5 * llr[i * K + k];
      met[j] = m;
      mx = std::max(mx, m);
    }
    double z = 0, e2 = 0;
    cd mu = 0;
    for (Index j = 0; j < S; ++j) {
      const double p = std::exp(met[j] - mx);
      z += p;
      mu += p * cons.points[j];
      e2 += p * std::norm(cons.points[j]);
    }
    mu /= z;
    mean.data()[i] = mu;
    var.data()[i] = std::max(e2 / z - std::norm(mu), 0.0);
  }
}

inline CMatrix modulate(const std::vector<std::uint8_t>& bits, const Constellation& cons, Index rows, Index cols) {
  const int K = cons.bits;
  require(static_cast<Index>(bits.size()) == rows * cols * K, "bit count does not fill the symbol frame");
  CMatrix x(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) {
    unsigned lab = 0;
    for (int k = 0; k < K; ++k) lab = (lab << 1) | (bits[i * K + k] & 1u);
    Index j = 0;
    while (cons.labels[j] != lab) ++j;
    x.data()[i] = cons.points[j];
  }
  return x;
}

struct PhiHatResult {
  CMatrix x_hat;
  double v_hat = 0;
  std::vector<std::uint8_t> hard;  // decisions on all code (or symbol) bits
  bool parity_ok = false;
  int bp_iterations = 0;
};

// phi_hat: demapping followed (when a code is given) by BP decoding; output is
// the posterior mean under the code-informed bit posteriors.
inline PhiHatResult phi_hat(const CMatrix& r, double v, const LdpcCode* code, const Constellation& cons,
                            int bp_iters = 30, bool early_stop = true) {
  PhiHatResult out;
  DemapResult d = demap_app(r, v, cons);
  if (!code) {
    out.x_hat = std::move(d.mean);
    out.v_hat = d.var.mean();
    out.hard.resize(d.llr.size());
    for (size_t i = 0; i < d.llr.size(); ++i) out.hard[i] = d.llr[i] < 0;
    return out;
  }
  require(code->n() == static_cast<int>(d.llr.size()), "codeword length does not match the symbol frame");
  BpResult bp = ldpc_bp_decode(d.llr, *code, bp_iters, early_stop);
  out.x_hat.resize(r.rows(), r.cols());
  RMatrix var(r.rows(), r.cols());
  symbols_from_bit_llrs(bp.app, cons, out.x_hat, var);
  out.v_hat = var.mean();
  out.hard = std::move(bp.hard);
  out.parity_ok = bp.converged;
  out.bp_iterations = bp.iterations;
  return out;
}

// Monte Carlo divergence (1/N) sum_i d fhat_i / d r_i with unit-modulus,
// uniform-phase probes and a forward difference.
template <class Fn>
double divergence_w(Fn&& fhat, const CMatrix& r, int probe_count, std::uint64_t seed) {
  require(probe_count >= 1, "probe_count must be >= 1");
  const double rms = std::sqrt(std::max(mean_sq(r), 1e-12));
  const double delta = std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(rms, 1.0);
  const CMatrix base = fhat(r);
  Rng rng = make_rng(seed, 0xD1);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * M_PI);
  double acc = 0;
  CMatrix p(r.rows(), r.cols());
  for (int k = 0; k < probe_count; ++k) {
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = std::polar(1.0, ph(rng));
    const CMatrix d = fhat(CMatrix(r + delta * p)) - base;
    acc += (p.array().conjugate() * d.array()).sum().real() / (static_cast<double>(r.size()) * delta);
  }
  return acc / probe_count;
}

struct NldOutput {
  CMatrix x_hat;
  double v_hat = 0;
  CMatrix phi_out;
  double w = 0;
  double eps_phi = 1;
  std::vector<std::uint8_t> hard;
  bool parity_ok = false;
};

// phi = (x_hat - w r) / (1 - w)
inline std::pair<CMatrix, double> orthogonalize_phi(const CMatrix& x_hat, const CMatrix& r, double w) {
  const double eps = 1.0 - w;
  if (std::abs(eps) < 1e-9) throw numerical_error("degenerate decoder: divergence w = 1 (decoder echoes its input)");
  return {(x_hat - w * r) / eps, eps};
}

// A transmitted frame: symbols plus the bits against which BER is measured.
struct Frame {
  CMatrix x;
  std::vector<std::uint8_t> bits;  // message bits (coded) or all symbol bits (uncoded)
  std::vector<std::uint8_t> code_bits;
};

// The nonlinear stage seen by the receivers and the SE: a signal source plus
// phi_hat, w and orthogonalization.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual NldOutput denoise(const CMatrix& r, double v, std::uint64_t probe_seed) const = 0;
  virtual Frame sample(Index rows, Index cols, Rng& rng) const = 0;
  // Symbols per frame, 0 if any size works.
  virtual Index frame_symbols() const = 0;
  virtual bool coded() const = 0;
  // Bit errors of a decision against the frame's reference bits.
  virtual long bit_errors(const NldOutput& out, const Frame& f) const = 0;
  virtual long bits_per_frame(const Frame& f) const { return static_cast<long>(f.bits.size()); }
  const Constellation& constellation() const { return cons_; }

 protected:
  explicit Denoiser(Constellation c) : cons_(std::move(c)) { cons_.validate(); }
  Constellation cons_;
};

class UncodedDenoiser : public Denoiser {
 public:
  explicit UncodedDenoiser(Constellation c = Constellation::qpsk()) : Denoiser(std::move(c)) {}

  // Separable posterior mean: the divergence is exactly mean(posterior var)/v.
  NldOutput denoise(const CMatrix& r, double v, std::uint64_t) const override {
    DemapResult d = demap_app(r, v, cons_);
    NldOutput o;
    o.v_hat = d.var.mean();
    o.w = o.v_hat / v;
    o.x_hat = std::move(d.mean);
    std::tie(o.phi_out, o.eps_phi) = orthogonalize_phi(o.x_hat, r, o.w);
    o.hard.resize(d.llr.size());
    for (size_t i = 0; i < d.llr.size(); ++i) o.hard[i] = d.llr[i] < 0;
    return o;
  }

  Frame sample(Index rows, Index cols, Rng& rng) const override {
    Frame f;
    f.bits.resize(static_cast<size_t>(rows * cols * cons_.bits));
    for (auto& b : f.bits) b = static_cast<std::uint8_t>(rng() & 1u);
    f.x = modulate(f.bits, cons_, rows, cols);
    f.code_bits = f.bits;
    return f;
  }
  Index frame_symbols() const override { return 0; }
  bool coded() const override { return false; }
  long bits_per_frame(const Frame& f) const override { return static_cast<long>(f.code_bits.size()); }
  // uncoded decisions are scored against the transmitted symbol bits
  long bit_errors(const NldOutput& o, const Frame& f) const override {
    long e = 0;
    for (size_t i = 0; i < f.code_bits.size(); ++i) e += o.hard[i] != f.code_bits[i];
    return e;
  }
};

class CodedDenoiser : public Denoiser {
 public:
  CodedDenoiser(std::shared_ptr<const LdpcCode> code, Constellation c = Constellation::qpsk(), int bp_iters = 30,
                int probes = 4)
      : Denoiser(std::move(c)), code_(std::move(code)), bp_iters_(bp_iters), probes_(probes) {
    require(code_ && code_->n() % cons_.bits == 0, "code length must be a multiple of bits per symbol");
  }

  NldOutput denoise(const CMatrix& r, double v, std::uint64_t probe_seed) const override {
    PhiHatResult base = phi_hat(r, v, code_.get(), cons_, bp_iters_, true);
    // probes rerun the decoder with the same iteration count so the map is smooth
    const int iters = base.bp_iterations;
    auto fn = [&](const CMatrix& rr) -> CMatrix { return phi_hat(rr, v, code_.get(), cons_, iters, false).x_hat; };
    NldOutput o;
    o.w = divergence_w(fn, r, probes_, probe_seed);
    o.v_hat = base.v_hat;
    o.x_hat = std::move(base.x_hat);
    std::tie(o.phi_out, o.eps_phi) = orthogonalize_phi(o.x_hat, r, o.w);
    o.hard = std::move(base.hard);
    o.parity_ok = base.parity_ok;
    return o;
  }

  Frame sample(Index rows, Index cols, Rng& rng) const override {
    require(rows * cols == frame_symbols(), "frame size does not match the codeword");
    Frame f;
    f.bits.resize(code_->k());
    for (auto& b : f.bits) b = static_cast<std::uint8_t>(rng() & 1u);
    f.code_bits = code_->encode(f.bits);
    f.x = modulate(f.code_bits, cons_, rows, cols);
    return f;
  }
  Index frame_symbols() const override { return code_->n() / cons_.bits; }
  bool coded() const override { return true; }
  long bit_errors(const NldOutput& o, const Frame& f) const override {
    long e = 0;
    const auto& info = code_->info_positions();
    for (size_t j = 0; j < info.size(); ++j) e += o.hard[info[j]] != f.bits[j];
    return e;
  }
  const LdpcCode& code() const { return *code_; }
  int bp_iters() const { return bp_iters_; }

 private:
  std::shared_ptr<const LdpcCode> code_;
  int bp_iters_;
  int probes_;
};

}  // namespace mamp
