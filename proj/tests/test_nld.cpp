#include "mamp/nld.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <set>

using namespace mamp;
using Catch::Approx;

namespace {

// r = x + CN(0, v)
CMatrix awgn(const CMatrix& x, double v, std::uint64_t seed) {
  Rng rng = make_rng(seed, 3);
  return x + complex_normal_matrix(x.rows(), x.cols(), rng, v);
}

CMatrix qpsk_frame(Index rows, Index cols, std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  return UncodedDenoiser().sample(rows, cols, rng).x;
}

}  // namespace

TEST_CASE("constellations are normalized and Gray labelled", "[nld]") {
  for (const char* n : {"bpsk", "qpsk", "8psk", "16qam"}) {
    const Constellation c = Constellation::by_name(n);
    CHECK_NOTHROW(c.validate());
    CHECK(c.size() == (Index{1} << c.bits));
    std::set<unsigned> labels(c.labels.begin(), c.labels.end());
    CHECK(labels.size() == c.labels.size());
    // nearest neighbours differ in exactly one bit
    for (Index i = 0; i < c.size(); ++i) {
      double dmin = 1e9;
      for (Index j = 0; j < c.size(); ++j)
        if (j != i) dmin = std::min(dmin, std::abs(c.points[i] - c.points[j]));
      for (Index j = 0; j < c.size(); ++j)
        if (j != i && std::abs(c.points[i] - c.points[j]) < dmin + 1e-9)
          CHECK(std::popcount(c.labels[i] ^ c.labels[j]) == 1);
    }
  }
  CHECK(Constellation::by_name("gaussian").gaussian);
  CHECK_THROWS_AS(Constellation::by_name("64qam"), invalid_argument);
  Constellation bad = Constellation::qpsk();
  bad.points[0] *= 2;
  CHECK_THROWS_AS(bad.validate(), invalid_argument);
}

TEST_CASE("modulation inverts hard decisions", "[nld]") {
  const Constellation c = Constellation::qam16();
  std::vector<std::uint8_t> bits(4 * 40);
  Rng rng = make_rng(5);
  for (auto& b : bits) b = rng() & 1u;
  const CMatrix x = modulate(bits, c, 20, 2);
  const DemapResult d = demap_app(x, 1e-4, c);
  for (size_t i = 0; i < bits.size(); ++i) CHECK((d.llr[i] < 0) == (bits[i] == 1));
  CHECK_THROWS_AS(modulate(bits, c, 20, 3), invalid_argument);
}

TEST_CASE("demapper limits", "[nld]") {
  const Constellation c = Constellation::qpsk();
  const CMatrix x = qpsk_frame(64, 1, 2);
  SECTION("small noise returns the nearest point") {
    const DemapResult d = demap_app(awgn(x, 1e-3, 1), 1e-3, c);
    CHECK((d.mean - x).norm() < 1e-6);
    CHECK(d.var.maxCoeff() < 1e-6);
  }
  SECTION("large noise returns the prior") {
    const DemapResult d = demap_app(awgn(x, 1.0, 1), 1e8, c);
    CHECK(d.mean.norm() < 1e-3);
    CHECK(d.var.minCoeff() == Approx(1.0).epsilon(1e-6));
    for (double l : d.llr) CHECK(std::abs(l) < 1e-3);
  }
  CHECK_THROWS_AS(demap_app(x, 0.0, c), invalid_argument);
  CHECK_THROWS_AS(demap_app(x, 1.0, Constellation::gaussian_input()), invalid_argument);
}

TEST_CASE("QPSK posterior mean has the tanh closed form", "[nld]") {
  const CMatrix r = awgn(qpsk_frame(200, 1, 3), 0.4, 4);
  for (double v : {0.05, 0.4, 2.0}) {
    const DemapResult d = demap_app(r, v, Constellation::qpsk());
    for (Index i = 0; i < r.size(); ++i) {
      const double re = std::tanh(std::sqrt(2.0) * r(i).real() / v) / std::sqrt(2.0);
      const double im = std::tanh(std::sqrt(2.0) * r(i).imag() / v) / std::sqrt(2.0);
      CHECK(std::abs(d.mean(i) - cd(re, im)) < 1e-12);
      // extrinsic LLR of the I bit is 2 sqrt(2) Re r / v, clipped
      CHECK(d.llr[2 * i] == Approx(clip_llr(2 * std::sqrt(2.0) * r(i).real() / v)).margin(1e-9));
    }
  }
}

TEST_CASE("bit priors enter additively and are removed from the output", "[nld]") {
  const CMatrix r = awgn(qpsk_frame(50, 1, 7), 0.5, 8);
  const DemapResult plain = demap_app(r, 0.5, Constellation::qpsk());
  std::vector<double> pri(100);
  Rng rng = make_rng(9);
  std::normal_distribution<double> g(0, 2);
  for (auto& p : pri) p = g(rng);
  const DemapResult d = demap_app(r, 0.5, Constellation::qpsk(), &pri);
  // QPSK bits are independent given r, so the extrinsic part is unchanged
  for (size_t i = 0; i < pri.size(); ++i) CHECK(d.llr[i] == Approx(plain.llr[i]).margin(1e-9));
  CMatrix m(50, 1);
  RMatrix var(50, 1);
  std::vector<double> app(100);
  for (size_t i = 0; i < 100; ++i) app[i] = plain.llr[i] + pri[i];
  symbols_from_bit_llrs(app, Constellation::qpsk(), m, var);
  CHECK((m - d.mean).norm() < 1e-9);
}

TEST_CASE("demapper variance is the Bayes MSE", "[nld]") {
  // E[var] = E|x - E[x|r]|^2 holds for any prior-matched posterior
  for (const char* n : {"qpsk", "16qam"}) {
    const Constellation c = Constellation::by_name(n);
    UncodedDenoiser den(c);
    Rng rng = make_rng(11);
    const CMatrix x = den.sample(20000, 1, rng).x;
    const double v = 0.3;
    const DemapResult d = demap_app(awgn(x, v, 12), v, c);
    CHECK(d.var.mean() == Approx((d.mean - x).squaredNorm() / x.size()).epsilon(0.03));
  }
}

TEST_CASE("uncoded phi_hat is the demapper", "[nld]") {
  const CMatrix r = awgn(qpsk_frame(100, 2, 1), 0.2, 2);
  const PhiHatResult p = phi_hat(r, 0.2, nullptr, Constellation::qpsk());
  const DemapResult d = demap_app(r, 0.2, Constellation::qpsk());
  CHECK((p.x_hat - d.mean).norm() == 0.0);
  CHECK(p.v_hat == Approx(d.var.mean()));
}

TEST_CASE("divergence estimator", "[nld]") {
  const CMatrix r = awgn(qpsk_frame(4096, 1, 5), 0.5, 6);
  CHECK(divergence_w([](const CMatrix& a) { return a; }, r, 4, 1) == Approx(1.0).epsilon(1e-6));
  CHECK(divergence_w([](const CMatrix& a) { return CMatrix(2.5 * a); }, r, 1, 1) == Approx(2.5).epsilon(1e-6));
  CHECK(divergence_w([&](const CMatrix&) { return CMatrix(CMatrix::Ones(r.rows(), 1)); }, r, 4, 1) == 0.0);
  CHECK_THROWS_AS(divergence_w([](const CMatrix& a) { return a; }, r, 0, 1), invalid_argument);

  const double v = 0.5;
  const Constellation c = Constellation::qpsk();
  auto fhat = [&](const CMatrix& a) { return demap_app(a, v, c).mean; };
  // separable map: d/dx of tanh(sqrt2 x / v)/sqrt2 is (1/v)(1 - tanh^2)
  double exact = 0;
  for (Index i = 0; i < r.size(); ++i)
    for (double u : {r(i).real(), r(i).imag()}) exact += 1 - std::pow(std::tanh(std::sqrt(2.0) * u / v), 2);
  exact /= 2.0 * r.size() * v;
  CHECK(divergence_w(fhat, r, 4, 9) == Approx(exact).epsilon(0.02));
  CHECK(UncodedDenoiser().denoise(r, v, 0).w == Approx(exact).epsilon(1e-9));
}

TEST_CASE("orthogonalization", "[nld]") {
  const CMatrix r = awgn(qpsk_frame(16, 1, 1), 0.5, 1);
  const CMatrix xh = 0.3 * r;
  SECTION("w = 0 passes the estimate through") {
    const auto [phi, eps] = orthogonalize_phi(xh, r, 0.0);
    CHECK((phi - xh).norm() == 0.0);
    CHECK(eps == 1.0);
  }
  SECTION("an echoing decoder is rejected") {
    CHECK_THROWS_AS(orthogonalize_phi(r, r, 1.0), numerical_error);
  }
  SECTION("affine maps lose their dependence on the input") {
    const CMatrix b = CMatrix::Constant(16, 1, cd(0.2, -0.1));
    const CMatrix r2 = awgn(qpsk_frame(16, 1, 2), 0.5, 2);
    auto f = [&](const CMatrix& a) { return CMatrix(0.4 * a + b); };
    const double w = divergence_w(f, r, 2, 3);
    CHECK(w == Approx(0.4).epsilon(1e-6));
    const CMatrix p1 = orthogonalize_phi(f(r), r, w).first;
    const CMatrix p2 = orthogonalize_phi(f(r2), r2, w).first;
    CHECK((p1 - b / 0.6).norm() < 1e-6);
    CHECK((p1 - p2).norm() < 1e-6);
  }
}

TEST_CASE("reported variance tracks the genie error", "[nld]") {
  const UncodedDenoiser den;
  for (double v : {0.3, 0.5, 1.0}) {
    const CMatrix x = qpsk_frame(20000, 1, 21);
    const NldOutput o = den.denoise(awgn(x, v, 22), v, 0);
    CHECK(o.v_hat == Approx((o.x_hat - x).squaredNorm() / x.size()).epsilon(0.10));
  }
}

TEST_CASE("coded denoiser", "[nld]") {
  const auto code = std::make_shared<const LdpcCode>(regular_code(3, 6, 2048, 4));
  const CodedDenoiser den(code, Constellation::qpsk(), 30, 2);
  CHECK(den.frame_symbols() == 1024);
  Rng rng = make_rng(3);
  const Frame f = den.sample(512, 2, rng);
  CHECK(code->parity_ok(f.code_bits));
  CHECK_THROWS_AS(den.sample(512, 1, rng), invalid_argument);
  SECTION("decodes a clean-enough observation") {
    const NldOutput o = den.denoise(awgn(f.x, 0.3, 4), 0.3, 5);
    CHECK(o.parity_ok);
    CHECK(den.bit_errors(o, f) == 0);
    // a converged decoder is locally flat up to probe noise
    CHECK(std::abs(o.w) < 0.01);
  }
  SECTION("decoder beats the demapper below its threshold") {
    const CMatrix r = awgn(f.x, 0.6, 6);
    const NldOutput o = den.denoise(r, 0.6, 7);
    const NldOutput u = UncodedDenoiser().denoise(r, 0.6, 0);
    CHECK((o.x_hat - f.x).squaredNorm() < (u.x_hat - f.x).squaredNorm());
  }
}
