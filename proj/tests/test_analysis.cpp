#include "mamp/analysis.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace mamp;
using Catch::Approx;

namespace {

// (1/N) tr{(u^{-1} I + snr A^H A)^{-1}} from the dense Gram matrix
double dense_gamma(const CMatrix& A, double snr, double u) {
  const Index N = A.cols();
  const CMatrix G = A.adjoint() * A;
  const CMatrix K = CMatrix::Identity(N, N) / u + snr * G;
  return K.inverse().trace().real() / static_cast<double>(N);
}

// BPSK mmse at snr rho by trapezoid quadrature over the real Gaussian
double bpsk_mmse(double rho) {
  const int n = 20000;
  const double lim = 10.0, h = 2 * lim / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double z = -lim + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * std::exp(-0.5 * z * z) * std::tanh(rho + std::sqrt(rho) * z);
  }
  return 1.0 - acc * h / std::sqrt(2 * M_PI);
}

TransferCurve synthetic(const std::vector<double>& rho, const std::vector<double>& v, double err) {
  TransferCurve c;
  c.kind = CurveKind::code;
  c.rho = rho;
  c.values = v;
  c.err.assign(v.size(), err);
  return c;
}

}  // namespace

TEST_CASE("LMMSE transfer functions match dense traces", "[analysis]") {
  for (auto [M, N] : {std::pair<Index, Index>{24, 32}, {32, 24}, {32, 32}}) {
    const ChannelMatrix A = gen_ill_conditioned(M, N, 10, 3);
    const SpectralProfile p = spectral_profile(A);
    const double snr = 5.0;
    for (double u : {0.01, 0.3, 2.0, 40.0}) {
      const double g = dense_gamma(A.entries(), snr, u);
      CHECK(gamma_se(p, snr, u) == Approx(g).epsilon(1e-10));
      CHECK(gamma_se_inv(p, snr, g) == Approx(u).epsilon(1e-6));
      const double rho = 1.0 / g - 1.0 / u;
      CHECK(eta_se(p, snr, g) == Approx(rho).epsilon(1e-6));
      CHECK(eta_se_inv(p, snr, rho) == Approx(g).epsilon(1e-6));
    }
    // eta_se^{-1} is nonincreasing in rho
    double prev = std::numeric_limits<double>::infinity();
    for (double r : rho_grid(snr * p.moment(1), 60, 4)) {
      const double e = eta_se_inv(p, snr, r);
      CHECK(e <= prev * (1 + 1e-12));
      prev = e;
    }
  }
  CHECK_THROWS_AS(gamma_se(SpectralProfile::identity(4), 1.0, 0.0), invalid_argument);
  CHECK_THROWS_AS(eta_se_inv(SpectralProfile::identity(4), 1.0, -1.0), invalid_argument);
}

TEST_CASE("identity channel transfer", "[analysis]") {
  const SpectralProfile p = SpectralProfile::identity(8);
  const double snr = 3.0;
  CHECK(gamma_se(p, snr, 2.0) == Approx(2.0 / 7.0));
  // the extrinsic SNR of a diagonal channel does not depend on the prior
  for (double r : {0.1, 1.0, 2.9}) CHECK(eta_se_inv(p, snr, r) == Approx(1.0 / r));
  CHECK(eta_se_inv(p, snr, 3.5) == 0.0);
  CHECK(eta_se_inv(p, snr, 0.0) == std::numeric_limits<double>::infinity());
}

TEST_CASE("rho_max", "[analysis]") {
  CHECK(rho_max(1.0, 4.0) == 4.0);
  CHECK(rho_max(1.5, 4.0) == 4.0);
  CHECK(rho_max(0.5, 4.0) == 8.0);
  CHECK_THROWS_AS(rho_max(0.0, 1.0), invalid_argument);
}

TEST_CASE("constellation MMSE", "[analysis]") {
  CHECK(mmse_constellation(0.0, Constellation::qpsk()) == Approx(1.0));
  CHECK(mmse_constellation(2.0, Constellation::gaussian_input()) == Approx(1.0 / 3.0));
  // QPSK splits into two BPSK channels at the same SNR
  for (double r : {0.05, 0.5, 2.0, 6.0}) CHECK(mmse_constellation(r, Constellation::qpsk()) == Approx(bpsk_mmse(r)).epsilon(1e-6));
  CHECK(mmse_constellation(30.0, Constellation::qpsk()) < 1e-6);
  SECTION("16-QAM against Monte Carlo") {
    const Constellation c = Constellation::qam16();
    UncodedDenoiser den(c);
    Rng rng = make_rng(5);
    const CMatrix x = den.sample(200000, 1, rng).x;
    for (double r : {1.0, 10.0}) {
      const CMatrix y = x + complex_normal_matrix(x.rows(), 1, rng, 1.0 / r);
      const DemapResult d = demap_app(y, 1.0 / r, c);
      CHECK(mmse_constellation(r, c) == Approx((d.mean - x).squaredNorm() / x.size()).epsilon(0.02));
    }
  }
  // mmse is decreasing and below the Gaussian bound
  double prev = 1.0;
  for (double r : rho_grid(20.0, 40, 3)) {
    const double m = mmse_constellation(r, Constellation::qam16());
    CHECK(m <= prev + 1e-12);
    CHECK(m <= 1.0 / (1.0 + r) + 1e-9);
    prev = m;
  }
}

TEST_CASE("Gaussian signalling reaches the log-det capacity", "[analysis]") {
  const Constellation g = Constellation::gaussian_input();
  const double snr = db_to_lin(6.0);
  CHECK(max_rate(SpectralProfile::identity(16), snr, g).rate_per_antenna ==
        Approx(std::log2(1 + snr)).epsilon(0.005));
  for (auto [M, N, kappa] : {std::tuple<Index, Index, double>{200, 200, 10}, {200, 300, 10}, {300, 200, 50}}) {
    const SpectralProfile p = spectral_profile(gen_ill_conditioned(M, N, kappa, 1));
    CHECK(max_rate(p, snr, g).rate_per_antenna == Approx(capacity_gaussian(p, snr)).epsilon(0.02));
  }
}

TEST_CASE("achievable rates", "[analysis]") {
  const SpectralProfile p = spectral_profile(gen_ill_conditioned(200, 200, 10, 2));
  const Constellation q = Constellation::qpsk();
  double prev = 0;
  for (double db : {-2.0, 2.0, 6.0, 10.0, 14.0}) {
    const double snr = db_to_lin(db);
    const RateResult r = max_rate(p, snr, q);
    CHECK(r.rate_per_antenna > prev);
    // trapezoid integration over a convex curve overshoots slightly
    CHECK(r.rate_per_antenna <= 2.0 + 1e-3);
    CHECK(r.rate_per_antenna <= capacity_gaussian(p, snr) * (1 + 1e-3));
    CHECK(r.rho_star == rho_max(p.beta(), snr));
    CHECK(r.sum_rate == Approx(200 * r.rate_per_antenna));
    prev = r.rate_per_antenna;
  }
  CHECK(prev == Approx(2.0).epsilon(0.01));
  SECTION("separate detection and decoding loses rate where the MLD branch binds") {
    const double snr = db_to_lin(2.0);
    const CasRate c = cas_rate(p, snr, q);
    const double full = max_rate(p, snr, q).rate_per_antenna;
    CHECK(c.rate.rate_per_antenna < full - 0.01);
    CHECK(c.rate.rate_per_antenna + c.rate_loss == Approx(full).epsilon(1e-9));
    CHECK(c.rate.v_star == Approx(mmse_constellation(c.rate.rho_star, q)));
  }
}

TEST_CASE("uncoded fixed point", "[analysis]") {
  const Constellation q = Constellation::qpsk();
  for (double kappa : {1.0, 10.0, 50.0}) {
    const SpectralProfile p = spectral_profile(gen_ill_conditioned(300, 300, kappa, 4));
    const double snr = db_to_lin(8.0);
    const auto [rs, vs] = fixed_point(p, snr, q);
    CHECK(rs > 0);
    if (kappa == 1.0) {
      // a flat spectrum never binds before the end of the MLD curve
      CHECK(rs == Approx(snr * p.moment(1)));
    } else {
      CHECK(vs == Approx(eta_se_inv(p, snr, rs)).epsilon(1e-6));
    }
    // below the fixed point the tunnel is open
    CHECK(mmse_constellation(0.5 * rs, q) < eta_se_inv(p, snr, 0.5 * rs));
  }
}

TEST_CASE("error-free check", "[analysis]") {
  // MLD branch binds on the interior of this target
  const SpectralProfile p = spectral_profile(gen_ill_conditioned(100, 100, 10, 1));
  const double snr = db_to_lin(3.0);
  const std::vector<double> grid = rho_grid(rho_max(p.beta(), snr), 20, 2);
  const TransferCurve t = target_curve(p, snr, Constellation::qpsk(), grid);
  std::vector<double> below(t.values), above(t.values);
  for (double& v : below) v *= 0.9;
  size_t mld_pt = 0;
  for (size_t i = 1; i + 1 < grid.size(); ++i)
    if (t.mld_inverse_part[i] < t.constellation_part[i]) {
      mld_pt = i;
      break;
    }
  REQUIRE(mld_pt > 0);
  SECTION("strictly below passes") {
    const ErrorFreeResult r = error_free_check(synthetic(grid, below, 1e-4), t);
    CHECK(r.pass);
    CHECK_FALSE(r.marginal);
    CHECK(r.min_gap > 0);
  }
  SECTION("a clear crossing on the MLD branch fails") {
    below[mld_pt] = t.values[mld_pt] + 0.05;
    const ErrorFreeResult r = error_free_check(synthetic(grid, below, 1e-3), t);
    CHECK_FALSE(r.pass);
    CHECK(r.first_violation_rho == grid[mld_pt]);
  }
  SECTION("a touch within the error bars is marginal") {
    below[mld_pt] = t.values[mld_pt] + 1e-4;
    const ErrorFreeResult r = error_free_check(synthetic(grid, below, 1e-3), t);
    CHECK(r.pass);
    CHECK(r.marginal);
  }
  SECTION("small excess over the constellation MMSE is not a crossing") {
    below[1] = t.values[1] * 1.002;
    CHECK(error_free_check(synthetic(grid, below, 1e-4), t).pass);
    below[1] = t.values[1] * 1.05;
    CHECK_FALSE(error_free_check(synthetic(grid, below, 1e-4), t).pass);
  }
  SECTION("end points are excluded") {
    below.back() = 1.0;
    CHECK(error_free_check(synthetic(grid, below, 1e-4), t).pass);
  }
  std::vector<double> g2 = grid;
  g2[3] *= 1.01;
  CHECK_THROWS_AS(error_free_check(synthetic(g2, below, 0), t), invalid_argument);
}

TEST_CASE("achievable rate of a code curve", "[analysis]") {
  const std::vector<double> grid = rho_grid(10.0, 400, 4);
  std::vector<double> v(grid.size());
  const double r0 = 3.0;
  for (size_t i = 0; i < grid.size(); ++i) v[i] = grid[i] < r0 ? 1.0 / (1.0 + grid[i]) : 0.0;
  const RateResult r = achievable_rate(synthetic(grid, v, 0));
  CHECK_FALSE(r.truncated);
  CHECK(r.rho_star >= r0);
  CHECK(r.rate_per_antenna == Approx(std::log2(1 + r0)).epsilon(0.01));
  for (double& x : v) x = std::max(x, 0.1);
  CHECK(achievable_rate(synthetic(grid, v, 0)).truncated);
}

TEST_CASE("simulated code curve", "[analysis]") {
  const LdpcCode code = regular_code(3, 6, 2048, 1);
  const Constellation q = Constellation::qpsk();
  const std::vector<double> grid{0.0, 0.3, 1.0, 8.0};
  CodeCurveConfig cfg;
  cfg.blocks = 8;
  cfg.bp_iters = 50;
  cfg.bootstrap = 50;
  cfg.threads = 1;
  const TransferCurve c = code_mmse_curve(code, q, grid, cfg);
  CHECK(c.values[0] == Approx(1.0));
  CHECK(c.err[0] == 0.0);
  for (size_t i = 1; i < grid.size(); ++i) {
    CHECK(c.values[i] < c.values[i - 1]);
    CHECK(c.values[i] <= mmse_constellation(grid[i], q) + 4 * c.err[i] + 0.01);
  }
  // a rate-1/2 code decodes well above its threshold
  CHECK(c.values.back() < 1e-4);
  const TransferCurve again = code_mmse_curve(code, q, grid, cfg);
  CHECK(again.values == c.values);
  cfg.blocks = 1;
  CHECK_THROWS_AS(code_mmse_curve(code, q, grid, cfg), invalid_argument);
}

TEST_CASE("curve truncation", "[analysis]") {
  const std::vector<double> grid{0.0, 1.0, 2.0, 4.0};
  const TransferCurve c = synthetic(grid, {1.0, 0.5, 0.3, 0.1}, 0.01);
  const TransferCurve t = truncate_curve(c, 3.0);
  CHECK(t.rho == std::vector<double>{0.0, 1.0, 2.0, 3.0});
  CHECK(t.values.back() == Approx(0.2));
  CHECK(t.err.back() == Approx(0.01));
  CHECK(truncate_curve(c, 2.0).rho == std::vector<double>{0.0, 1.0, 2.0});
  CHECK_THROWS_AS(truncate_curve(c, 5.0), invalid_argument);
}
