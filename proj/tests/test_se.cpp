#include "mamp/se.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace mamp;
using Catch::Approx;

namespace {

double min_eig(const RMatrix& V) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(0.5 * (V + V.transpose()));
  return es.eigenvalues()(0);
}

SpectralProfile ill_profile(Index M, Index N, double kappa, std::uint64_t seed) {
  return spectral_profile(gen_ill_conditioned(M, N, kappa, seed));
}

}  // namespace

TEST_CASE("gaussian stack reproduces its covariance", "[se]") {
  RMatrix V(3, 3);
  V << 1.0, 0.6, 0.2, 0.6, 0.8, 0.3, 0.2, 0.3, 0.5;
  GaussianStack st(200000, 1, 7);
  std::vector<CMatrix> g;
  for (Index t = 0; t < 3; ++t) g.push_back(st.push(V.row(t).head(t + 1).transpose()));
  for (Index a = 0; a < 3; ++a)
    for (Index b = 0; b < 3; ++b) CHECK(inner(g[a], g[b]) == Approx(V(a, b)).margin(0.01));
  SECTION("repeated members are exact copies") {
    GaussianStack s2(1000, 1, 1);
    const CMatrix a = s2.push(RVector::Constant(1, 0.4));
    RVector row(2);
    row << 0.4, 0.4;
    const CMatrix b = s2.push(row);
    CHECK((a - b).norm() < 1e-12);
  }
  CHECK_THROWS_AS(st.push(RVector::Constant(2, 1.0)), invalid_argument);
}

TEST_CASE("SE entry is the expectation over independent errors", "[se]") {
  // fixed 16 x 16 channel, errors independent of A with prescribed covariance
  const ChannelMatrix A = gen_rayleigh(16, 16, 3);
  const SpectralProfile p = spectral_profile(A);
  const MldSpectrum sp(p, MldSpectrum::dagger_exact(p));
  const double s2 = 0.2;
  RMatrix V(2, 2);
  V << 1.0, 0.5, 0.5, 0.6;
  const LedgerRow r1{1.0}, r2 = extend_row(r1, 0.4, 1.5);
  const OrthoParams o1 = ortho_from_row(r1, sp), o2 = ortho_from_row(r2, sp);
  const double ld = sp.lambda_dagger();
  const CMatrix B = ld * CMatrix::Identity(16, 16) - A.entries() * A.entries().adjoint();
  double g11 = 0, g21 = 0, g22 = 0;
  const int trials = 2000;
  Rng rng = make_rng(4);
  for (int k = 0; k < trials; ++k) {
    GaussianStack st(16, 1, static_cast<std::uint64_t>(k) + 1);
    const CMatrix f1 = st.push(RVector::Constant(1, V(0, 0)));
    const CMatrix f2 = st.push(V.row(1).transpose());
    const CMatrix n = complex_normal_matrix(16, 1, rng, s2);
    // z_i = y - A x_i = n - A f_i with f_i = x_i - x
    const CMatrix z1 = n - A.entries() * f1, z2 = n - A.entries() * f2;
    const CMatrix gam1 = r1[0] * z1;
    const CMatrix gam2 = r2[0] * (B * z1) + r2[1] * z2;
    // g_t = r_t - x with the orthogonalized output
    const CMatrix e1 = (A.entries().adjoint() * gam1 - o1.p[0] * f1) / o1.eps_gamma;
    const CMatrix e2 = (A.entries().adjoint() * gam2 - o2.p[0] * f1 - o2.p[1] * f2) / o2.eps_gamma;
    g11 += inner(e1, e1);
    g21 += inner(e2, e1);
    g22 += inner(e2, e2);
  }
  CHECK(g11 / trials == Approx(se_gamma_entry(r1, r1, V, s2, sp)).epsilon(0.05));
  CHECK(g21 / trials == Approx(se_gamma_entry(r2, r1, V, s2, sp)).epsilon(0.05));
  CHECK(g22 / trials == Approx(se_gamma_entry(r2, r2, V, s2, sp)).epsilon(0.05));
}

TEST_CASE("NLD step", "[se]") {
  const UncodedDenoiser den;
  Rng rng = make_rng(2);
  const CMatrix x = den.sample(50000, 1, rng).x;
  const std::vector<CMatrix> Fbar{-x};
  SECTION("rho = 4 matches the constellation MMSE") {
    const double vg = 0.25;
    const CMatrix g = complex_normal_matrix(x.rows(), 1, rng, vg);
    const NldSample s = se_nld_step(x, g, vg, Fbar, den, 1);
    const double m = mmse_constellation(4.0, Constellation::qpsk());
    CHECK(s.v_hat == Approx(m).epsilon(0.03));
    CHECK(s.self == Approx(1.0 / (1.0 / m - 4.0)).epsilon(0.05));
    // the orthogonal error is uncorrelated with the input error and x
    CHECK(std::abs(inner(s.f, g)) < 0.02 * std::sqrt(s.self * vg));
  }
  SECTION("tiny input noise is removed") {
    const double vg = 1e-3;
    const CMatrix g = complex_normal_matrix(x.rows(), 1, rng, vg);
    const NldSample s = se_nld_step(x, g, vg, Fbar, den, 1);
    CHECK(s.v_hat < 1e-6);
    CHECK(s.self < 1e-6);
    CHECK(s.cross(0) == Approx(0).margin(1e-3));
  }
  CHECK_THROWS_AS(se_nld_step(x.topRows(50), x.topRows(50), 0.1, {}, den, 1), invalid_argument);
  CHECK_THROWS_AS(se_nld_step(x, x, 0.0, {}, den, 1), invalid_argument);
}

TEST_CASE("SE damping bookkeeping", "[se]") {
  CovarianceSE cov;
  cov.V_phi_bar = RMatrix::Constant(1, 1, 1.0);
  RVector cross(1);
  cross << 0.5;
  DampingStep st = se_damping(cov, cross, 0.6, DampingMode::backoff, 3, FallbackPolicy::previous, 1e10);
  CHECK(st.choice.zeta == std::vector<double>{0.0, 1.0});
  CHECK(cov.V_phi_bar(1, 1) == Approx(0.6));
  CHECK(cov.V_phi_bar(0, 1) == Approx(0.5));
  RVector c2(2);
  c2 << 0.55, 0.62;
  st = se_damping(cov, c2, 0.9, DampingMode::backoff, 3, FallbackPolicy::previous, 1e10);
  CHECK(st.choice.zeta == std::vector<double>{1.0, 0.0});
  CHECK(cov.V_phi_bar(2, 2) == Approx(0.6));
  CHECK(cov.V_phi_bar(2, 0) == Approx(0.5));
  // replayed weights give the same extension as the choice they record
  CovarianceSE a = cov, b = cov;
  RVector c3(3);
  c3 << 0.4, 0.3, 0.3;
  const DampingStep s1 = se_damping(a, c3, 0.35, DampingMode::analytical, 3, FallbackPolicy::previous, 1e10);
  replay_damping(b, c3, 0.35, s1.candidates, s1.choice.zeta);
  CHECK((a.V_phi_bar - b.V_phi_bar).norm() < 1e-14);
  CHECK(min_eig(a.V_phi_bar) > -1e-12);
  CHECK_THROWS_AS(replay_damping(b, c3, 0.35, {-1}, {0.5, 0.5}), invalid_argument);
}

TEST_CASE("identity channel", "[se]") {
  const UncodedDenoiser den;
  const double snr = 4.0;
  SeConfig cfg;
  cfg.max_iters = 5;
  cfg.tol = 0;
  cfg.mc_samples = 20000;
  const SeTrajectory tr = predict_trajectory(SpectralProfile::identity(64), snr, den, cfg);
  REQUIRE(tr.points.size() == 5);
  const double m = mmse_constellation(snr, Constellation::qpsk());
  for (const SePoint& p : tr.points) {
    CHECK(p.v_gamma == Approx(1.0 / snr).epsilon(1e-9));
    CHECK(p.v_hat == Approx(m).epsilon(0.05));
  }
  CHECK(tr.points[0].v_phi_bar == Approx(1.0 / (1.0 / m - snr)).epsilon(0.05));
}

TEST_CASE("covariances stay PSD and back-off is monotone", "[se]") {
  const UncodedDenoiser den;
  SeConfig cfg;
  cfg.tol = 0;
  cfg.max_iters = 20;
  const SeTrajectory tr = predict_trajectory(ill_profile(333, 500, 50, 1), db_to_lin(12.0), den, cfg);
  REQUIRE(tr.points.size() == 20);
  CHECK(min_eig(tr.cov.V_gamma) > -1e-9 * tr.cov.V_gamma.norm());
  CHECK(min_eig(tr.cov.V_phi_bar) > -1e-9 * tr.cov.V_phi_bar.norm());
  for (size_t i = 1; i < tr.points.size(); ++i) CHECK(tr.points[i].v_phi_bar <= tr.points[i - 1].v_phi_bar);
  std::ostringstream os;
  tr.write_csv(os);
  const std::string csv = os.str();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
}

TEST_CASE("SE converges to the transfer-curve fixed point", "[se]") {
  const UncodedDenoiser den;
  for (double kappa : {1.0, 10.0}) {
    const SpectralProfile p = ill_profile(500, 500, kappa, 2);
    const double snr = db_to_lin(8.0);
    SeConfig cfg;
    cfg.max_iters = 60;
    // the Monte Carlo NLD biases the fixed point by a few percent at 2e4 samples
    cfg.mc_samples = 100000;
    const SeTrajectory tr = predict_trajectory(p, snr, den, cfg);
    const auto [rho, v] = fixed_point(p, snr, Constellation::qpsk());
    CHECK(1.0 / tr.v_gamma_star == Approx(rho).epsilon(0.02));
    CHECK(tr.points.back().v_hat == Approx(v).epsilon(0.05));
  }
}

TEST_CASE("replayed SE tracks the receiver", "[se]") {
  const UncodedDenoiser den;
  ReceiverConfig rc;
  rc.early_stop = false;
  rc.max_iters = 6;
  std::vector<double> emp(6, 0.0), pred(6, 0.0);
  const int seeds = 6;
  for (int s = 1; s <= seeds; ++s) {
    const TransmissionInstance inst = make_instance(gen_ill_conditioned(512, 512, 10, s), den, 8.0, s, 2);
    const std::vector<IterRecord> recs = run_mamp(inst, den, rc).records;
    SeConfig sc;
    sc.tol = 0;
    sc.max_iters = 6;
    sc.seed = static_cast<std::uint64_t>(s);
    sc.replay = &recs;
    const SeTrajectory tr = predict_trajectory(inst.rx_profile(), inst.snr(), den, sc);
    REQUIRE(tr.points.size() == 6);
    for (int t = 0; t < 6; ++t) {
      emp[t] += recs[t].v_emp_gamma;
      pred[t] += tr.points[t].v_gamma;
    }
  }
  for (int t = 0; t < 6; ++t) CHECK(pred[t] == Approx(emp[t]).epsilon(0.10));
}

TEST_CASE("SE argument checks", "[se]") {
  const UncodedDenoiser den;
  SeConfig cfg;
  cfg.mc_samples = 10;
  CHECK_THROWS_AS(predict_trajectory(SpectralProfile::identity(4), 1.0, den, cfg), invalid_argument);
  CHECK_THROWS_AS(predict_trajectory(SpectralProfile::identity(4), 0.0, den), invalid_argument);
}
