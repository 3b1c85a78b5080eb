#include "mamp/channel.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <sstream>

using namespace mamp;
using Catch::Approx;

namespace {

// CDF of the Marchenko-Pastur law with ratio 1 (support [0, 4]) by Simpson.
double mp_cdf(double x) {
  if (x <= 0) return 0;
  if (x >= 4) return 1;
  // substitute l = u^2 to remove the 1/sqrt(l) endpoint singularity
  const int n = 4000;
  const double b = std::sqrt(x);
  auto f = [](double u) { return std::sqrt(4 - u * u) / M_PI; };
  double s = f(0) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(b * i / n);
  return s * b / (3.0 * n);
}

RMatrix dense_gram_power(const CMatrix& a, int k) {
  const CMatrix w = a.adjoint() * a;
  CMatrix p = CMatrix::Identity(a.cols(), a.cols());
  for (int i = 0; i < k; ++i) p = p * w;
  return p.real();
}

}  // namespace

TEST_CASE("every family is trace-normalized", "[channel]") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(std::abs(gen_rayleigh(40, 60, seed).trace_norm() - 1) <= 1e-6);
    CHECK(std::abs(gen_ill_conditioned(60, 40, 10, seed).trace_norm() - 1) <= 1e-6);
    CHECK(std::abs(gen_correlated(50, 50, 0.6, seed).trace_norm() - 1) <= 1e-6);
  }
}

TEST_CASE("rayleigh spectrum follows Marchenko-Pastur", "[channel]") {
  const ChannelMatrix A = gen_rayleigh(500, 500, 7);
  const double raw = A.entries().squaredNorm() / 500.0;
  CHECK(raw >= 0.95);
  CHECK(raw <= 1.05);
  RVector lam = spectral_profile(A).eigenvalues();
  std::sort(lam.data(), lam.data() + lam.size());
  double ks = 0;
  for (Index i = 0; i < lam.size(); ++i) {
    const double F = mp_cdf(lam(i));
    ks = std::max({ks, std::abs(F - static_cast<double>(i) / lam.size()),
                   std::abs(F - static_cast<double>(i + 1) / lam.size())});
  }
  CHECK(ks < 0.05);
}

TEST_CASE("scalar rayleigh has unit mean power", "[channel]") {
  // the 1x1 case renormalizes to |a|^2 = 1 exactly
  double s = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) s += std::norm(gen_rayleigh(1, 1, seed).entries()(0, 0));
  CHECK(s / 200 == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generators reject bad parameters", "[channel]") {
  CHECK_THROWS_AS(gen_rayleigh(0, 4, 1), invalid_argument);
  CHECK_THROWS_AS(gen_ill_conditioned(4, 4, 0.5, 1), invalid_argument);
  CHECK_THROWS_AS(gen_correlated(4, 4, 1.0, 1), invalid_argument);
  CHECK_THROWS_AS(gen_correlated(4, 4, -0.1, 1), invalid_argument);
}

TEST_CASE("ill-conditioned singular values", "[channel]") {
  SECTION("kappa = 1 gives equal singular values") {
    const RVector e = ill_singular_values(6, 9, 1.0);
    for (Index i = 0; i < e.size(); ++i) CHECK(e(i) == Approx(std::sqrt(9.0 / 6.0)).epsilon(1e-12));
  }
  SECTION("2x2, kappa = 4") {
    const RVector e = spectral_profile(gen_ill_conditioned(2, 2, 4, 3)).singular_values();
    CHECK(e(1) == Approx(std::sqrt(2.0 / 5.0)).epsilon(1e-10));
    CHECK(e(0) == Approx(2 * std::sqrt(2.0 / 5.0)).epsilon(1e-10));
  }
  SECTION("ratios are exactly geometric") {
    const RVector e = ill_singular_values(333, 500, 10);
    const double r0 = e(0) / e(1);
    for (Index i = 1; i + 1 < e.size(); ++i) CHECK(std::abs(e(i) / e(i + 1) - r0) <= 1e-12);
    CHECK(r0 == Approx(std::pow(10.0, 1.0 / 333)).epsilon(1e-12));
    CHECK(e.squaredNorm() == Approx(500).epsilon(1e-12));
  }
  SECTION("exact-condition convention hits kappa") {
    const ChannelMatrix A = gen_ill_conditioned(333, 500, 10, 5, KappaConvention::exact_condition);
    const RVector e = spectral_profile(A).singular_values();
    CHECK(std::abs(e(0) / e(e.size() - 1) - 10) <= 1e-9);
  }
  SECTION("stored factors reproduce the matrix") {
    const ChannelMatrix A = gen_ill_conditioned(20, 30, 10, 9);
    REQUIRE(A.factors());
    const ThinSvd& f = *A.factors();
    CHECK((f.U * f.s.asDiagonal() * f.V.adjoint() - A.entries()).norm() < 1e-10);
    CHECK((f.U.adjoint() * f.U - CMatrix::Identity(20, 20)).norm() < 1e-10);
    CHECK((f.V.adjoint() * f.V - CMatrix::Identity(20, 20)).norm() < 1e-10);
  }
}

TEST_CASE("correlated channel", "[channel]") {
  SECTION("alpha = 0 reduces to rayleigh") {
    CHECK((gen_correlated(30, 20, 0.0, 11).entries() - gen_rayleigh(30, 20, 11).entries()).norm() == 0.0);
  }
  SECTION("correlation matrix rows") {
    const RMatrix c = exp_correlation(3, 0.6);
    CHECK(c(0, 0) == 1.0);
    CHECK(c(0, 1) == Approx(0.6));
    CHECK(c(0, 2) == Approx(0.36));
  }
  SECTION("correlation raises the largest eigenvalue") {
    double a0 = 0, a6 = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
      a0 += spectral_profile(gen_correlated(500, 500, 0.0, s)).lambda_max();
      a6 += spectral_profile(gen_correlated(500, 500, 0.6, s)).lambda_max();
    }
    CHECK(a6 > a0);
  }
}

TEST_CASE("spectral profile", "[channel]") {
  SECTION("identity") {
    const SpectralProfile p = spectral_profile(ChannelMatrix(CMatrix::Identity(8, 8)));
    for (Index i = 0; i < 8; ++i) CHECK(p.singular_values()(i) == Approx(1.0).epsilon(1e-12));
  }
  SECTION("ill-conditioned first moment is F/N") {
    const SpectralProfile p = spectral_profile(gen_ill_conditioned(300, 200, 10, 2));
    CHECK(std::abs(p.moment(1) - 300.0 / 200.0) <= 1e-9);
    CHECK(p.moment(0) == Approx(200.0 / 200.0));
  }
  SECTION("rayleigh second moment is 1 + beta") {
    const SpectralProfile p = spectral_profile(gen_rayleigh(500, 500, 4));
    CHECK(p.moment(2) == Approx(2.0).epsilon(0.10));
  }
  SECTION("moments match brute-force traces") {
    for (auto [M, N] : {std::pair<Index, Index>{64, 64}, {48, 64}, {64, 40}}) {
      const ChannelMatrix A = gen_rayleigh(M, N, 3);
      const SpectralProfile p = spectral_profile(A);
      CHECK(p.moment(0) == Approx(static_cast<double>(std::min(M, N)) / N));
      for (int k = 1; k <= 6; ++k) {
        const double bf = dense_gram_power(A.entries(), k).trace() / static_cast<double>(N);
        CHECK(std::abs(p.moment(k) - bf) <= 1e-9 * std::max(1.0, bf));
      }
    }
  }
  SECTION("sorted nonincreasing; csv has one value per line") {
    const SpectralProfile p = spectral_profile(gen_correlated(30, 40, 0.3, 8));
    const RVector& s = p.singular_values();
    for (Index i = 1; i < s.size(); ++i) CHECK(s(i) <= s(i - 1));
    std::ostringstream os;
    p.write_csv(os);
    const std::string out = os.str();
    CHECK(std::count(out.begin(), out.end(), '\n') == 30);
  }
  SECTION("thin svd agrees with the profile") {
    const ChannelMatrix A = gen_rayleigh(30, 50, 6);
    const ThinSvd f = thin_svd(A);
    CHECK((f.U * f.s.asDiagonal() * f.V.adjoint() - A.entries()).norm() < 1e-9);
    CHECK((f.s - spectral_profile(A).singular_values()).norm() < 1e-9);
  }
}

TEST_CASE("channel spec json round trip", "[channel]") {
  ChannelSpec s;
  s.family = ChannelFamily::ill;
  s.M = 333;
  s.N = 500;
  s.kappa = 50;
  s.seed = 42;
  const nlohmann::json j = s;
  const ChannelSpec t = j.get<ChannelSpec>();
  CHECK(t.family == s.family);
  CHECK(t.M == 333);
  CHECK(t.N == 500);
  CHECK(t.kappa == 50);
  CHECK(t.seed == 42);
  CHECK((generate(s).entries() - generate(t).entries()).norm() == 0.0);
  CHECK_THROWS_AS(family_from_string("wishart"), invalid_argument);
}

TEST_CASE("eigenvalue bound approximation", "[channel]") {
  SECTION("identity: tau = 1 returns the probe energy, large tau tends to 1") {
    const ChannelMatrix I(CMatrix::Identity(64, 64));
    const double b1 = eig_bound_approx(I, 1, 3).lambda_max_up;
    CHECK(b1 > 0.7 * 64);
    CHECK(b1 < 1.3 * 64);
    const double b200 = eig_bound_approx(I, 200, 3).lambda_max_up;
    CHECK(b200 >= 1.0);
    CHECK(b200 < 1.05);
    CHECK(eig_bound_approx(I, 5, 3).lambda_min_low == 0.0);
  }
  SECTION("kappa = 50, beta = 1.5, tau = 120 is close to the exact value") {
    const ChannelMatrix A = gen_ill_conditioned(333, 500, 50, 12);
    const double exact = spectral_profile(A).lambda_max();
    const double b = eig_bound_approx(A, 120, 12).lambda_max_up;
    // one probe can fall short of lambda_max by the factor |<u_1, s_0>|^(2/tau)
    CHECK(b > 0.95 * exact);
    CHECK(b < 1.25 * exact);
  }
  SECTION("larger tau tightens the seed-averaged bound") {
    const ChannelMatrix A = gen_ill_conditioned(333, 500, 50, 13);
    double b50 = 0, b200 = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
      b50 += eig_bound_approx(A, 50, s).lambda_max_up;
      b200 += eig_bound_approx(A, 200, s).lambda_max_up;
    }
    CHECK(b200 <= b50);
  }
  SECTION("averaging probes approaches the trace bound") {
    const ChannelMatrix A = gen_rayleigh(40, 40, 2);
    const double exact = spectral_profile(A).lambda_max();
    CHECK(eig_bound_approx(A, 3, 5, 2000).lambda_max_up >= exact);
  }
  CHECK_THROWS_AS(eig_bound_approx(gen_rayleigh(4, 4, 1), 0, 1), invalid_argument);
}
