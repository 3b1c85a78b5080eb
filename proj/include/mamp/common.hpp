#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <atomic>
#include <exception>
#include <mutex>

namespace mamp {

using cd = std::complex<double>;
using Index = Eigen::Index;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr const char* kVersion = "0.4.0";

struct invalid_argument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical failure that the caller may want to recover from (degenerate
// normalizers, decomposition failure, ...).
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw invalid_argument(msg);
}

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, tag); lets one user seed drive channel, noise,
// message and probe draws without them sharing a sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (tag * 0xd1b54a32d192ed03ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag = 0) {
  return Rng(derive_seed(seed, tag));
}

// CN(0, var)
inline cd complex_normal(Rng& rng, double var = 1.0) {
  std::normal_distribution<double> n(0.0, std::sqrt(var / 2.0));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

inline CMatrix complex_normal_matrix(Index rows, Index cols, Rng& rng, double var = 1.0) {
  CMatrix out(rows, cols);
  std::normal_distribution<double> n(0.0, std::sqrt(var / 2.0));
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) {
      const double re = n(rng);
      const double im = n(rng);
      out(i, j) = cd(re, im);
    }
  return out;
}

// <a|b> = a^H b / n, real part (all covariances in this library are real).
inline double inner(const CMatrix& a, const CMatrix& b) {
  return (a.array().conjugate() * b.array()).sum().real() / static_cast<double>(a.size());
}

inline double mean_sq(const CMatrix& a) { return a.squaredNorm() / static_cast<double>(a.size()); }

inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double x) { return 10.0 * std::log10(x); }

// Runs f(i) for i in [0, n) on up to `threads` workers (0 = hardware
// concurrency). The first exception is rethrown after all workers finish.
template <class Fn>
void parallel_for(Index n, int threads, Fn&& f) {
  int hw = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  hw = static_cast<int>(std::min<Index>(hw, std::max<Index>(n, 1)));
  if (hw <= 1) {
    for (Index i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < hw; ++w)
    pool.emplace_back([&] {
      for (Index i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace mamp
