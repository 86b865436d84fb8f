#pragma once

// Latent plausibility machinery. The norm of an n-dimensional standard
// Gaussian follows a chi distribution with mean
// C_n = sqrt(2) Gamma((n+1)/2) / Gamma(n/2), and the Gaussian mass of an
// annulus a <= ||z|| <= b is P(n/2, b^2/2) - P(n/2, a^2/2) with P the
// regularized lower incomplete gamma function. Also provides the hypersphere
// and log-likelihood regularizers and the closed-form expected-distance +
// volume objective over annulus regions together with its grid-search
// minimizer.

#include <thread>

#include "cfx/common.hpp"

namespace cfx {

// E ||z||_2 for z ~ N(0, I_n), evaluated in log space to avoid Gamma overflow
inline double chi_mean(int n_z) {
  require(n_z >= 1, "chi_mean: n_z must be >= 1");
  const double n = static_cast<double>(n_z);
  return std::exp(0.5 * std::log(2.0) + std::lgamma(0.5 * (n + 1.0)) - std::lgamma(0.5 * n));
}

namespace detail {

// series expansion of P(s, x), valid and fast for x < s + 1
inline double gamma_p_series(double s, double x) {
  double term = 1.0 / s;
  double sum = term;
  for (int k = 1; k <= 10000; ++k) {
    term *= x / (s + k);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-14)
      return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
  }
  throw std::runtime_error("gamma_p_series: no convergence");
}

// modified Lentz continued fraction for Q(s, x), x >= s + 1
inline double gamma_q_contfrac(double s, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 10000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-14)
      return h * std::exp(-x + s * std::log(x) - std::lgamma(s));
  }
  throw std::runtime_error("gamma_q_contfrac: no convergence");
}

}  // namespace detail

// regularized lower incomplete gamma function P(s, x)
inline double reg_gamma_P(double s, double x) {
  if (!(s > 0.0)) throw std::domain_error("reg_gamma_P: s must be > 0");
  if (!(x >= 0.0)) throw std::domain_error("reg_gamma_P: x must be >= 0");
  if (x == 0.0) return 0.0;
  if (x < s + 1.0) return detail::gamma_p_series(s, x);
  return 1.0 - detail::gamma_q_contfrac(s, x);
}

inline double reg_gamma_Q(double s, double x) {
  if (!(s > 0.0)) throw std::domain_error("reg_gamma_Q: s must be > 0");
  if (!(x >= 0.0)) throw std::domain_error("reg_gamma_Q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (x < s + 1.0) return 1.0 - detail::gamma_p_series(s, x);
  return detail::gamma_q_contfrac(s, x);
}

// D_a^b = { z : ||z||_2 in [a, b] }
struct AnnulusRegion {
  double a = 0.0;
  double b = 0.0;
  int n_z = 0;
};

inline AnnulusRegion make_annulus(double a, double b, int n_z) {
  require(n_z >= 1, "make_annulus: n_z must be >= 1");
  require(a >= 0.0 && b >= a, "make_annulus: need 0 <= a <= b");
  return AnnulusRegion{a, b, n_z};
}

// standard-Gaussian probability mass of the annulus
inline double prior_mass(const AnnulusRegion& r) {
  const double s = 0.5 * r.n_z;
  return reg_gamma_P(s, 0.5 * r.b * r.b) - reg_gamma_P(s, 0.5 * r.a * r.a);
}

// fraction of rows of `latents` whose norm lies in [a, b]
inline double empirical_mass(const Matrix& latents, const AnnulusRegion& r) {
  require(latents.rows >= 1, "empirical_mass: empty sample");
  require(latents.cols == r.n_z, "empirical_mass: dimension mismatch");
  int hits = 0;
  for (int i = 0; i < latents.rows; ++i) {
    const double nrm = norm2(latents.row(i));
    if (nrm >= r.a && nrm <= r.b) ++hits;
  }
  return static_cast<double>(hits) / latents.rows;
}

// --- plausibility regularizers ---------------------------------------------

enum class RegKind { Hypersphere, LogLik, None };

inline const char* reg_kind_name(RegKind k) {
  switch (k) {
    case RegKind::Hypersphere: return "hypersphere";
    case RegKind::LogLik: return "loglik";
    case RegKind::None: return "none";
  }
  return "?";
}

inline RegKind reg_kind_from_name(const std::string& s) {
  if (s == "hypersphere") return RegKind::Hypersphere;
  if (s == "loglik") return RegKind::LogLik;
  if (s == "none") return RegKind::None;
  throw std::invalid_argument("unknown regularizer kind: " + s);
}

struct RegularizerSpec {
  RegKind kind = RegKind::None;
  double beta = 0.0;
  double c = 0.0;  // target radius, hypersphere only

  static RegularizerSpec hypersphere(double beta, double c) {
    require(beta >= 0.0, "RegularizerSpec: beta must be >= 0");
    require(c > 0.0, "RegularizerSpec: target radius must be > 0");
    return {RegKind::Hypersphere, beta, c};
  }
  static RegularizerSpec loglik(double beta) {
    require(beta >= 0.0, "RegularizerSpec: beta must be >= 0");
    return {RegKind::LogLik, beta, 0.0};
  }
  static RegularizerSpec none() { return {}; }
};

struct OmegaEval {
  double value = 0.0;
  Vec grad;
};

// hypersphere: beta (||z|| - c)^2, gradient 2 beta (||z|| - c) z/||z||
// (defined as 0 at z = 0); loglik: beta ||z||^2, gradient 2 beta z
inline OmegaEval omega(const Vec& z, const RegularizerSpec& spec) {
  OmegaEval e;
  e.grad.assign(z.size(), 0.0);
  switch (spec.kind) {
    case RegKind::None:
      break;
    case RegKind::LogLik: {
      double sq = 0.0;
      for (double v : z) sq += v * v;
      e.value = spec.beta * sq;
      for (size_t i = 0; i < z.size(); ++i) e.grad[i] = 2.0 * spec.beta * z[i];
      break;
    }
    case RegKind::Hypersphere: {
      const double r = norm2(z);
      const double diff = r - spec.c;
      e.value = spec.beta * diff * diff;
      if (r > 0.0) {
        const double scale = 2.0 * spec.beta * diff / r;
        for (size_t i = 0; i < z.size(); ++i) e.grad[i] = scale * z[i];
      }
      break;
    }
  }
  return e;
}

// --- optimal-region objective ------------------------------------------------

// E_{z ~ N(0,I)} [ min_{z' in D_a^b} ||z - z'||^2 ], closed form:
//   a^2 P(n/2, a^2/2) + b^2 Q(n/2, b^2/2)
//   - 2 sqrt(2) Gamma((n+1)/2)/Gamma(n/2) [ a P((n+1)/2, a^2/2) + b Q((n+1)/2, b^2/2) ]
//   + n [ P(n/2+1, a^2/2) + Q(n/2+1, b^2/2) ]
inline double region_expected_distance(const AnnulusRegion& r) {
  const double n = static_cast<double>(r.n_z);
  const double ha = 0.5 * r.a * r.a;
  const double hb = 0.5 * r.b * r.b;
  const double ratio = std::exp(std::lgamma(0.5 * (n + 1.0)) - std::lgamma(0.5 * n));
  double v = r.a * r.a * reg_gamma_P(0.5 * n, ha) + r.b * r.b * reg_gamma_Q(0.5 * n, hb);
  v -= 2.0 * std::sqrt(2.0) * ratio *
       (r.a * reg_gamma_P(0.5 * (n + 1.0), ha) + r.b * reg_gamma_Q(0.5 * (n + 1.0), hb));
  v += n * (reg_gamma_P(0.5 * n + 1.0, ha) + reg_gamma_Q(0.5 * n + 1.0, hb));
  return v;
}

// Leb(D_a^b) = pi^{n/2} / Gamma(n/2+1) (b^n - a^n), log-space per radius
inline double region_volume(const AnnulusRegion& r) {
  const double n = static_cast<double>(r.n_z);
  const double lcoef = 0.5 * n * std::log(M_PI) - std::lgamma(0.5 * n + 1.0);
  const double outer = r.b > 0.0 ? std::exp(lcoef + n * std::log(r.b)) : 0.0;
  const double inner = r.a > 0.0 ? std::exp(lcoef + n * std::log(r.a)) : 0.0;
  const double vol = outer - inner;
  if (!std::isfinite(vol)) throw std::runtime_error("region_volume: overflow");
  return vol;
}

inline double region_objective(const AnnulusRegion& r, double eta) {
  require(eta > 0.0, "region_objective: eta must be > 0");
  return region_expected_distance(r) + eta * region_volume(r);
}

struct RegionOpt {
  double a = 0.0;
  double b = 0.0;
  double objective = 0.0;
};

// Grid-search minimizer of region_objective over {0 <= a <= b <= radius_max}
// on a uniform grid. Rows are processed in parallel; the reduction is a
// deterministic scan (strictly smaller objective wins, ties go to the
// lexicographically smaller (a, b)).
inline RegionOpt verify_optimal_region(int n_z, double eta, int grid_points, double radius_max,
                                       int threads = 0) {
  require(grid_points >= 100, "verify_optimal_region: need grid_points >= 100");
  require(radius_max > 0.0, "verify_optimal_region: radius_max must be > 0");
  Vec grid(grid_points);
  for (int i = 0; i < grid_points; ++i)
    grid[i] = radius_max * static_cast<double>(i) / (grid_points - 1);

  std::vector<RegionOpt> row_best(grid_points);
  auto scan_row = [&](int i) {
    RegionOpt best{grid[i], grid[i], std::numeric_limits<double>::infinity()};
    for (int j = i; j < grid_points; ++j) {
      const double obj = region_objective({grid[i], grid[j], n_z}, eta);
      if (obj < best.objective) best = {grid[i], grid[j], obj};
    }
    row_best[i] = best;
  };

  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, grid_points));
  if (n_threads == 1) {
    for (int i = 0; i < grid_points; ++i) scan_row(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t]() {
        for (int i = t; i < grid_points; i += n_threads) scan_row(i);
      });
    for (std::thread& th : pool) th.join();
  }

  RegionOpt best = row_best[0];
  for (int i = 1; i < grid_points; ++i)
    if (row_best[i].objective < best.objective) best = row_best[i];
  return best;
}

}  // namespace cfx
