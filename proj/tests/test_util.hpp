#pragma once

// Shared test-only oracles: central finite differences, relative-error
// comparison with an absolute floor, adaptive quadrature, and basic
// statistics for Monte-Carlo checks.

#include <functional>

#include "cfx/common.hpp"
#include "cfx/nn.hpp"

namespace testutil {

using cfx::Vec;

// central finite differences of a scalar function, h = 1e-5 by default
inline Vec fd_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  Vec xp = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max over components of |a_i - b_i| / max(floor, |a_i|, |b_i|)
inline double max_rel_err(const Vec& a, const Vec& b, double floor = 1.0) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({floor, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double rel_err(double a, double b, double floor = 1.0) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// adaptive Simpson on [lo, hi]
inline double simpson(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const auto rule = [&](double a, double b) {
    const double c = 0.5 * (a + b);
    return (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
  };
  std::function<double(double, double, double, double, int)> rec =
      [&](double a, double b, double whole, double eps, int depth) -> double {
    const double c = 0.5 * (a + b);
    const double left = rule(a, c);
    const double right = rule(c, b);
    if (depth > 40 || std::abs(left + right - whole) < 15.0 * eps)
      return left + right + (left + right - whole) / 15.0;
    return rec(a, c, left, eps / 2.0, depth + 1) + rec(c, b, right, eps / 2.0, depth + 1);
  };
  return rec(lo, hi, rule(lo, hi), tol, 0);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const Vec& samples) {
  MeanSe r;
  const double n = static_cast<double>(samples.size());
  for (double v : samples) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - r.mean) * (v - r.mean);
  r.se = std::sqrt(ss / (n - 1.0) / n);
  return r;
}

// a random MLP evaluated at a point where no relu pre-activation is within
// `margin` of zero (resampled until the margin holds)
template <typename MakeNet>
std::pair<cfx::DenseNet, Vec> generic_point(MakeNet&& make, int input_dim, cfx::Rng& rng,
                                            double margin = 1e-3) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    cfx::DenseNet net = make(rng);
    Vec x = rng.normal_vec(input_dim);
    cfx::ForwardTrace trace;
    cfx::forward_traced(net, x, &trace);
    bool ok = true;
    for (size_t l = 0; l < net.layers.size() && ok; ++l) {
      if (net.layers[l].act != cfx::Activation::Relu) continue;
      for (double t : trace.pre[l])
        if (std::abs(t) < margin) {
          ok = false;
          break;
        }
    }
    if (ok) return {std::move(net), std::move(x)};
  }
  throw std::runtime_error("generic_point: could not find a margin-respecting sample");
}

}  // namespace testutil
