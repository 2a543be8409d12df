#include "flowcoh/inference.hpp"

#include <cmath>
#include <string>

#include "flowcoh/error.hpp"

namespace flowcoh {
namespace {

constexpr double kBisectionTolerance = 1e-6;

double null_cdf(double x, std::size_t n) {
  return -std::expm1(static_cast<double>(n - 1) * std::log1p(-x));
}

// Carter, Knapp & Nuttall (1973):
//   P(x) = x rho^n sum_{k=0}^{n-2} sigma^k 2F1(-k, 1-n; 1; c x),
//   rho = (1-c)/(1-cx), sigma = (1-x)/(1-cx),
//   2F1(-k, 1-n; 1; z) = sum_j C(k,j) C(n-1,j) z^j.
// Every term is non-negative, so there is no cancellation.
double goodman_cdf_unchecked(double x, double c, std::size_t n) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (c == 0.0) return null_cdf(x, n);
  if (c >= 1.0) return 0.0;
  using Real = long double;
  const Real lx = x;
  const Real lc = c;
  const Real denom = 1.0L - lc * lx;
  const Real rho = (1.0L - lc) / denom;
  const Real sigma = (1.0L - lx) / denom;
  const Real z = lc * lx;
  const Real big_n = static_cast<Real>(n);
  Real sum = 0.0L;
  Real sigma_k = 1.0L;
  for (std::size_t k = 0; k + 2 <= n; ++k) {
    Real term = 1.0L;
    Real hyper = 1.0L;
    for (std::size_t j = 1; j <= k; ++j) {
      const Real jj = static_cast<Real>(j);
      term *= (static_cast<Real>(k) - jj + 1.0L) * (big_n - jj) / (jj * jj) * z;
      hyper += term;
    }
    sum += sigma_k * hyper;
    sigma_k *= sigma;
  }
  const Real p = lx * std::pow(rho, big_n) * sum;
  return static_cast<double>(std::fmin(1.0L, std::fmax(0.0L, p)));
}

void check_looks(std::size_t n_looks) {
  if (n_looks < 2) {
    throw ValidationError("n_looks must be >= 2 (got " + std::to_string(n_looks) + ")");
  }
}

}  // namespace

double goodman_cdf(double r_hat, double true_r, std::size_t n_looks) {
  check_looks(n_looks);
  if (!(r_hat >= 0.0 && r_hat <= 1.0)) throw ValidationError("goodman_cdf: r_hat outside [0,1]");
  if (!(true_r >= 0.0 && true_r <= 1.0)) {
    throw ValidationError("goodman_cdf: true_r outside [0,1]");
  }
  return goodman_cdf_unchecked(r_hat, true_r, n_looks);
}

double null_coherence_quantile(double p, std::size_t n_looks) {
  check_looks(n_looks);
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("null_coherence_quantile: p outside [0,1]");
  return -std::expm1(std::log1p(-p) / static_cast<double>(n_looks - 1));
}

CoherenceInterval confidence_interval(double r_hat, std::size_t n_looks, double alpha) {
  check_looks(n_looks);
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("confidence_interval: alpha must lie in (0,1)");
  }
  if (!(r_hat >= 0.0 && r_hat <= 1.0)) {
    throw ValidationError("confidence_interval: r_hat outside [0,1]");
  }
  CoherenceInterval ci;
  ci.level = alpha;
  const double half = alpha / 2.0;
  if (r_hat >= 1.0) {
    ci.lower = ci.upper = 1.0;
    ci.significant = true;
    return ci;
  }

  // Upper tail P(R_hat >= r_hat | c) increases with c; at c = 0 it is (1-r)^(L-1).
  const double null_tail = std::pow(1.0 - r_hat, static_cast<double>(n_looks - 1));
  if (null_tail >= half) {
    ci.lower = 0.0;
  } else {
    double lo = 0.0, hi = 1.0;
    while (hi - lo > kBisectionTolerance) {
      const double mid = 0.5 * (lo + hi);
      if (1.0 - goodman_cdf_unchecked(r_hat, mid, n_looks) <= half) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    ci.lower = 0.5 * (lo + hi);
  }

  // Lower tail P(R_hat <= r_hat | c) decreases with c and vanishes at c = 1.
  if (1.0 - null_tail <= half) {
    ci.upper = 0.0;
  } else {
    double lo = 0.0, hi = 1.0;
    while (hi - lo > kBisectionTolerance) {
      const double mid = 0.5 * (lo + hi);
      if (goodman_cdf_unchecked(r_hat, mid, n_looks) <= half) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    ci.upper = 0.5 * (lo + hi);
  }
  ci.lower = std::fmin(ci.lower, ci.upper);
  ci.significant = ci.lower > 0.0;
  return ci;
}

std::size_t ThresholdedProfile::n_significant() const {
  std::size_t n = 0;
  for (const auto& ci : intervals) n += ci.significant ? 1 : 0;
  return n;
}

ThresholdedProfile threshold_profile(const CoherenceProfile& profile, std::size_t n_looks,
                                     double alpha) {
  ThresholdedProfile out;
  out.grid = profile.grid;
  const std::size_t nf = profile.values.size();
  out.estimates.assign(nf, 0.0);
  out.values.assign(nf, 0.0);
  out.intervals.resize(nf);
  out.defined.assign(nf, false);
  for (std::size_t q = 0; q < nf; ++q) {
    const auto& v = profile.values[q];
    if (!v) {
      out.intervals[q] = CoherenceInterval{0.0, 1.0, alpha, false};
      continue;
    }
    out.defined[q] = true;
    out.estimates[q] = *v;
    out.intervals[q] = confidence_interval(*v, n_looks, alpha);
    if (out.intervals[q].significant) out.values[q] = *v;
  }
  return out;
}

}  // namespace flowcoh
