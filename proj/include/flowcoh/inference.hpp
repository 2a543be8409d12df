#pragma once

// Goodman-distribution confidence intervals for squared coherence.

#include <cstddef>
#include <vector>

#include "flowcoh/spectral.hpp"

namespace flowcoh {

/// P(R_hat <= r_hat | R = true_r) for the squared coherence estimated from
/// `n_looks` independent complex Gaussian looks. Exact finite sum of n_looks - 1
/// non-negative terms; reduces to 1 - (1 - r_hat)^(L-1) at true_r = 0.
/// Throws ValidationError for n_looks < 2 or arguments outside [0, 1].
double goodman_cdf(double r_hat, double true_r, std::size_t n_looks);

/// Null quantile: the r with P(R_hat <= r | R = 0) = p, i.e. 1 - (1-p)^(1/(L-1)).
double null_coherence_quantile(double p, std::size_t n_looks);

struct CoherenceInterval {
  double lower = 0.0;
  double upper = 1.0;
  double level = 0.05;  // alpha
  bool significant = false;  // lower > 0
};

/// Test-inversion interval: lower is the largest true_r with
/// P(R_hat >= r_hat | true_r) <= alpha/2 (0 if none), upper the smallest true_r
/// with P(R_hat <= r_hat | true_r) <= alpha/2 (1 if none). Both found by
/// bisection to 1e-6.
CoherenceInterval confidence_interval(double r_hat, std::size_t n_looks, double alpha);

struct ThresholdedProfile {
  FrequencyGrid grid;
  std::vector<double> estimates;  // R_hat; 0 where coherence is undefined
  std::vector<double> values;     // R_hat where significant, else exactly 0
  std::vector<CoherenceInterval> intervals;
  std::vector<bool> defined;      // false where R_hat was undefined

  std::size_t n_significant() const;
};

/// Where coherence is undefined the estimate and thresholded value are 0 and
/// the interval is the uninformative [0, 1], not significant.
ThresholdedProfile threshold_profile(const CoherenceProfile& profile, std::size_t n_looks,
                                     double alpha);

}  // namespace flowcoh
