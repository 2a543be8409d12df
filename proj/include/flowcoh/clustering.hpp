#pragma once

// Gaussian mixture clustering of coherence profiles, fit by EM with
// covariance regularisation and random restarts.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flowcoh/ingest.hpp"

namespace flowcoh {

enum class CovarianceType { kFull, kDiagonal };

struct GmmOptions {
  std::size_t n_components = 4;
  double reg_lambda = 1e-3;
  std::size_t n_replicates = 1000;
  std::uint64_t seed = 0;
  CovarianceType covariance = CovarianceType::kFull;
  std::size_t max_iterations = 500;
  double tolerance = 1e-7;  // relative log-likelihood improvement
  std::size_t n_threads = 1;
};

struct GmmModel {
  std::size_t n_components = 0;
  std::size_t dimension = 0;
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;  // diagonal mode stores diagonal matrices
  double log_likelihood = 0.0;  // sum_i log sum_c w_c N(x_i; mu_c, Sigma_c)
  double objective = 0.0;       // penalised log-likelihood maximised by EM
  double reg_lambda = 0.0;
  CovarianceType covariance = CovarianceType::kFull;
};

/// One EM run. `trace` holds the EM objective after every E-step: the
/// log-likelihood with each component density scaled by
/// exp(-lambda/2 tr Sigma_c^-1). Adding lambda to the covariance diagonal is
/// the exact M-step for this objective, so the trace never decreases; with
/// lambda = 0 it is the plain log-likelihood.
struct ReplicateResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  bool converged = false;
  std::size_t iterations = 0;
  double log_likelihood = 0.0;
  double objective = 0.0;
  std::vector<double> trace;
};

struct GmmFit {
  GmmModel model;
  std::size_t best_replicate = 0;
  std::vector<ReplicateResult> replicates;
};

/// Rows of `profiles` are observations. Replicate r draws its initial means
/// from derive_seed(seed, "gmm", r), so results do not depend on n_threads.
/// The best objective wins, ties to the lowest replicate index. Failed
/// replicates are warned about; throws NumericalError if all fail.
GmmFit fit_gmm(const Eigen::MatrixXd& profiles, const GmmOptions& options);

struct ClusterAssignment {
  std::size_t triple_index = 0;
  std::size_t label = 0;  // 1..C
  std::vector<double> posteriors;

  double max_posterior() const;
};

/// Posterior responsibilities; label is the argmax, ties to the lowest index.
ClusterAssignment assign(const GmmModel& model, std::span<const double> profile,
                         std::size_t triple_index = 0);

/// assign() for every row, factorising each covariance once.
std::vector<ClusterAssignment> assign_all(const GmmModel& model, const Eigen::MatrixXd& profiles);

struct ClusterSummary {
  std::size_t label = 0;  // 1..C
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd std_dev;  // sqrt(diag Sigma_c)
  std::vector<std::size_t> members;  // triple indices
  std::set<EdgeKey> edges;           // union of member triples' edges
};

/// One summary per component. `triples[i]` names the triple of profile row i;
/// pass an empty span to skip the edge sub-graphs.
std::vector<ClusterSummary> cluster_report(const GmmModel& model,
                                           std::span<const ClusterAssignment> assignments,
                                           std::span<const Triple> triples);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace flowcoh
