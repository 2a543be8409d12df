#include "flowcoh/clustering.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <thread>

#include "flowcoh/error.hpp"
#include "flowcoh/log.hpp"
#include "flowcoh/random.hpp"

namespace flowcoh {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kMinComponentMass = 1e-12;

struct Factor {
  Eigen::LLT<MatrixXd> llt;  // full
  VectorXd variances;        // diagonal
  double log_det = 0.0;
  double trace_inverse = 0.0;
  bool ok = true;
};

Factor factorize(const MatrixXd& cov, CovarianceType type) {
  Factor f;
  if (type == CovarianceType::kDiagonal) {
    f.variances = cov.diagonal();
    if ((f.variances.array() <= 0.0).any()) {
      f.ok = false;
      return f;
    }
    f.log_det = f.variances.array().log().sum();
    f.trace_inverse = f.variances.array().inverse().sum();
    return f;
  }
  f.llt.compute(cov);
  if (f.llt.info() != Eigen::Success) {
    f.ok = false;
    return f;
  }
  f.log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  // tr(Sigma^-1) = ||L^-1||_F^2
  MatrixXd inv_l = MatrixXd::Identity(cov.rows(), cov.cols());
  f.llt.matrixL().solveInPlace(inv_l);
  f.trace_inverse = inv_l.squaredNorm();
  return f;
}

// log N(x_i; mu, Sigma) for every row of x.
VectorXd log_density(const MatrixXd& x, const VectorXd& mean, const Factor& f,
                     CovarianceType type) {
  const MatrixXd centred = x.rowwise() - mean.transpose();
  VectorXd maha;
  if (type == CovarianceType::kDiagonal) {
    maha = (centred.array().square().rowwise() / f.variances.transpose().array())
               .rowwise()
               .sum();
  } else {
    const MatrixXd z = f.llt.matrixL().solve(centred.transpose());
    maha = z.colwise().squaredNorm().transpose();
  }
  const double d = static_cast<double>(x.cols());
  const double constant = d * std::log(2.0 * std::numbers::pi) + f.log_det;
  return (-0.5 * (maha.array() + constant)).matrix();
}

MatrixXd covariance(const MatrixXd& centred, const VectorXd& weights, double mass, double lambda,
                    CovarianceType type) {
  const auto d = centred.cols();
  if (type == CovarianceType::kDiagonal) {
    VectorXd var = (centred.array().square().colwise() * weights.array()).colwise().sum() / mass;
    var.array() += lambda;
    return var.asDiagonal();
  }
  const MatrixXd scaled = centred.array().colwise() * weights.array().sqrt();
  MatrixXd lower = MatrixXd::Zero(d, d);
  lower.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / mass);
  MatrixXd cov = lower.selfadjointView<Eigen::Lower>();
  cov.diagonal().array() += lambda;
  return cov;
}

VectorXd log_sum_exp_rows(const MatrixXd& logp) {
  const VectorXd row_max = logp.rowwise().maxCoeff();
  return row_max.array() + (logp.colwise() - row_max).array().exp().rowwise().sum().log();
}

struct EStep {
  MatrixXd resp;  // N x C
  double log_likelihood = 0.0;
  double objective = 0.0;
  std::string failure;
};

// The regularised M-step Sigma = S + lambda I is the exact maximiser of the
// objective in which each component density carries exp(-lambda/2 tr Sigma^-1),
// so responsibilities include that factor and EM cannot decrease it.
EStep expectation(const MatrixXd& x, const GmmModel& m) {
  EStep e;
  const auto n = x.rows();
  const auto c = static_cast<Eigen::Index>(m.n_components);
  MatrixXd logp(n, c);
  VectorXd penalty(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const Factor f = factorize(m.covariances[k], m.covariance);
    if (!f.ok) {
      e.failure = "covariance of component " + std::to_string(k + 1) + " is not positive definite";
      return e;
    }
    logp.col(k) = log_density(x, m.means[k], f, m.covariance).array() + std::log(m.weights[k]);
    penalty[k] = 0.5 * m.reg_lambda * f.trace_inverse;
  }
  e.log_likelihood = log_sum_exp_rows(logp).sum();
  logp.rowwise() -= penalty.transpose();
  const VectorXd lse = log_sum_exp_rows(logp);
  e.objective = lse.sum();
  if (!std::isfinite(e.log_likelihood) || !std::isfinite(e.objective)) {
    e.failure = "non-finite log-likelihood";
    return e;
  }
  e.resp = (logp.colwise() - lse).array().exp();
  return e;
}

// Returns an empty string on success.
std::string maximization(const MatrixXd& x, const MatrixXd& resp, GmmModel& m) {
  const auto n = static_cast<double>(x.rows());
  for (std::size_t k = 0; k < m.n_components; ++k) {
    const VectorXd r = resp.col(static_cast<Eigen::Index>(k));
    const double mass = r.sum();
    if (!(mass > kMinComponentMass)) {
      return "component " + std::to_string(k + 1) + " lost all responsibility";
    }
    m.weights[static_cast<Eigen::Index>(k)] = mass / n;
    m.means[k] = x.transpose() * r / mass;
    const MatrixXd centred = x.rowwise() - m.means[k].transpose();
    m.covariances[k] = covariance(centred, r, mass, m.reg_lambda, m.covariance);
  }
  return {};
}

struct ReplicateRun {
  ReplicateResult result;
  GmmModel model;
};

ReplicateRun run_replicate(const MatrixXd& x, const MatrixXd& data_cov, const GmmOptions& opt,
                           std::size_t index) {
  ReplicateRun run;
  ReplicateResult& res = run.result;
  res.index = index;
  res.seed = derive_seed(opt.seed, "gmm", index);
  Rng rng(res.seed);

  const auto n = static_cast<std::size_t>(x.rows());
  GmmModel& m = run.model;
  m.n_components = opt.n_components;
  m.dimension = static_cast<std::size_t>(x.cols());
  m.reg_lambda = opt.reg_lambda;
  m.covariance = opt.covariance;
  m.weights = VectorXd::Constant(static_cast<Eigen::Index>(opt.n_components),
                                 1.0 / static_cast<double>(opt.n_components));
  // Partial Fisher-Yates: C distinct rows.
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  for (std::size_t k = 0; k < opt.n_components; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(rows[k], rows[pick(rng)]);
    m.means.push_back(x.row(static_cast<Eigen::Index>(rows[k])).transpose());
    m.covariances.push_back(data_cov);
  }

  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0;; ++iter) {
    EStep e = expectation(x, m);
    if (!e.failure.empty()) {
      res.failed = true;
      res.failure = e.failure;
      return run;
    }
    res.trace.push_back(e.objective);
    m.log_likelihood = e.log_likelihood;
    m.objective = e.objective;
    res.log_likelihood = e.log_likelihood;
    res.objective = e.objective;
    res.iterations = iter;
    if (iter > 0 && e.objective - previous < opt.tolerance * std::abs(previous)) {
      res.converged = true;
      return run;
    }
    if (iter == opt.max_iterations) return run;
    previous = e.objective;
    if (auto failure = maximization(x, e.resp, m); !failure.empty()) {
      res.failed = true;
      res.failure = failure;
      return run;
    }
  }
}

void validate(const MatrixXd& x, const GmmOptions& opt) {
  if (opt.n_components < 1) throw ValidationError("fit_gmm: n_components must be >= 1");
  if (static_cast<std::size_t>(x.rows()) < opt.n_components) {
    throw ValidationError("fit_gmm: n_components (" + std::to_string(opt.n_components) +
                          ") exceeds the number of profiles (" + std::to_string(x.rows()) + ")");
  }
  if (x.cols() < 1) throw ValidationError("fit_gmm: profiles have zero dimension");
  if (!(opt.reg_lambda >= 0.0)) throw ValidationError("fit_gmm: reg_lambda must be >= 0");
  if (opt.n_replicates < 1) throw ValidationError("fit_gmm: n_replicates must be >= 1");
  if (opt.n_threads < 1) throw ValidationError("fit_gmm: n_threads must be >= 1");
  if (!x.allFinite()) throw DataError("fit_gmm: profiles contain non-finite values");
}

}  // namespace

GmmFit fit_gmm(const MatrixXd& profiles, const GmmOptions& options) {
  validate(profiles, options);
  const MatrixXd centred = profiles.rowwise() - profiles.colwise().mean();
  const VectorXd ones = VectorXd::Ones(profiles.rows());
  const MatrixXd data_cov = covariance(centred, ones, static_cast<double>(profiles.rows()),
                                       options.reg_lambda, options.covariance);

  std::vector<ReplicateRun> runs(options.n_replicates);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < options.n_replicates;) {
      runs[r] = run_replicate(profiles, data_cov, options, r);
    }
  };
  const std::size_t n_threads = std::min(options.n_threads, options.n_replicates);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  GmmFit fit;
  std::optional<std::size_t> best;
  for (auto& run : runs) {
    const auto& res = run.result;
    if (res.failed) {
      warn("fit_gmm: replicate " + std::to_string(res.index) + " discarded: " + res.failure);
    } else if (!best || res.objective > runs[*best].result.objective) {
      best = res.index;
    }
  }
  if (!best) throw NumericalError("fit_gmm: all " + std::to_string(runs.size()) +
                                  " replicates failed");
  fit.best_replicate = *best;
  fit.model = std::move(runs[*best].model);
  fit.replicates.reserve(runs.size());
  for (auto& run : runs) fit.replicates.push_back(std::move(run.result));
  return fit;
}

double ClusterAssignment::max_posterior() const {
  return posteriors.empty() ? 0.0 : *std::max_element(posteriors.begin(), posteriors.end());
}

std::vector<ClusterAssignment> assign_all(const GmmModel& model, const MatrixXd& profiles) {
  if (static_cast<std::size_t>(profiles.cols()) != model.dimension) {
    throw DataError("assign: profile dimension " + std::to_string(profiles.cols()) +
                    " does not match model dimension " + std::to_string(model.dimension));
  }
  const auto n = profiles.rows();
  const auto c = static_cast<Eigen::Index>(model.n_components);
  MatrixXd logp(n, c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const Factor f = factorize(model.covariances[k], model.covariance);
    if (!f.ok) throw NumericalError("assign: covariance is not positive definite");
    logp.col(k) =
        log_density(profiles, model.means[k], f, model.covariance).array() +
        std::log(model.weights[k]);
  }
  std::vector<ClusterAssignment> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& a = out[static_cast<std::size_t>(i)];
    a.triple_index = static_cast<std::size_t>(i);
    const double top = logp.row(i).maxCoeff();
    a.posteriors.resize(model.n_components);
    double total = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
      a.posteriors[k] = std::exp(logp(i, k) - top);
      total += a.posteriors[k];
    }
    std::size_t label = 0;
    for (std::size_t k = 0; k < model.n_components; ++k) {
      a.posteriors[k] /= total;
      if (a.posteriors[k] > a.posteriors[label]) label = k;
    }
    a.label = label + 1;
  }
  return out;
}

ClusterAssignment assign(const GmmModel& model, std::span<const double> profile,
                         std::size_t triple_index) {
  const MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(
      profile.data(), static_cast<Eigen::Index>(profile.size()));
  auto a = std::move(assign_all(model, row).front());
  a.triple_index = triple_index;
  return a;
}

std::vector<ClusterSummary> cluster_report(const GmmModel& model,
                                           std::span<const ClusterAssignment> assignments,
                                           std::span<const Triple> triples) {
  std::vector<ClusterSummary> out(model.n_components);
  for (std::size_t k = 0; k < model.n_components; ++k) {
    auto& s = out[k];
    s.label = k + 1;
    s.weight = model.weights[static_cast<Eigen::Index>(k)];
    s.mean = model.means[k];
    s.std_dev = model.covariances[k].diagonal().array().sqrt();
  }
  for (const auto& a : assignments) {
    if (a.label < 1 || a.label > model.n_components) {
      throw DataError("cluster_report: label " + std::to_string(a.label) + " out of range");
    }
    auto& s = out[a.label - 1];
    s.members.push_back(a.triple_index);
    if (!triples.empty()) {
      if (a.triple_index >= triples.size()) {
        throw DataError("cluster_report: triple index out of range");
      }
      s.edges.insert(triples[a.triple_index].edge_ab());
      s.edges.insert(triples[a.triple_index].edge_bc());
    }
  }
  return out;
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw DataError("adjusted_rand_index: label lengths differ");
  const auto pairs = [](double n) { return n * (n - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [_, n] : table) index += pairs(n);
  for (const auto& [_, n] : rows) sum_rows += pairs(n);
  for (const auto& [_, n] : cols) sum_cols += pairs(n);
  const double expected = sum_rows * sum_cols / pairs(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace flowcoh
