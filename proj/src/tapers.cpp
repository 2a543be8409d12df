#include "flowcoh/tapers.hpp"

#include <lapacke.h>

#include <algorithm>
#include <boost/multiprecision/mpfr.hpp>
#include <cmath>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>

#include "flowcoh/error.hpp"
#include "flowcoh/log.hpp"

namespace flowcoh {
namespace {

constexpr double kPi = std::numbers::pi;

void validate_dpss_args(std::size_t length, double time_bandwidth, std::size_t n_tapers) {
  if (length < 2) throw ValidationError("compute_dpss: length must be >= 2");
  if (!(time_bandwidth > 0.0) || !(time_bandwidth < static_cast<double>(length) / 2.0)) {
    throw ValidationError("compute_dpss: time_bandwidth must lie in (0, length/2)");
  }
  if (n_tapers < 1 || n_tapers > length) {
    throw ValidationError("compute_dpss: n_tapers must lie in [1, length]");
  }
}

// Row interchanges and fill-in as in LAPACK ?gttrf; the solve is ?gtts2.
template <typename Real>
class TridiagonalLu {
 public:
  TridiagonalLu(const std::vector<Real>& diag, const std::vector<Real>& off, const Real& shift,
                const Real& tiny_pivot)
      : n_(diag.size()), dl_(off), d_(diag), du_(off), du2_(n_ > 2 ? n_ - 2 : 0), swap_(n_, false) {
    for (auto& v : d_) v -= shift;
    for (std::size_t i = 0; i + 1 < n_; ++i) {
      if (abs(d_[i]) >= abs(dl_[i])) {
        if (d_[i] == 0) d_[i] = tiny_pivot;
        const Real fact = dl_[i] / d_[i];
        dl_[i] = fact;
        d_[i + 1] -= fact * du_[i];
      } else {
        const Real fact = d_[i] / dl_[i];
        d_[i] = dl_[i];
        dl_[i] = fact;
        const Real temp = du_[i];
        du_[i] = d_[i + 1];
        d_[i + 1] = temp - fact * d_[i + 1];
        if (i + 2 < n_) {
          du2_[i] = du_[i + 1];
          du_[i + 1] = -fact * du_[i + 1];
        }
        swap_[i] = true;
      }
    }
    if (d_[n_ - 1] == 0) d_[n_ - 1] = tiny_pivot;
  }

  void solve(std::vector<Real>& b) const {
    for (std::size_t i = 0; i + 1 < n_; ++i) {
      if (!swap_[i]) {
        b[i + 1] -= dl_[i] * b[i];
      } else {
        const Real temp = b[i];
        b[i] = b[i + 1];
        b[i + 1] = temp - dl_[i] * b[i];
      }
    }
    b[n_ - 1] /= d_[n_ - 1];
    if (n_ > 1) b[n_ - 2] = (b[n_ - 2] - du_[n_ - 2] * b[n_ - 1]) / d_[n_ - 2];
    for (std::size_t i = n_ - 2; i-- > 0;) {
      b[i] = (b[i] - du_[i] * b[i + 1] - du2_[i] * b[i + 2]) / d_[i];
    }
  }

 private:
  std::size_t n_;
  std::vector<Real> dl_, d_, du_, du2_;
  std::vector<bool> swap_;
};

// Multiprecision Rayleigh-quotient refinement of a Slepian eigenvector, then
// lambda = (A h)[n*] / h[n*] at the largest component.
template <unsigned Digits>
class ExtendedRefiner {
 public:
  using Real = boost::multiprecision::number<
      boost::multiprecision::mpfr_float_backend<Digits>, boost::multiprecision::et_off>;

  ExtendedRefiner(std::size_t length, double time_bandwidth) : k_(length) {
    const Real pi = boost::multiprecision::default_ops::get_constant_pi<
        typename Real::backend_type>();
    const Real w = Real(time_bandwidth) / Real(static_cast<unsigned long>(length));
    const Real cos_w = cos(2 * pi * w);
    diag_.resize(k_);
    off_.resize(k_ - 1);
    Real norm = 0;
    for (std::size_t n = 0; n < k_; ++n) {
      const Real centre = (Real(static_cast<unsigned long>(k_ - 1)) -
                           2 * Real(static_cast<unsigned long>(n))) / 2;
      diag_[n] = centre * centre * cos_w;
      norm = std::max(norm, Real(abs(diag_[n])));
    }
    for (std::size_t n = 0; n + 1 < k_; ++n) {
      off_[n] = Real(static_cast<unsigned long>(n + 1)) *
                Real(static_cast<unsigned long>(k_ - 1 - n)) / 2;
      norm = std::max(norm, Real(abs(off_[n])));
    }
    scale_ = norm;
    kernel_.resize(k_);
    kernel_[0] = 2 * w;
    for (std::size_t j = 1; j < k_; ++j) {
      const Real jj = Real(static_cast<unsigned long>(j));
      kernel_[j] = sin(2 * pi * w * jj) / (pi * jj);
    }
  }

  // Replaces `h` by the refined eigenvector rounded to double; returns 1 - lambda.
  double refine(std::span<double> h) const {
    std::vector<Real> x(h.begin(), h.end());
    normalize(x);
    Real theta = rayleigh(x);
    const Real tolerance = scale_ * pow(Real(10), -static_cast<int>(Digits) + 12);
    const Real tiny_pivot = scale_ * pow(Real(10), -static_cast<int>(Digits));
    for (int iter = 0; iter < 6; ++iter) {
      TridiagonalLu<Real> lu(diag_, off_, theta, tiny_pivot);
      std::vector<Real> y = x;
      lu.solve(y);
      normalize(y);
      if (dot(x, y) < 0) {
        for (auto& v : y) v = -v;
      }
      x = std::move(y);
      theta = rayleigh(x);
      if (residual(x, theta) <= tolerance) break;
    }
    std::size_t peak = 0;
    for (std::size_t n = 1; n < k_; ++n) {
      if (abs(x[n]) > abs(x[peak])) peak = n;
    }
    Real applied = 0;
    for (std::size_t m = 0; m < k_; ++m) {
      applied += kernel_[peak > m ? peak - m : m - peak] * x[m];
    }
    const Real leakage = 1 - applied / x[peak];
    for (std::size_t n = 0; n < k_; ++n) h[n] = static_cast<double>(x[n]);
    return static_cast<double>(leakage);
  }

 private:
  static Real dot(const std::vector<Real>& a, const std::vector<Real>& b) {
    Real s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  static void normalize(std::vector<Real>& v) {
    const Real inv = 1 / sqrt(dot(v, v));
    for (auto& x : v) x *= inv;
  }

  Real rayleigh(const std::vector<Real>& x) const {
    Real s = 0;
    for (std::size_t n = 0; n < k_; ++n) s += diag_[n] * x[n] * x[n];
    for (std::size_t n = 0; n + 1 < k_; ++n) s += 2 * off_[n] * x[n] * x[n + 1];
    return s;
  }

  Real residual(const std::vector<Real>& x, const Real& theta) const {
    Real worst = 0;
    for (std::size_t n = 0; n < k_; ++n) {
      Real r = (diag_[n] - theta) * x[n];
      if (n > 0) r += off_[n - 1] * x[n - 1];
      if (n + 1 < k_) r += off_[n] * x[n + 1];
      worst = std::max(worst, Real(abs(r)));
    }
    return worst;
  }

  std::size_t k_;
  std::vector<Real> diag_, off_, kernel_;
  Real scale_;
};

template <unsigned Digits>
std::vector<double> refine_all(TaperSet& set) {
  const ExtendedRefiner<Digits> refiner(set.length, set.time_bandwidth);
  std::vector<double> leakage(set.count);
  for (std::size_t l = 0; l < set.count; ++l) {
    leakage[l] = refiner.refine({set.values.data() + l * set.length, set.length});
  }
  return leakage;
}

// Leakage of the most concentrated taper is about exp(-2 pi NW); resolving it
// against 1 needs that many decimal digits plus guard digits.
std::vector<double> extended_leakages(TaperSet& set) {
  const double needed = 2.0 * kPi * set.time_bandwidth / std::log(10.0) + 20.0;
  if (needed <= 40) return refine_all<40>(set);
  if (needed <= 80) return refine_all<80>(set);
  if (needed <= 120) return refine_all<120>(set);
  if (needed > 200) {
    warn("compute_dpss: NW=" + std::to_string(set.time_bandwidth) +
         " needs more than 200 digits; smallest leakages are not resolved");
  }
  return refine_all<200>(set);
}

std::vector<double> double_leakages(const TaperSet& set) {
  const double w = set.bandwidth();
  std::vector<double> kernel(set.length);
  kernel[0] = 2.0 * w;
  for (std::size_t j = 1; j < set.length; ++j) {
    const auto jj = static_cast<double>(j);
    kernel[j] = std::sin(2.0 * kPi * w * jj) / (kPi * jj);
  }
  std::vector<double> leakage(set.count);
  for (std::size_t l = 0; l < set.count; ++l) {
    const auto h = set.taper(l);
    const auto peak = static_cast<std::size_t>(
        std::max_element(h.begin(), h.end(),
                         [](double a, double b) { return std::abs(a) < std::abs(b); }) -
        h.begin());
    double applied = 0.0;
    for (std::size_t m = 0; m < set.length; ++m) {
      applied += kernel[peak > m ? peak - m : m - peak] * h[m];
    }
    leakage[l] = std::clamp(1.0 - applied / h[peak], 0.0, 1.0);
  }
  return leakage;
}

void orthonormalize(TaperSet& set) {
  const std::size_t k = set.length;
  for (std::size_t l = 0; l < set.count; ++l) {
    double* v = set.values.data() + l * k;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < l; ++p) {
        const double* u = set.values.data() + p * k;
        double proj = 0.0;
        for (std::size_t n = 0; n < k; ++n) proj += u[n] * v[n];
        for (std::size_t n = 0; n < k; ++n) v[n] -= proj * u[n];
      }
      double norm = 0.0;
      for (std::size_t n = 0; n < k; ++n) norm += v[n] * v[n];
      norm = std::sqrt(norm);
      for (std::size_t n = 0; n < k; ++n) v[n] /= norm;
    }
  }
}

void apply_sign_convention(TaperSet& set) {
  for (std::size_t l = 0; l < set.count; ++l) {
    double* v = set.values.data() + l * set.length;
    double peak = 0.0;
    for (std::size_t n = 0; n < set.length; ++n) peak = std::max(peak, std::abs(v[n]));
    for (std::size_t n = 0; n < set.length; ++n) {
      if (std::abs(v[n]) > 1e-6 * peak) {
        if (v[n] < 0) {
          for (std::size_t m = 0; m < set.length; ++m) v[m] = -v[m];
        }
        break;
      }
    }
  }
}

}  // namespace

DpssTridiagonal dpss_tridiagonal(std::size_t length, double half_bandwidth) {
  DpssTridiagonal t;
  t.diagonal.resize(length);
  t.off_diagonal.resize(length > 0 ? length - 1 : 0);
  const double cos_w = std::cos(2.0 * kPi * half_bandwidth);
  const auto k = static_cast<double>(length);
  for (std::size_t n = 0; n < length; ++n) {
    const double centre = (k - 1.0 - 2.0 * static_cast<double>(n)) / 2.0;
    t.diagonal[n] = centre * centre * cos_w;
  }
  for (std::size_t n = 0; n + 1 < length; ++n) {
    t.off_diagonal[n] = static_cast<double>(n + 1) * (k - 1.0 - static_cast<double>(n)) / 2.0;
  }
  return t;
}

TaperSet compute_dpss(std::size_t length, double time_bandwidth, std::size_t n_tapers,
                      const DpssOptions& options) {
  validate_dpss_args(length, time_bandwidth, n_tapers);
  if (options.warn_excess_tapers && static_cast<double>(n_tapers) > 2.0 * time_bandwidth - 1.0) {
    warn("compute_dpss: n_tapers=" + std::to_string(n_tapers) + " exceeds 2*NW-1 for NW=" +
         std::to_string(time_bandwidth) + "; higher tapers are poorly concentrated");
  }

  TaperSet set;
  set.length = length;
  set.time_bandwidth = time_bandwidth;
  set.count = n_tapers;

  auto tri = dpss_tridiagonal(length, time_bandwidth / static_cast<double>(length));
  tri.off_diagonal.push_back(0.0);  // LAPACKE wants n entries
  const auto n = static_cast<lapack_int>(length);
  const auto l = static_cast<lapack_int>(n_tapers);
  lapack_int found = 0;
  std::vector<double> eigenvalues(length);
  std::vector<double> vectors(length * n_tapers);
  std::vector<lapack_int> support(2 * n_tapers);
  const lapack_int info = LAPACKE_dstevr(
      LAPACK_COL_MAJOR, 'V', 'I', n, tri.diagonal.data(), tri.off_diagonal.data(), 0.0, 0.0,
      n - l + 1, n, 0.0, &found, eigenvalues.data(), vectors.data(), n, support.data());
  if (info != 0 || found != l) {
    throw NumericalError("compute_dpss: tridiagonal eigensolver failed (info=" +
                         std::to_string(info) + ")");
  }

  // LAPACK returns ascending eigenvalues; taper 0 is the largest.
  set.values.resize(length * n_tapers);
  set.operator_eigenvalues.resize(n_tapers);
  for (std::size_t i = 0; i < n_tapers; ++i) {
    const std::size_t src = n_tapers - 1 - i;
    set.operator_eigenvalues[i] = eigenvalues[src];
    std::copy_n(vectors.begin() + static_cast<std::ptrdiff_t>(src * length), length,
                set.values.begin() + static_cast<std::ptrdiff_t>(i * length));
  }

  std::vector<double> leakage;
  if (options.precision == ConcentrationPrecision::kExtended) {
    leakage = extended_leakages(set);
  } else {
    orthonormalize(set);
    leakage = double_leakages(set);
  }
  apply_sign_convention(set);
  set.concentrations.reserve(n_tapers);
  for (double x : leakage) set.concentrations.push_back(Concentration::from_leakage(x));
  return set;
}

TaperSet boxcar_taper(std::size_t length) {
  if (length < 1) throw ValidationError("boxcar_taper: length must be >= 1");
  TaperSet set;
  set.length = length;
  set.time_bandwidth = 1.0;
  set.count = 1;
  set.values.assign(length, 1.0 / std::sqrt(static_cast<double>(length)));
  // h^T A h for constant h reduces to a weighted sum over lags.
  const double w = 1.0 / static_cast<double>(length);
  const auto k = static_cast<double>(length);
  double sum = k * 2.0 * w;
  for (std::size_t j = 1; j < length; ++j) {
    const auto jj = static_cast<double>(j);
    sum += 2.0 * (k - jj) * std::sin(2.0 * kPi * w * jj) / (kPi * jj);
  }
  set.concentrations = {Concentration::from_leakage(1.0 - sum / k)};
  set.operator_eigenvalues = {0.0};
  return set;
}

double concentration_quadratic_form(std::span<const double> sequence, double half_bandwidth) {
  const std::size_t k = sequence.size();
  double total = 0.0;
  for (std::size_t n = 0; n < k; ++n) {
    for (std::size_t m = 0; m < k; ++m) {
      double a = 2.0 * half_bandwidth;
      if (n != m) {
        const double d = static_cast<double>(n) - static_cast<double>(m);
        a = std::sin(2.0 * kPi * half_bandwidth * d) / (kPi * d);
      }
      total += sequence[n] * a * sequence[m];
    }
  }
  return total;
}

void write_taper_csv(std::ostream& out, const TaperSet& tapers) {
  for (std::size_t l = 0; l < tapers.count; ++l) {
    out << (l ? "," : "") << "taper_" << l;
  }
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t n = 0; n < tapers.length; ++n) {
    for (std::size_t l = 0; l < tapers.count; ++l) {
      out << (l ? "," : "") << tapers.values[l * tapers.length + n];
    }
    out << '\n';
  }
  out.precision(old_precision);
}

std::shared_ptr<const TaperSet> TaperCache::get(std::size_t length, double time_bandwidth,
                                                std::size_t n_tapers) {
  const Key key{length, time_bandwidth, n_tapers};
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  auto computed = std::make_shared<const TaperSet>(
      compute_dpss(length, time_bandwidth, n_tapers, options_));
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(key, computed);
  return computed;
}

std::size_t TaperCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace flowcoh
