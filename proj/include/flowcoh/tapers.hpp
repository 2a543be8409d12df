#pragma once

// Discrete prolate spheroidal (Slepian) sequences for multitaper estimation.

#include <compare>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <tuple>
#include <vector>

namespace flowcoh {

/// Fraction of a taper's energy inside [-W, W]. Well-concentrated Slepian
/// sequences have 1 - lambda far below double epsilon, so the value is held
/// as its leakage 1 - lambda and ordered by it: a larger concentration means
/// a smaller leakage.
class Concentration {
 public:
  constexpr Concentration() = default;
  static constexpr Concentration from_leakage(double leakage) {
    Concentration c;
    c.leakage_ = leakage;
    return c;
  }

  constexpr double value() const { return 1.0 - leakage_; }
  constexpr double leakage() const { return leakage_; }

  friend constexpr std::partial_ordering operator<=>(Concentration x, Concentration y) {
    return y.leakage_ <=> x.leakage_;
  }
  friend constexpr bool operator==(Concentration x, Concentration y) {
    return x.leakage_ == y.leakage_;
  }

 private:
  double leakage_ = 1.0;
};

struct TaperSet {
  std::size_t length = 0;          // K
  double time_bandwidth = 0.0;     // NW
  std::size_t count = 0;           // L
  std::vector<double> values;      // L x K, row-major; row l is taper l
  std::vector<Concentration> concentrations;  // descending
  std::vector<double> operator_eigenvalues;   // tridiagonal eigenvalues, descending

  std::size_t n_tapers() const { return count; }
  double bandwidth() const { return time_bandwidth / static_cast<double>(length); }
  std::span<const double> taper(std::size_t l) const {
    return {values.data() + l * length, length};
  }
};

enum class ConcentrationPrecision {
  /// Eigenvectors refined and leakage evaluated in multiprecision; resolves
  /// leakages far below 1e-16 so concentrations are strictly ordered.
  kExtended,
  /// Double precision only. Leakages below ~1e-13 are rounding noise.
  kDouble,
};

struct DpssOptions {
  ConcentrationPrecision precision = ConcentrationPrecision::kExtended;
  bool warn_excess_tapers = true;  // warn when n_tapers > 2 NW - 1
};

/// The `n_tapers` most concentrated Slepian sequences of length `length` for
/// time-bandwidth product NW = `time_bandwidth`. Each has unit energy and its
/// first element with |h| > 1e-6 max|h| is positive. Warns when
/// n_tapers > 2 NW - 1 unless disabled in `options`.
TaperSet compute_dpss(std::size_t length, double time_bandwidth, std::size_t n_tapers,
                      const DpssOptions& options = {});

/// Default NW for L tapers: (L + 1) / 2, so that L = 2 NW - 1.
constexpr double default_time_bandwidth(std::size_t n_tapers) {
  return (static_cast<double>(n_tapers) + 1.0) / 2.0;
}

/// Single constant taper 1/sqrt(K); with L = 1 the multitaper estimate is the
/// classical periodogram. Concentration is reported for |f| <= 1/K.
TaperSet boxcar_taper(std::size_t length);

/// Symmetric tridiagonal matrix that commutes with the concentration operator.
/// diagonal[n] = ((K-1-2n)/2)^2 cos(2 pi W); off_diagonal[n] = (n+1)(K-1-n)/2.
struct DpssTridiagonal {
  std::vector<double> diagonal;
  std::vector<double> off_diagonal;
};

DpssTridiagonal dpss_tridiagonal(std::size_t length, double half_bandwidth);

/// h^T A h for the concentration operator A[n,m] = sin(2 pi W (n-m)) / (pi (n-m)).
/// O(K^2); for checking arbitrary sequences.
double concentration_quadratic_form(std::span<const double> sequence,
                                    double half_bandwidth);

/// One column per taper, header "taper_0,...", one row per sample.
void write_taper_csv(std::ostream& out, const TaperSet& tapers);

/// Thread-safe cache of taper sets keyed by (K, NW, L). Concurrent
/// misses may compute the same set twice; the last insert wins.
class TaperCache {
 public:
  explicit TaperCache(DpssOptions options = {}) : options_(options) {}

  std::shared_ptr<const TaperSet> get(std::size_t length, double time_bandwidth,
                                      std::size_t n_tapers);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::size_t, double, std::size_t>;
  DpssOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const TaperSet>> entries_;
};

}  // namespace flowcoh
