#pragma once

// Tapered Fourier transforms on an arbitrary frequency grid, multitaper
// spectral matrices and squared coherence.

#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "flowcoh/tapers.hpp"

namespace flowcoh {

using Complex = std::complex<double>;

/// f_q = f_max * q / n_freqs for q = 1..n_freqs (zero frequency excluded).
struct FrequencyGrid {
  std::size_t n_freqs = 0;
  double f_max = 0.0;            // Hz
  std::vector<double> freqs_hz;
  std::vector<double> omegas;    // 2 pi f_q, rad/s

  std::size_t size() const { return n_freqs; }
  /// Index of the grid point closest to `f_hz` (lowest index on ties).
  std::size_t nearest(double f_hz) const;
};

/// Throws ValidationError unless 0 < f_max <= 1/(2 delta) and n_freqs >= 1.
FrequencyGrid frequency_grid(double f_max, std::size_t n_freqs, double delta);

/// Evaluates sum_{k=1..K} x[k] exp(-i omega_q k delta) at every grid point with
/// a chirp-z (Bluestein) transform: O((K + N_f) log(K + N_f)) per call.
/// Construction precomputes the chirp and its FFT; operator() is thread-safe.
class GridDft {
 public:
  GridDft(std::size_t length, const FrequencyGrid& grid, double delta);
  ~GridDft();
  GridDft(GridDft&&) noexcept;
  GridDft& operator=(GridDft&&) noexcept;

  std::vector<Complex> operator()(std::span<const double> x) const;

  std::size_t length() const;
  std::size_t fft_size() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// F(omega_q) = delta^(1/2) sum_{k=1..K} taper[k] x[k] exp(-i omega_q k delta),
/// with x and taper stored 0-based. Throws DataError on length mismatch.
std::vector<Complex> tapered_dft(std::span<const double> centred, std::span<const double> taper,
                                 const FrequencyGrid& grid, double delta);

/// Same quantity by direct summation, O(K N_f). Reference implementation.
std::vector<Complex> tapered_dft_direct(std::span<const double> centred,
                                        std::span<const double> taper,
                                        const FrequencyGrid& grid, double delta);

/// Per-frequency 2x2 Hermitian matrix; S21 = conj(S12) is implied.
struct SpectralMatrix {
  FrequencyGrid grid;
  std::vector<double> s11;
  std::vector<double> s22;
  std::vector<Complex> s12;
  std::size_t n_tapers = 0;
  double delta = 1.0;

  Complex s21(std::size_t q) const { return std::conj(s12[q]); }
};

/// S(omega) = (1/L) sum_l F_l(omega) F_l(omega)^H with F_l = [F_{1;l}, F_{2;l}].
/// Throws DataError when the series lengths differ from each other or from K.
SpectralMatrix multitaper_spectral_matrix(std::span<const double> x1,
                                          std::span<const double> x2, const TaperSet& tapers,
                                          const FrequencyGrid& grid, double delta);

/// Values are empty where S11 or S22 is zero (no power, coherence undefined).
struct CoherenceProfile {
  FrequencyGrid grid;
  std::vector<std::optional<double>> values;
  std::size_t n_tapers = 0;
};

/// R(omega) = |S12|^2 / (S11 S22), clamped to [0, 1].
CoherenceProfile coherence(const SpectralMatrix& spec);

/// Biased sample cross-covariances sigma_ij[tau] = (1/K) sum_k x_i[k+tau] x_j[k]
/// for |tau| <= max_lag. Inputs are used as given (centre them first).
struct CrossCovariance {
  std::size_t max_lag = 0;
  std::vector<double> s11, s12, s21, s22;  // index tau + max_lag

  double at(int i, int j, long tau) const;
};

/// Throws ValidationError when max_lag >= K, DataError on length mismatch.
CrossCovariance empirical_cross_covariance(std::span<const double> x1,
                                           std::span<const double> x2, std::size_t max_lag);

}  // namespace flowcoh
