#include "flowcoh/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "flowcoh/error.hpp"

namespace flowcoh {
namespace {

constexpr double kPi = std::numbers::pi;

// The FFTW planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t smooth_size(std::size_t n) {
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5, 7}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {
    if (!data) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  fftw_complex* data;
};

void check_lengths(std::span<const double> x, std::span<const double> taper) {
  if (x.size() != taper.size()) {
    throw DataError("series length " + std::to_string(x.size()) +
                    " does not match taper length " + std::to_string(taper.size()));
  }
  if (x.empty()) throw DataError("empty series");
}

}  // namespace

std::size_t FrequencyGrid::nearest(double f_hz) const {
  std::size_t best = 0;
  for (std::size_t q = 1; q < freqs_hz.size(); ++q) {
    if (std::abs(freqs_hz[q] - f_hz) < std::abs(freqs_hz[best] - f_hz)) best = q;
  }
  return best;
}

FrequencyGrid frequency_grid(double f_max, std::size_t n_freqs, double delta) {
  if (!(delta > 0.0)) throw ValidationError("frequency_grid: delta must be > 0");
  if (n_freqs < 1) throw ValidationError("frequency_grid: n_freqs must be >= 1");
  if (!(f_max > 0.0)) throw ValidationError("frequency_grid: f_max must be > 0");
  if (f_max > 1.0 / (2.0 * delta)) {
    throw ValidationError("frequency_grid: f_max=" + std::to_string(f_max) +
                          " exceeds the Nyquist frequency " + std::to_string(0.5 / delta));
  }
  FrequencyGrid grid;
  grid.n_freqs = n_freqs;
  grid.f_max = f_max;
  grid.freqs_hz.resize(n_freqs);
  grid.omegas.resize(n_freqs);
  for (std::size_t q = 0; q < n_freqs; ++q) {
    grid.freqs_hz[q] = f_max * static_cast<double>(q + 1) / static_cast<double>(n_freqs);
    grid.omegas[q] = 2.0 * kPi * grid.freqs_hz[q];
  }
  return grid;
}

// With a = f_max delta / N_f, omega_q k delta = 2 pi a q k and
// qk = (q^2 + k^2 - (k-q)^2) / 2, so the sum is a convolution with the chirp
// exp(i pi a j^2) between two pointwise chirp multiplications.
struct GridDft::Impl {
  std::size_t length = 0;
  std::size_t n_freqs = 0;
  std::size_t m = 0;
  std::vector<Complex> chirp;   // exp(-i pi a k^2), k = 0..max(K, N_f)
  std::vector<Complex> kernel;  // FFT of the reversed conjugate chirp, divided by m
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  ~Impl() {
    std::lock_guard lock(planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

GridDft::GridDft(std::size_t length, const FrequencyGrid& grid, double delta)
    : impl_(std::make_unique<Impl>()) {
  if (length < 1) throw ValidationError("GridDft: length must be >= 1");
  if (grid.n_freqs < 1) throw ValidationError("GridDft: empty frequency grid");
  Impl& s = *impl_;
  s.length = length;
  s.n_freqs = grid.n_freqs;
  s.m = smooth_size(length + grid.n_freqs - 1);

  const long double a = static_cast<long double>(grid.f_max) * delta / grid.n_freqs;
  const std::size_t n_chirp = std::max(length, grid.n_freqs) + 1;
  s.chirp.resize(n_chirp);
  for (std::size_t k = 0; k < n_chirp; ++k) {
    const long double kk = static_cast<long double>(k);
    long double turns = a * kk * kk;  // phase in units of pi, reduced mod 2
    turns -= 2.0L * std::floor(turns / 2.0L);
    s.chirp[k] = std::polar(1.0, -kPi * static_cast<double>(turns));
  }

  FftwBuffer buf(s.m);
  {
    std::lock_guard lock(planner_mutex());
    s.forward = fftw_plan_dft_1d(static_cast<int>(s.m), buf.data, buf.data, FFTW_FORWARD,
                                 FFTW_ESTIMATE);
    s.backward = fftw_plan_dft_1d(static_cast<int>(s.m), buf.data, buf.data, FFTW_BACKWARD,
                                  FFTW_ESTIMATE);
  }
  if (!s.forward || !s.backward) throw NumericalError("GridDft: FFTW planning failed");

  auto* b = reinterpret_cast<Complex*>(buf.data);
  std::fill(b, b + s.m, Complex{});
  for (std::size_t i = 0; i < grid.n_freqs; ++i) b[i] = std::conj(s.chirp[i]);
  for (std::size_t i = 1; i < length; ++i) b[s.m - i] = std::conj(s.chirp[i]);
  fftw_execute_dft(s.forward, buf.data, buf.data);
  const double inv_m = 1.0 / static_cast<double>(s.m);
  s.kernel.assign(b, b + s.m);
  for (auto& v : s.kernel) v *= inv_m;
}

GridDft::~GridDft() = default;
GridDft::GridDft(GridDft&&) noexcept = default;
GridDft& GridDft::operator=(GridDft&&) noexcept = default;

std::size_t GridDft::length() const { return impl_->length; }
std::size_t GridDft::fft_size() const { return impl_->m; }

std::vector<Complex> GridDft::operator()(std::span<const double> x) const {
  const Impl& s = *impl_;
  if (x.size() != s.length) {
    throw DataError("GridDft: input length " + std::to_string(x.size()) + ", expected " +
                    std::to_string(s.length));
  }
  FftwBuffer buf(s.m);
  auto* u = reinterpret_cast<Complex*>(buf.data);
  for (std::size_t i = 0; i < s.length; ++i) u[i] = x[i] * s.chirp[i + 1];
  std::fill(u + s.length, u + s.m, Complex{});
  fftw_execute_dft(s.forward, buf.data, buf.data);
  for (std::size_t i = 0; i < s.m; ++i) u[i] *= s.kernel[i];
  fftw_execute_dft(s.backward, buf.data, buf.data);
  std::vector<Complex> out(s.n_freqs);
  for (std::size_t q = 0; q < s.n_freqs; ++q) out[q] = s.chirp[q + 1] * u[q];
  return out;
}

std::vector<Complex> tapered_dft(std::span<const double> centred, std::span<const double> taper,
                                 const FrequencyGrid& grid, double delta) {
  check_lengths(centred, taper);
  std::vector<double> product(centred.size());
  for (std::size_t k = 0; k < centred.size(); ++k) product[k] = taper[k] * centred[k];
  auto out = GridDft(centred.size(), grid, delta)(product);
  const double scale = std::sqrt(delta);
  for (auto& v : out) v *= scale;
  return out;
}

std::vector<Complex> tapered_dft_direct(std::span<const double> centred,
                                        std::span<const double> taper,
                                        const FrequencyGrid& grid, double delta) {
  check_lengths(centred, taper);
  std::vector<Complex> out(grid.n_freqs);
  for (std::size_t q = 0; q < grid.n_freqs; ++q) {
    Complex sum{};
    for (std::size_t k = 0; k < centred.size(); ++k) {
      const double phase = grid.omegas[q] * static_cast<double>(k + 1) * delta;
      sum += taper[k] * centred[k] * Complex(std::cos(phase), -std::sin(phase));
    }
    out[q] = std::sqrt(delta) * sum;
  }
  return out;
}

SpectralMatrix multitaper_spectral_matrix(std::span<const double> x1,
                                          std::span<const double> x2, const TaperSet& tapers,
                                          const FrequencyGrid& grid, double delta) {
  if (x1.size() != x2.size()) {
    throw DataError("multitaper_spectral_matrix: channel lengths differ (" +
                    std::to_string(x1.size()) + " vs " + std::to_string(x2.size()) + ")");
  }
  if (x1.size() != tapers.length) {
    throw DataError("multitaper_spectral_matrix: series length " + std::to_string(x1.size()) +
                    " does not match taper length " + std::to_string(tapers.length));
  }
  if (tapers.count < 1) throw ValidationError("multitaper_spectral_matrix: no tapers");

  const std::size_t k = x1.size();
  const std::size_t nf = grid.n_freqs;
  SpectralMatrix spec;
  spec.grid = grid;
  spec.n_tapers = tapers.count;
  spec.delta = delta;
  spec.s11.assign(nf, 0.0);
  spec.s22.assign(nf, 0.0);
  spec.s12.assign(nf, Complex{});

  const GridDft dft(k, grid, delta);
  std::vector<double> y1(k), y2(k);
  for (std::size_t l = 0; l < tapers.count; ++l) {
    const auto h = tapers.taper(l);
    for (std::size_t n = 0; n < k; ++n) {
      y1[n] = h[n] * x1[n];
      y2[n] = h[n] * x2[n];
    }
    const auto f1 = dft(y1);
    const auto f2 = dft(y2);
    for (std::size_t q = 0; q < nf; ++q) {
      spec.s11[q] += std::norm(f1[q]);
      spec.s22[q] += std::norm(f2[q]);
      spec.s12[q] += f1[q] * std::conj(f2[q]);
    }
  }
  const double scale = delta / static_cast<double>(tapers.count);
  for (std::size_t q = 0; q < nf; ++q) {
    spec.s11[q] *= scale;
    spec.s22[q] *= scale;
    spec.s12[q] *= scale;
  }
  return spec;
}

CoherenceProfile coherence(const SpectralMatrix& spec) {
  CoherenceProfile profile;
  profile.grid = spec.grid;
  profile.n_tapers = spec.n_tapers;
  profile.values.resize(spec.s11.size());
  for (std::size_t q = 0; q < spec.s11.size(); ++q) {
    if (!(spec.s11[q] > 0.0) || !(spec.s22[q] > 0.0)) continue;
    const double r = std::norm(spec.s12[q]) / (spec.s11[q] * spec.s22[q]);
    profile.values[q] = std::clamp(r, 0.0, 1.0);
  }
  return profile;
}

double CrossCovariance::at(int i, int j, long tau) const {
  if (tau < -static_cast<long>(max_lag) || tau > static_cast<long>(max_lag)) {
    throw ValidationError("CrossCovariance::at: lag out of range");
  }
  const auto idx = static_cast<std::size_t>(tau + static_cast<long>(max_lag));
  if (i == 1 && j == 1) return s11[idx];
  if (i == 1 && j == 2) return s12[idx];
  if (i == 2 && j == 1) return s21[idx];
  if (i == 2 && j == 2) return s22[idx];
  throw ValidationError("CrossCovariance::at: channel must be 1 or 2");
}

CrossCovariance empirical_cross_covariance(std::span<const double> x1,
                                           std::span<const double> x2, std::size_t max_lag) {
  if (x1.size() != x2.size()) throw DataError("empirical_cross_covariance: length mismatch");
  const std::size_t k = x1.size();
  if (max_lag >= k) {
    throw ValidationError("empirical_cross_covariance: max_lag must be < K (" +
                          std::to_string(k) + ")");
  }
  const auto lagged = [k](std::span<const double> a, std::span<const double> b, std::size_t tau) {
    // (1/K) sum_k a[k + tau] b[k]
    double sum = 0.0;
    for (std::size_t n = 0; n + tau < k; ++n) sum += a[n + tau] * b[n];
    return sum / static_cast<double>(k);
  };
  CrossCovariance out;
  out.max_lag = max_lag;
  const std::size_t width = 2 * max_lag + 1;
  out.s11.resize(width);
  out.s12.resize(width);
  out.s21.resize(width);
  out.s22.resize(width);
  for (std::size_t tau = 0; tau <= max_lag; ++tau) {
    const std::size_t pos = max_lag + tau;
    const std::size_t neg = max_lag - tau;
    out.s11[pos] = out.s11[neg] = lagged(x1, x1, tau);
    out.s22[pos] = out.s22[neg] = lagged(x2, x2, tau);
    out.s12[pos] = lagged(x1, x2, tau);
    out.s12[neg] = lagged(x2, x1, tau);  // sigma_12[-tau] = (1/K) sum_k x1[k] x2[k+tau]
  }
  for (std::size_t i = 0; i < width; ++i) out.s21[i] = out.s12[width - 1 - i];
  return out;
}

}  // namespace flowcoh
