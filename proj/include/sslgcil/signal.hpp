#pragma once

// Microphone-array simulation, GCC-PHAT features and DoA labels.
//
// Lag sign convention: for a pair (i, j), a positive lag means channel j lags
// channel i. pair_tdoa() returns the delay of j relative to i with the same
// sign, so the GCC-PHAT peak of a synthesized frame sits at
// round(pair_tdoa * sample_rate). The plane wave is taken to travel along
// u(theta) = (cos theta, sin theta, 0), so a microphone further along u hears it
// later.

#include "sslgcil/common.hpp"
#include "sslgcil/rng.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sslgcil {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
  friend double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Microphone positions plus acoustic constants. Pairs are every unordered
/// (i, j), i < j, in lexicographic order.
class ArrayGeometry {
 public:
  explicit ArrayGeometry(std::vector<Vec3> mics, double speed_of_sound = 343.0,
                         double sample_rate = 48000.0)
      : mics_(std::move(mics)), speed_of_sound_(speed_of_sound), sample_rate_(sample_rate) {
    if (mics_.size() < 2) throw std::invalid_argument("ArrayGeometry: need at least 2 microphones");
    if (!(speed_of_sound_ > 0.0)) throw std::invalid_argument("ArrayGeometry: speed_of_sound must be > 0");
    if (!(sample_rate_ > 0.0)) throw std::invalid_argument("ArrayGeometry: sample_rate must be > 0");
    for (std::size_t i = 0; i < mics_.size(); ++i) {
      for (std::size_t j = i + 1; j < mics_.size(); ++j) {
        if (mics_[i] == mics_[j]) throw std::invalid_argument("ArrayGeometry: duplicate microphone position");
        pairs_.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }

  /// Four microphones on a horizontal square centred on the origin.
  static ArrayGeometry square(double side = 0.114, double speed_of_sound = 343.0,
                              double sample_rate = 48000.0) {
    const double h = side / 2.0;
    return ArrayGeometry({{h, h, 0.0}, {-h, h, 0.0}, {-h, -h, 0.0}, {h, -h, 0.0}}, speed_of_sound,
                         sample_rate);
  }

  int num_mics() const noexcept { return static_cast<int>(mics_.size()); }
  int num_pairs() const noexcept { return static_cast<int>(pairs_.size()); }
  const std::vector<Vec3>& mics() const noexcept { return mics_; }
  const std::vector<std::pair<int, int>>& pairs() const noexcept { return pairs_; }
  double speed_of_sound() const noexcept { return speed_of_sound_; }
  double sample_rate() const noexcept { return sample_rate_; }

  double baseline(int pair_index) const {
    const auto [i, j] = pair_at(pair_index);
    return norm(mics_[j] - mics_[i]);
  }

  std::pair<int, int> pair_at(int pair_index) const {
    if (pair_index < 0 || pair_index >= num_pairs())
      throw std::out_of_range("ArrayGeometry: invalid pair index " + std::to_string(pair_index));
    return pairs_[pair_index];
  }

 private:
  std::vector<Vec3> mics_;
  double speed_of_sound_;
  double sample_rate_;
  std::vector<std::pair<int, int>> pairs_;
};

/// Unit vector for an azimuth in the horizontal plane.
inline Vec3 azimuth_direction(double doa_deg) {
  const double rad = doa_deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad), 0.0};
}

/// Far-field time difference of arrival of the pair's second microphone
/// relative to its first, in seconds.
inline double pair_tdoa(const ArrayGeometry& geometry, int pair_index, double doa_deg) {
  const auto [i, j] = geometry.pair_at(pair_index);
  const Vec3 u = azimuth_direction(doa_deg);
  return dot(geometry.mics()[j] - geometry.mics()[i], u) / geometry.speed_of_sound();
}

/// Channels x samples, one row per microphone.
struct MultichannelFrame {
  RowMatrix samples;
  double sample_rate = 48000.0;

  int channels() const noexcept { return static_cast<int>(samples.rows()); }
  int length() const noexcept { return static_cast<int>(samples.cols()); }
};

namespace detail {

/// Real-input FFT of one length with its own aligned buffers. forward() maps
/// time() to freq() (n/2 + 1 bins); inverse() maps freq() back to time(),
/// unnormalized, and overwrites freq().
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    time_ = fftw_alloc_real(n);
    freq_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());  // the FFTW planner is not thread safe
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), time_, freq_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), freq_, time_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(time_);
    fftw_free(freq_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }
  double* time() noexcept { return time_; }
  std::complex<double>* freq() noexcept { return reinterpret_cast<std::complex<double>*>(freq_); }
  void forward() { fftw_execute(fwd_); }
  void inverse() { fftw_execute(inv_); }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  std::size_t n_;
  double* time_;
  fftw_complex* freq_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

/// Per-thread transform of length n.
inline RealFft& real_fft(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double mean_power(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

}  // namespace detail

/// Simulates a far-field white-noise source at `doa_deg`. Each channel is a
/// fractional-delay copy of the same source, delayed in the frequency domain on
/// a zero-padded buffer and then cropped, so no circular wrap enters the frame.
/// With `snr_db`, independent white noise is added per channel at that SNR
/// relative to the channel's own signal power. The source is drawn before any
/// noise, so equal seeds give the same source regardless of `snr_db`.
inline MultichannelFrame synth_frame(const ArrayGeometry& geometry, double doa_deg,
                                     std::optional<double> snr_db, int length, Rng& rng) {
  if (length < 1024) throw std::invalid_argument("synth_frame: length must be >= 1024");
  const int channels = geometry.num_mics();
  const double fs = geometry.sample_rate();
  const Vec3 u = azimuth_direction(doa_deg);

  // Per-channel delay in samples relative to the array origin.
  std::vector<double> delay(channels);
  double max_abs = 0.0;
  for (int m = 0; m < channels; ++m) {
    delay[m] = dot(geometry.mics()[m], u) / geometry.speed_of_sound() * fs;
    max_abs = std::max(max_abs, std::abs(delay[m]));
  }
  const std::size_t pad = static_cast<std::size_t>(std::ceil(max_abs)) + 32;
  const std::size_t n = detail::next_pow2(static_cast<std::size_t>(length) + 2 * pad);

  std::normal_distribution<double> normal(0.0, 1.0);
  auto& fft = detail::real_fft(n);
  for (std::size_t t = 0; t < n; ++t) fft.time()[t] = normal(rng);
  fft.forward();
  const std::vector<std::complex<double>> spectrum(fft.freq(), fft.freq() + fft.bins());

  MultichannelFrame frame;
  frame.sample_rate = fs;
  frame.samples.resize(channels, length);
  const double two_pi_over_n = 2.0 * std::numbers::pi / static_cast<double>(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (int m = 0; m < channels; ++m) {
    std::complex<double>* shifted = fft.freq();
    // Phase ramp by rotation, re-anchored every 512 bins to bound rounding drift.
    const std::complex<double> step = std::polar(1.0, -two_pi_over_n * delay[m]);
    std::complex<double> rot;
    for (std::size_t k = 0; k + 1 < fft.bins(); ++k) {
      rot = (k % 512 == 0) ? std::polar(1.0, -two_pi_over_n * static_cast<double>(k) * delay[m]) : rot * step;
      shifted[k] = spectrum[k] * rot;
    }
    // Nyquist bin must stay real.
    shifted[n / 2] = spectrum[n / 2] * std::cos(std::numbers::pi * delay[m]);
    fft.inverse();
    for (int t = 0; t < length; ++t) frame.samples(m, t) = scale * fft.time()[pad + t];
  }

  if (snr_db) {
    for (int m = 0; m < channels; ++m) {
      const double power = detail::mean_power({frame.samples.row(m).data(), static_cast<std::size_t>(length)});
      const double sigma = std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
      for (int t = 0; t < length; ++t) frame.samples(m, t) += sigma * normal(rng);
    }
  }
  return frame;
}

/// Spectral floor below which a cross-spectrum bin is treated as having no phase.
inline constexpr double kPhatFloor = 1e-12;

namespace detail {

using Spectrum = std::vector<std::complex<double>>;

/// Half spectrum (n/2 + 1 bins) of one channel.
inline Spectrum channel_spectrum(const MultichannelFrame& frame, int channel) {
  auto& fft = real_fft(static_cast<std::size_t>(frame.length()));
  for (int t = 0; t < frame.length(); ++t) fft.time()[t] = frame.samples(channel, t);
  fft.forward();
  return Spectrum(fft.freq(), fft.freq() + fft.bins());
}

/// Phase-transform cross-correlation of two half spectra of a length-n frame,
/// sliced to lags -max_lag..+max_lag.
inline std::vector<double> gcc_phat_from_spectra(const Spectrum& xi, const Spectrum& xj, std::size_t n,
                                                 int max_lag) {
  auto& fft = real_fft(n);
  std::complex<double>* cross = fft.freq();
  for (std::size_t k = 0; k < xi.size(); ++k) {
    const std::complex<double> c = std::conj(xi[k]) * xj[k];
    const double mag = std::abs(c);
    cross[k] = mag < kPhatFloor ? std::complex<double>{} : c / mag;
  }
  fft.inverse();
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> out(2 * static_cast<std::size_t>(max_lag) + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag) : n - static_cast<std::size_t>(-lag);
    out[static_cast<std::size_t>(lag + max_lag)] = scale * fft.time()[idx];
  }
  return out;
}

}  // namespace detail

/// GCC-PHAT between two channels of a frame. Element `max_lag + l` holds lag l.
/// A silent channel yields an all-zero vector.
inline std::vector<double> gcc_phat(const MultichannelFrame& frame, int channel_i, int channel_j,
                                    int max_lag) {
  if (channel_i < 0 || channel_i >= frame.channels() || channel_j < 0 || channel_j >= frame.channels())
    throw std::out_of_range("gcc_phat: channel index out of range");
  if (max_lag < 0 || 2 * max_lag >= frame.length())
    throw std::invalid_argument("gcc_phat: max_lag must be < frame length / 2");
  return detail::gcc_phat_from_spectra(detail::channel_spectrum(frame, channel_i),
                                       detail::channel_spectrum(frame, channel_j),
                                       static_cast<std::size_t>(frame.length()), max_lag);
}

/// Flat per-pair GCC-PHAT vector: `pairs` contiguous segments of `lag_bins`.
class GccFeature {
 public:
  GccFeature() = default;
  GccFeature(int pairs, int lag_bins)
      : values_(static_cast<std::size_t>(pairs) * lag_bins, 0.0), pairs_(pairs), lag_bins_(lag_bins) {}
  GccFeature(std::vector<double> values, int pairs, int lag_bins)
      : values_(std::move(values)), pairs_(pairs), lag_bins_(lag_bins) {
    if (values_.size() != static_cast<std::size_t>(pairs) * lag_bins)
      throw std::invalid_argument("GccFeature: length must equal pairs * lag_bins");
  }

  int pairs() const noexcept { return pairs_; }
  int lag_bins() const noexcept { return lag_bins_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  std::span<const double> segment(int k) const {
    return {values_.data() + static_cast<std::size_t>(k) * lag_bins_, static_cast<std::size_t>(lag_bins_)};
  }
  std::span<double> segment(int k) {
    return {values_.data() + static_cast<std::size_t>(k) * lag_bins_, static_cast<std::size_t>(lag_bins_)};
  }

  friend bool operator==(const GccFeature&, const GccFeature&) = default;

 private:
  std::vector<double> values_;
  int pairs_ = 0;
  int lag_bins_ = 0;
};

/// Scales each segment by max(|segment|, 1e-9) so every entry lies in [-1, 1].
inline void normalize_segments(GccFeature& feature) {
  for (int k = 0; k < feature.pairs(); ++k) {
    auto seg = feature.segment(k);
    double peak = 0.0;
    for (double v : seg) peak = std::max(peak, std::abs(v));
    const double denom = std::max(peak, 1e-9);
    for (double& v : seg) v /= denom;
  }
}

/// GCC-PHAT for every geometry pair, concatenated in pair order and normalized
/// per segment.
inline GccFeature extract_features(const MultichannelFrame& frame, const ArrayGeometry& geometry,
                                   int max_lag = 25) {
  if (frame.channels() != geometry.num_mics())
    throw std::invalid_argument("extract_features: frame has " + std::to_string(frame.channels()) +
                                " channels, geometry has " + std::to_string(geometry.num_mics()));
  if (max_lag < 0 || 2 * max_lag >= frame.length())
    throw std::invalid_argument("extract_features: max_lag must be < frame length / 2");
  std::vector<detail::Spectrum> spectra;
  spectra.reserve(frame.channels());
  for (int m = 0; m < frame.channels(); ++m) spectra.push_back(detail::channel_spectrum(frame, m));

  const int lag_bins = 2 * max_lag + 1;
  GccFeature feature(geometry.num_pairs(), lag_bins);
  for (int p = 0; p < geometry.num_pairs(); ++p) {
    const auto [i, j] = geometry.pairs()[p];
    const auto seg = detail::gcc_phat_from_spectra(spectra[i], spectra[j], static_cast<std::size_t>(frame.length()), max_lag);
    std::copy(seg.begin(), seg.end(), feature.segment(p).begin());
  }
  normalize_segments(feature);
  return feature;
}

/// Width of the Gaussian label in degrees.
inline constexpr double kLabelSigmaDeg = 5.0;

/// Circular distance between two integer bins on the 360-bin ring.
inline int bin_distance(int a, int b) {
  const int d = std::abs(((a - b) % kNumBins + kNumBins) % kNumBins);
  return std::min(d, kNumBins - d);
}

inline void check_doa_bin(int doa_deg) {
  if (doa_deg < 0 || doa_deg >= kNumBins)
    throw std::out_of_range("DoA bin out of range [0, 360): " + std::to_string(doa_deg));
}

inline Vector onehot_label(int doa_deg) {
  check_doa_bin(doa_deg);
  Vector y = Vector::Zero(kNumBins);
  y[doa_deg] = 1.0;
  return y;
}

/// Circularly wrapped Gaussian target with peak 1.0 at `doa_deg`.
inline Vector gaussian_label(int doa_deg) {
  check_doa_bin(doa_deg);
  Vector z(kNumBins);
  for (int b = 0; b < kNumBins; ++b) {
    const double d = bin_distance(b, doa_deg);
    z[b] = std::exp(-d * d / (2.0 * kLabelSigmaDeg * kLabelSigmaDeg));
  }
  return z;
}

/// A training or test example: GCC-PHAT input and integer DoA class. The one-hot
/// and Gaussian targets are derived from the class on demand.
struct LabeledSample {
  GccFeature feature;
  int doa_deg = 0;

  Vector onehot() const { return onehot_label(doa_deg); }
  Vector smooth() const { return gaussian_label(doa_deg); }

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

}  // namespace sslgcil
