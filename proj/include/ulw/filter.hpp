#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "ulw/error.hpp"

namespace ulw {

/// One biquad, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::complex<double> response(double freq_hz, double sample_rate_hz) const {
    const auto z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate_hz);  // z^-1
    const auto z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  /// Both poles strictly inside the unit circle (Jury conditions for z^2 + a1 z + a2).
  bool stable() const { return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2; }
};

struct FilterSpec {
  std::vector<Biquad> sections;
  double low_hz = 0;
  double high_hz = 0;
  int order = 0;
  double sample_rate_hz = 0;

  std::complex<double> response(double freq_hz) const {
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(freq_hz, sample_rate_hz);
    return h;
  }
  double gain(double freq_hz) const { return std::abs(response(freq_hz)); }
};

/// Butterworth band-pass of prototype order `order` (2*order poles),
/// realized as `order` biquads via pre-warped bilinear transform. Gain is
/// normalized to 1 at the geometric centre frequency.
inline FilterSpec design_bandpass(double low_hz, double high_hz, double sample_rate_hz, int order = 4) {
  if (!(low_hz > 0 && low_hz < high_hz && high_hz < sample_rate_hz / 2))
    fail(Errc::InvalidBand, "need 0 < low < high < fs/2");
  if (order < 1) fail(Errc::InvalidBand, "order must be positive");

  using cd = std::complex<double>;
  const double fs2 = 2.0 * sample_rate_hz;
  const double w_low = fs2 * std::tan(std::numbers::pi * low_hz / sample_rate_hz);
  const double w_high = fs2 * std::tan(std::numbers::pi * high_hz / sample_rate_hz);
  const double bandwidth = w_high - w_low;
  const double w_centre2 = w_low * w_high;

  // Low-pass prototype poles on the left unit semicircle, mapped to band-pass
  // pole pairs, then to the z-plane.
  std::vector<cd> poles;
  for (int k = 0; k < order; ++k) {
    const cd proto = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
    const cd half = proto * bandwidth / 2.0;
    const cd root = std::sqrt(half * half - w_centre2);
    for (const cd s : {half + root, half - root}) poles.push_back((fs2 + s) / (fs2 - s));
  }

  // Pair conjugates; real poles are paired with each other.
  std::vector<std::pair<cd, cd>> pairs;
  std::vector<cd> reals;
  std::vector<bool> used(poles.size(), false);
  constexpr double kImagTol = 1e-12;
  for (std::size_t i = 0; i < poles.size(); ++i) {
    if (used[i]) continue;
    if (std::abs(poles[i].imag()) <= kImagTol) {
      reals.push_back(poles[i].real());
      used[i] = true;
      continue;
    }
    if (poles[i].imag() < 0) continue;
    std::size_t best = i;
    double best_dist = INFINITY;
    for (std::size_t j = 0; j < poles.size(); ++j) {
      if (used[j] || j == i) continue;
      const double d = std::abs(poles[j] - std::conj(poles[i]));
      if (d < best_dist) best = j, best_dist = d;
    }
    used[i] = used[best] = true;
    pairs.emplace_back(poles[i], std::conj(poles[i]));
  }
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) pairs.emplace_back(reals[i], reals[i + 1]);

  FilterSpec spec{{}, low_hz, high_hz, order, sample_rate_hz};
  // Every section gets one zero at z = 1 (DC) and one at z = -1 (Nyquist).
  for (const auto& [p, q] : pairs) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -(p + q).real();
    s.a2 = (p * q).real();
    spec.sections.push_back(s);
  }

  const double centre_hz = std::atan(std::sqrt(w_centre2) / fs2) * sample_rate_hz / std::numbers::pi;
  const double per_section = std::pow(1.0 / spec.gain(centre_hz), 1.0 / spec.sections.size());
  for (auto& s : spec.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return spec;
}

namespace detail {

/// Transposed direct-form II cascade, state updated in place.
inline void sosfilt(const std::vector<Biquad>& sections, std::vector<double>& x,
                    std::vector<std::array<double, 2>> state) {
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const auto& s = sections[k];
    auto [z0, z1] = state[k];
    for (auto& v : x) {
      const double in = v;
      const double out = s.b0 * in + z0;
      z0 = s.b1 * in - s.a1 * out + z1;
      z1 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

/// Per-section steady-state initial conditions for a unit step input,
/// scaled by the DC gain of the preceding sections.
inline std::vector<std::array<double, 2>> step_initial_state(const std::vector<Biquad>& sections) {
  std::vector<std::array<double, 2>> zi(sections.size());
  double scale = 1.0;
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const auto& s = sections[k];
    // (I - A^T) z = B with A the companion matrix of [1, a1, a2].
    const double r0 = s.b1 - s.a1 * s.b0;
    const double r1 = s.b2 - s.a2 * s.b0;
    // [[1 + a1, -1], [a2, 1]] z = [r0, r1]
    const double det = (1.0 + s.a1) + s.a2;
    const double z0 = (r0 + r1) / det;
    const double z1 = r1 - s.a2 * z0;
    zi[k] = {z0 * scale, z1 * scale};
    scale *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  }
  return zi;
}

}  // namespace detail

/// Number of samples until the slowest pole decays to 1e-3 of its
/// initial amplitude.
inline std::size_t impulse_length(const FilterSpec& spec) {
  double r_max = 0.0;
  for (const auto& s : spec.sections) r_max = std::max(r_max, std::sqrt(std::abs(s.a2)));
  if (r_max <= 0.0) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(1e-3) / std::log(r_max)));
}

/// Edge padding used by filtfilt for a signal of `length` samples.
inline std::size_t filtfilt_padding(const FilterSpec& spec, std::size_t length) {
  return std::min(3 * impulse_length(spec), length - 1);
}

/// Zero-phase forward-backward filtering. The signal is extended at both
/// ends by odd reflection and each pass starts from the steady state for
/// the first extended sample, so the result has the squared magnitude
/// response and no phase shift.
inline std::vector<float> filtfilt(std::span<const float> signal, const FilterSpec& spec) {
  const std::size_t n = signal.size();
  const std::size_t min_length = 3 * 2 * spec.sections.size();
  if (n <= min_length)
    fail(Errc::SignalTooShort, "filtfilt needs more than " + std::to_string(min_length) + " samples");
  const std::size_t pad = filtfilt_padding(spec, n);

  std::vector<double> ext(n + 2 * pad);
  const double first = signal.front();
  const double last = signal.back();
  for (std::size_t i = 0; i < pad; ++i) {
    ext[i] = 2.0 * first - signal[pad - i];
    ext[pad + n + i] = 2.0 * last - signal[n - 2 - i];
  }
  for (std::size_t i = 0; i < n; ++i) ext[pad + i] = signal[i];

  const auto zi = detail::step_initial_state(spec.sections);
  auto scaled = [&](double v) {
    auto z = zi;
    for (auto& s : z) s = {s[0] * v, s[1] * v};
    return z;
  };

  detail::sosfilt(spec.sections, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::sosfilt(spec.sections, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());

  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(ext[pad + i]);
  return out;
}

}  // namespace ulw
