// Copyright 2026 The phonsal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acoustic cue measurement: Burg-LPC formants at a vowel midpoint, and
// spectral-peak bins for fricatives and plosive bursts on the log-mel grid.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "phonsal/alignment.hpp"
#include "phonsal/features.hpp"

namespace phonsal {

struct FormantOptions {
  double ceiling_male = 5000.0;
  double ceiling_female = 5500.0;
  int num_formants = 5;  // LPC order is twice this
  double window_s = 0.025;  // effective length; the Gaussian spans twice this, as in Praat
  double preemphasis_from_hz = 50.0;
  double max_bandwidth_hz = 400.0;
  double edge_margin_hz = 50.0;

  double ceiling(Gender g) const { return g == Gender::F ? ceiling_female : ceiling_male; }
};

struct FormantSet {
  std::array<std::optional<double>, 4> f;  // F1..F4 in Hz
  double ceiling = 0.0;
  bool failed = false;

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](const auto& v) { return v.has_value(); }));
  }
};

struct PeakMeasurement {
  std::size_t bin = 0;
  int source_frames = 1;
  bool degraded = false;
};

/// Band-limited resampling by windowed-sinc interpolation (Hann window,
/// 16 zero crossings of the output-rate kernel on each side).
inline std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0 && fs_out > 0.0)) throw InvalidArgument("sample rates must be positive");
  if (x.empty()) return {};
  const double ratio = std::min(1.0, fs_out / fs_in);
  constexpr double kZeroCrossings = 16.0;
  const double half_width = kZeroCrossings / ratio;  // in input samples
  const auto n_out = static_cast<std::size_t>(std::floor(static_cast<double>(x.size()) * fs_out / fs_in));
  std::vector<double> y(n_out, 0.0);
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t j = 0; j < n_out; ++j) {
    const double pos = static_cast<double>(j) * fs_in / fs_out;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(pos - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(pos + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t n = lo; n <= hi; ++n) {
      const double u = pos - static_cast<double>(n);
      const double arg = std::numbers::pi * ratio * u;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * u / half_width);
      acc += x[static_cast<std::size_t>(n)] * ratio * sinc * win;
    }
    y[j] = acc;
  }
  return y;
}

/// Burg's method. Returns a[1..order] such that x[n] ~ sum_k a[k] x[n-k];
/// a[0] is unused and left at 0.
inline std::vector<double> burg_lpc(std::span<const double> x, int order) {
  const auto n = x.size();
  const auto m = static_cast<std::size_t>(order);
  if (n <= m) throw InvalidArgument("frame shorter than LPC order");
  std::vector<double> a(m + 1, 0.0), aprev(m + 1, 0.0);
  std::vector<double> f(x.begin(), x.end()), b(x.begin(), x.end());
  for (std::size_t k = 1; k <= m; ++k) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = k; j < n; ++j) {
      num += f[j] * b[j - 1];
      den += f[j] * f[j] + b[j - 1] * b[j - 1];
    }
    const double refl = den > 0.0 ? 2.0 * num / den : std::numeric_limits<double>::quiet_NaN();
    aprev = a;
    a[k] = refl;
    for (std::size_t i = 1; i < k; ++i) a[i] = aprev[i] - refl * aprev[k - i];
    for (std::size_t j = n - 1; j >= k; --j) {
      const double fj = f[j];
      f[j] = fj - refl * b[j - 1];
      b[j] = b[j - 1] - refl * fj;
    }
  }
  return a;
}

/// Roots of z^p - a1 z^(p-1) - ... - ap via companion-matrix eigenvalues.
inline std::vector<std::complex<double>> lpc_roots(const std::vector<double>& a) {
  const auto p = static_cast<Eigen::Index>(a.size() - 1);
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) companion(0, i) = a[static_cast<std::size_t>(i + 1)];
  for (Eigen::Index i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  if (solver.info() != Eigen::Success) throw Error("LPC root finding did not converge");
  std::vector<std::complex<double>> roots;
  for (Eigen::Index i = 0; i < p; ++i) roots.push_back(solver.eigenvalues()(i));
  return roots;
}

/// F1-F4 at `midpoint_sample` (Praat-style Burg analysis): resample to twice
/// the gender's formant ceiling, pre-emphasize above 50 Hz, take a Gaussian
/// window (physical length 2 * window_s) centered on the midpoint, fit LPC
/// of order 2 * num_formants, and
/// keep root frequencies inside (50, ceiling - 50) with bandwidth < 400 Hz.
inline FormantSet estimate_formants(const Waveform& w, long midpoint_sample, Gender gender,
                                    const FormantOptions& opts = {}) {
  FormantSet out;
  out.ceiling = opts.ceiling(gender);
  const double fs_in = w.sample_rate;
  const double fs = 2.0 * out.ceiling;
  const double half_win_in = opts.window_s * fs_in;
  const auto len = static_cast<long>(w.samples.size());
  if (midpoint_sample - half_win_in < 0 || midpoint_sample + half_win_in > len)
    throw InvalidArgument("analysis window does not fit inside the utterance");

  // Resample only the neighbourhood of the window.
  const double margin_in = 0.010 * fs_in;
  const long c0 = std::max(0L, static_cast<long>(std::floor(midpoint_sample - half_win_in - margin_in)));
  const long c1 = std::min(len, static_cast<long>(std::ceil(midpoint_sample + half_win_in + margin_in)));
  std::vector<double> y = resample(
      std::span<const double>(w.samples).subspan(static_cast<std::size_t>(c0), static_cast<std::size_t>(c1 - c0)),
      fs_in, fs);

  const double alpha = std::exp(-2.0 * std::numbers::pi * opts.preemphasis_from_hz / fs);
  for (std::size_t i = y.size(); i-- > 1;) y[i] -= alpha * y[i - 1];

  const auto nwin = static_cast<std::size_t>(std::lround(2.0 * opts.window_s * fs));
  const double center = static_cast<double>(midpoint_sample - c0) * fs / fs_in;
  const auto start = static_cast<std::ptrdiff_t>(std::lround(center - nwin / 2.0));
  if (start < 0 || start + static_cast<std::ptrdiff_t>(nwin) > static_cast<std::ptrdiff_t>(y.size()))
    throw InvalidArgument("analysis window does not fit inside the utterance");
  std::vector<double> frame(nwin);
  const double edge = std::exp(-12.0);
  const double imid = 0.5 * static_cast<double>(nwin + 1);
  for (std::size_t i = 0; i < nwin; ++i) {
    const double d = static_cast<double>(i + 1) - imid;
    const double g = (std::exp(-48.0 * d * d / ((nwin + 1.0) * (nwin + 1.0))) - edge) / (1.0 - edge);
    frame[i] = y[static_cast<std::size_t>(start) + i] * g;
  }

  const auto a = burg_lpc(frame, 2 * opts.num_formants);
  for (std::size_t i = 1; i < a.size(); ++i)
    if (!std::isfinite(a[i])) {
      out.failed = true;
      return out;
    }

  std::vector<double> freqs;
  for (auto z : lpc_roots(a)) {
    if (z.imag() <= 0.0) continue;
    if (std::abs(z) > 1.0) z = 1.0 / std::conj(z);
    const double r = std::abs(z);
    if (r <= 0.0) continue;
    const double freq = std::arg(z) * fs / (2.0 * std::numbers::pi);
    const double bw = -std::log(r) * fs / std::numbers::pi;
    if (freq > opts.edge_margin_hz && freq < out.ceiling - opts.edge_margin_hz &&
        bw < opts.max_bandwidth_hz)
      freqs.push_back(freq);
  }
  std::sort(freqs.begin(), freqs.end());
  for (std::size_t i = 0; i < 4 && i < freqs.size(); ++i) out.f[i] = freqs[i];
  return out;
}

/// Bin with the highest log-mel value at `frame`; ties go to the lower bin.
inline PeakMeasurement fricative_peak(const MelSpectrogram& x, std::size_t frame) {
  if (frame >= x.num_frames()) throw InvalidArgument("midpoint frame out of range");
  const auto row = x.values.row(frame);
  PeakMeasurement p;
  p.bin = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  p.source_frames = 1;
  return p;
}

/// Peak bin over the two frames starting at the release onset (a 35 ms
/// stretch with 25 ms windows and 10 ms hop). Falls back to the onset frame
/// alone, flagged degraded, when the release spans fewer than two frames.
inline PeakMeasurement burst_peak(const MelSpectrogram& x, std::size_t onset,
                                  std::size_t release_frames = 2) {
  if (onset >= x.num_frames()) throw InvalidArgument("release onset frame out of range");
  PeakMeasurement p;
  const bool two = release_frames >= 2 && onset + 1 < x.num_frames();
  p.degraded = !two;
  p.source_frames = two ? 2 : 1;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < x.num_bins(); ++f) {
    for (std::size_t t = onset; t < onset + static_cast<std::size_t>(p.source_frames); ++t) {
      if (x.values(t, f) > best) {
        best = x.values(t, f);
        p.bin = f;
      }
    }
  }
  return p;
}

}  // namespace phonsal
