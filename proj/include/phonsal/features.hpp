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

// Log-mel filterbank front end: framing, Hamming window, power spectrum,
// HTK-scale triangular filters, log compression and utterance-level CMVN.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "phonsal/matrix.hpp"
#include "phonsal/random.hpp"

namespace phonsal {

struct Waveform {
  std::vector<double> samples;  // normalized to [-1, 1]
  int sample_rate = 16000;
};

struct FrameParams {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  double preemphasis = 0.97;
  double dither = 0.0;

  std::size_t window_samples(int sample_rate) const {
    return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
  }
  std::size_t hop_samples(int sample_rate) const {
    return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
  }
  void validate() const {
    if (!(window_ms > hop_ms && hop_ms > 0.0))
      throw InvalidArgument("frame params need window_ms > hop_ms > 0");
    if (n_mels < 1) throw InvalidArgument("n_mels must be positive");
  }
};

struct MelSpectrogram {
  Matrix<double> values;  // T x F
  FrameParams frame_params;
  int sample_rate = 16000;
  bool cmvn_applied = false;

  std::size_t num_frames() const { return values.rows(); }
  std::size_t num_bins() const { return values.cols(); }
};

inline constexpr double kLogEnergyFloor = 1e-10;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Sample index at the center of frame `t`.
inline double frame_center_sample(std::size_t t, const FrameParams& p, int sample_rate) {
  return static_cast<double>(t * p.hop_samples(sample_rate)) +
         static_cast<double>(p.window_samples(sample_rate)) / 2.0;
}

/// Number of full windows that fit into `num_samples`; 0 when none do.
inline std::size_t num_frames_for(std::size_t num_samples, const FrameParams& p,
                                  int sample_rate) {
  const std::size_t win = p.window_samples(sample_rate);
  const std::size_t hop = p.hop_samples(sample_rate);
  if (num_samples < win) return 0;
  return 1 + (num_samples - win) / hop;
}

// In-place iterative radix-2 FFT. data.size() must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> step(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = data[i + k];
        const auto v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= step;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Center frequencies (Hz) of the F triangular filters, equally spaced on the
/// HTK mel scale between 0 Hz and Nyquist (exclusive at both ends).
inline std::vector<double> mel_bin_centers(const FrameParams& p, int sample_rate) {
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  const double delta = mel_hi / (p.n_mels + 1);
  std::vector<double> centers(static_cast<std::size_t>(p.n_mels));
  for (int b = 0; b < p.n_mels; ++b) centers[b] = mel_to_hz((b + 1) * delta);
  return centers;
}

/// Nearest filter center to `hz`; ties go to the lower index.
inline std::size_t hz_to_bin(double hz, const FrameParams& p, int sample_rate) {
  if (!(hz >= 0.0 && hz <= sample_rate / 2.0))
    throw InvalidArgument("frequency outside [0, Nyquist]");
  const auto centers = mel_bin_centers(p, sample_rate);
  const auto it = std::lower_bound(centers.begin(), centers.end(), hz);
  if (it == centers.begin()) return 0;
  if (it == centers.end()) return centers.size() - 1;
  const auto hi = static_cast<std::size_t>(it - centers.begin());
  return (hz - centers[hi - 1] <= centers[hi] - hz) ? hi - 1 : hi;
}

/// Filter weights, n_mels rows by (fft_size/2 + 1) columns. The triangles are
/// linear in mel, as in Kaldi's fbank.
inline Matrix<double> mel_filterbank(const FrameParams& p, int sample_rate,
                                     std::size_t fft_size) {
  const std::size_t n_bins = fft_size / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  const double delta = mel_hi / (p.n_mels + 1);
  Matrix<double> bank(static_cast<std::size_t>(p.n_mels), n_bins);
  for (int b = 0; b < p.n_mels; ++b) {
    const double left = b * delta, center = (b + 1) * delta, right = (b + 2) * delta;
    for (std::size_t i = 0; i < n_bins; ++i) {
      const double mel = hz_to_mel(static_cast<double>(i) * sample_rate / fft_size);
      double w = 0.0;
      if (mel > left && mel <= center)
        w = (mel - left) / (center - left);
      else if (mel > center && mel < right)
        w = (right - mel) / (right - center);
      bank(static_cast<std::size_t>(b), i) = w;
    }
  }
  return bank;
}

inline MelSpectrogram compute_logmel(const Waveform& w, const FrameParams& p = {}) {
  p.validate();
  if (w.sample_rate != 16000)
    throw InvalidArgument("only 16 kHz input is supported");
  for (double s : w.samples)
    if (!std::isfinite(s)) throw InvalidArgument("non-finite sample in waveform");
  const std::size_t win = p.window_samples(w.sample_rate);
  const std::size_t hop = p.hop_samples(w.sample_rate);
  const std::size_t frames = num_frames_for(w.samples.size(), p, w.sample_rate);
  if (frames == 0) throw InvalidArgument("too-short input");

  const std::size_t nfft = next_pow2(win);
  const Matrix<double> bank = mel_filterbank(p, w.sample_rate, nfft);
  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

  MelSpectrogram out;
  out.values = Matrix<double>(frames, static_cast<std::size_t>(p.n_mels));
  out.frame_params = p;
  out.sample_rate = w.sample_rate;

  std::vector<double> frame(win);
  std::vector<std::complex<double>> spec(nfft);
  std::vector<double> power(nfft / 2 + 1);
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(t * hop), win,
                frame.begin());
    if (p.dither != 0.0) {
      SplitMix rng(hash_key(0xd17e5ULL, t));
      for (double& s : frame) s += p.dither * rng.gaussian();
    }
    for (std::size_t i = win - 1; i > 0; --i) frame[i] -= p.preemphasis * frame[i - 1];
    frame[0] -= p.preemphasis * frame[0];
    std::fill(spec.begin(), spec.end(), std::complex<double>{});
    for (std::size_t i = 0; i < win; ++i) spec[i] = frame[i] * window[i];
    fft_inplace(spec);
    for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(spec[i]);
    for (std::size_t b = 0; b < bank.rows(); ++b) {
      double e = 0.0;
      const auto weights = bank.row(b);
      for (std::size_t i = 0; i < power.size(); ++i) e += weights[i] * power[i];
      out.values(t, b) = std::log(std::max(e, kLogEnergyFloor));
    }
  }
  return out;
}

/// Per-channel mean/variance normalization over the utterance, using the
/// population standard deviation. Channels with std < 1e-8 become zero.
inline MelSpectrogram cmvn(const MelSpectrogram& x) {
  if (x.cmvn_applied) throw InvalidArgument("CMVN already applied");
  const std::size_t T = x.num_frames(), F = x.num_bins();
  if (T < 2) throw InvalidArgument("CMVN needs at least two frames");
  MelSpectrogram out = x;
  for (std::size_t f = 0; f < F; ++f) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += x.values(t, f);
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double d = x.values(t, f) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(T));
    for (std::size_t t = 0; t < T; ++t)
      out.values(t, f) = sd < 1e-8 ? 0.0 : (x.values(t, f) - mean) / sd;
  }
  out.cmvn_applied = true;
  return out;
}

}  // namespace phonsal
