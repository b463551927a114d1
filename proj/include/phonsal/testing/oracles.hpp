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

// Test-only reference implementations and signal synthesis. Nothing here
// calls into the code paths it is used to check: metric oracles are written
// straight from the definitions with plain loops, the spectral oracle is a
// naive DFT, and synthetic vowels come from a known all-pole filter.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <deque>
#include <cstddef>
#include <map>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "phonsal/metrics.hpp"
#include "phonsal/random.hpp"

namespace phonsal::testing {

// ---------------------------------------------------------------------------
// Signals.

/// Impulse train at `f0` through a cascade of two-pole resonators
/// y[n] = x[n] + 2 r cos(theta) y[n-1] - r^2 y[n-2], r = exp(-pi B / fs),
/// theta = 2 pi F / fs. Output is scaled to a peak of `peak`.
inline std::vector<double> synth_vowel(const std::vector<double>& formants,
                                       const std::vector<double>& bandwidths, double f0,
                                       double duration_s, int fs, double peak = 0.5) {
  const auto n = static_cast<std::size_t>(duration_s * fs);
  std::vector<double> y(n, 0.0);
  const double period = fs / f0;
  for (double pos = 0.0; pos < static_cast<double>(n); pos += period)
    y[static_cast<std::size_t>(pos)] = 1.0;
  // Net source/radiation slope of voiced speech (-6 dB/oct above 50 Hz).
  // Without it, analysis-side pre-emphasis over-tilts and pulls F1 up.
  const double tilt = std::exp(-2.0 * std::numbers::pi * 50.0 / fs);
  for (std::size_t i = 1; i < n; ++i) y[i] += tilt * y[i - 1];
  for (std::size_t k = 0; k < formants.size(); ++k) {
    const double r = std::exp(-std::numbers::pi * bandwidths[k] / fs);
    const double c = 2.0 * r * std::cos(2.0 * std::numbers::pi * formants[k] / fs);
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = y[i] + c * y1 - r * r * y2;
      y2 = y1;
      y1 = v;
      y[i] = v;
    }
  }
  double m = 0.0;
  for (double v : y) m = std::max(m, std::abs(v));
  if (m > 0.0)
    for (double& v : y) v *= peak / m;
  return y;
}

inline std::vector<double> sine(double hz, double amplitude, double duration_s, int fs) {
  std::vector<double> out(static_cast<std::size_t>(duration_s * fs));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs);
  return out;
}

/// White noise band-passed to [lo, hi] Hz by zeroing DFT bins outside the band
/// (naive O(n^2) DFT; keep n small).
inline std::vector<double> band_noise(double lo, double hi, std::size_t n, int fs,
                                      std::uint64_t seed, double amplitude = 0.3) {
  SplitMix rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.gaussian();
  std::vector<std::complex<double>> X(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / double(n));
    const double f = std::min(k, n - k) * static_cast<double>(fs) / static_cast<double>(n);
    X[k] = (f >= lo && f <= hi) ? acc : 0.0;
  }
  std::vector<double> y(n);
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> acc;
    for (std::size_t k = 0; k < n; ++k)
      acc += X[k] * std::polar(1.0, 2.0 * std::numbers::pi * double(k) * double(i) / double(n));
    y[i] = acc.real() / static_cast<double>(n);
    m = std::max(m, std::abs(y[i]));
  }
  for (double& v : y) v *= amplitude / m;
  return y;
}

/// |DFT|^2 at bins 0..n/2 by direct summation.
inline std::vector<double> naive_power_spectrum(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / double(n));
    p[k] = std::norm(acc);
  }
  return p;
}

/// Nearest mel center by linear scan, lower index on ties.
inline std::size_t nearest_center_scan(double hz, const std::vector<double>& centers) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < centers.size(); ++i)
    if (std::abs(centers[i] - hz) < std::abs(centers[best] - hz)) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Definition-literal metrics.

inline double brute_time_coverage(const BoolMatrix& m, std::size_t begin, std::size_t end) {
  int salient_frames = 0;
  for (std::size_t t = begin; t < end; ++t) {
    bool any = false;
    for (std::size_t f = 0; f < m.cols(); ++f) any = any || m(t, f) == 1;
    salient_frames += any ? 1 : 0;
  }
  return 100.0 * salient_frames / static_cast<double>(end - begin);
}

struct BruteSm {
  std::map<std::tuple<std::string, Gender, int>, std::array<int, 3>> cells;  // matched, n, fail
};

/// SM by definition: vowel formant k matches when the map is salient at the
/// midpoint frame in the bin nearest Fk; a fricative peak when salient at
/// the midpoint frame in the peak bin; a burst peak when salient in that bin
/// at either of the first two release frames (only the first when the
/// release is one frame long or the map ends).
inline BruteSm brute_spectral_match(const std::vector<OccurrenceEvidence>& ev,
                                    const std::vector<double>& centers) {
  BruteSm out;
  for (const auto& e : ev) {
    const auto& o = *e.occurrence;
    const auto& m = e.map->values;
    if (o.phase == Phase::Closure) continue;
    if (o.cls == PhoneClass::Vowel) {
      for (int k = 0; k < 4; ++k) {
        auto& c = out.cells[{o.timit, o.gender, k}];
        c[1] += 1;
        if (!e.cue.formants || e.cue.formants->failed || !e.cue.formants->f[k]) {
          c[2] += 1;
          continue;
        }
        const std::size_t bin = nearest_center_scan(*e.cue.formants->f[k], centers);
        if (m(o.frames.midpoint, bin) == 1) c[0] += 1;
      }
    } else {
      auto& c = out.cells[{o.timit, o.gender, 4}];
      c[1] += 1;
      if (!e.cue.peak) {
        c[2] += 1;
        continue;
      }
      const std::size_t bin = e.cue.peak->bin;
      bool hit = false;
      if (o.cls == PhoneClass::Fricative) {
        hit = m(o.frames.midpoint, bin) == 1;
      } else {
        const std::size_t onset = o.frames.begin;
        hit = m(onset, bin) == 1;
        if (o.frames.end - o.frames.begin >= 2 && onset + 1 < m.rows())
          hit = hit || m(onset + 1, bin) == 1;
      }
      if (hit) c[0] += 1;
    }
  }
  return out;
}

/// D by definition: per (phoneme, gender) and bin, the number of occurrences
/// salient at that bin at a measurement frame, over the occurrence count.
inline std::map<std::pair<std::string, Gender>, std::vector<double>> brute_distribution(
    const std::vector<OccurrenceEvidence>& ev) {
  std::map<std::pair<std::string, Gender>, std::pair<std::vector<int>, int>> acc;
  for (const auto& e : ev) {
    const auto& o = *e.occurrence;
    const auto& m = e.map->values;
    if (o.phase == Phase::Closure) continue;
    auto& [counts, n] = acc[{o.timit, o.gender}];
    counts.resize(m.cols(), 0);
    n += 1;
    for (std::size_t f = 0; f < m.cols(); ++f) {
      bool hit;
      if (o.cls == PhoneClass::Plosive) {
        hit = m(o.frames.begin, f) == 1;
        if (o.frames.end - o.frames.begin >= 2 && o.frames.begin + 1 < m.rows())
          hit = hit || m(o.frames.begin + 1, f) == 1;
      } else {
        hit = m(o.frames.midpoint, f) == 1;
      }
      counts[f] += hit ? 1 : 0;
    }
  }
  std::map<std::pair<std::string, Gender>, std::vector<double>> out;
  for (const auto& [k, v] : acc) {
    std::vector<double> d;
    for (int c : v.first) d.push_back(static_cast<double>(c) / v.second);
    out[k] = d;
  }
  return out;
}

/// Quantile of the piecewise-linear interpolant through (i / (n - 1), x_i),
/// located by scanning the segments.
inline double brute_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 1) return v[0];
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(n - 1);
    const double b = static_cast<double>(i + 1) / static_cast<double>(n - 1);
    if (q >= a && q <= b) return v[i] + (q - a) / (b - a) * (v[i + 1] - v[i]);
  }
  return v.back();
}

// ---------------------------------------------------------------------------
// Planted-region spectrograms.

// Background uniform in [0, 0.5), planted block of `level` inside R and a
// one-element moat of very low energy around it, so R is its own segment.
inline Matrix<double> planted(std::size_t T, std::size_t F, const Region& r, double level,
                       std::uint64_t seed) {
  SplitMix rng(seed);
  Matrix<double> m(T, F);
  for (double& v : m.data()) v = rng.uniform(0.0, 0.5);
  for (std::size_t t = r.frame_begin - 1; t <= r.frame_end; ++t)
    for (std::size_t f = r.bin_begin - 1; f <= r.bin_end; ++f) m(t, f) = -10.0;
  for (std::size_t t = r.frame_begin; t < r.frame_end; ++t)
    for (std::size_t f = r.bin_begin; f < r.bin_end; ++f) m(t, f) = level;
  return m;
}

// ---------------------------------------------------------------------------
// Random metric instances.

// Random evidence over random maps. Occurrences and maps live in deques so
// pointers stay valid.
struct Instance {
  std::deque<PhoneOccurrence> occ;
  std::deque<BinaryMap> maps;
  std::vector<OccurrenceEvidence> ev;
};

inline Instance random_instance(SplitMix& rng, const std::vector<double>& centers) {
  static const char* kPhones[] = {"iy", "aa", "ux", "s", "sh", "dh", "t", "g"};
  Instance in;
  const std::size_t n_occ = 1 + rng.below(25);
  for (std::size_t i = 0; i < n_occ; ++i) {
    const std::size_t T = 4 + rng.below(20), F = 80;
    BinaryMap m;
    m.values = BoolMatrix(T, F, 0);
    const double density = rng.uniform(0.0, 0.3);
    for (auto& v : m.values.data()) v = rng.uniform() < density ? 1 : 0;
    in.maps.push_back(std::move(m));

    PhoneOccurrence o;
    o.timit = kPhones[rng.below(8)];
    const auto* info = lookup_phone(o.timit);
    o.ipa = info->ipa;
    o.cls = info->cls;
    o.phase = o.cls == PhoneClass::Plosive ? (rng.uniform() < 0.3 ? Phase::Closure : Phase::Release)
                                           : Phase::Whole;
    o.gender = rng.uniform() < 0.5 ? Gender::M : Gender::F;
    const std::size_t b = rng.below(T);
    const std::size_t e = b + 1 + rng.below(T - b);
    o.frames = {b, e, b + (e - b - 1) / 2};
    in.occ.push_back(o);

    OccurrenceEvidence ev{&in.occ.back(), &in.maps.back(), {}};
    if (o.cls == PhoneClass::Vowel) {
      if (rng.uniform() > 0.1) {
        FormantSet fs;
        fs.ceiling = 5000;
        for (std::size_t k = 0; k < 4; ++k)
          if (rng.uniform() > 0.15) fs.f[k] = rng.uniform(centers.front(), centers.back());
        fs.failed = rng.uniform() < 0.05;
        ev.cue.formants = fs;
      }
    } else if (rng.uniform() > 0.1) {
      ev.cue.peak = PeakMeasurement{rng.below(F), 1, false};
    }
    in.ev.push_back(ev);
  }
  return in;
}

// ---------------------------------------------------------------------------

/// Backend returning the same probability for every request.
class ConstantBackend : public Backend {
 public:
  explicit ConstantBackend(double p, TokenSequence script = {{1, "x", true}})
      : p_(p), script_(std::move(script)) {}
  TokenSequence transcribe(const MelSpectrogram& x) override {
    check_transcribe_input(x);
    return script_;
  }
  std::vector<double> score_batch(const ScoreBatch& b) override {
    return std::vector<double>(b.features.size(), p_);
  }

 private:
  double p_;
  TokenSequence script_;
};

/// Wraps another backend and applies p -> a * p + b to its probabilities.
class AffineBackend : public Backend {
 public:
  AffineBackend(Backend& inner, double a, double b) : inner_(inner), a_(a), b_(b) {}
  TokenSequence transcribe(const MelSpectrogram& x) override { return inner_.transcribe(x); }
  std::vector<double> score_batch(const ScoreBatch& batch) override {
    auto p = inner_.score_batch(batch);
    for (double& v : p) v = a_ * v + b_;
    return p;
  }
  std::size_t max_batch() const override { return inner_.max_batch(); }

 private:
  Backend& inner_;
  double a_, b_;
};

}  // namespace phonsal::testing
