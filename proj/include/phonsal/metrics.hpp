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

// Agreement between binary saliency maps and phonetic structure:
//
//  - time coverage: percent of a phone's frames with any salient bin;
//  - spectral match: percent of cue measurements (formants, peaks) that land
//    on a salient element at the measurement frame;
//  - frequency distribution: per bin, the fraction of a phoneme's
//    occurrences that are salient there at the measurement frame.
//
// Everything accumulates into a MetricsTally whose merge is associative and
// commutative up to the order of TC samples, which only feed order-free
// statistics.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "phonsal/acoustics.hpp"
#include "phonsal/alignment.hpp"
#include "phonsal/attribution.hpp"

namespace phonsal {

inline double time_coverage(const BinaryMap& map, std::size_t begin, std::size_t end) {
  if (begin >= end) throw InvalidArgument("time coverage over an empty frame range");
  if (end > map.values.rows()) throw InvalidArgument("frame range exceeds the map");
  std::size_t salient = 0;
  for (std::size_t t = begin; t < end; ++t) {
    const auto row = map.values.row(t);
    if (std::any_of(row.begin(), row.end(), [](unsigned char v) { return v != 0; })) ++salient;
  }
  return 100.0 * static_cast<double>(salient) / static_cast<double>(end - begin);
}

inline double time_coverage(const BinaryMap& map, const FrameSpan& span) {
  return time_coverage(map, span.begin, span.end);
}

struct WordSpanMap {
  const BinaryMap* map = nullptr;
  FrameSpan frames;
};

/// Mean time coverage of words over their own spans, the reference line for
/// the per-phoneme TC distributions.
inline double word_reference_coverage(std::span<const WordSpanMap> words) {
  if (words.empty()) throw InvalidArgument("no analyzed words");
  double sum = 0.0;
  for (const auto& w : words) sum += time_coverage(*w.map, w.frames);
  return sum / static_cast<double>(words.size());
}

struct BoxplotStats {
  double median = 0, q1 = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;
  std::vector<double> outliers;
  std::size_t n = 0;
};

// Linear-interpolation quantile of sorted data (position q * (n - 1)).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Quartiles by linear interpolation; whiskers at the most extreme points
/// within 1.5 IQR of the box; everything beyond is an outlier.
inline BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("boxplot of an empty list");
  std::sort(values.begin(), values.end());
  BoxplotStats b;
  b.n = values.size();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q1;
  b.whisker_hi = b.q3;
  for (double v : values) {
    if (v < lo || v > hi) b.outliers.push_back(v);
  }
  for (double v : values)
    if (v >= lo) {
      b.whisker_lo = std::min(v, b.q1);
      break;
    }
  for (auto it = values.rbegin(); it != values.rend(); ++it)
    if (*it <= hi) {
      b.whisker_hi = std::max(*it, b.q3);
      break;
    }
  return b;
}

// ---------------------------------------------------------------------------

enum class Cue { F1, F2, F3, F4, Peak };

inline const char* to_string(Cue c) {
  static constexpr const char* kNames[] = {"F1", "F2", "F3", "F4", "peak"};
  return kNames[static_cast<int>(c)];
}

struct CueMeasurement {
  std::optional<FormantSet> formants;     // vowels
  std::optional<PeakMeasurement> peak;    // fricatives, plosive releases
};

/// One phone occurrence together with the binary map of its word and the cue
/// measured for it.
struct OccurrenceEvidence {
  const PhoneOccurrence* occurrence = nullptr;
  const BinaryMap* map = nullptr;
  CueMeasurement cue;
};

struct SmCell {
  std::size_t matched = 0;
  std::size_t n = 0;         // occurrences seen
  std::size_t failures = 0;  // measurements unavailable; excluded from the ratio

  std::optional<double> percent() const {
    if (n <= failures) return std::nullopt;
    return 100.0 * static_cast<double>(matched) / static_cast<double>(n - failures);
  }
  void merge(const SmCell& o) {
    matched += o.matched;
    n += o.n;
    failures += o.failures;
  }
  friend bool operator==(const SmCell&, const SmCell&) = default;
};

using SmKey = std::tuple<std::string, Gender, Cue>;  // (TIMIT label, gender, cue)
using SpectralMatchTable = std::map<SmKey, SmCell>;

struct DistCell {
  std::vector<std::size_t> salient;  // per bin
  std::size_t n = 0;

  std::vector<double> density() const {
    std::vector<double> d(salient.size(), 0.0);
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = static_cast<double>(salient[i]) / static_cast<double>(n);
    return d;
  }
  void merge(const DistCell& o) {
    if (salient.empty()) salient.assign(o.salient.size(), 0);
    for (std::size_t i = 0; i < o.salient.size(); ++i) salient[i] += o.salient[i];
    n += o.n;
  }
  friend bool operator==(const DistCell&, const DistCell&) = default;
};

using DistKey = std::pair<std::string, Gender>;
using FrequencyDistribution = std::map<DistKey, DistCell>;

struct FormantAverage {
  std::array<double, 4> sum{};
  std::array<std::size_t, 4> count{};
  void merge(const FormantAverage& o) {
    for (std::size_t k = 0; k < 4; ++k) {
      sum[k] += o.sum[k];
      count[k] += o.count[k];
    }
  }
};

namespace detail {

// Frames at which an occurrence's cue is measured: the midpoint for vowels
// and fricatives, the first two release frames for plosives.
inline std::vector<std::size_t> measurement_frames(const PhoneOccurrence& o, std::size_t num_frames) {
  if (o.cls != PhoneClass::Plosive) return {o.frames.midpoint};
  std::vector<std::size_t> frames{o.frames.begin};
  if (o.frames.size() >= 2 && o.frames.begin + 1 < num_frames) frames.push_back(o.frames.begin + 1);
  return frames;
}

}  // namespace detail

/// Adds one occurrence to the SM table. Closure phases carry no spectral cue
/// and are ignored.
inline void add_spectral_match(SpectralMatchTable& table, const OccurrenceEvidence& e,
                               const FrameParams& p, int sample_rate) {
  const PhoneOccurrence& o = *e.occurrence;
  if (o.phase == Phase::Closure) return;
  const auto& m = e.map->values;
  if (o.cls == PhoneClass::Vowel) {
    for (int k = 0; k < 4; ++k) {
      SmCell& cell = table[{o.timit, o.gender, static_cast<Cue>(k)}];
      ++cell.n;
      const auto& fs = e.cue.formants;
      if (!fs || fs->failed || !fs->f[static_cast<std::size_t>(k)]) {
        ++cell.failures;
        continue;
      }
      const std::size_t bin = hz_to_bin(*fs->f[static_cast<std::size_t>(k)], p, sample_rate);
      if (m(o.frames.midpoint, bin)) ++cell.matched;
    }
    return;
  }
  SmCell& cell = table[{o.timit, o.gender, Cue::Peak}];
  ++cell.n;
  if (!e.cue.peak) {
    ++cell.failures;
    return;
  }
  for (std::size_t t : detail::measurement_frames(o, m.rows())) {
    if (m(t, e.cue.peak->bin)) {
      ++cell.matched;
      break;
    }
  }
}

inline void add_frequency_distribution(FrequencyDistribution& dist, const OccurrenceEvidence& e) {
  const PhoneOccurrence& o = *e.occurrence;
  if (o.phase == Phase::Closure) return;
  const auto& m = e.map->values;
  DistCell& cell = dist[{o.timit, o.gender}];
  if (cell.salient.empty()) cell.salient.assign(m.cols(), 0);
  ++cell.n;
  const auto frames = detail::measurement_frames(o, m.rows());
  for (std::size_t f = 0; f < m.cols(); ++f) {
    for (std::size_t t : frames) {
      if (m(t, f)) {
        ++cell.salient[f];
        break;
      }
    }
  }
}

inline SpectralMatchTable spectral_match(std::span<const OccurrenceEvidence> evidence,
                                         const FrameParams& p, int sample_rate) {
  SpectralMatchTable table;
  for (const auto& e : evidence) add_spectral_match(table, e, p, sample_rate);
  return table;
}

inline FrequencyDistribution frequency_distribution(std::span<const OccurrenceEvidence> evidence) {
  FrequencyDistribution dist;
  for (const auto& e : evidence) add_frequency_distribution(dist, e);
  return dist;
}

// ---------------------------------------------------------------------------

using TcKey = std::pair<std::string, Phase>;  // (TIMIT label, phase)

struct MetricsTally {
  std::map<TcKey, std::vector<double>> tc;
  double word_tc_sum = 0.0;
  std::size_t word_count = 0;
  SpectralMatchTable sm;
  FrequencyDistribution dist;
  std::map<DistKey, FormantAverage> formant_avg;
  std::size_t formant_failures = 0;
  std::size_t degraded_bursts = 0;

  void add_word(const BinaryMap& map, const FrameSpan& frames) {
    word_tc_sum += time_coverage(map, frames);
    ++word_count;
  }

  void add_occurrence(const OccurrenceEvidence& e, const FrameParams& p, int sample_rate) {
    const PhoneOccurrence& o = *e.occurrence;
    tc[{o.timit, o.phase}].push_back(time_coverage(*e.map, o.frames));
    if (o.phase == Phase::Closure) return;
    add_spectral_match(sm, e, p, sample_rate);
    add_frequency_distribution(dist, e);
    if (o.cls == PhoneClass::Vowel) {
      const auto& fs = e.cue.formants;
      if (!fs || fs->failed) {
        ++formant_failures;
        return;
      }
      auto& avg = formant_avg[{o.timit, o.gender}];
      for (std::size_t k = 0; k < 4; ++k)
        if (fs->f[k]) {
          avg.sum[k] += *fs->f[k];
          ++avg.count[k];
        }
    } else if (e.cue.peak && e.cue.peak->degraded) {
      ++degraded_bursts;
    }
  }

  void merge(const MetricsTally& o) {
    for (const auto& [k, v] : o.tc) tc[k].insert(tc[k].end(), v.begin(), v.end());
    word_tc_sum += o.word_tc_sum;
    word_count += o.word_count;
    for (const auto& [k, c] : o.sm) sm[k].merge(c);
    for (const auto& [k, c] : o.dist) dist[k].merge(c);
    for (const auto& [k, a] : o.formant_avg) formant_avg[k].merge(a);
    formant_failures += o.formant_failures;
    degraded_bursts += o.degraded_bursts;
  }

  std::optional<double> word_reference() const {
    if (word_count == 0) return std::nullopt;
    return word_tc_sum / static_cast<double>(word_count);
  }
};

}  // namespace phonsal
