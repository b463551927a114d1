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

// The scoring contract between the attribution engine and an ASR model, plus
// the synthetic energy oracle used for testing.
//
// A backend answers two questions: what does the model transcribe for these
// (CMVN-normalized) features, and what probability does it assign to a target
// token given a fixed prefix, for each of a batch of perturbed feature
// matrices. Implementations must be deterministic and safe to call from
// several threads at once.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "phonsal/features.hpp"

namespace phonsal {

struct Token {
  int id = 0;
  std::string text;
  bool begins_word = true;

  friend bool operator==(const Token&, const Token&) = default;
};

using TokenSequence = std::vector<Token>;

/// One teacher-forced scoring request, batched over perturbed copies of the
/// features. Every element of `features` shares `prefix` and `target`.
struct ScoreBatch {
  std::vector<int> prefix;
  int target = 0;
  std::vector<Matrix<double>> features;
};

inline constexpr std::size_t kDefaultMaxBatch = 128;

class Backend {
 public:
  virtual ~Backend() = default;

  virtual TokenSequence transcribe(const MelSpectrogram& features) = 0;
  virtual std::vector<double> score_batch(const ScoreBatch& batch) = 0;
  virtual std::size_t max_batch() const { return kDefaultMaxBatch; }
};

inline void check_transcribe_input(const MelSpectrogram& features) {
  if (features.values.empty()) throw InvalidArgument("empty feature input");
  if (!features.cmvn_applied)
    throw InvalidArgument("transcribe expects CMVN-normalized features");
}

inline void check_score_batch(const ScoreBatch& batch, std::size_t max_batch) {
  if (batch.target < 0) throw InvalidArgument("negative target token id");
  if (batch.features.size() > max_batch)
    throw InvalidArgument("score batch exceeds configured maximum");
}

/// Throws ProtocolError unless `probs` holds exactly `expected` values in [0, 1].
inline void check_probabilities(const std::vector<double>& probs, std::size_t expected) {
  if (probs.size() != expected)
    throw ProtocolError("backend returned " + std::to_string(probs.size()) +
                        " probabilities for " + std::to_string(expected) + " inputs");
  for (double p : probs) {
    if (std::isnan(p)) throw ProtocolError("backend returned NaN probability");
    if (p < 0.0 || p > 1.0)
      throw ProtocolError("backend probability outside [0,1]: " + std::to_string(p));
  }
}

/// Half-open rectangle in (frame, bin) space.
struct Region {
  std::size_t frame_begin = 0, frame_end = 0;
  std::size_t bin_begin = 0, bin_end = 0;

  std::size_t area() const {
    return (frame_end > frame_begin && bin_end > bin_begin)
               ? (frame_end - frame_begin) * (bin_end - bin_begin)
               : 0;
  }
  bool contains(std::size_t t, std::size_t f) const {
    return t >= frame_begin && t < frame_end && f >= bin_begin && f < bin_end;
  }
};

/// Synthetic backend with analytically known saliency:
///   p = clamp(offset + scale * mean(features inside R), 0, 1)
/// where R is the region registered for the target token (or the default).
/// Parts of R that fall outside the matrix are ignored; an empty overlap
/// yields the constant `offset`.
class EnergyOracle : public Backend {
 public:
  EnergyOracle(Region region, TokenSequence script, double offset = 0.0,
               double scale = 1.0)
      : default_region_(region), script_(std::move(script)), offset_(offset),
        scale_(scale) {}

  void set_region(int target, Region r) { regions_[target] = r; }

  const Region& region_for(int target) const {
    const auto it = regions_.find(target);
    return it == regions_.end() ? default_region_ : it->second;
  }

  TokenSequence transcribe(const MelSpectrogram& features) override {
    check_transcribe_input(features);
    return script_;
  }

  double score(const Matrix<double>& x, int target) const {
    const Region& r = region_for(target);
    const std::size_t t1 = std::min(r.frame_end, x.rows());
    const std::size_t f1 = std::min(r.bin_end, x.cols());
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = r.frame_begin; t < t1; ++t)
      for (std::size_t f = r.bin_begin; f < f1; ++f, ++n) sum += x(t, f);
    const double mean = n == 0 ? 0.0 : sum / static_cast<double>(n);
    return std::clamp(offset_ + scale_ * mean, 0.0, 1.0);
  }

  std::vector<double> score_batch(const ScoreBatch& batch) override {
    check_score_batch(batch, max_batch());
    std::vector<double> out;
    out.reserve(batch.features.size());
    for (const auto& x : batch.features) out.push_back(score(x, batch.target));
    return out;
  }

 private:
  Region default_region_;
  std::map<int, Region> regions_;
  TokenSequence script_;
  double offset_;
  double scale_;
};

inline std::unique_ptr<EnergyOracle> make_energy_oracle(Region region, TokenSequence script) {
  return std::make_unique<EnergyOracle>(region, std::move(script));
}

}  // namespace phonsal
