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

// Perturbation-based saliency for autoregressive ASR.
//
// Each iteration keeps every energy segment independently with probability
// keep_prob and sets the elements of the others to the fill value. The
// backend scores the target token on every perturbed copy, and a segment's
// saliency is
//
//   mean(score | segment kept) - mean(score | segment masked).
//
// Mask bits are a pure function of (seed, iteration, segment) and scores are
// stored per iteration before the reduction, so the result does not depend on
// the worker count or the batch size.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "phonsal/alignment.hpp"
#include "phonsal/backend.hpp"
#include "phonsal/random.hpp"
#include "phonsal/segmentation.hpp"

namespace phonsal {

struct MaskPlan {
  std::size_t iterations = 20000;
  double keep_prob = 0.5;
  std::uint64_t seed = 0;

  bool keep(std::size_t iteration, std::size_t segment) const {
    return to_unit(hash_key(seed, iteration, segment)) < keep_prob;
  }
  void validate() const {
    if (iterations < 2) throw InvalidArgument("mask plan needs at least two iterations");
    if (!(keep_prob > 0.0 && keep_prob < 1.0)) throw InvalidArgument("keep_prob must be in (0,1)");
  }
};

struct AttributionOptions {
  std::size_t workers = 1;
  std::size_t batch_size = 0;  // 0: the backend's max_batch()
  double fill_value = 0.0;     // post-CMVN utterance mean
  SegmentationOptions segmentation;
};

struct SaliencyMap {
  Matrix<double> values;
  std::size_t token_index = 0;
  bool normalized = false;
};

struct BinaryMap {
  BoolMatrix values;
  std::size_t k = 0;
};

inline constexpr double kTopFraction = 0.03;

namespace detail {

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    const double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

inline double round_1e12(double v) { return std::round(v * 1e12) / 1e12; }

}  // namespace detail

/// Per-segment saliency of `target` given `prefix`. `features` are the
/// post-CMVN values the backend sees; `seg` labels the same grid.
inline std::vector<double> attribute_segments(const Matrix<double>& features, const SegmentMap& seg,
                                              Backend& backend, const std::vector<int>& prefix,
                                              int target, const MaskPlan& plan,
                                              const AttributionOptions& opts = {}) {
  plan.validate();
  if (!features.same_shape(seg.labels))
    throw InvalidArgument("segment map and features differ in shape");
  const auto n_seg = static_cast<std::size_t>(seg.n_segments);
  const std::size_t batch =
      std::max<std::size_t>(1, std::min(opts.batch_size ? opts.batch_size : backend.max_batch(),
                                        backend.max_batch()));
  const std::size_t n_batches = (plan.iterations + batch - 1) / batch;
  std::vector<double> scores(plan.iterations);

  std::atomic<std::size_t> next_batch{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    std::vector<unsigned char> kept(n_seg);
    ScoreBatch req;
    req.prefix = prefix;
    req.target = target;
    for (;;) {
      const std::size_t b = next_batch++;
      if (b >= n_batches) return;
      {
        std::lock_guard lock(failure_mu);
        if (failure) return;
      }
      const std::size_t k0 = b * batch, k1 = std::min(plan.iterations, k0 + batch);
      req.features.resize(k1 - k0);
      for (std::size_t k = k0; k < k1; ++k) {
        for (std::size_t s = 0; s < n_seg; ++s) kept[s] = plan.keep(k, s);
        auto& m = req.features[k - k0];
        m = features;
        const auto& labels = seg.labels.data();
        auto& data = m.data();
        for (std::size_t i = 0; i < data.size(); ++i)
          if (!kept[static_cast<std::size_t>(labels[i])]) data[i] = opts.fill_value;
      }
      try {
        const auto probs = backend.score_batch(req);
        check_probabilities(probs, k1 - k0);
        std::copy(probs.begin(), probs.end(), scores.begin() + static_cast<std::ptrdiff_t>(k0));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(opts.workers, n_batches));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  detail::CompensatedSum total;
  std::vector<detail::CompensatedSum> kept_sum(n_seg);
  std::vector<std::size_t> kept_count(n_seg, 0);
  for (std::size_t k = 0; k < plan.iterations; ++k) {
    total.add(scores[k]);
    for (std::size_t s = 0; s < n_seg; ++s) {
      if (plan.keep(k, s)) {
        kept_sum[s].add(scores[k]);
        ++kept_count[s];
      }
    }
  }
  std::vector<double> saliency(n_seg);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const std::size_t masked = plan.iterations - kept_count[s];
    if (kept_count[s] == 0 || masked == 0)
      throw Error("insufficient mask diversity for segment " + std::to_string(s));
    const double ks = kept_sum[s].value();
    const double kept_mean = ks / static_cast<double>(kept_count[s]);
    const double masked_mean = (total.value() - ks) / static_cast<double>(masked);
    saliency[s] = detail::round_1e12(kept_mean - masked_mean);
  }
  return saliency;
}

/// Expands per-segment saliency onto the T x F grid.
inline SaliencyMap expand_segments(const SegmentMap& seg, const std::vector<double>& per_segment,
                                   std::size_t token_index) {
  SaliencyMap out;
  out.values = Matrix<double>(seg.labels.rows(), seg.labels.cols());
  for (std::size_t i = 0; i < seg.labels.size(); ++i)
    out.values.data()[i] = per_segment[static_cast<std::size_t>(seg.labels.data()[i])];
  out.token_index = token_index;
  return out;
}

inline SaliencyMap attribute_token(const MelSpectrogram& features, const SegmentMap& seg,
                                   Backend& backend, const std::vector<int>& prefix, int target,
                                   const MaskPlan& plan, const AttributionOptions& opts = {},
                                   std::size_t token_index = 0) {
  return expand_segments(
      seg, attribute_segments(features.values, seg, backend, prefix, target, plan, opts),
      token_index);
}

/// Mean/std standardization over all elements (population std). Maps with
/// std < 1e-12 become all-zero.
inline SaliencyMap normalize(const SaliencyMap& s) {
  if (s.normalized) throw InvalidArgument("saliency map already normalized");
  SaliencyMap out = s;
  const auto& v = s.values.data();
  if (v.empty()) {
    out.normalized = true;
    return out;
  }
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < v.size(); ++i)
    out.values.data()[i] = sd < 1e-12 ? 0.0 : (v[i] - mean) / sd;
  out.normalized = true;
  return out;
}

/// Element-wise maximum over the token maps of one word.
inline SaliencyMap aggregate_word(const std::vector<SaliencyMap>& maps) {
  if (maps.empty()) throw InvalidArgument("cannot aggregate an empty list of maps");
  SaliencyMap out = maps.front();
  for (std::size_t m = 1; m < maps.size(); ++m) {
    if (!maps[m].values.same_shape(out.values)) throw InvalidArgument("saliency map shape mismatch");
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values.data()[i] = std::max(out.values.data()[i], maps[m].values.data()[i]);
  }
  for (const auto& m : maps) out.normalized = out.normalized && m.normalized;
  return out;
}

/// ceil(fraction * n), with products within 1e-9 of an integer snapped to
/// it so that e.g. 0.03 * 800 gives 24 rather than 25.
inline std::size_t top_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

/// Marks exactly ceil(fraction * T * F) elements, in descending saliency with
/// ties going to the earlier frame, then the lower bin.
inline BinaryMap binarize_topk(const SaliencyMap& s, double fraction = kTopFraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must be in (0,1]");
  const std::size_t n = s.values.size();
  const std::size_t k = std::min(n, top_count(fraction, n));
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) key[i] = detail::round_1e12(s.values.data()[i]);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return key[a] != key[b] ? key[a] > key[b] : a < b;
                    });
  BinaryMap out;
  out.values = BoolMatrix(s.values.rows(), s.values.cols(), 0);
  for (std::size_t j = 0; j < k; ++j) out.values.data()[idx[j]] = 1;
  out.k = k;
  return out;
}

struct WordExplanation {
  WordTokens word;
  SaliencyMap aggregated;
  BinaryMap binary;
};

struct UtteranceExplanation {
  TokenSequence tokens;
  SegmentMap segments;
  std::vector<SaliencyMap> token_maps;  // normalized, one per token
  std::vector<WordExplanation> words;
};

/// Full per-utterance pipeline. `logmel` is the pre-CMVN spectrogram: it is
/// segmented as is and normalized before being sent to the backend.
/// Tokens may be supplied to skip transcription.
inline UtteranceExplanation explain_utterance(const MelSpectrogram& logmel, Backend& backend,
                                              const MaskPlan& plan,
                                              const AttributionOptions& opts = {},
                                              double top_fraction = kTopFraction,
                                              const TokenSequence* tokens = nullptr) {
  const MelSpectrogram x = cmvn(logmel);
  UtteranceExplanation out;
  out.tokens = tokens ? *tokens : backend.transcribe(x);
  out.segments = segment_by_energy(logmel, opts.segmentation);
  std::vector<int> prefix;
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    out.token_maps.push_back(normalize(
        attribute_token(x, out.segments, backend, prefix, out.tokens[i].id, plan, opts, i)));
    prefix.push_back(out.tokens[i].id);
  }
  for (const auto& w : words_from_tokens(out.tokens)) {
    std::vector<SaliencyMap> maps(out.token_maps.begin() + static_cast<std::ptrdiff_t>(w.token_begin),
                                  out.token_maps.begin() + static_cast<std::ptrdiff_t>(w.token_end));
    WordExplanation we{w, aggregate_word(maps), {}};
    we.binary = binarize_topk(we.aggregated, top_fraction);
    out.words.push_back(std::move(we));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map dumps: saliency as a small binary file ("PSAL", u32 T, u32 F, u32 text
// length, token text, T*F little-endian f32), binary maps as run-length text.

inline void write_saliency_dump(const std::filesystem::path& path, const SaliencyMap& s,
                                const std::string& token_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  out.write("PSAL", 4);
  put32(static_cast<std::uint32_t>(s.values.rows()));
  put32(static_cast<std::uint32_t>(s.values.cols()));
  put32(static_cast<std::uint32_t>(token_text.size()));
  out.write(token_text.data(), static_cast<std::streamsize>(token_text.size()));
  for (double v : s.values.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put32(bits);
  }
}

inline std::pair<SaliencyMap, std::string> read_saliency_dump(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "PSAL", 4) != 0)
    throw ParseError("not a saliency dump: " + path.string());
  const std::size_t T = detail::le32(&bytes[4]), F = detail::le32(&bytes[8]),
                    len = detail::le32(&bytes[12]);
  if (bytes.size() != 16 + len + 4 * T * F) throw ParseError("truncated saliency dump");
  std::string text(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  SaliencyMap s;
  s.values = Matrix<double>(T, F);
  for (std::size_t i = 0; i < T * F; ++i) {
    const std::uint32_t bits = detail::le32(&bytes[16 + len + 4 * i]);
    float f;
    std::memcpy(&f, &bits, 4);
    s.values.data()[i] = f;
  }
  return {std::move(s), std::move(text)};
}

/// "T F k" then alternating run lengths starting with a run of zeros, row-major.
inline std::string encode_binary_rle(const BinaryMap& b) {
  std::ostringstream out;
  out << b.values.rows() << ' ' << b.values.cols() << ' ' << b.k << '\n';
  unsigned char current = 0;
  std::size_t run = 0;
  bool first = true;
  auto flush = [&] {
    out << (first ? "" : " ") << run;
    first = false;
  };
  for (unsigned char v : b.values.data()) {
    if (v != current) {
      flush();
      current = v;
      run = 0;
    }
    ++run;
  }
  flush();
  out << '\n';
  return out.str();
}

inline BinaryMap decode_binary_rle(const std::string& text) {
  std::istringstream in(text);
  std::size_t T = 0, F = 0, k = 0;
  if (!(in >> T >> F >> k)) throw ParseError("malformed binary map header");
  BinaryMap b;
  b.values = BoolMatrix(T, F, 0);
  b.k = k;
  std::size_t pos = 0, run = 0;
  unsigned char v = 0;
  while (in >> run) {
    if (pos + run > T * F) throw ParseError("binary map runs exceed shape");
    std::fill_n(b.values.data().begin() + static_cast<std::ptrdiff_t>(pos), run, v);
    pos += run;
    v ^= 1;
  }
  if (pos != T * F) throw ParseError("binary map runs do not cover the shape");
  return b;
}

}  // namespace phonsal
