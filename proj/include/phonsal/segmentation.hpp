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

// Energy-based clustering of spectrogram elements.
//
// Elements are quantized into energy-quantile bands; 8-connected runs of one
// band become segments, so harmonics come out as ridges and the noise floor
// as large blobs. Tiny segments are then folded into the neighbour they share
// the longest edge with, and the smallest segments keep being folded until the
// count is under the cap.

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "phonsal/features.hpp"

namespace phonsal {

struct SegmentMap {
  Matrix<int> labels;  // T x F, ids dense in [0, n_segments)
  int n_segments = 0;

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(n_segments), 0);
    for (int l : labels.data()) ++out[static_cast<std::size_t>(l)];
    return out;
  }
};

struct SegmentationOptions {
  int n_bands = 8;
  std::size_t min_segment_size = 4;
  std::size_t max_segments = 2000;
};

namespace detail {

inline Matrix<int> energy_bands(const Matrix<double>& x, int n_bands) {
  const std::size_t n = x.size();
  std::vector<double> sorted = x.data();
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> thresholds;
  for (int b = 1; b < n_bands; ++b)
    thresholds.push_back(sorted[static_cast<std::size_t>(b) * n / static_cast<std::size_t>(n_bands)]);
  Matrix<int> band(x.rows(), x.cols());
  for (std::size_t i = 0; i < n; ++i)
    band.data()[i] = static_cast<int>(
        std::upper_bound(thresholds.begin(), thresholds.end(), x.data()[i]) - thresholds.begin());
  return band;
}

// 8-connected components of equal band value, numbered in row-major order of
// their first element.
inline int label_components(const Matrix<int>& band, Matrix<int>& labels) {
  const std::size_t T = band.rows(), F = band.cols();
  labels = Matrix<int>(T, F, -1);
  int next = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t t0 = 0; t0 < T; ++t0) {
    for (std::size_t f0 = 0; f0 < F; ++f0) {
      if (labels(t0, f0) >= 0) continue;
      const int b = band(t0, f0);
      labels(t0, f0) = next;
      stack.assign(1, {t0, f0});
      while (!stack.empty()) {
        const auto [t, f] = stack.back();
        stack.pop_back();
        for (int dt = -1; dt <= 1; ++dt) {
          for (int df = -1; df <= 1; ++df) {
            if (dt == 0 && df == 0) continue;
            const auto nt = static_cast<std::ptrdiff_t>(t) + dt;
            const auto nf = static_cast<std::ptrdiff_t>(f) + df;
            if (nt < 0 || nf < 0 || nt >= static_cast<std::ptrdiff_t>(T) ||
                nf >= static_cast<std::ptrdiff_t>(F))
              continue;
            const auto ut = static_cast<std::size_t>(nt), uf = static_cast<std::size_t>(nf);
            if (labels(ut, uf) < 0 && band(ut, uf) == b) {
              labels(ut, uf) = next;
              stack.emplace_back(ut, uf);
            }
          }
        }
      }
      ++next;
    }
  }
  return next;
}

}  // namespace detail

inline SegmentMap segment_by_energy(const Matrix<double>& x, const SegmentationOptions& opts = {}) {
  if (opts.n_bands < 1) throw InvalidArgument("n_bands must be positive");
  if (x.size() < static_cast<std::size_t>(opts.n_bands))
    throw InvalidArgument("spectrogram has fewer elements than energy bands");
  if (opts.max_segments < 1) throw InvalidArgument("max_segments must be positive");

  const std::size_t T = x.rows(), F = x.cols();
  Matrix<int> labels;
  const int n0 = detail::label_components(detail::energy_bands(x, opts.n_bands), labels);

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n0));
  for (std::size_t i = 0; i < labels.size(); ++i)
    members[static_cast<std::size_t>(labels.data()[i])].push_back(i);
  std::set<std::pair<std::size_t, int>> by_size;
  for (int s = 0; s < n0; ++s) by_size.emplace(members[static_cast<std::size_t>(s)].size(), s);

  std::map<int, std::size_t> boundary;
  while (by_size.size() > 1) {
    const auto [size, s] = *by_size.begin();
    if (size >= opts.min_segment_size && by_size.size() <= opts.max_segments) break;

    boundary.clear();
    for (std::size_t i : members[static_cast<std::size_t>(s)]) {
      const std::size_t t = i / F, f = i % F;
      auto visit = [&](std::size_t j) {
        const int other = labels.data()[j];
        if (other != s) ++boundary[other];
      };
      if (t > 0) visit(i - F);
      if (t + 1 < T) visit(i + F);
      if (f > 0) visit(i - 1);
      if (f + 1 < F) visit(i + 1);
    }
    int into = -1;
    std::size_t best = 0;
    for (const auto& [other, len] : boundary)
      if (len > best) best = len, into = other;  // map order: ties keep lower id

    auto& src = members[static_cast<std::size_t>(s)];
    auto& dst = members[static_cast<std::size_t>(into)];
    by_size.erase(by_size.begin());
    by_size.erase({dst.size(), into});
    for (std::size_t i : src) labels.data()[i] = into;
    dst.insert(dst.end(), src.begin(), src.end());
    src.clear();
    src.shrink_to_fit();
    by_size.emplace(dst.size(), into);
  }

  // Dense ids in row-major order of first appearance.
  std::vector<int> remap(static_cast<std::size_t>(n0), -1);
  int next = 0;
  for (int& l : labels.data()) {
    auto& r = remap[static_cast<std::size_t>(l)];
    if (r < 0) r = next++;
    l = r;
  }
  return {std::move(labels), next};
}

inline SegmentMap segment_by_energy(const MelSpectrogram& x, const SegmentationOptions& opts = {}) {
  if (x.cmvn_applied)
    throw InvalidArgument("segmentation expects log-mel energies before CMVN");
  return segment_by_energy(x.values, opts);
}

}  // namespace phonsal
