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

// Minimal library use: explain one audio file against a protocol backend
// and print, per word, which frames hold its most salient elements.
//
//   explain_wav <audio.wav> <backend spec> [iterations]

#include <cstdlib>
#include <iostream>

#include "phonsal/attribution.hpp"
#include "phonsal/audio_io.hpp"
#include "phonsal/protocol.hpp"

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: explain_wav <audio.wav> <backend spec> [iterations]\n";
    return 2;
  }
  try {
    const auto wave = phonsal::read_audio(argv[1]);
    const auto logmel = phonsal::compute_logmel(wave);
    auto backend = phonsal::make_remote_backend(argv[2]);
    phonsal::MaskPlan plan;
    if (argc > 3) plan.iterations = std::strtoul(argv[3], nullptr, 10);

    const auto ex = phonsal::explain_utterance(logmel, *backend, plan);
    for (const auto& w : ex.words) {
      const auto& b = w.binary.values;
      std::size_t first = b.rows(), last = 0;
      for (std::size_t t = 0; t < b.rows(); ++t)
        for (std::size_t f = 0; f < b.cols(); ++f)
          if (b(t, f)) first = std::min(first, t), last = std::max(last, t);
      std::cout << w.word.text << ": salient frames " << first << ".." << last << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
