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

// phonsal command line.
//
//   phonsal analyze --corpus DIR --backend SPEC --out DIR [run options]
//   phonsal dump-saliency --corpus DIR --backend SPEC --out DIR --utt ID --token I
//   phonsal selftest [--work DIR] [--golden DIR]
//   phonsal make-synth-corpus --out DIR [--mismatched]
//
// Run options live on the top-level app so that a key=value config file
// (--config) can set any of them; flags override the file, and
// PHONSAL_BACKEND overrides the file's backend.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <string_view>

#include <CLI11.hpp>

#include "phonsal/report.hpp"
#include "phonsal/testing/acceptance.hpp"
#include "phonsal/testing/synth_corpus.hpp"

namespace fs = std::filesystem;
using namespace phonsal;

namespace {

int run_analyze(RunConfig cfg) {
  cfg.log = &std::cerr;
  const auto r = run_pipeline(cfg);
  std::cout << "utterances " << r.utterances << ", error-free " << r.error_free << ", analyzed " << r.analyzed
            << ", occurrences " << r.occurrences << ", skipped " << r.failures.size() << "\n";
  if (const auto w = r.wer()) std::cout << "WER " << detail::fmt(*w, 2) << "\n";
  std::cout << "outputs in " << cfg.output_dir.string() << "\n";
  return 0;
}

int run_dump(const RunConfig& cfg, const std::string& utt, std::size_t token) {
  const auto files = dump_saliency(cfg, utt, token);
  std::cout << files.spectrogram.string() << "\n" << files.saliency.string() << "\n" << files.binary.string() << "\n";
  return 0;
}

int run_selftest(const testing::AcceptanceOptions& opt) {
  const auto results = testing::run_acceptance(opt, std::cout);
  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.pass;
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phoneme-level saliency analysis for speech recognizers"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file with run options");

  RunConfig cfg;
  std::string corpus, out, cache;
  app.add_option("--corpus", corpus, "corpus root (TIMIT layout)");
  app.add_option("--backend", cfg.backend, "exec:<command>, http(s)://host:port/path, or oracle:word-regions")
      ->capture_default_str();
  app.add_option("--out", out, "output directory");
  app.add_option("--iterations", cfg.iterations, "masks per token")->capture_default_str();
  app.add_option("--keep-prob", cfg.keep_prob, "probability a segment is kept")->capture_default_str();
  app.add_option("--top-fraction", cfg.top_fraction, "fraction of elements kept in binary maps")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "mask seed")->capture_default_str();
  app.add_option("--subset", cfg.subset, "utterance prefix filter (sx, si, sa or all)")->capture_default_str();
  app.add_option("--workers", cfg.workers, "utterances processed in parallel")->capture_default_str();
  app.add_option("--max-batch", cfg.max_batch, "masked inputs per backend request")->capture_default_str();
  app.add_option("--cache-dir", cache, "reuse transcriptions and maps across runs");
  app.add_flag("--no-error-free-filter{false}", cfg.error_free_only,
               "analyze utterances with recognition errors when word counts match");
  app.add_flag("--dump-maps", cfg.dump_maps, "write per-token maps for every analyzed utterance");

  auto* analyze = app.add_subcommand("analyze", "run the full pipeline and write tables")->fallthrough();
  std::string utt;
  std::size_t token = 0;
  auto* dump = app.add_subcommand("dump-saliency", "write spectrogram, saliency and binary map of one token")
                   ->fallthrough();
  dump->add_option("--utt", utt, "utterance id, e.g. fcjf0_sx37")->required();
  dump->add_option("--token", token, "token index within the transcription")->required();

  testing::AcceptanceOptions self;
  std::string self_work = self.work.string(), self_golden;
  auto* selftest = app.add_subcommand("selftest", "run the synthetic acceptance checks");
  selftest->add_option("--work", self_work, "scratch directory")->capture_default_str();
  selftest->add_option("--golden", self_golden, "pinned determinism outputs to compare against");

  bool mismatched = false;
  auto* synth = app.add_subcommand("make-synth-corpus", "write the synthetic TIMIT-layout corpus")->fallthrough();
  synth->add_flag("--mismatched", mismatched, "prompt text disagrees with the word transcription");

  CLI11_PARSE(app, argc, argv);
  // CLI11 lets a config file beat the environment; here the environment wins
  // over the file but not over an explicit flag.
  bool backend_flag = false;
  for (int i = 1; i < argc; ++i) backend_flag |= std::string_view(argv[i]).rfind("--backend", 0) == 0;
  if (const char* env = std::getenv("PHONSAL_BACKEND"); env && *env && !backend_flag) cfg.backend = env;
  cfg.corpus_root = corpus;
  cfg.output_dir = out;
  cfg.cache_dir = cache;

  try {
    if (*analyze || *dump) {
      if (corpus.empty() || out.empty()) throw InvalidArgument("--corpus and --out are required");
      return *analyze ? run_analyze(cfg) : run_dump(cfg, utt, token);
    }
    if (*selftest) {
      self.work = self_work;
      self.golden = self_golden;
      return run_selftest(self);
    }
    if (*synth) {
      if (out.empty()) throw InvalidArgument("--out is required");
      const auto n = testing::write_synth_corpus(out, {.mismatched_prompts = mismatched});
      std::cout << "wrote " << n << " utterances under " << out << "\n";
      return 0;
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
