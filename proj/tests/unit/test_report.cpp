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

#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "phonsal/report.hpp"
#include "phonsal/testing/synth_corpus.hpp"

namespace phonsal {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(detail::read_text(p));
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("phonsal_report_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// One corpus shared by the tests below.
const fs::path& corpus() {
  static const fs::path root = [] {
    const auto r = fresh_dir("corpus");
    testing::write_synth_corpus(r);
    return r;
  }();
  return root;
}

RunConfig small_run(const fs::path& out) {
  RunConfig cfg;
  cfg.corpus_root = corpus();
  cfg.output_dir = out;
  cfg.iterations = 64;
  cfg.seed = 5;
  return cfg;
}

TEST(OracleScript, SplitsLongWords) {
  const auto t = oracle_script({"Zoo", "shoe,", "vision"});
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[2], (Token{3, "visi", true}));
  EXPECT_EQ(t[3], (Token{4, "on", false}));
}

TEST(Tables, EmptyTallySchema) {
  const MetricsTally t;
  const auto f = sm_formants_csv(t);
  std::istringstream in(f);
  std::vector<std::string> rows;
  for (std::string l; std::getline(in, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[0], "phoneme,F1_M,F1_F,F2_M,F2_F,F3_M,F3_F,F4_M,F4_F");
  EXPECT_EQ(rows[1], "ɑ,NA,NA,NA,NA,NA,NA,NA,NA");
  EXPECT_EQ(rows[12].substr(0, 5), "avg.,");

  std::istringstream pin(sm_peaks_csv(t));
  rows.clear();
  for (std::string l; std::getline(pin, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[0], "fricative,fricative_M,fricative_F,plosive,plosive_M,plosive_F");
  EXPECT_EQ(rows[1], "s,NA,NA,p,NA,NA");
  EXPECT_EQ(rows[8], "ð,NA,NA,,,");
  EXPECT_EQ(rows[9], "avg.,NA,NA,avg.,NA,NA");
}

TEST(Tables, AverageRowIsMeanOfRows) {
  MetricsTally t;
  t.sm[{"aa", Gender::M, Cue::F1}] = {9, 10, 0};  // 90
  t.sm[{"ae", Gender::M, Cue::F1}] = {1, 4, 2};   // 50
  const auto f = sm_formants_csv(t);
  EXPECT_NE(f.find("ɑ,90.0,NA"), std::string::npos);
  EXPECT_NE(f.find("æ,50.0,NA"), std::string::npos);
  EXPECT_NE(f.find("avg.,70.0,NA"), std::string::npos);
}

TEST(Pipeline, SyntheticCorpusProducesFullFileSet) {
  const auto out = fresh_dir("full");
  const auto r = run_pipeline(small_run(out));
  EXPECT_EQ(r.utterances, 10u);
  EXPECT_EQ(r.error_free, 10u);
  EXPECT_EQ(r.analyzed, 10u);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_EQ(detail::read_text(out / "wer.txt"), "WER 0.00\n");
  for (const char* f : {"tc_boxplot.csv", "sm_formants.csv", "sm_peaks.csv", "sm_counts.csv",
                        "run_summary.json", "dist_vowel_iy.csv", "dist_fricative_sh.csv",
                        "dist_plosive_t.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(lines_of(out / "sm_formants.csv").size(), 13u);
  EXPECT_EQ(lines_of(out / "tc_boxplot.csv").size(), 1u + 11 + 8 + 12);
  const auto dist = lines_of(out / "dist_vowel_iy.csv");
  ASSERT_EQ(dist.size(), 2u + 1 + 80);
  EXPECT_EQ(dist[0].substr(0, 13), "# formants_M,");
  EXPECT_EQ(dist[2], "bin,center_hz,density_M,density_F");
  EXPECT_GT(r.tally.sm.size(), 0u);
}

TEST(Pipeline, WorkerCountDoesNotChangeOutputs) {
  const auto a = fresh_dir("w1"), b = fresh_dir("w3");
  auto cfg = small_run(a);
  run_pipeline(cfg);
  cfg.output_dir = b;
  cfg.workers = 3;
  run_pipeline(cfg);
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".csv" && e.path().filename() != "wer.txt") continue;
    EXPECT_EQ(detail::read_text(e.path()), detail::read_text(b / e.path().filename())) << e.path();
  }
}

TEST(Pipeline, CacheReproducesOutputs) {
  const auto a = fresh_dir("c1"), b = fresh_dir("c2"), cache = fresh_dir("cache");
  auto cfg = small_run(a);
  cfg.cache_dir = cache;
  run_pipeline(cfg);
  EXPECT_EQ(std::distance(fs::directory_iterator(cache), fs::directory_iterator{}), 10);
  cfg.output_dir = b;
  run_pipeline(cfg);
  EXPECT_EQ(detail::read_text(a / "sm_formants.csv"), detail::read_text(b / "sm_formants.csv"));
  EXPECT_EQ(detail::read_text(a / "tc_boxplot.csv"), detail::read_text(b / "tc_boxplot.csv"));
}

TEST(Pipeline, MismatchedCorpusFails) {
  const auto root = fresh_dir("mismatch");
  testing::write_synth_corpus(root, {.mismatched_prompts = true});
  auto cfg = small_run(fresh_dir("mismatch_out"));
  cfg.corpus_root = root;
  try {
    run_pipeline(cfg);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "zero error-free utterances");
  }
  // Without the filter, same-length mismatches are still analyzed.
  cfg.error_free_only = false;
  const auto r = run_pipeline(cfg);
  EXPECT_EQ(r.error_free, 0u);
  EXPECT_EQ(r.analyzed, 10u);
  EXPECT_GT(*r.wer(), 0.0);
}

TEST(Pipeline, ExecBackend) {
  const char* server = std::getenv("PHONSAL_FAKE_BACKEND");
  if (!server) GTEST_SKIP() << "PHONSAL_FAKE_BACKEND not set";
  auto cfg = small_run(fresh_dir("exec"));
  cfg.backend = std::string("exec:") + server + " --script 'see the pat bus do tea'";
  const auto r = run_pipeline(cfg);
  EXPECT_EQ(r.error_free, 3u);  // utterances reading the first prompt
  EXPECT_EQ(lines_of(cfg.output_dir / "sm_peaks.csv").size(), 10u);
}

TEST(Pipeline, InvalidConfig) {
  auto cfg = small_run(fresh_dir("bad"));
  cfg.iterations = 1;
  EXPECT_THROW(run_pipeline(cfg), InvalidArgument);
  cfg = small_run(fresh_dir("bad"));
  cfg.top_fraction = 0.0;
  EXPECT_THROW(run_pipeline(cfg), InvalidArgument);
  cfg = small_run(fresh_dir("bad"));
  cfg.backend = "oracle:nope";
  EXPECT_THROW(run_pipeline(cfg), InvalidArgument);
}

TEST(DumpSaliency, ThreeAlignedFiles) {
  auto cfg = small_run(fresh_dir("dump"));
  const auto files = dump_saliency(cfg, "mjsw0_sx4", 1);
  const auto spec = lines_of(files.spectrogram), sal = lines_of(files.saliency), bin = lines_of(files.binary);
  ASSERT_EQ(spec.size(), sal.size());
  ASSERT_EQ(spec.size(), bin.size());
  EXPECT_EQ(spec[0], bin[0]);
  EXPECT_EQ(spec[1].substr(0, 7), "0.0125,");
  EXPECT_EQ(spec[2].substr(0, 7), "0.0225,");
  const std::size_t T = spec.size() - 1, F = 80;
  std::size_t ones = 0;
  for (std::size_t t = 1; t < bin.size(); ++t) {
    std::istringstream row(bin[t]);
    std::string cell;
    std::getline(row, cell, ',');  // frame time
    while (std::getline(row, cell, ',')) ones += cell == "1";
  }
  EXPECT_EQ(ones, static_cast<std::size_t>(std::ceil(0.03 * T * F - 1e-9)));
  EXPECT_THROW(dump_saliency(cfg, "nobody_sx1", 0), InvalidArgument);
  EXPECT_THROW(dump_saliency(cfg, "mjsw0_sx4", 99), InvalidArgument);
}

}  // namespace
}  // namespace phonsal
