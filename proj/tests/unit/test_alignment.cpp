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

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "phonsal/alignment.hpp"
#include "phonsal/random.hpp"

namespace phonsal {
namespace {

TEST(ParseSpans, ParsesTimitLines) {
  const auto spans = parse_phn("0 3050 h#\n3050 4559 sh\n4559 5723 iy\n");
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0], (AnnotatedSpan{0, 3050, "h#"}));
  EXPECT_EQ(spans[2].label, "iy");
  EXPECT_TRUE(parse_wrd("").empty());
  EXPECT_EQ(parse_wrd("3050 5723 she\r\n\n").size(), 1u);
}

TEST(ParseSpans, RejectsMalformedAndOutOfOrder) {
  try {
    parse_phn("0 10 a\n10 x b\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_phn("100 200 a\n0 50 b\n"), ParseError);
  EXPECT_THROW(parse_phn("0 100 a\n50 150 b\n"), ParseError);
  EXPECT_THROW(parse_phn("10 10 a\n"), ParseError);
  EXPECT_THROW(parse_phn("0 10 a extra\n"), ParseError);
}

TEST(Gender, FromSpeakerDirectory) {
  EXPECT_EQ(gender_from_speaker("FDAW0"), Gender::F);
  EXPECT_EQ(gender_from_speaker("mjsw0"), Gender::M);
  EXPECT_THROW(gender_from_speaker("XABC0"), InvalidArgument);
  EXPECT_THROW(gender_from_speaker(""), InvalidArgument);
}

TEST(WordsFromTokens, GroupsAtWordStarts) {
  auto w = words_from_tokens({{5, "us", true}});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], (WordTokens{"us", 0, 1}));

  w = words_from_tokens({{1, "for", true}, {2, "give", false}});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], (WordTokens{"forgive", 0, 2}));

  w = words_from_tokens({{1, "a", true}, {2, "b", true}, {3, "c", true}});
  EXPECT_EQ(w.size(), 3u);
}

TEST(WordsFromTokens, ConcatenationIsLossless) {
  SplitMix rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    TokenSequence ts;
    std::string all;
    const auto n = 1 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text(1 + rng.below(4), static_cast<char>('a' + rng.below(26)));
      all += text;
      ts.push_back({static_cast<int>(i), text, i == 0 || rng.uniform() < 0.5});
    }
    std::string joined;
    std::size_t covered = 0;
    for (const auto& w : words_from_tokens(ts)) {
      joined += w.text;
      EXPECT_EQ(w.token_begin, covered);
      covered = w.token_end;
    }
    EXPECT_EQ(joined, all);
    EXPECT_EQ(covered, ts.size());
  }
}

TEST(ErrorFree, NormalizationRules) {
  EXPECT_TRUE(check_error_free({"she", "had", "your"}, {"she", "had", "your"}));
  EXPECT_FALSE(check_error_free({"she", "had", "your"}, {"she", "has", "your"}));
  // By hand: "She" -> "she", "year." -> "year", "don't" -> "dont".
  EXPECT_TRUE(check_error_free({"She", "don't", "year."}, {"she", "dont", "YEAR"}));
  EXPECT_TRUE(check_error_free({"(well)", "-", "ok!"}, {"well", "ok"}));
}

TEST(Wer, Examples) {
  const std::vector<std::string> ref{"a", "b", "c"};
  EXPECT_DOUBLE_EQ(wer(ref, ref), 0.0);
  EXPECT_NEAR(wer(ref, {"a", "x", "c"}), 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(wer(ref, {}), 100.0);
  EXPECT_DOUBLE_EQ(wer({"a"}, {"a", "b", "c"}), 200.0);
  EXPECT_THROW(wer({}, {"a"}), InvalidArgument);
}

TEST(Wer, SelfDistanceIsZero) {
  SplitMix rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i <= rng.below(10); ++i) words.push_back(std::string(1, 'a' + rng.below(5)));
    EXPECT_EQ(wer(words, words), 0.0);
  }
}

TEST(SpanToFrames, EnumeratesCenters) {
  const FrameParams p;
  const auto fs = span_to_frames(1600, 4800, p, 16000, 100);
  EXPECT_EQ(fs.begin, 9u);
  EXPECT_EQ(fs.end, 29u);
  EXPECT_EQ(fs.midpoint, 19u);
  // Brute force: frames whose center t*160+200 lies in [1600, 4800).
  std::size_t lo = 1000, hi = 0;
  for (std::size_t t = 0; t < 100; ++t) {
    const std::size_t c = t * 160 + 200;
    if (c >= 1600 && c < 4800) lo = std::min(lo, t), hi = std::max(hi, t);
  }
  EXPECT_EQ(lo, fs.begin);
  EXPECT_EQ(hi + 1, fs.end);
}

TEST(SpanToFrames, ShortSpanGetsOneFrame) {
  const FrameParams p;
  const auto fs = span_to_frames(1650, 1700, p, 16000, 100);  // no center in range
  EXPECT_EQ(fs.size(), 1u);
  EXPECT_EQ(fs.begin, fs.midpoint);
  EXPECT_EQ(fs.begin, 9u);  // center 1640 is nearest 1675
}

TEST(SpanToFrames, ConsecutiveSpansPartitionFrames) {
  SplitMix rng(8);
  const FrameParams p;
  // Spans of at least one hop always contain a center, so consecutive spans
  // get adjacent, non-overlapping frame ranges.
  long pos = 1000;
  std::size_t last_end = 0;
  for (int i = 0; i < 60; ++i) {
    const long len = 160 + static_cast<long>(rng.below(2000));
    const auto fs = span_to_frames(pos, pos + len, p, 16000, 100000);
    if (i > 0) EXPECT_EQ(fs.begin, last_end);
    EXPECT_GE(fs.size(), 1u);
    last_end = fs.end;
    pos += len;
  }
}

UtteranceRecord record(std::vector<AnnotatedSpan> phones, std::vector<AnnotatedSpan> words) {
  UtteranceRecord u;
  u.id = "mabc0_sx1";
  u.gender = Gender::M;
  u.waveform.samples.assign(20000, 0.0);
  u.phones = std::move(phones);
  u.words = std::move(words);
  return u;
}

TEST(ExtractOccurrences, ClosureReleaseVowel) {
  const auto u = record({{0, 1000, "h#"}, {1000, 2000, "tcl"}, {2000, 2600, "t"}, {2600, 5000, "iy"}},
                        {{1000, 5000, "tea"}});
  const auto occ = extract_occurrences(u, 100).occurrences;
  ASSERT_EQ(occ.size(), 3u);
  EXPECT_EQ(occ[0].timit, "t");
  EXPECT_EQ(occ[0].phase, Phase::Closure);
  EXPECT_EQ(occ[1].timit, "t");
  EXPECT_EQ(occ[1].phase, Phase::Release);
  EXPECT_EQ(occ[2].ipa, "i");
  EXPECT_EQ(occ[2].cls, PhoneClass::Vowel);
  EXPECT_EQ(occ[2].phase, Phase::Whole);
  EXPECT_EQ(occ[2].word_index, 0u);
}

TEST(ExtractOccurrences, NonPrevocalicPlosiveDropped) {
  const auto u = record({{1000, 2000, "tcl"}, {2000, 2600, "t"}, {2600, 4000, "s"}},
                        {{1000, 4000, "ts"}});
  const auto occ = extract_occurrences(u, 100).occurrences;
  ASSERT_EQ(occ.size(), 1u);
  EXPECT_EQ(occ[0].timit, "s");
  EXPECT_EQ(occ[0].cls, PhoneClass::Fricative);
}

TEST(ExtractOccurrences, ReleaseWithoutClosureAndUnnestedSkip) {
  auto u = record({{1000, 1600, "b"}, {1600, 3000, "ae"}, {3000, 4000, "s"}},
                  {{1000, 3000, "ba"}});
  const auto ex = extract_occurrences(u, 100);
  ASSERT_EQ(ex.occurrences.size(), 2u);
  EXPECT_EQ(ex.occurrences[0].phase, Phase::Release);
  EXPECT_EQ(ex.occurrences[1].ipa, "æ");
  EXPECT_EQ(ex.skipped_unnested, 1u);  // the "s" lies outside every word
}

TEST(ExtractOccurrences, SeaGivesWholeFricative) {
  const auto u = record({{0, 1500, "s"}, {1500, 4000, "iy"}}, {{0, 4000, "sea"}});
  const auto occ = extract_occurrences(u, 100).occurrences;
  ASSERT_EQ(occ.size(), 2u);
  EXPECT_EQ(occ[0].ipa, "s");
  EXPECT_EQ(occ[0].phase, Phase::Whole);
}

TEST(Corpus, DiscoversTimitLayoutCaseInsensitively) {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "phonsal_corpus_discovery";
  fs::remove_all(root);
  const auto spk = root / "TEST" / "DR1" / "FAKS0";
  fs::create_directories(spk);
  for (const char* f : {"SX13.WAV", "SX13.PHN", "SX13.WRD", "SX13.TXT", "SA1.WAV", "SA1.PHN", "SA1.WRD"})
    std::ofstream(spk / f) << "0 10 x\n";
  const auto sx = discover_corpus(root, "sx");
  ASSERT_EQ(sx.size(), 1u);
  EXPECT_EQ(sx[0].id, "faks0_sx13");
  EXPECT_EQ(sx[0].speaker, "FAKS0");
  EXPECT_FALSE(sx[0].txt.empty());
  EXPECT_EQ(discover_corpus(root, "all").size(), 2u);
  EXPECT_EQ(parse_prompt("0 46797 She had your dark suit.\n"), "She had your dark suit.");
}

}  // namespace
}  // namespace phonsal
