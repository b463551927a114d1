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

// TIMIT-style annotations: .PHN/.WRD parsing, corpus discovery, word
// reconstruction from subword tokens, transcript matching, WER, and the
// mapping from sample spans to spectrogram frames and phone occurrences.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "phonsal/audio_io.hpp"
#include "phonsal/backend.hpp"
#include "phonsal/features.hpp"

namespace phonsal {

struct AnnotatedSpan {
  long start = 0;  // samples, inclusive
  long end = 0;    // samples, exclusive
  std::string label;

  friend bool operator==(const AnnotatedSpan&, const AnnotatedSpan&) = default;
};

/// Parses "start end label" lines. Spans must be well formed and must not
/// overlap or go backwards; blank lines are ignored.
inline std::vector<AnnotatedSpan> parse_spans(std::string_view text) {
  std::vector<AnnotatedSpan> out;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    AnnotatedSpan s;
    std::string extra;
    if (!(ls >> s.start >> s.end >> s.label) || (ls >> extra))
      throw ParseError("line " + std::to_string(lineno) + ": expected 'start end label'");
    if (s.start < 0 || s.start >= s.end)
      throw ParseError("line " + std::to_string(lineno) + ": need 0 <= start < end");
    if (!out.empty() && s.start < out.back().end)
      throw ParseError("line " + std::to_string(lineno) + ": span overlaps or precedes the previous one");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<AnnotatedSpan> parse_phn(std::string_view text) { return parse_spans(text); }
inline std::vector<AnnotatedSpan> parse_wrd(std::string_view text) { return parse_spans(text); }

enum class Gender { M, F };

inline const char* to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

/// TIMIT speaker directories start with the speaker's sex: "FDAW0", "mjsw0".
inline Gender gender_from_speaker(std::string_view speaker) {
  if (!speaker.empty()) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(speaker[0])));
    if (c == 'm') return Gender::M;
    if (c == 'f') return Gender::F;
  }
  throw InvalidArgument("cannot infer gender from speaker '" + std::string(speaker) + "'");
}

// ---------------------------------------------------------------------------
// Words, transcripts and WER.

struct WordTokens {
  std::string text;
  std::size_t token_begin = 0;
  std::size_t token_end = 0;  // exclusive

  friend bool operator==(const WordTokens&, const WordTokens&) = default;
};

/// Groups tokens into words at begins_word boundaries.
inline std::vector<WordTokens> words_from_tokens(const TokenSequence& tokens) {
  std::vector<WordTokens> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].begins_word || out.empty())
      out.push_back({tokens[i].text, i, i + 1});
    else {
      out.back().text += tokens[i].text;
      out.back().token_end = i + 1;
    }
  }
  return out;
}

// Lowercases (ASCII) and drops .,!?;:'"()- characters.
inline std::string normalize_word(std::string_view w) {
  static constexpr std::string_view kPunct = ".,!?;:'\"()-";
  std::string out;
  for (char c : w) {
    if (kPunct.find(c) != std::string_view::npos) continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// Normalizes each word; words that become empty are dropped.
inline std::vector<std::string> normalize_words(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words)
    if (auto n = normalize_word(w); !n.empty()) out.push_back(std::move(n));
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline bool check_error_free(const std::vector<std::string>& predicted,
                             const std::vector<std::string>& annotated) {
  return normalize_words(predicted) == normalize_words(annotated);
}

/// Minimum number of substitutions + deletions + insertions turning `ref`
/// into `hyp` (word-level Levenshtein distance).
inline std::size_t word_edit_distance(const std::vector<std::string>& ref,
                                      const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

/// 100 * (S + D + I) / N.
inline double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw InvalidArgument("WER needs a non-empty reference");
  return 100.0 * static_cast<double>(word_edit_distance(ref, hyp)) /
         static_cast<double>(ref.size());
}

// ---------------------------------------------------------------------------
// Sample spans to frames.

struct FrameSpan {
  std::size_t begin = 0;  // first frame
  std::size_t end = 0;    // one past the last frame
  std::size_t midpoint = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const FrameSpan&, const FrameSpan&) = default;
};

/// Frames whose window center lies in [start, end). When no center does, the
/// span gets the single frame nearest its midpoint. `midpoint` is the frame
/// whose center is nearest (start + end) / 2, ties to the earlier frame.
inline FrameSpan span_to_frames(long start, long end, const FrameParams& p, int sample_rate,
                                std::size_t num_frames) {
  if (num_frames == 0) throw InvalidArgument("no frames");
  const double hop = static_cast<double>(p.hop_samples(sample_rate));
  const double half = static_cast<double>(p.window_samples(sample_rate)) / 2.0;
  // Center of frame t is t*hop + half.
  auto first_center_at_or_after = [&](double s) {
    const double t = std::ceil((s - half) / hop);
    return t < 0 ? 0.0 : t;
  };
  const double mid = (static_cast<double>(start) + static_cast<double>(end)) / 2.0;
  const double tm = std::clamp(std::floor((mid - half) / hop), 0.0,
                               static_cast<double>(num_frames - 1));
  auto nearest = static_cast<std::size_t>(tm);
  if (nearest + 1 < num_frames) {
    const double d0 = std::abs(mid - (nearest * hop + half));
    const double d1 = std::abs(mid - ((nearest + 1) * hop + half));
    if (d1 < d0) ++nearest;
  }
  FrameSpan fs;
  fs.midpoint = nearest;
  const auto b = static_cast<std::size_t>(std::min<double>(first_center_at_or_after(static_cast<double>(start)), static_cast<double>(num_frames)));
  const auto e = static_cast<std::size_t>(std::min<double>(first_center_at_or_after(static_cast<double>(end)), static_cast<double>(num_frames)));
  if (b < e) {
    fs.begin = b;
    fs.end = e;
  } else {
    fs.begin = nearest;
    fs.end = nearest + 1;
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Phone inventory and occurrences.

enum class PhoneClass { Vowel, Fricative, Plosive };
enum class Phase { Whole, Closure, Release };

inline const char* to_string(PhoneClass c) {
  switch (c) {
    case PhoneClass::Vowel: return "vowel";
    case PhoneClass::Fricative: return "fricative";
    case PhoneClass::Plosive: return "plosive";
  }
  return "?";
}

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Whole: return "whole";
    case Phase::Closure: return "closure";
    case Phase::Release: return "release";
  }
  return "?";
}

struct PhoneInfo {
  std::string_view timit;
  std::string_view ipa;
  PhoneClass cls;
};

/// The studied inventory in reporting order: 11 monophthongs, 8 fricatives,
/// 6 plosives. Anything else in a .PHN file is ignored.
inline constexpr PhoneInfo kInventory[] = {
    {"aa", "ɑ", PhoneClass::Vowel},     {"ae", "æ", PhoneClass::Vowel},
    {"ah", "ʌ", PhoneClass::Vowel},     {"eh", "ɛ", PhoneClass::Vowel},
    {"ax", "ə", PhoneClass::Vowel},     {"uh", "ʊ", PhoneClass::Vowel},
    {"ih", "ɪ", PhoneClass::Vowel},     {"ix", "ɨ", PhoneClass::Vowel},
    {"iy", "i", PhoneClass::Vowel},     {"ux", "ʉ", PhoneClass::Vowel},
    {"uw", "u", PhoneClass::Vowel},     {"s", "s", PhoneClass::Fricative},
    {"z", "z", PhoneClass::Fricative},  {"sh", "ʃ", PhoneClass::Fricative},
    {"zh", "ʒ", PhoneClass::Fricative}, {"f", "f", PhoneClass::Fricative},
    {"v", "v", PhoneClass::Fricative},  {"th", "θ", PhoneClass::Fricative},
    {"dh", "ð", PhoneClass::Fricative}, {"p", "p", PhoneClass::Plosive},
    {"b", "b", PhoneClass::Plosive},    {"k", "k", PhoneClass::Plosive},
    {"g", "g", PhoneClass::Plosive},    {"t", "t", PhoneClass::Plosive},
    {"d", "d", PhoneClass::Plosive},
};

inline const PhoneInfo* lookup_phone(std::string_view timit_label) {
  std::string lower;
  for (char c : timit_label) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const auto& p : kInventory)
    if (p.timit == lower) return &p;
  return nullptr;
}

inline bool is_closure_of(std::string_view closure, std::string_view release) {
  std::string lower;
  for (char c : closure) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower.size() == release.size() + 2 && lower.compare(0, release.size(), release) == 0 &&
         lower.compare(release.size(), 2, "cl") == 0;
}

struct PhoneOccurrence {
  std::string timit;  // inventory label, e.g. "sh"
  std::string ipa;    // e.g. "ʃ"
  PhoneClass cls = PhoneClass::Vowel;
  Phase phase = Phase::Whole;
  long start_sample = 0;
  long end_sample = 0;
  FrameSpan frames;
  std::size_t word_index = 0;
  Gender gender = Gender::M;
  std::string utterance_id;
};

struct UtteranceRecord {
  std::string id;  // "<speaker>_<utt>", lowercase
  std::filesystem::path audio_path;
  Waveform waveform;
  std::vector<AnnotatedSpan> phones;
  std::vector<AnnotatedSpan> words;
  std::string speaker;
  Gender gender = Gender::M;
  std::string prompt;  // sentence text from the .TXT file, if present
  TokenSequence predicted;
  bool error_free = false;
};

struct OccurrenceExtraction {
  std::vector<PhoneOccurrence> occurrences;
  std::size_t skipped_unnested = 0;
};

/// Studied phone instances in an utterance. Plosives are kept only when the
/// phone after the release is a studied vowel, and come out as a closure and
/// a release occurrence when the matching closure directly precedes the
/// release. Each occurrence is linked to the word whose span contains it;
/// occurrences outside every word are skipped and counted.
inline OccurrenceExtraction extract_occurrences(const UtteranceRecord& utt, std::size_t num_frames,
                                                const FrameParams& p = {}) {
  OccurrenceExtraction out;
  const int sr = utt.waveform.sample_rate;
  auto containing_word = [&](long s, long e) -> std::optional<std::size_t> {
    for (std::size_t w = 0; w < utt.words.size(); ++w)
      if (utt.words[w].start <= s && e <= utt.words[w].end) return w;
    return std::nullopt;
  };
  auto emit = [&](const PhoneInfo& info, Phase phase, const AnnotatedSpan& span) {
    const auto w = containing_word(span.start, span.end);
    if (!w) {
      ++out.skipped_unnested;
      return;
    }
    PhoneOccurrence o;
    o.timit = std::string(info.timit);
    o.ipa = std::string(info.ipa);
    o.cls = info.cls;
    o.phase = phase;
    o.start_sample = span.start;
    o.end_sample = span.end;
    o.frames = span_to_frames(span.start, span.end, p, sr, num_frames);
    o.word_index = *w;
    o.gender = utt.gender;
    o.utterance_id = utt.id;
    out.occurrences.push_back(std::move(o));
  };

  const auto& ph = utt.phones;
  for (std::size_t i = 0; i < ph.size(); ++i) {
    const PhoneInfo* info = lookup_phone(ph[i].label);
    if (!info) continue;
    if (info->cls != PhoneClass::Plosive) {
      emit(*info, Phase::Whole, ph[i]);
      continue;
    }
    const PhoneInfo* next = i + 1 < ph.size() ? lookup_phone(ph[i + 1].label) : nullptr;
    if (!next || next->cls != PhoneClass::Vowel) continue;
    if (i > 0 && is_closure_of(ph[i - 1].label, info->timit) && ph[i - 1].end == ph[i].start)
      emit(*info, Phase::Closure, ph[i - 1]);
    emit(*info, Phase::Release, ph[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus discovery: <root>/<split>/<dialect>/<speaker>/<utt>.{wav,phn,wrd,txt}

struct UtteranceRef {
  std::string id;  // "<speaker>_<utt>", lowercase
  std::string speaker;
  std::filesystem::path wav, phn, wrd, txt;  // txt may be empty
};

namespace detail {
inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace detail

/// Utterances with .phn, .wrd and audio files, sorted by id. `subset` is an
/// utterance-id prefix ("sx"); "all" or empty keeps everything.
inline std::vector<UtteranceRef> discover_corpus(const std::filesystem::path& root,
                                                 const std::string& subset = "sx") {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InvalidArgument("corpus root is not a directory: " + root.string());
  std::vector<UtteranceRef> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    if (detail::lower(entry.path().extension().string()) != ".phn") continue;
    const std::string utt = detail::lower(entry.path().stem().string());
    if (!subset.empty() && subset != "all" && utt.rfind(detail::lower(subset), 0) != 0) continue;
    UtteranceRef ref;
    ref.phn = entry.path();
    for (const auto& sib : fs::directory_iterator(entry.path().parent_path())) {
      if (detail::lower(sib.path().stem().string()) != utt) continue;
      const std::string ext = detail::lower(sib.path().extension().string());
      if (ext == ".wav") ref.wav = sib.path();
      else if (ext == ".wrd") ref.wrd = sib.path();
      else if (ext == ".txt") ref.txt = sib.path();
    }
    if (ref.wav.empty() || ref.wrd.empty()) continue;
    ref.speaker = entry.path().parent_path().filename().string();
    ref.id = detail::lower(ref.speaker) + "_" + utt;
    out.push_back(std::move(ref));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

/// Sentence from a TIMIT .TXT line "start end Sentence text."
inline std::string parse_prompt(std::string_view text) {
  std::istringstream in{std::string(text)};
  long a = 0, b = 0;
  std::string rest;
  if (!(in >> a >> b)) throw ParseError("malformed .txt prompt");
  std::getline(in >> std::ws, rest);
  while (!rest.empty() && (rest.back() == '\n' || rest.back() == '\r' || rest.back() == ' '))
    rest.pop_back();
  return rest;
}

inline UtteranceRecord load_utterance(const UtteranceRef& ref) {
  UtteranceRecord u;
  u.id = ref.id;
  u.audio_path = ref.wav;
  u.speaker = ref.speaker;
  u.gender = gender_from_speaker(ref.speaker);
  u.waveform = read_audio(ref.wav);
  u.phones = parse_phn(detail::read_text(ref.phn));
  u.words = parse_wrd(detail::read_text(ref.wrd));
  if (!ref.txt.empty()) u.prompt = parse_prompt(detail::read_text(ref.txt));
  return u;
}

inline std::vector<std::string> annotated_words(const UtteranceRecord& u) {
  std::vector<std::string> out;
  for (const auto& w : u.words) out.push_back(w.label);
  return out;
}

}  // namespace phonsal
