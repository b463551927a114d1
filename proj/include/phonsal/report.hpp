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

// Corpus-level orchestration: per utterance, features -> transcription ->
// error-free check -> per-token attribution -> word maps -> occurrences ->
// cue measurement -> metric tallies, then CSV emission.
//
// Utterances run on a small thread pool; their tallies are merged in corpus
// order afterwards, so every output is independent of the worker count.

#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "phonsal/acoustics.hpp"
#include "phonsal/alignment.hpp"
#include "phonsal/attribution.hpp"
#include "phonsal/backend.hpp"
#include "phonsal/features.hpp"
#include "phonsal/metrics.hpp"
#include "phonsal/protocol.hpp"

namespace phonsal {

struct RunConfig {
  std::filesystem::path corpus_root;
  std::string subset = "sx";
  std::string backend = "oracle:word-regions";
  std::size_t iterations = 20000;
  double keep_prob = 0.5;
  double top_fraction = kTopFraction;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::size_t workers = 1;
  bool error_free_only = true;
  std::filesystem::path cache_dir;  // empty: no cache
  bool dump_maps = false;
  std::size_t max_batch = kDefaultMaxBatch;
  std::ostream* log = nullptr;

  void validate() const {
    if (iterations < 2) throw InvalidArgument("iterations must be at least 2");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0))
      throw InvalidArgument("top fraction must be in (0,1]");
    if (!(keep_prob > 0.0 && keep_prob < 1.0)) throw InvalidArgument("keep_prob must be in (0,1)");
    if (workers == 0) throw InvalidArgument("workers must be at least 1");
  }
};

inline constexpr int kCacheVersion = 1;
inline constexpr std::string_view kWordRegionOracle = "oracle:word-regions";

namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s(buf);
  // Avoid "-0.0" style output.
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

inline std::string fmt_opt(const std::optional<double>& v, int precision) {
  return v ? fmt(*v, precision) : "NA";
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Word-region oracle: a per-utterance energy oracle that "recognizes" the
// prompt and whose token probabilities depend on each word's own time span.

/// Tokens for a sentence: normalized words, with words longer than five
/// characters split into two subword pieces. Ids are positions + 1.
inline TokenSequence oracle_script(const std::vector<std::string>& words) {
  TokenSequence out;
  int id = 1;
  for (const auto& w : normalize_words(words)) {
    if (w.size() > 5) {
      out.push_back({id++, w.substr(0, 4), true});
      out.push_back({id++, w.substr(4), false});
    } else {
      out.push_back({id++, w, true});
    }
  }
  return out;
}

/// Each token's region spans its word's frames (halved between subword
/// pieces) over bins [8, 56). The script comes from the prompt when present.
inline std::unique_ptr<EnergyOracle> make_word_region_oracle(const UtteranceRecord& u,
                                                             std::size_t num_frames,
                                                             const FrameParams& p = {}) {
  const auto prompt_words = u.prompt.empty() ? annotated_words(u) : split_words(u.prompt);
  const TokenSequence script = oracle_script(prompt_words);
  auto oracle = std::make_unique<EnergyOracle>(Region{0, num_frames, 8, 56}, script, 0.5, 0.25);

  std::vector<FrameSpan> spans;
  for (const auto& w : u.words)
    if (!normalize_word(w.label).empty())
      spans.push_back(span_to_frames(w.start, w.end, p, u.waveform.sample_rate, num_frames));
  const auto words = words_from_tokens(script);
  for (std::size_t wi = 0; wi < words.size() && wi < spans.size(); ++wi) {
    const FrameSpan s = spans[wi];
    const std::size_t pieces = words[wi].token_end - words[wi].token_begin;
    for (std::size_t k = 0; k < pieces; ++k) {
      const std::size_t b = s.begin + s.size() * k / pieces;
      const std::size_t e = std::max(b + 1, s.begin + s.size() * (k + 1) / pieces);
      oracle->set_region(script[words[wi].token_begin + k].id, {b, e, 8, 56});
    }
  }
  return oracle;
}

/// Resolves the backend spec once; `for_utterance` hands out either the shared
/// remote backend or a fresh per-utterance oracle.
class BackendSource {
 public:
  BackendSource(const std::string& spec, std::size_t max_batch) : spec_(spec) {
    if (spec.rfind("oracle:", 0) == 0) {
      if (spec != kWordRegionOracle) throw InvalidArgument("unknown oracle backend '" + spec + "'");
      return;
    }
    remote_ = make_remote_backend(spec, max_batch);
  }

  Backend& for_utterance(const UtteranceRecord& u, std::size_t num_frames,
                         std::unique_ptr<Backend>& scratch) const {
    if (remote_) return *remote_;
    scratch = make_word_region_oracle(u, num_frames);
    return *scratch;
  }

  const std::string& spec() const { return spec_; }

 private:
  std::string spec_;
  std::unique_ptr<Backend> remote_;
};

// ---------------------------------------------------------------------------
// Cache of transcriptions and normalized token maps.

inline std::string cache_key(const RunConfig& cfg, const UtteranceRecord& u) {
  std::string audio(reinterpret_cast<const char*>(u.waveform.samples.data()),
                    u.waveform.samples.size() * sizeof(double));
  std::ostringstream k;
  k << "v" << kCacheVersion << '|' << u.id << '|' << std::hex << detail::fnv1a(audio) << std::dec
    << '|' << cfg.backend << '|' << cfg.seed << '|' << cfg.iterations << '|' << cfg.keep_prob;
  return k.str();
}

struct CachedExplanation {
  TokenSequence tokens;
  std::vector<SaliencyMap> token_maps;
};

inline std::filesystem::path cache_path(const RunConfig& cfg, const std::string& key) {
  char name[32];
  std::snprintf(name, sizeof name, "%016" PRIx64 ".json", detail::fnv1a(key));
  return cfg.cache_dir / name;
}

inline std::optional<CachedExplanation> cache_load(const RunConfig& cfg, const std::string& key) {
  if (cfg.cache_dir.empty()) return std::nullopt;
  const auto path = cache_path(cfg, key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(detail::read_text(path));
    if (j.at("version").get<int>() != kCacheVersion || j.at("key").get<std::string>() != key)
      return std::nullopt;
    CachedExplanation c;
    for (const auto& t : j.at("tokens"))
      c.tokens.push_back({t.at(0).get<int>(), t.at(1).get<std::string>(), t.at(2).get<bool>()});
    for (const auto& m : j.at("maps")) {
      SaliencyMap s;
      s.values = Matrix<double>(m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>());
      s.values.data() = m.at(2).get<std::vector<double>>();
      s.token_index = c.token_maps.size();
      s.normalized = true;
      if (s.values.data().size() != s.values.rows() * s.values.cols()) return std::nullopt;
      c.token_maps.push_back(std::move(s));
    }
    return c;
  } catch (const std::exception&) {
    return std::nullopt;  // stale or corrupt entries are recomputed
  }
}

inline void cache_store(const RunConfig& cfg, const std::string& key, const UtteranceExplanation& e) {
  if (cfg.cache_dir.empty()) return;
  std::filesystem::create_directories(cfg.cache_dir);
  nlohmann::json j;
  j["version"] = kCacheVersion;
  j["key"] = key;
  j["tokens"] = nlohmann::json::array();
  for (const auto& t : e.tokens) j["tokens"].push_back({t.id, t.text, t.begins_word});
  j["maps"] = nlohmann::json::array();
  for (const auto& m : e.token_maps) j["maps"].push_back({m.values.rows(), m.values.cols(), m.values.data()});
  const auto path = cache_path(cfg, key);
  const auto tmp = path.string() + ".tmp";
  detail::write_file(tmp, j.dump());
  std::filesystem::rename(tmp, path);
}

/// Word maps from cached token maps.
inline UtteranceExplanation explanation_from_maps(CachedExplanation c, double top_fraction) {
  UtteranceExplanation out;
  out.tokens = std::move(c.tokens);
  out.token_maps = std::move(c.token_maps);
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
// Per-utterance processing.

struct UtteranceOutcome {
  std::string id;
  bool transcribed = false;
  bool error_free = false;
  bool analyzed = false;
  std::size_t ref_words = 0;
  std::size_t edit_distance = 0;
  std::size_t skipped_unnested = 0;
  std::size_t occurrences = 0;
  std::string error;
  MetricsTally tally;
};

inline MaskPlan plan_for(const RunConfig& cfg, const std::string& utt_id) {
  return {cfg.iterations, cfg.keep_prob, hash_key(cfg.seed, detail::fnv1a(utt_id))};
}

inline CueMeasurement measure_cue(const PhoneOccurrence& o, const UtteranceRecord& u,
                                  const MelSpectrogram& logmel) {
  CueMeasurement cue;
  switch (o.cls) {
    case PhoneClass::Vowel:
      try {
        cue.formants = estimate_formants(u.waveform, (o.start_sample + o.end_sample) / 2, u.gender);
      } catch (const InvalidArgument&) {
        // Analysis window does not fit in the recording.
      }
      break;
    case PhoneClass::Fricative:
      cue.peak = fricative_peak(logmel, o.frames.midpoint);
      break;
    case PhoneClass::Plosive:
      cue.peak = burst_peak(logmel, o.frames.begin, o.frames.size());
      break;
  }
  return cue;
}

inline void write_map_dumps(const RunConfig& cfg, const UtteranceRecord& u,
                            const UtteranceExplanation& e) {
  const auto dir = cfg.output_dir / "maps";
  std::filesystem::create_directories(dir);
  for (std::size_t w = 0; w < e.words.size(); ++w) {
    const std::string stem = u.id + "_w" + std::to_string(w) + "_" + e.words[w].word.text;
    write_saliency_dump(dir / (stem + ".psal"), e.words[w].aggregated, e.words[w].word.text);
    detail::write_file(dir / (stem + ".rle"), encode_binary_rle(e.words[w].binary));
  }
}

inline UtteranceOutcome process_utterance(const RunConfig& cfg, const UtteranceRef& ref,
                                          const BackendSource& source) {
  UtteranceOutcome out;
  out.id = ref.id;
  const UtteranceRecord u = load_utterance(ref);
  const MelSpectrogram logmel = compute_logmel(u.waveform);
  const std::size_t T = logmel.num_frames();

  std::unique_ptr<Backend> scratch;
  Backend& backend = source.for_utterance(u, T, scratch);

  const std::string key = cache_key(cfg, u);
  auto cached = cache_load(cfg, key);
  TokenSequence tokens = cached ? cached->tokens : backend.transcribe(cmvn(logmel));
  out.transcribed = true;

  const auto words = words_from_tokens(tokens);
  std::vector<std::string> predicted;
  for (const auto& w : words) predicted.push_back(w.text);
  const auto ref_norm = normalize_words(annotated_words(u));
  const auto hyp_norm = normalize_words(predicted);
  out.ref_words = ref_norm.size();
  out.edit_distance = word_edit_distance(ref_norm, hyp_norm);
  out.error_free = ref_norm == hyp_norm;
  // Without the filter, mismatched utterances are still analyzed when the
  // word counts agree, pairing words by position.
  if (!out.error_free && (cfg.error_free_only || hyp_norm.size() != ref_norm.size())) return out;

  UtteranceExplanation ex;
  if (cached) {
    ex = explanation_from_maps(std::move(*cached), cfg.top_fraction);
  } else {
    AttributionOptions opts;
    ex = explain_utterance(logmel, backend, plan_for(cfg, u.id), opts, cfg.top_fraction, &tokens);
    cache_store(cfg, key, ex);
  }
  if (cfg.dump_maps) write_map_dumps(cfg, u, ex);

  // Annotated word index -> explained word index (both skip words that
  // normalize to nothing).
  std::vector<std::optional<std::size_t>> word_map(u.words.size());
  std::vector<std::size_t> explained;
  for (std::size_t i = 0; i < ex.words.size(); ++i)
    if (!normalize_word(ex.words[i].word.text).empty()) explained.push_back(i);
  for (std::size_t w = 0, k = 0; w < u.words.size(); ++w)
    if (!normalize_word(u.words[w].label).empty() && k < explained.size()) word_map[w] = explained[k++];

  const FrameParams p = logmel.frame_params;
  for (std::size_t w = 0; w < u.words.size(); ++w) {
    if (!word_map[w]) continue;
    out.tally.add_word(ex.words[*word_map[w]].binary,
                       span_to_frames(u.words[w].start, u.words[w].end, p, u.waveform.sample_rate, T));
  }

  const auto extraction = extract_occurrences(u, T, p);
  out.skipped_unnested = extraction.skipped_unnested;
  for (const auto& o : extraction.occurrences) {
    if (!word_map[o.word_index]) continue;
    OccurrenceEvidence e{&o, &ex.words[*word_map[o.word_index]].binary, measure_cue(o, u, logmel)};
    out.tally.add_occurrence(e, p, u.waveform.sample_rate);
    ++out.occurrences;
  }
  out.analyzed = true;
  return out;
}

// ---------------------------------------------------------------------------

struct RunResult {
  MetricsTally tally;
  std::size_t utterances = 0;
  std::size_t transcribed = 0;
  std::size_t error_free = 0;
  std::size_t analyzed = 0;
  std::size_t skipped_unnested = 0;
  std::size_t occurrences = 0;
  std::size_t ref_words = 0;
  std::size_t edit_distance = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // (utterance, message)

  std::optional<double> wer() const {
    if (ref_words == 0) return std::nullopt;
    return 100.0 * static_cast<double>(edit_distance) / static_cast<double>(ref_words);
  }
};

/// Runs every utterance and merges the outcomes in corpus order.
inline RunResult collect(const RunConfig& cfg) {
  cfg.validate();
  const auto refs = discover_corpus(cfg.corpus_root, cfg.subset);
  if (refs.empty()) throw Error("no utterances found under " + cfg.corpus_root.string());
  const BackendSource source(cfg.backend, cfg.max_batch);

  std::vector<UtteranceOutcome> outcomes(refs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
    for (std::size_t i; (i = next++) < refs.size();) {
      try {
        outcomes[i] = process_utterance(cfg, refs[i], source);
      } catch (const std::exception& e) {
        outcomes[i] = UtteranceOutcome{};
        outcomes[i].id = refs[i].id;
        outcomes[i].error = e.what();
      }
      if (cfg.log) {
        std::lock_guard lock(log_mu);
        *cfg.log << "[" << i + 1 << "/" << refs.size() << "] " << refs[i].id
                 << (outcomes[i].error.empty() ? "" : " skipped: " + outcomes[i].error) << "\n";
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, refs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  RunResult r;
  r.utterances = refs.size();
  for (const auto& o : outcomes) {
    if (!o.error.empty()) {
      r.failures.emplace_back(o.id, o.error);
      continue;
    }
    r.transcribed += o.transcribed;
    r.error_free += o.error_free;
    r.analyzed += o.analyzed;
    r.ref_words += o.ref_words;
    r.edit_distance += o.edit_distance;
    r.skipped_unnested += o.skipped_unnested;
    r.occurrences += o.occurrences;
    r.tally.merge(o.tally);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Emitters.

inline std::vector<const PhoneInfo*> phones_of(PhoneClass cls) {
  std::vector<const PhoneInfo*> out;
  for (const auto& p : kInventory)
    if (p.cls == cls) out.push_back(&p);
  return out;
}

inline std::optional<double> sm_percent(const MetricsTally& t, std::string_view timit, Gender g, Cue c) {
  const auto it = t.sm.find({std::string(timit), g, c});
  return it == t.sm.end() ? std::nullopt : it->second.percent();
}

// Unweighted mean over the rows that have a value.
inline std::optional<double> row_mean(const std::vector<std::optional<double>>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) sum += *x, ++n;
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::string sm_formants_csv(const MetricsTally& t) {
  std::ostringstream out;
  out << "phoneme,F1_M,F1_F,F2_M,F2_F,F3_M,F3_F,F4_M,F4_F\n";
  std::vector<std::vector<std::optional<double>>> cols(8);
  for (const PhoneInfo* p : phones_of(PhoneClass::Vowel)) {
    out << p->ipa;
    for (int k = 0; k < 4; ++k)
      for (Gender g : {Gender::M, Gender::F}) {
        const auto v = sm_percent(t, p->timit, g, static_cast<Cue>(k));
        cols[static_cast<std::size_t>(2 * k + (g == Gender::F))].push_back(v);
        out << ',' << detail::fmt_opt(v, 1);
      }
    out << '\n';
  }
  out << "avg.";
  for (const auto& c : cols) out << ',' << detail::fmt_opt(row_mean(c), 1);
  out << '\n';
  return out.str();
}

inline std::string sm_peaks_csv(const MetricsTally& t) {
  const auto fric = phones_of(PhoneClass::Fricative);
  const auto plos = phones_of(PhoneClass::Plosive);
  std::ostringstream out;
  out << "fricative,fricative_M,fricative_F,plosive,plosive_M,plosive_F\n";
  std::vector<std::optional<double>> fm, ff, pm, pf;
  for (std::size_t i = 0; i < std::max(fric.size(), plos.size()); ++i) {
    if (i < fric.size()) {
      const auto m = sm_percent(t, fric[i]->timit, Gender::M, Cue::Peak);
      const auto f = sm_percent(t, fric[i]->timit, Gender::F, Cue::Peak);
      fm.push_back(m);
      ff.push_back(f);
      out << fric[i]->ipa << ',' << detail::fmt_opt(m, 1) << ',' << detail::fmt_opt(f, 1);
    } else {
      out << ",,";
    }
    if (i < plos.size()) {
      const auto m = sm_percent(t, plos[i]->timit, Gender::M, Cue::Peak);
      const auto f = sm_percent(t, plos[i]->timit, Gender::F, Cue::Peak);
      pm.push_back(m);
      pf.push_back(f);
      out << ',' << plos[i]->ipa << ',' << detail::fmt_opt(m, 1) << ',' << detail::fmt_opt(f, 1);
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  out << "avg.," << detail::fmt_opt(row_mean(fm), 1) << ',' << detail::fmt_opt(row_mean(ff), 1)
      << ",avg.," << detail::fmt_opt(row_mean(pm), 1) << ',' << detail::fmt_opt(row_mean(pf), 1) << '\n';
  return out.str();
}

inline std::string sm_counts_csv(const MetricsTally& t) {
  std::ostringstream out;
  out << "phoneme,timit,gender,cue,matched,n,failures\n";
  for (const auto& p : kInventory)
    for (Gender g : {Gender::M, Gender::F})
      for (int c = 0; c < 5; ++c) {
        const auto it = t.sm.find({std::string(p.timit), g, static_cast<Cue>(c)});
        if (it == t.sm.end()) continue;
        out << p.ipa << ',' << p.timit << ',' << to_string(g) << ',' << to_string(static_cast<Cue>(c))
            << ',' << it->second.matched << ',' << it->second.n << ',' << it->second.failures << '\n';
      }
  return out.str();
}

inline std::string tc_boxplot_csv(const MetricsTally& t) {
  std::ostringstream out;
  out << "class,phoneme,timit,phase,n,median,q1,q3,whisker_lo,whisker_hi,outliers,word_reference\n";
  const std::string ref = detail::fmt_opt(t.word_reference(), 4);
  for (const auto& p : kInventory) {
    std::vector<Phase> phases{Phase::Whole};
    if (p.cls == PhoneClass::Plosive) phases = {Phase::Closure, Phase::Release};
    for (Phase ph : phases) {
      out << to_string(p.cls) << ',' << p.ipa << ',' << p.timit << ',' << to_string(ph) << ',';
      const auto it = t.tc.find({std::string(p.timit), ph});
      if (it == t.tc.end() || it->second.empty()) {
        out << "0,NA,NA,NA,NA,NA,," << ref << '\n';
        continue;
      }
      const auto b = boxplot_stats(it->second);
      out << b.n << ',' << detail::fmt(b.median, 4) << ',' << detail::fmt(b.q1, 4) << ','
          << detail::fmt(b.q3, 4) << ',' << detail::fmt(b.whisker_lo, 4) << ','
          << detail::fmt(b.whisker_hi, 4) << ',';
      for (std::size_t i = 0; i < b.outliers.size(); ++i)
        out << (i ? ";" : "") << detail::fmt(b.outliers[i], 4);
      out << ',' << ref << '\n';
    }
  }
  return out.str();
}

/// Per-bin densities for one phoneme. Vowel files start with '#' lines giving
/// the mean F1-F4 per gender, the overlay for the distribution plot.
inline std::string distribution_csv(const MetricsTally& t, const PhoneInfo& p,
                                    const std::vector<double>& centers) {
  std::ostringstream out;
  if (p.cls == PhoneClass::Vowel) {
    for (Gender g : {Gender::M, Gender::F}) {
      out << "# formants_" << to_string(g);
      const auto it = t.formant_avg.find({std::string(p.timit), g});
      for (std::size_t k = 0; k < 4; ++k) {
        std::optional<double> v;
        if (it != t.formant_avg.end() && it->second.count[k] > 0)
          v = it->second.sum[k] / static_cast<double>(it->second.count[k]);
        out << ",F" << k + 1 << '=' << detail::fmt_opt(v, 1);
      }
      out << '\n';
    }
  }
  out << "bin,center_hz,density_M,density_F\n";
  std::vector<std::optional<std::vector<double>>> d(2);
  for (Gender g : {Gender::M, Gender::F}) {
    const auto it = t.dist.find({std::string(p.timit), g});
    if (it != t.dist.end() && it->second.n > 0) d[g == Gender::F] = it->second.density();
  }
  for (std::size_t b = 0; b < centers.size(); ++b) {
    out << b << ',' << detail::fmt(centers[b], 1);
    for (const auto& v : d) out << ',' << (v ? detail::fmt((*v)[b], 6) : "NA");
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json run_summary(const RunConfig& cfg, const RunResult& r) {
  nlohmann::json j;
  j["corpus_root"] = cfg.corpus_root.string();
  j["subset"] = cfg.subset;
  j["backend"] = cfg.backend;
  j["iterations"] = cfg.iterations;
  j["keep_prob"] = cfg.keep_prob;
  j["top_fraction"] = cfg.top_fraction;
  j["seed"] = cfg.seed;
  j["error_free_only"] = cfg.error_free_only;
  j["utterances"] = r.utterances;
  j["transcribed"] = r.transcribed;
  j["error_free"] = r.error_free;
  j["analyzed"] = r.analyzed;
  j["occurrences"] = r.occurrences;
  j["skipped_unnested_occurrences"] = r.skipped_unnested;
  j["formant_failures"] = r.tally.formant_failures;
  j["degraded_bursts"] = r.tally.degraded_bursts;
  j["wer"] = r.wer() ? nlohmann::json(*r.wer()) : nlohmann::json(nullptr);
  j["skipped_utterances"] = nlohmann::json::array();
  for (const auto& [id, msg] : r.failures) j["skipped_utterances"].push_back({{"id", id}, {"error", msg}});
  return j;
}

inline void emit_outputs(const RunConfig& cfg, const RunResult& r) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const auto& dir = cfg.output_dir;
  detail::write_file(dir / "wer.txt", "WER " + detail::fmt_opt(r.wer(), 2) + "\n");
  detail::write_file(dir / "tc_boxplot.csv", tc_boxplot_csv(r.tally));
  detail::write_file(dir / "sm_formants.csv", sm_formants_csv(r.tally));
  detail::write_file(dir / "sm_peaks.csv", sm_peaks_csv(r.tally));
  detail::write_file(dir / "sm_counts.csv", sm_counts_csv(r.tally));
  const auto centers = mel_bin_centers(FrameParams{}, 16000);
  for (const auto& p : kInventory)
    detail::write_file(dir / ("dist_" + std::string(to_string(p.cls)) + "_" + std::string(p.timit) + ".csv"),
                       distribution_csv(r.tally, p, centers));
  detail::write_file(dir / "run_summary.json", run_summary(cfg, r).dump(2) + "\n");
}

/// Full analysis. Throws Error("zero error-free utterances") when the
/// error-free filter leaves nothing to analyze.
inline RunResult run_pipeline(const RunConfig& cfg) {
  RunResult r = collect(cfg);
  if (cfg.error_free_only && r.error_free == 0) {
    std::filesystem::create_directories(cfg.output_dir);
    detail::write_file(cfg.output_dir / "run_summary.json", run_summary(cfg, r).dump(2) + "\n");
    throw Error("zero error-free utterances");
  }
  emit_outputs(cfg, r);
  return r;
}

// ---------------------------------------------------------------------------
// Single-token dump for plotting: log-mel, saliency and binary map as CSV
// matrices. Row labels are frame times in seconds (window centers), column
// labels are mel bin centers in Hz.

struct SaliencyDumpFiles {
  std::filesystem::path spectrogram, saliency, binary;
};

inline double frame_time_s(std::size_t t, const FrameParams& p) {
  return (static_cast<double>(t) * p.hop_ms + p.window_ms / 2.0) / 1000.0;
}

template <typename T>
std::string matrix_csv(const Matrix<T>& m, const FrameParams& p, const std::vector<double>& centers,
                       int precision) {
  std::ostringstream out;
  out << "time_s";
  for (double c : centers) out << ',' << detail::fmt(c, 1);
  out << '\n';
  for (std::size_t t = 0; t < m.rows(); ++t) {
    out << detail::fmt(frame_time_s(t, p), 4);
    for (std::size_t f = 0; f < m.cols(); ++f) {
      if constexpr (std::is_same_v<T, unsigned char>)
        out << ',' << static_cast<int>(m(t, f));
      else
        out << ',' << detail::fmt(m(t, f), precision);
    }
    out << '\n';
  }
  return out.str();
}

inline SaliencyDumpFiles dump_saliency(const RunConfig& cfg, const std::string& utt_id,
                                       std::size_t token_index) {
  cfg.validate();
  const auto refs = discover_corpus(cfg.corpus_root, "all");
  const auto it = std::find_if(refs.begin(), refs.end(), [&](const auto& r) { return r.id == utt_id; });
  if (it == refs.end()) throw InvalidArgument("unknown utterance id '" + utt_id + "'");
  const UtteranceRecord u = load_utterance(*it);
  const MelSpectrogram logmel = compute_logmel(u.waveform);
  const BackendSource source(cfg.backend, cfg.max_batch);
  std::unique_ptr<Backend> scratch;
  Backend& backend = source.for_utterance(u, logmel.num_frames(), scratch);

  const MelSpectrogram x = cmvn(logmel);
  const TokenSequence tokens = backend.transcribe(x);
  if (token_index >= tokens.size())
    throw InvalidArgument("token index " + std::to_string(token_index) + " out of range (" +
                          std::to_string(tokens.size()) + " tokens)");
  std::vector<int> prefix;
  for (std::size_t i = 0; i < token_index; ++i) prefix.push_back(tokens[i].id);
  const SegmentMap seg = segment_by_energy(logmel);
  const SaliencyMap s = normalize(attribute_token(x, seg, backend, prefix, tokens[token_index].id,
                                                  plan_for(cfg, u.id), {}, token_index));
  const BinaryMap b = binarize_topk(s, cfg.top_fraction);

  std::filesystem::create_directories(cfg.output_dir);
  const std::string stem = utt_id + "_tok" + std::to_string(token_index);
  const FrameParams p = logmel.frame_params;
  const auto centers = mel_bin_centers(p, u.waveform.sample_rate);
  SaliencyDumpFiles files{cfg.output_dir / (stem + "_spectrogram.csv"),
                          cfg.output_dir / (stem + "_saliency.csv"),
                          cfg.output_dir / (stem + "_binary.csv")};
  detail::write_file(files.spectrogram, matrix_csv(logmel.values, p, centers, 6));
  detail::write_file(files.saliency, matrix_csv(s.values, p, centers, 6));
  detail::write_file(files.binary, matrix_csv(b.values, p, centers, 0));
  return files;
}

}  // namespace phonsal
